//! Plain-text dataset manifest.
//!
//! Records are blocks of `key = value` lines separated by blank lines; lines
//! starting with `#` are comments. The first record describes the dataset, then one record
//! per video, then one per split:
//!
//! ```text
//! record = dataset
//! name = toy
//! kind = hr
//! classes = translate-left,translate-right
//!
//! record = video
//! id = c00-v000
//! path = hr/c00-v000.lrsv
//! label = 0
//! frames = 16
//! height = 96
//! width = 128
//!
//! record = split
//! name = half-0
//! train = c00-v000
//! test = c00-v001
//! ```
//!
//! LR manifests add `source_id`, `transform` and optionally `flow` to each
//! video record. Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tensorfile::read_tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Hr,
    Lr,
}

impl ManifestKind {
    fn as_str(self) -> &'static str {
        match self {
            ManifestKind::Hr => "hr",
            ManifestKind::Lr => "lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// LR only: the HR video this was derived from.
    pub source_id: Option<String>,
    /// LR only: index into the transform set.
    pub transform: Option<usize>,
    /// LR only: `[T, 12, 16, 20]` flow stacks, once computed.
    pub flow: Option<PathBuf>,
}

impl VideoEntry {
    /// The HR source id: `source_id` for LR entries, `id` otherwise.
    pub fn source(&self) -> &str {
        self.source_id.as_deref().unwrap_or(&self.id)
    }
}

/// Named partition of source video ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitDef {
    pub name: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub kind: ManifestKind,
    pub classes: Vec<String>,
    pub videos: Vec<VideoEntry>,
    pub splits: Vec<SplitDef>,
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
}

fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

fn parse_num<T: FromStr>(rec: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = rec
        .get(key)
        .ok_or_else(|| data_err(format!("manifest record missing {key:?}")))?;
    v.parse()
        .map_err(|_| data_err(format!("manifest field {key} = {v:?} is not a valid number")))
}

fn list(v: Option<&String>) -> Vec<String> {
    v.map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

fn check_keys(rec: &BTreeMap<String, String>, allowed: &[&str]) -> Result<()> {
    if let Some(k) = rec.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(data_err(format!("unknown manifest key {k:?}")));
    }
    Ok(())
}

impl Manifest {
    pub fn new(name: impl Into<String>, kind: ManifestKind, classes: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            classes,
            videos: Vec::new(),
            splits: Vec::new(),
            root: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records: Vec<BTreeMap<String, String>> = Vec::new();
        let mut cur = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !cur.is_empty() {
                    records.push(std::mem::take(&mut cur));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| data_err(format!("manifest line {}: expected key = value", n + 1)))?;
            if cur.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(data_err(format!("manifest line {}: duplicate key {:?}", n + 1, k.trim())));
            }
        }
        if !cur.is_empty() {
            records.push(cur);
        }
        let mut it = records.into_iter();
        let head = it.next().ok_or_else(|| data_err("empty manifest"))?;
        if head.get("record").map(String::as_str) != Some("dataset") {
            return Err(data_err("manifest must start with a dataset record"));
        }
        check_keys(&head, &["record", "name", "kind", "classes"])?;
        let kind = match head.get("kind").map(String::as_str) {
            Some("hr") => ManifestKind::Hr,
            Some("lr") => ManifestKind::Lr,
            other => return Err(data_err(format!("manifest kind must be hr or lr, got {other:?}"))),
        };
        let mut m = Manifest::new(head.get("name").cloned().unwrap_or_default(), kind, list(head.get("classes")));
        m.root = root.into();
        for rec in it {
            match rec.get("record").map(String::as_str) {
                Some("video") => {
                    check_keys(
                        &rec,
                        &["record", "id", "path", "label", "frames", "height", "width", "source_id", "transform", "flow"],
                    )?;
                    m.videos.push(VideoEntry {
                        id: rec.get("id").cloned().ok_or_else(|| data_err("video record missing id"))?,
                        path: rec.get("path").map(PathBuf::from).ok_or_else(|| data_err("video record missing path"))?,
                        label: parse_num(&rec, "label")?,
                        frames: parse_num(&rec, "frames")?,
                        height: parse_num(&rec, "height")?,
                        width: parse_num(&rec, "width")?,
                        source_id: rec.get("source_id").cloned(),
                        transform: rec.get("transform").map(|_| parse_num(&rec, "transform")).transpose()?,
                        flow: rec.get("flow").map(PathBuf::from),
                    });
                }
                Some("split") => {
                    check_keys(&rec, &["record", "name", "train", "val", "test"])?;
                    m.splits.push(SplitDef {
                        name: rec.get("name").cloned().ok_or_else(|| data_err("split record missing name"))?,
                        train: list(rec.get("train")),
                        val: list(rec.get("val")),
                        test: list(rec.get("test")),
                    });
                }
                other => return Err(data_err(format!("unknown manifest record type {other:?}"))),
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "record = dataset\nname = {}\nkind = {}", self.name, self.kind.as_str()).unwrap();
        if !self.classes.is_empty() {
            writeln!(s, "classes = {}", self.classes.join(",")).unwrap();
        }
        for v in &self.videos {
            writeln!(
                s,
                "\nrecord = video\nid = {}\npath = {}\nlabel = {}\nframes = {}\nheight = {}\nwidth = {}",
                v.id,
                v.path.display(),
                v.label,
                v.frames,
                v.height,
                v.width
            )
            .unwrap();
            if let Some(src) = &v.source_id {
                writeln!(s, "source_id = {src}").unwrap();
            }
            if let Some(k) = v.transform {
                writeln!(s, "transform = {k}").unwrap();
            }
            if let Some(f) = &v.flow {
                writeln!(s, "flow = {}", f.display()).unwrap();
            }
        }
        for sp in &self.splits {
            writeln!(s, "\nrecord = split\nname = {}", sp.name).unwrap();
            for (k, ids) in [("train", &sp.train), ("val", &sp.val), ("test", &sp.test)] {
                if !ids.is_empty() {
                    writeln!(s, "{k} = {}", ids.join(",")).unwrap();
                }
            }
        }
        s
    }

    /// Structural checks: unique ids, labels in range, split ids known.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for v in &self.videos {
            let bad = |c: char| c == ',' || c == '=' || c.is_whitespace();
            if v.id.is_empty() || v.id.contains(bad) {
                return Err(data_err(format!("invalid video id {:?}", v.id)));
            }
            if !ids.insert(v.id.as_str()) {
                return Err(data_err(format!("duplicate video id {:?}", v.id)));
            }
            if !self.classes.is_empty() && v.label >= self.classes.len() {
                return Err(data_err(format!("video {} has label {} outside {} classes", v.id, v.label, self.classes.len())));
            }
            if self.kind == ManifestKind::Lr && (v.source_id.is_none() || v.transform.is_none()) {
                return Err(data_err(format!("LR video {} lacks source_id/transform provenance", v.id)));
            }
        }
        let sources: HashSet<&str> = self.videos.iter().map(|v| v.source()).collect();
        for sp in &self.splits {
            for id in sp.train.iter().chain(&sp.val).chain(&sp.test) {
                if !sources.contains(id.as_str()) {
                    return Err(data_err(format!("split {} references unknown video {id:?}", sp.name)));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn get(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn split(&self, name: &str) -> Result<&SplitDef> {
        self.splits.iter().find(|s| s.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.splits.iter().map(|s| s.name.as_str()).collect();
            data_err(format!("no split named {name:?} (available: {names:?})"))
        })
    }

    /// Labels keyed by source id.
    pub fn source_labels(&self) -> HashMap<String, usize> {
        self.videos.iter().map(|v| (v.source().to_string(), v.label)).collect()
    }

    pub fn load_video(&self, v: &VideoEntry) -> Result<Tensor> {
        read_tensor(self.resolve(&v.path))
    }

    pub fn load_flow(&self, v: &VideoEntry) -> Result<Tensor> {
        let rel = v.flow.as_ref().ok_or_else(|| {
            Error::MissingArtifact(format!("video {} has no flow stacks; run the `flow` stage first", v.id))
        })?;
        read_tensor(self.resolve(rel))
    }

    /// Loads every listed tensor and checks it against the declared dims.
    /// Returns the number of files checked.
    pub fn verify(&self) -> Result<usize> {
        let mut n = 0;
        for v in &self.videos {
            let t = self.load_video(v)?;
            let want = [v.frames, v.height, v.width, 3];
            if t.shape() != want {
                return Err(Error::shape(format!("{}: file has {:?}, manifest says {want:?}", v.id, t.shape())));
            }
            n += 1;
            if v.flow.is_some() {
                let f = self.load_flow(v)?;
                let want = [v.frames, v.height, v.width, crate::flow::STACK_CHANNELS];
                if f.shape() != want {
                    return Err(Error::shape(format!("{} flow: file has {:?}, expected {want:?}", v.id, f.shape())));
                }
                n += 1;
            }
        }
        Ok(n)
    }
}
