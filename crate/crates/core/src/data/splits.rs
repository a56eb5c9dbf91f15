//! Class-stratified train/val/test partitions of source videos.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::SplitDef;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitScheme {
    /// `repeats` independent 50/50 train/test partitions.
    RandomHalf { repeats: usize },
    /// One train/val/test partition with the given fractions.
    FixedFraction { val: f64, test: f64 },
}

impl Default for SplitScheme {
    fn default() -> Self {
        SplitScheme::RandomHalf { repeats: 10 }
    }
}

fn by_class<'a>(items: &'a [(String, usize)]) -> BTreeMap<usize, Vec<&'a str>> {
    let mut m: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, label) in items {
        m.entry(*label).or_default().push(id);
    }
    for ids in m.values_mut() {
        ids.sort_unstable();
    }
    m
}

/// Splits `(source id, label)` pairs per `scheme`. Every class is shuffled
/// independently and cut at the same fractions.
pub fn make_splits(items: &[(String, usize)], scheme: SplitScheme, seed: u64) -> Result<Vec<SplitDef>> {
    if items.is_empty() {
        return Err(Error::invalid("cannot split an empty video list"));
    }
    let classes = by_class(items);
    match scheme {
        SplitScheme::RandomHalf { repeats } => {
            if repeats == 0 {
                return Err(Error::invalid("random-half needs at least one repeat"));
            }
            if let Some((c, ids)) = classes.iter().find(|(_, ids)| ids.len() < 2) {
                return Err(Error::invalid(format!(
                    "class {c} has {} video(s); a stratified half split needs at least 2",
                    ids.len()
                )));
            }
            (0..repeats as u64).map(|r| Ok(half_split(&classes, r, seed))).collect()
        }
        SplitScheme::FixedFraction { val, test } => {
            if !(0.0..1.0).contains(&val) || !(0.0..1.0).contains(&test) || val + test >= 1.0 {
                return Err(Error::invalid(format!("fractions val={val}, test={test} must be in [0,1) and sum < 1")));
            }
            let mut rng = substream(seed, &["split", "fixed"]);
            let mut def = SplitDef {
                name: "fixed".into(),
                ..Default::default()
            };
            for ids in classes.values() {
                let mut ids = ids.clone();
                ids.shuffle(&mut rng);
                let n = ids.len() as f64;
                let nt = (n * test).round() as usize;
                let nv = (n * val).round() as usize;
                def.test.extend(ids[..nt].iter().map(|s| s.to_string()));
                def.val.extend(ids[nt..nt + nv].iter().map(|s| s.to_string()));
                def.train.extend(ids[nt + nv..].iter().map(|s| s.to_string()));
            }
            Ok(vec![def])
        }
    }
}

fn half_split(classes: &BTreeMap<usize, Vec<&str>>, index: u64, seed: u64) -> SplitDef {
    let mut rng = substream(seed, &["split", "half", &index.to_string()]);
    let mut def = SplitDef {
        name: format!("half-{index}"),
        ..Default::default()
    };
    for ids in classes.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let cut = ids.len() / 2;
        def.train.extend(ids[..cut].iter().map(|s| s.to_string()));
        def.test.extend(ids[cut..].iter().map(|s| s.to_string()));
    }
    def
}

/// The `index`-th random-half split; identical to entry `index` of
/// `make_splits` with enough repeats.
pub fn random_half(items: &[(String, usize)], index: u64, seed: u64) -> Result<SplitDef> {
    if items.is_empty() {
        return Err(Error::invalid("cannot split an empty video list"));
    }
    let classes = by_class(items);
    if let Some((c, ids)) = classes.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(Error::invalid(format!(
            "class {c} has {} video(s); a stratified half split needs at least 2",
            ids.len()
        )));
    }
    Ok(half_split(&classes, index, seed))
}

/// Moves `fraction` of each class (rounded, at least one if the class has
/// two or more) out of `train` into a validation list.
pub fn stratified_holdout(
    train: &[(String, usize)],
    fraction: f64,
    seed: u64,
    tag: &str,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("holdout fraction {fraction} must be in [0, 1)")));
    }
    let mut rng = substream(seed, &["holdout", tag]);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for ids in by_class(train).values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let mut k = (ids.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && k == 0 && ids.len() >= 2 {
            k = 1;
        }
        held.extend(ids[..k].iter().map(|s| s.to_string()));
        keep.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    Ok((keep, held))
}
