//! Named learnable parameters and the SGD-with-momentum optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct Parameter<T: Element = f32> {
    pub name: String,
    value: Arc<Tensor<T>>,
    pub trainable: bool,
}

impl<T: Element> Parameter<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> &Arc<Tensor<T>> {
        &self.value
    }

    /// Mutable access; copies the tensor if a live graph still shares it.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }
}

/// Insertion-ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value: Arc::new(value),
            trainable: true,
        });
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        match self.index.get(name) {
            Some(&i) => self.params[i].value = Arc::new(value),
            None => self.insert(name, value).expect("name checked"),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Parameter<T>> {
        let i = self.index.remove(name)?;
        let p = self.params.remove(i);
        for v in self.index.values_mut() {
            if *v > i {
                *v -= 1;
            }
        }
        Some(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Copies every parameter of `other` into `self`, replacing same-named ones.
    pub fn merge_from(&mut self, other: &ParamStore<T>) {
        for p in &other.params {
            self.set(&p.name, p.value().clone());
            if let Some(q) = self.get_mut(&p.name) {
                q.trainable = p.trainable;
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(&p.name, p.value.cast()).expect("unique names");
            out.get_mut(&p.name).unwrap().trainable = p.trainable;
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

impl ParamStore<f32> {
    /// Order-sensitive checksum over the bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
            for x in p.value.data() {
                h = (h ^ x.to_bits() as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Kaiming-uniform (fan-in, ReLU gain) initialization: U(-b, b), b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Stochastic gradient descent with classical momentum:
/// `v <- mu * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: HashMap<String, Tensor<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Applies one update. Gradients are applied in the given order.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[(String, Tensor<f32>)]) -> Result<()> {
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name:?}")))?;
            if !p.trainable {
                continue;
            }
            if p.value().shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} for parameter {name} of shape {:?}",
                    g.shape(),
                    p.value().shape()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            let lr = self.lr;
            for (pi, &vi) in p.value_mut().data_mut().iter_mut().zip(v.data()) {
                *pi -= lr * vi;
            }
        }
        Ok(())
    }
}

/// Rescales the gradients of trainable parameters so their joint L2 norm is
/// at most `max_norm`. Returns the norm before rescaling.
pub fn clip_grad_norm(store: &ParamStore<f32>, grads: &mut [(String, Tensor<f32>)], max_norm: f32) -> f32 {
    let live = |name: &str| store.get(name).is_some_and(|p| p.trainable);
    let sq: f64 = grads
        .iter()
        .filter(|(n, _)| live(n))
        .flat_map(|(_, g)| g.data().iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum();
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for (n, g) in grads.iter_mut() {
            if live(n) {
                g.data_mut().iter_mut().for_each(|x| *x *= k);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn clipping_rescales_trainable_only() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        s.insert("frozen", Tensor::zeros(&[1])).unwrap();
        s.get_mut("frozen").unwrap().trainable = false;
        let mut grads = vec![
            ("a".to_string(), Tensor::from_vec(vec![3.0, 4.0])),
            ("frozen".to_string(), Tensor::from_vec(vec![100.0])),
        ];
        assert_eq!(clip_grad_norm(&s, &mut grads, 1.0), 5.0);
        assert_eq!(grads[0].1.data(), &[0.6, 0.8]);
        assert_eq!(grads[1].1.data(), &[100.0]);
        assert_eq!(clip_grad_norm(&s, &mut grads, 10.0), 1.0);
        assert_eq!(grads[0].1.data(), &[0.6, 0.8]);
    }

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
        s.insert("b", Tensor::zeros(&[1])).unwrap();
        s.remove("a");
        assert_eq!(s.names(), vec!["b".to_string()]);
        assert!(s.get("b").is_some());
    }

    #[test]
    fn kaiming_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = kaiming_uniform(&[100, 10], 24, &mut rng);
        let b = (6.0f32 / 24.0).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= b));
    }

    #[test]
    fn sgd_momentum_update() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::from_vec(vec![1.0])).unwrap();
        let mut opt = Sgd::new(0.1, 0.9);
        let g = vec![("w".to_string(), Tensor::from_vec(vec![1.0]))];
        opt.step(&mut s, &g).unwrap();
        assert!((s.get("w").unwrap().value().item() - 0.9).abs() < 1e-6);
        opt.step(&mut s, &g).unwrap();
        // v = 0.9 + 1 = 1.9
        assert!((s.get("w").unwrap().value().item() - (0.9 - 0.19)).abs() < 1e-6);
    }
}
