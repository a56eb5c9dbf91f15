//! Training objectives: pairwise contrastive, multi-Siamese, and the weighted
//! combination with classification losses.
//!
//! All losses are built as graph nodes so they backpropagate into the shared
//! network. Distances are plain Euclidean on raw embeddings.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight on the contrastive / multi-Siamese term.
    pub lambda1: f32,
    /// Weight on the summed classification losses.
    pub lambda2: f32,
    pub margin: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f32| x.is_finite() && x >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) || !ok(self.margin) {
            return Err(Error::invalid(format!(
                "loss weights and margin must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_same<T: Element>(g: &Graph<T>, vars: &[Var], what: &str) -> Result<()> {
    let s = g.shape(vars[0]);
    if let Some(v) = vars.iter().find(|v| g.shape(**v) != s) {
        return Err(Error::shape(format!(
            "{what}: embedding shapes differ ({:?} vs {s:?})",
            g.shape(*v)
        )));
    }
    Ok(())
}

fn squared_distance<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    Ok(g.sum_squares(d))
}

/// `y d^2 + (1 - y) max(0, m - d)^2` with `d = |x_i - x_j|`.
pub fn contrastive_pair<T: Element>(
    g: &mut Graph<T>,
    xi: Var,
    xj: Var,
    positive: bool,
    margin: f64,
) -> Result<Var> {
    check_same(g, &[xi, xj], "contrastive_pair")?;
    let d2 = squared_distance(g, xi, xj)?;
    if positive {
        return Ok(d2);
    }
    let d = g.sqrt(d2);
    let neg = g.scale(d, T::from_f64(-1.0));
    let gap = g.add_scalar(neg, T::from_f64(margin));
    let hinge = g.relu(gap);
    Ok(g.sum_squares(hinge))
}

/// Per-item multi-Siamese loss: the summed squared distance over unordered
/// pairs of `b1` plus `max(0, n^2 m^2 - sum of squared distances between every
/// b1 and b2 entry)`.
pub fn multi_siamese<T: Element>(g: &mut Graph<T>, b1: &[Var], b2: &[Var], margin: f64) -> Result<Var> {
    let n = b1.len();
    if n < 2 || b2.len() != n {
        return Err(Error::shape(format!(
            "multi_siamese needs |b1| = |b2| >= 2, got {} and {}",
            n,
            b2.len()
        )));
    }
    let all: Vec<Var> = b1.iter().chain(b2).copied().collect();
    check_same(g, &all, "multi_siamese")?;

    let mut pos = Vec::with_capacity(n * (n - 1) / 2);
    for k in 0..n {
        for l in k + 1..n {
            pos.push(squared_distance(g, b1[k], b1[l])?);
        }
    }
    let mut cross = Vec::with_capacity(n * n);
    for &a in b1 {
        for &b in b2 {
            cross.push(squared_distance(g, a, b)?);
        }
    }
    let pos = g.add_n(&pos)?;
    let cross = g.add_n(&cross)?;
    let neg = g.scale(cross, T::from_f64(-1.0));
    let budget = (n * n) as f64 * margin * margin;
    let gap = g.add_scalar(neg, T::from_f64(budget));
    let hinge = g.relu(gap);
    g.add(pos, hinge)
}

/// `lambda1 * metric + lambda2 * sum(class_losses)`. Either part may be
/// absent; at least one must be present.
pub fn combined<T: Element>(
    g: &mut Graph<T>,
    metric: Option<Var>,
    class_losses: &[Var],
    w: &LossWeights,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    if let Some(m) = metric {
        terms.push(g.scale(m, T::from_f64(w.lambda1 as f64)));
    }
    if !class_losses.is_empty() {
        let s = g.add_n(class_losses)?;
        terms.push(g.scale(s, T::from_f64(w.lambda2 as f64)));
    }
    if terms.is_empty() {
        return Err(Error::invalid("combined loss needs at least one term"));
    }
    g.add_n(&terms)
}

/// Scalar combination on plain values.
pub fn combined_value(metric: f64, class_sum: f64, w: &LossWeights) -> f64 {
    w.lambda1 as f64 * metric + w.lambda2 as f64 * class_sum
}

/// [`contrastive_pair`] on plain vectors.
pub fn contrastive_pair_value(xi: &Tensor, xj: &Tensor, positive: bool, margin: f64) -> Result<f64> {
    let mut g = Graph::<f64>::inference();
    let a = g.constant(xi.cast());
    let b = g.constant(xj.cast());
    let l = contrastive_pair(&mut g, a, b, positive, margin)?;
    Ok(g.value(l).item())
}

/// [`multi_siamese`] on plain vectors.
pub fn multi_siamese_value(b1: &[Tensor], b2: &[Tensor], margin: f64) -> Result<f64> {
    let mut g = Graph::<f64>::inference();
    let v1: Vec<Var> = b1.iter().map(|t| g.constant(t.cast())).collect();
    let v2: Vec<Var> = b2.iter().map(|t| g.constant(t.cast())).collect();
    let l = multi_siamese(&mut g, &v1, &v2, margin)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};

    fn d2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    // brute-force enumeration of every positive pair and every cross term
    fn oracle(b1: &[Vec<f64>], b2: &[Vec<f64>], m: f64) -> f64 {
        let n = b1.len();
        let mut pos = 0.0;
        for k in 0..n {
            for l in 0..n {
                if k < l {
                    pos += d2(&b1[k], &b1[l]);
                }
            }
        }
        let mut neg = 0.0;
        for a in b1 {
            for b in b2 {
                neg += d2(a, b);
            }
        }
        pos + (n as f64 * n as f64 * m * m - neg).max(0.0)
    }

    fn rand_set(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
    }

    fn to_tensors(v: &[Vec<f64>]) -> Vec<Tensor> {
        v.iter().map(|x| Tensor::from_vec(x.iter().map(|&y| y as f32).collect())).collect()
    }

    fn f32_round(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        v.iter().map(|x| x.iter().map(|&y| y as f32 as f64).collect()).collect()
    }

    #[test]
    fn contrastive_hand_values() {
        let a = Tensor::from_vec(vec![0.0, 0.0]);
        let b = Tensor::from_vec(vec![0.4, 0.0]);
        let neg = contrastive_pair_value(&a, &b, false, 1.0).unwrap();
        let pos = contrastive_pair_value(&a, &b, true, 1.0).unwrap();
        let d = 0.4f32 as f64;
        assert!((neg - (1.0 - d) * (1.0 - d)).abs() < 1e-7 && (neg - 0.36).abs() < 1e-7);
        assert!((pos - d * d).abs() < 1e-7 && (pos - 0.16).abs() < 1e-7);
        assert_eq!(contrastive_pair_value(&a, &a, true, 1.0).unwrap(), 0.0);
        let far = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(contrastive_pair_value(&a, &far, false, 5.0).unwrap(), 0.0);
        assert!(contrastive_pair_value(&a, &Tensor::zeros(&[3]), true, 1.0).is_err());
    }

    #[test]
    fn all_zero_embeddings_hit_full_hinge() {
        let z = vec![Tensor::zeros(&[4]); 3];
        assert_eq!(multi_siamese_value(&z, &z, 1.0).unwrap(), 9.0);
    }

    #[test]
    fn coincident_positives_and_far_negatives_give_zero() {
        let b1 = vec![Tensor::full(&[3], 0.5); 3];
        let b2 = vec![Tensor::full(&[3], 5.0); 3];
        assert_eq!(multi_siamese_value(&b1, &b2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        let a = vec![Tensor::zeros(&[2]); 3];
        assert!(multi_siamese_value(&a, &a[..2], 1.0).is_err());
        assert!(multi_siamese_value(&a[..1], &a[..1], 1.0).is_err());
        let mixed = vec![Tensor::zeros(&[2]), Tensor::zeros(&[3])];
        assert!(multi_siamese_value(&mixed, &mixed, 1.0).is_err());
    }

    #[test]
    fn matches_enumeration_n4_d8() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let b1 = f32_round(&rand_set(&mut rng, 4, 8, 0.3));
            let b2 = f32_round(&rand_set(&mut rng, 4, 8, 0.3));
            let got = multi_siamese_value(&to_tensors(&b1), &to_tensors(&b2), 1.0).unwrap();
            assert!((got - oracle(&b1, &b2, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn positive_term_matches_pair_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b1 = to_tensors(&rand_set(&mut rng, 2, 5, 1.0));
        // negatives far enough that the hinge is inactive
        let b2 = vec![Tensor::full(&[5], 50.0); 2];
        let ms = multi_siamese_value(&b1, &b2, 1.0).unwrap();
        let cp = contrastive_pair_value(&b1[0], &b1[1], true, 1.0).unwrap();
        assert!((ms - cp).abs() < 1e-9);
    }

    #[test]
    fn combined_linearity() {
        let w = LossWeights::default();
        assert_eq!(combined_value(2.5, 1.5, &w), 4.0);
        let mut g = Graph::<f64>::new();
        let m = g.leaf(Tensor::scalar(2.5));
        let c1 = g.leaf(Tensor::scalar(1.0));
        let c2 = g.leaf(Tensor::scalar(0.5));
        let l = combined(&mut g, Some(m), &[c1, c2], &w).unwrap();
        assert_eq!(g.value(l).item(), 4.0);
        let only_cls = LossWeights { lambda1: 0.0, ..w };
        let l = combined(&mut g, Some(m), &[c1, c2], &only_cls).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
        let only_metric = LossWeights { lambda2: 0.0, ..w };
        let l = combined(&mut g, Some(m), &[c1, c2], &only_metric).unwrap();
        assert_eq!(g.value(l).item(), 2.5);
        assert!(combined(&mut g, None, &[], &w).is_err());
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { margin: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda1: f32::NAN, ..Default::default() }.validate().is_err());
    }

    fn gradcheck_ms(scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let inputs: Vec<Tensor<f64>> = (0..2 * n)
            .map(|_| Tensor::from_fn(&[4], |_| rng.gen_range(-scale..scale)))
            .collect();
        let report = gradcheck(
            |g, v| multi_siamese(g, &v[..n], &v[n..], 1.0),
            &inputs,
            &GradcheckOptions {
                epsilon: 1e-5,
                skip_nonsmooth: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.checked > 0);
    }

    #[test]
    fn gradcheck_hinge_active() {
        gradcheck_ms(0.1, 1);
    }

    #[test]
    fn gradcheck_hinge_inactive() {
        gradcheck_ms(3.0, 2);
    }

    #[test]
    fn gradcheck_contrastive_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::from_fn(&[5], |_| rng.gen_range(-0.2..0.2))).collect();
        let report = gradcheck(
            |g, v| contrastive_pair(g, v[0], v[1], false, 1.0),
            &inputs,
            &GradcheckOptions {
                epsilon: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_matches_oracle_and_nonnegative(seed in any::<u64>(), n in 2usize..=5, d in 1usize..=8, scale in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b1 = f32_round(&rand_set(&mut rng, n, d, scale));
            let b2 = f32_round(&rand_set(&mut rng, n, d, scale));
            let got = multi_siamese_value(&to_tensors(&b1), &to_tensors(&b2), 1.0).unwrap();
            let want = oracle(&b1, &b2, 1.0);
            prop_assert!(got >= 0.0);
            prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0));
        }

        #[test]
        fn prop_permutation_invariant(seed in any::<u64>(), n in 2usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b1 = to_tensors(&rand_set(&mut rng, n, 4, 0.5));
            let b2 = to_tensors(&rand_set(&mut rng, n, 4, 0.5));
            let base = multi_siamese_value(&b1, &b2, 1.0).unwrap();
            let mut p1 = b1.clone();
            p1.rotate_left(1);
            let mut p2 = b2.clone();
            p2.reverse();
            let perm = multi_siamese_value(&p1, &p2, 1.0).unwrap();
            prop_assert!((base - perm).abs() <= 1e-9 * base.abs().max(1.0));
        }
    }
}
