//! Per-weight diagonal Hessians of the loss on each group's scoring set,
//! and the fairness-aware score that combines them.
//!
//! The diagonal Hessian entry for a factor weight θ is estimated by a
//! central finite difference of the analytic gradient,
//! `(g(θ+ε) − g(θ−ε)) / 2ε` with `ε = 1e-4·max(1, |θ|)`, one
//! forward/backward pair per perturbed coordinate. The loss-level second
//! difference serves as an independent oracle in tests, never as the
//! primary method.
//!
//! The score of a weight is `s = ½·θ²·(h⁰ − β·h¹)`: smaller means removing
//! the weight costs the unprivileged group less and the privileged group
//! more, which is the removal order that narrows the gap.

use alloc::format;
use alloc::vec::Vec;

use crate::datagen::{GroupedDataset, Sample, Split};
use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::network::{gradient, Batch, FactorId, Network};
use crate::rng::Rng;
use crate::Result;

/// A per-entry score table with the same shape as the factor it grades.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    target: FactorId,
    values: Matrix,
}

impl ScoreMatrix {
    pub fn new(target: FactorId, values: Matrix) -> Self {
        Self { target, values }
    }

    pub fn target(&self) -> FactorId {
        self.target
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// The two per-group sample sets Hessians are averaged over.
#[derive(Debug, Clone)]
pub struct ScoringSets {
    group0: Vec<Sample>,
    group1: Vec<Sample>,
}

impl ScoringSets {
    /// Samples with sensitive attribute 0 (unprivileged).
    pub fn group0(&self) -> &[Sample] {
        &self.group0
    }

    /// Samples with sensitive attribute 1 (privileged).
    pub fn group1(&self) -> &[Sample] {
        &self.group1
    }

    /// Both groups concatenated, group 0 first.
    pub fn union(&self) -> Vec<Sample> {
        let mut all = self.group0.clone();
        all.extend_from_slice(&self.group1);
        all
    }
}

/// Mean diagonal Hessian of the loss over `samples` for every entry of the
/// addressed factor. Sample order is fixed by the caller and the mean is
/// accumulated in that order.
pub fn hessian_diagonal(
    net: &Network,
    samples: &[Sample],
    target: FactorId,
) -> Result<ScoreMatrix> {
    let shape = {
        let m = net.factor_matrix(target)?;
        (m.rows(), m.cols())
    };
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs)?;

    let mut probe = net.clone();
    let mut values = Matrix::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let id = target.param(r, c);
            let theta = probe.get_param(id)?;
            let eps = 1e-4 * fmath::abs(theta).max(1.0);
            probe.set_param(id, theta + eps)?;
            let g_plus = gradient(&probe, &batch)?.get(id)?;
            probe.set_param(id, theta - eps)?;
            let g_minus = gradient(&probe, &batch)?.get(id)?;
            probe.set_param(id, theta)?;
            values[(r, c)] = (g_plus - g_minus) / (2.0 * eps);
        }
    }
    Ok(ScoreMatrix { target, values })
}

/// Elementwise fairness-aware score `½·θ²·(h⁰ − β·h¹)`.
///
/// `h0`/`h1` must grade the same factor, whose current values are `theta`.
pub fn fairness_scores(
    h0: &ScoreMatrix,
    h1: &ScoreMatrix,
    theta: &Matrix,
    beta: f64,
) -> Result<ScoreMatrix> {
    if h0.target != h1.target {
        return Err(Error::Target(
            "group Hessians grade different factors".into(),
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
    }
    let (rows, cols) = (theta.rows(), theta.cols());
    for (m, name) in [(&h0.values, "h0"), (&h1.values, "h1")] {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, theta is {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
    }
    let mut values = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let t = theta[(r, c)];
            values[(r, c)] = 0.5 * t * t * (h0.values[(r, c)] - beta * h1.values[(r, c)]);
        }
    }
    Ok(ScoreMatrix {
        target: h0.target,
        values,
    })
}

/// Second-order estimate `½·h·θ²` of the loss change from zeroing a weight.
pub fn delta_e_estimate(theta: f64, h: f64) -> f64 {
    0.5 * h * theta * theta
}

/// Draw `per_group` training samples per group, without replacement,
/// deterministically from the seed. Selected samples keep dataset order, so
/// asking for a whole group returns it in canonical order.
pub fn build_scoring_sets(
    train_split: &GroupedDataset,
    per_group: usize,
    seed: u64,
) -> Result<ScoringSets> {
    if per_group == 0 {
        return Err(Error::Data("per_group must be positive".into()));
    }
    let train = train_split.split_samples(Split::Train);
    let mut rng = Rng::new(seed);
    let mut groups: [Vec<Sample>; 2] = [Vec::new(), Vec::new()];
    for g in 0..2u8 {
        let members: Vec<&Sample> = train.iter().copied().filter(|s| s.c == g).collect();
        if members.len() < per_group {
            return Err(Error::Data(format!(
                "group {g} has {} training samples, need {per_group}",
                members.len()
            )));
        }
        let mut chosen = rng.permutation(members.len());
        chosen.truncate(per_group);
        chosen.sort_unstable();
        groups[g as usize] = chosen.into_iter().map(|i| members[i].clone()).collect();
    }
    let [group0, group1] = groups;
    Ok(ScoringSets { group0, group1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenParams};
    use crate::factorize::factorize_layer;
    use crate::network::{loss, Activation, DenseLayer, FactorSide, Layer};

    fn factored_net(seed: u64, dims: (usize, usize, usize), k: usize) -> Network {
        let net = Network::seeded(dims.0, &[dims.1], dims.2, seed).unwrap();
        factorize_layer(&net, 0, k).unwrap()
    }

    fn random_samples(rng: &mut Rng, n: usize, d: usize, classes: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                x: (0..d).map(|_| rng.next_in_range(-1.0, 1.0)).collect(),
                y0: 1 + i % classes,
                c: (i % 2) as u8,
            })
            .collect()
    }

    #[test]
    fn hessian_matches_analytic_softmax_curvature() {
        // One scalar input, two classes, single factored layer. The diagonal
        // Hessian of the cross-entropy for the u entry is
        // mean(x² s² p₁ p₂ (v₁ − v₂)²).
        let w = Matrix::from_rows(&[&[0.7, -0.3]]).unwrap();
        let net = Network::from_layers(alloc::vec![Layer::Dense(
            DenseLayer::new(w, alloc::vec![0.0, 0.0], Activation::None).unwrap()
        )])
        .unwrap();
        let net = factorize_layer(&net, 0, 1).unwrap();
        let fl = net.factored_layer(0).unwrap();
        let (u, s) = (fl.u_hat()[(0, 0)], fl.s_hat()[0]);
        let (v1, v2) = (fl.v_hat()[(0, 0)], fl.v_hat()[(0, 1)]);

        let mut rng = Rng::new(91);
        let samples: Vec<Sample> = (0..12)
            .map(|i| Sample {
                x: alloc::vec![rng.next_in_range(-2.0, 2.0)],
                y0: 1 + i % 2,
                c: 0,
            })
            .collect();

        let mut analytic = 0.0;
        for smp in &samples {
            let x = smp.x[0];
            let l1 = x * u * s * v1;
            let l2 = x * u * s * v2;
            let m = l1.max(l2);
            let (e1, e2) = ((l1 - m).exp(), (l2 - m).exp());
            let p1 = e1 / (e1 + e2);
            let p2 = 1.0 - p1;
            analytic += x * x * s * s * p1 * p2 * (v1 - v2) * (v1 - v2);
        }
        analytic /= samples.len() as f64;

        let target = FactorId {
            layer: 0,
            side: FactorSide::U,
        };
        let h = hessian_diagonal(&net, &samples, target).unwrap();
        let got = h.values()[(0, 0)];
        assert!(
            (got - analytic).abs() <= 1e-6 * analytic.abs().max(1e-8),
            "{got} vs {analytic}"
        );
    }

    #[test]
    fn dead_input_feature_gives_zero_hessian_row() {
        let net = factored_net(33, (3, 4, 2), 3);
        let mut rng = Rng::new(2);
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample {
                // Feature 1 is identically zero.
                x: alloc::vec![rng.next_in_range(-1.0, 1.0), 0.0, rng.next_in_range(-1.0, 1.0)],
                y0: 1 + i % 2,
                c: 0,
            })
            .collect();
        let h = hessian_diagonal(
            &net,
            &samples,
            FactorId {
                layer: 0,
                side: FactorSide::U,
            },
        )
        .unwrap();
        for c in 0..h.values().cols() {
            assert_eq!(h.values()[(1, c)], 0.0);
        }
    }

    #[test]
    fn hessian_matches_loss_level_second_difference() {
        // 2-4-2 net, factored first layer, both factors, every entry.
        let net = factored_net(0xbead, (2, 4, 2), 2);
        let mut rng = Rng::new(77);
        let samples = random_samples(&mut rng, 10, 2, 2);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = Batch::from_samples(&refs).unwrap();

        for side in [FactorSide::U, FactorSide::V] {
            let target = FactorId { layer: 0, side };
            let h = hessian_diagonal(&net, &samples, target).unwrap();
            let theta = net.factor_matrix(target).unwrap().clone();
            for r in 0..theta.rows() {
                for c in 0..theta.cols() {
                    let id = target.param(r, c);
                    let t = theta[(r, c)];
                    let eps = 1e-3 * t.abs().max(1.0);
                    let mut probe = net.clone();
                    let base = loss(&probe, &batch).unwrap();
                    probe.set_param(id, t + eps).unwrap();
                    let up = loss(&probe, &batch).unwrap();
                    probe.set_param(id, t - eps).unwrap();
                    let down = loss(&probe, &batch).unwrap();
                    let oracle = (up - 2.0 * base + down) / (eps * eps);
                    let got = h.values()[(r, c)];
                    let tol = 1e-3 * oracle.abs().max(1e-8);
                    assert!(
                        (got - oracle).abs() <= tol,
                        "({r},{c}) {side:?}: {got} vs oracle {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_requires_factored_target() {
        let net = Network::seeded(3, &[4], 2, 5).unwrap();
        let mut rng = Rng::new(3);
        let samples = random_samples(&mut rng, 4, 3, 2);
        let res = hessian_diagonal(
            &net,
            &samples,
            FactorId {
                layer: 0,
                side: FactorSide::U,
            },
        );
        assert!(matches!(res, Err(Error::Target(_))));
    }

    #[test]
    fn hessian_rejects_empty_samples() {
        let net = factored_net(1, (2, 3, 2), 2);
        let res = hessian_diagonal(
            &net,
            &[],
            FactorId {
                layer: 0,
                side: FactorSide::U,
            },
        );
        assert!(matches!(res, Err(Error::EmptyBatch)));
    }

    #[test]
    fn hessian_is_sample_order_invariant() {
        let net = factored_net(6, (3, 4, 2), 2);
        let mut rng = Rng::new(8);
        let samples = random_samples(&mut rng, 9, 3, 2);
        let mut reversed = samples.clone();
        reversed.reverse();
        let target = FactorId {
            layer: 0,
            side: FactorSide::V,
        };
        let a = hessian_diagonal(&net, &samples, target).unwrap();
        let b = hessian_diagonal(&net, &reversed, target).unwrap();
        for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn score_arithmetic_examples() {
        let target = FactorId {
            layer: 0,
            side: FactorSide::U,
        };
        let one = |v: f64| Matrix::from_vec(1, 1, alloc::vec![v]).unwrap();
        let h0 = ScoreMatrix::new(target, one(0.3));
        let h1 = ScoreMatrix::new(target, one(0.1));

        let s = fairness_scores(&h0, &h1, &one(2.0), 0.5).unwrap();
        assert_eq!(s.values()[(0, 0)], 0.5);

        let s = fairness_scores(&h0, &h1, &one(0.0), 3.0).unwrap();
        assert_eq!(s.values()[(0, 0)], 0.0);

        // beta = 0 degenerates to pure saliency on group 0.
        let s = fairness_scores(&h0, &h1, &one(2.0), 0.0).unwrap();
        assert_eq!(s.values()[(0, 0)], 0.5 * 0.3 * 4.0);
    }

    #[test]
    fn score_is_linear_in_beta() {
        let target = FactorId {
            layer: 0,
            side: FactorSide::V,
        };
        let mut rng = Rng::new(10);
        let mut fill = |m: &mut Matrix| {
            for v in m.as_mut_slice() {
                *v = rng.next_in_range(-1.0, 1.0);
            }
        };
        let mut h0m = Matrix::zeros(3, 4);
        let mut h1m = Matrix::zeros(3, 4);
        let mut theta = Matrix::zeros(3, 4);
        fill(&mut h0m);
        fill(&mut h1m);
        fill(&mut theta);
        let h0 = ScoreMatrix::new(target, h0m);
        let h1 = ScoreMatrix::new(target, h1m.clone());

        let (b1, b2) = (0.25, 1.75);
        let s1 = fairness_scores(&h0, &h1, &theta, b1).unwrap();
        let s2 = fairness_scores(&h0, &h1, &theta, b2).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let lhs = s2.values()[(r, c)] - s1.values()[(r, c)];
                let t = theta[(r, c)];
                let rhs = -(b2 - b1) * 0.5 * h1m[(r, c)] * t * t;
                assert!((lhs - rhs).abs() <= 1e-15 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn group_swap_rescales_scores() {
        // s(θ, h1, h0, 1/β) = -(1/β) · s(θ, h0, h1, β)
        let target = FactorId {
            layer: 1,
            side: FactorSide::U,
        };
        let mut rng = Rng::new(40);
        let mut mk = || {
            let mut m = Matrix::zeros(2, 3);
            for v in m.as_mut_slice() {
                *v = rng.next_in_range(-2.0, 2.0);
            }
            m
        };
        let (h0m, h1m, theta) = (mk(), mk(), mk());
        let h0 = ScoreMatrix::new(target, h0m);
        let h1 = ScoreMatrix::new(target, h1m);
        let beta = 0.6;
        let s = fairness_scores(&h0, &h1, &theta, beta).unwrap();
        let swapped = fairness_scores(&h1, &h0, &theta, 1.0 / beta).unwrap();
        for (a, b) in swapped
            .values()
            .as_slice()
            .iter()
            .zip(s.values().as_slice())
        {
            let want = -(1.0 / beta) * b;
            assert!((a - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn score_shape_mismatch_errors() {
        let target = FactorId {
            layer: 0,
            side: FactorSide::U,
        };
        let h0 = ScoreMatrix::new(target, Matrix::zeros(2, 2));
        let h1 = ScoreMatrix::new(target, Matrix::zeros(2, 2));
        let theta = Matrix::zeros(3, 2);
        assert!(matches!(
            fairness_scores(&h0, &h1, &theta, 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn delta_e_quadratic_oracle() {
        // E(w) = ½(w·x − y)²: h = x², g = (wx − y)x, and for a quadratic
        // E(0) − E(w) = −g·w + ½·h·w² exactly.
        assert_eq!(delta_e_estimate(0.0, 123.0), 0.0);
        let (x, y, w) = (1.3, 0.4, 0.9);
        let e = |w: f64| 0.5 * (w * x - y) * (w * x - y);
        let g = (w * x - y) * x;
        let h = x * x;
        let exact = e(0.0) - e(w);
        let predicted = -g * w + delta_e_estimate(w, h);
        assert!((exact - predicted).abs() <= 1e-12);
        // At the minimum w* = y/x the gradient term vanishes and the
        // second-order estimate alone is exact.
        let w_star = y / x;
        let exact_min = e(0.0) - e(w_star);
        assert!((exact_min - delta_e_estimate(w_star, h)).abs() <= 1e-12);
    }

    #[test]
    fn scoring_sets_are_deterministic_and_disjoint() {
        let ds = generate(&GenParams {
            n: 200,
            d: 4,
            classes: 2,
            seed: 77,
            ..GenParams::default()
        })
        .unwrap();
        let a = build_scoring_sets(&ds, 20, 5).unwrap();
        let b = build_scoring_sets(&ds, 20, 5).unwrap();
        assert_eq!(a.group0(), b.group0());
        assert_eq!(a.group1(), b.group1());
        assert_eq!(a.group0().len(), 20);
        assert!(a.group0().iter().all(|s| s.c == 0));
        assert!(a.group1().iter().all(|s| s.c == 1));
    }

    #[test]
    fn full_group_request_returns_canonical_order() {
        let ds = generate(&GenParams {
            n: 100,
            d: 3,
            classes: 2,
            group0_fraction: 0.5,
            seed: 3,
            ..GenParams::default()
        })
        .unwrap();
        let g0_total = ds.samples().iter().filter(|s| s.c == 0).count();
        let sets = build_scoring_sets(&ds, g0_total, 9).unwrap();
        let canonical: Vec<&Sample> = ds.samples().iter().filter(|s| s.c == 0).collect();
        assert_eq!(sets.group0().len(), g0_total);
        for (a, b) in sets.group0().iter().zip(canonical) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oversized_request_errors() {
        let ds = generate(&GenParams {
            n: 100,
            d: 3,
            classes: 2,
            seed: 3,
            ..GenParams::default()
        })
        .unwrap();
        assert!(matches!(
            build_scoring_sets(&ds, 10_000, 1),
            Err(Error::Data(_))
        ));
    }
}
