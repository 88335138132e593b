//! Truncated-SVD replacement of a dense layer, and the stored-weight
//! accounting behind compression rates.
//!
//! A factored layer stores `d_in·k + k·k + k·d_out` weights: the singular
//! value block is counted as a full `k x k` matrix to stay consistent with
//! the reference accounting, even though only its diagonal is populated.
//! Reports can also quote the diagonal-only alternative via
//! [`stored_weights_diag_s`].

use alloc::format;

use crate::error::Error;
use crate::network::{FactoredLayer, Layer, Mask, Network};
use crate::svd::{svd, truncate};
use crate::Result;

/// Stored-weight bookkeeping for one factored layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightBudget {
    /// `d_in · d_out` of the source dense layer.
    pub original_count: u64,
    /// `d_in·k + k·k + k·d_out` after truncated SVD.
    pub factored_count: u64,
    /// Entries removed again by sparsification.
    pub zeroed_count: u64,
}

impl WeightBudget {
    /// Stored weights actually left after sparsification.
    pub fn remaining(&self) -> u64 {
        self.factored_count - self.zeroed_count
    }

    /// True when factoring stores more weights than the dense layer did.
    pub fn is_expansion(&self) -> bool {
        self.factored_count > self.original_count
    }

    /// Fraction of the original weights removed by factoring alone.
    pub fn reduction(&self) -> f64 {
        1.0 - self.factored_count as f64 / self.original_count as f64
    }
}

/// Weight counts for factoring a `d_in x d_out` layer at rank `k`.
pub fn count_weights(d_in: usize, d_out: usize, k: usize) -> Result<WeightBudget> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::Shape("layer dimensions must be positive".into()));
    }
    if k == 0 || k > d_in.min(d_out) {
        return Err(Error::Rank {
            requested: k,
            max: d_in.min(d_out),
        });
    }
    let (d_in, d_out, k) = (d_in as u64, d_out as u64, k as u64);
    Ok(WeightBudget {
        original_count: d_in * d_out,
        factored_count: d_in * k + k * k + k * d_out,
        zeroed_count: 0,
    })
}

/// Replace the dense layer at `layer_index` with its rank-`k` truncated SVD.
///
/// Masks start all-ones, the bias is carried over unchanged, every other
/// layer is untouched.
pub fn factorize_layer(net: &Network, layer_index: usize, k: usize) -> Result<Network> {
    let dense = match net.layer(layer_index)? {
        Layer::Dense(l) => l,
        Layer::Factored(_) => {
            return Err(Error::Layer(format!(
                "layer {layer_index} is already factored"
            )))
        }
    };
    let factors = truncate(&svd(dense.weights())?, k)?;
    let u_hat = factors.u().clone();
    let s_hat = factors.s().to_vec();
    let v_hat = factors.v().transpose(); // k x d_out
    let u_mask = Mask::all_true(u_hat.rows(), u_hat.cols());
    let v_mask = Mask::all_true(v_hat.rows(), v_hat.cols());
    let layer = FactoredLayer::new(
        u_hat,
        s_hat,
        v_hat,
        dense.bias().to_vec(),
        u_mask,
        v_mask,
        dense.activation(),
    )?;
    net.with_layer_replaced(layer_index, Layer::Factored(layer))
}

/// Total stored weights of a network: dense layers contribute
/// `d_in·d_out`, factored layers their [`WeightBudget::remaining`], and
/// biases count in both.
pub fn stored_weights(net: &Network) -> u64 {
    stored_weights_with(net, false)
}

/// Same accounting but with the singular value block counted as its `k`
/// diagonal values instead of `k x k`. Quoted in report footnotes only.
pub fn stored_weights_diag_s(net: &Network) -> u64 {
    stored_weights_with(net, true)
}

fn stored_weights_with(net: &Network, diag_s: bool) -> u64 {
    let mut total = 0u64;
    for layer in net.layers() {
        match layer {
            Layer::Dense(l) => {
                total += (l.weights().rows() * l.weights().cols()) as u64;
                total += l.bias().len() as u64;
            }
            Layer::Factored(l) => {
                let (d_in, k, d_out) = (l.u_hat().rows(), l.k(), l.v_hat().cols());
                let s_block = if diag_s { k } else { k * k } as u64;
                let factored = (d_in * k + k * d_out) as u64 + s_block;
                total += factored - l.zeroed_count() as u64;
                total += l.bias().len() as u64;
            }
        }
    }
    total
}

/// Stored-weight count of `model_before` divided by that of `model_after`.
pub fn compression_rate(model_before: &Network, model_after: &Network) -> f64 {
    stored_weights(model_before) as f64 / stored_weights(model_after) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::network::{forward, Activation, DenseLayer};
    use crate::rng::Rng;

    fn random_net(seed: u64, dims: &[usize]) -> Network {
        Network::seeded(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1], seed).unwrap()
    }

    #[test]
    fn reference_4096_accounting() {
        let b = count_weights(4096, 4096, 64).unwrap();
        assert_eq!(b.factored_count, 528_384);
        assert_eq!(b.original_count, 16_777_216);
        assert!((b.reduction() - 0.9685).abs() < 0.0001);
    }

    #[test]
    fn break_even_accounting() {
        let b = count_weights(4, 6, 2).unwrap();
        assert_eq!(b.factored_count, 4 * 2 + 2 * 2 + 2 * 6);
        assert_eq!(b.factored_count, b.original_count);
        assert!(!b.is_expansion());
    }

    #[test]
    fn expansion_is_flagged() {
        let b = count_weights(2, 2, 1).unwrap();
        assert_eq!(b.factored_count, 5);
        assert_eq!(b.original_count, 4);
        assert!(b.is_expansion());
    }

    #[test]
    fn full_rank_factorization_preserves_logits() {
        let net = random_net(5, &[6, 8, 4]);
        let factored = factorize_layer(&net, 0, 6).unwrap();
        let mut rng = Rng::new(50);
        for _ in 0..100 {
            let mut x = Matrix::zeros(1, 6);
            for v in x.as_mut_slice() {
                *v = rng.next_in_range(-2.0, 2.0);
            }
            let a = forward(&net, &x).unwrap();
            let b = forward(&factored, &x).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice().iter()) {
                assert!((p - q).abs() <= 1e-9, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn rank_one_weight_matrix_is_exact_at_k_1() {
        // W = col * row has rank 1.
        let mut w = Matrix::zeros(5, 3);
        let col = [0.5, -1.0, 2.0, 1.5, -0.25];
        let row = [1.0, -2.0, 0.5];
        for i in 0..5 {
            for j in 0..3 {
                w[(i, j)] = col[i] * row[j];
            }
        }
        let net = Network::from_layers(alloc::vec![Layer::Dense(
            DenseLayer::new(w, alloc::vec![0.1, 0.2, 0.3], Activation::None).unwrap()
        )])
        .unwrap();
        let factored = factorize_layer(&net, 0, 1).unwrap();
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let mut x = Matrix::zeros(1, 5);
            for v in x.as_mut_slice() {
                *v = rng.next_in_range(-1.0, 1.0);
            }
            let a = forward(&net, &x).unwrap();
            let b = forward(&factored, &x).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice().iter()) {
                assert!((p - q).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn truncation_error_bounded_by_singular_tail() {
        // Per-sample layer output error is at most sqrt(sum of tail s^2)*||x||.
        let net = random_net(13, &[16, 16, 4]);
        let dense_w = match net.layer(0).unwrap() {
            Layer::Dense(l) => l.weights().clone(),
            _ => unreachable!(),
        };
        let spectrum = svd(&dense_w).unwrap();
        let k = 4;
        let tail: f64 = spectrum.s()[k..].iter().map(|x| x * x).sum();
        let bound_scale = tail.sqrt();

        let factored = factorize_layer(&net, 0, k).unwrap();
        let mut rng = Rng::new(99);
        for _ in 0..50 {
            let mut x = Matrix::zeros(1, 16);
            for v in x.as_mut_slice() {
                *v = rng.next_in_range(-1.0, 1.0);
            }
            let x_norm = x.frobenius_norm();
            // Compare the factored layer's affine output against the dense one.
            let dense_out = x.matmul(&dense_w).unwrap();
            let fl = factored.factored_layer(0).unwrap();
            let fact_out = x
                .matmul(fl.u_hat())
                .unwrap()
                .scale_cols(fl.s_hat())
                .unwrap()
                .matmul(fl.v_hat())
                .unwrap();
            let err = dense_out.frobenius_distance(&fact_out).unwrap();
            assert!(
                err <= bound_scale * x_norm + 1e-9,
                "error {err} above bound {}",
                bound_scale * x_norm
            );
        }
    }

    #[test]
    fn layer_output_error_shrinks_as_k_grows() {
        let net = random_net(3, &[10, 10, 3]);
        let mut rng = Rng::new(4);
        let mut x = Matrix::zeros(8, 10);
        for v in x.as_mut_slice() {
            *v = rng.next_in_range(-1.0, 1.0);
        }
        let reference = forward(&net, &x).unwrap();
        let mut prev_err = f64::INFINITY;
        for k in 1..=10 {
            let factored = factorize_layer(&net, 0, k).unwrap();
            let out = forward(&factored, &x).unwrap();
            let err = reference.frobenius_distance(&out).unwrap();
            assert!(err <= prev_err + 1e-9, "k={k}: {err} > {prev_err}");
            prev_err = err;
        }
    }

    #[test]
    fn errors_on_bad_indices_and_ranks() {
        let net = random_net(1, &[4, 4, 2]);
        assert!(matches!(factorize_layer(&net, 9, 2), Err(Error::Layer(_))));
        assert!(matches!(
            factorize_layer(&net, 0, 0),
            Err(Error::Rank { .. })
        ));
        assert!(matches!(
            factorize_layer(&net, 0, 5),
            Err(Error::Rank { .. })
        ));
        let once = factorize_layer(&net, 0, 2).unwrap();
        assert!(matches!(factorize_layer(&once, 0, 2), Err(Error::Layer(_))));
    }

    #[test]
    fn identical_models_rate_one() {
        let net = random_net(2, &[5, 6, 3]);
        assert_eq!(compression_rate(&net, &net), 1.0);
    }

    #[test]
    fn single_layer_4096_rate() {
        // 16777216 / 528384 for the weights alone; biases dilute both sides
        // equally, so compare the raw budget numbers here.
        let b = count_weights(4096, 4096, 64).unwrap();
        let rate = b.original_count as f64 / b.factored_count as f64;
        assert!((rate - 31.75).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn zeroing_entries_strictly_increases_rate() {
        let net = random_net(7, &[8, 8, 3]);
        let factored = factorize_layer(&net, 0, 4).unwrap();
        let rate_dense = compression_rate(&net, &factored);

        // Mask off a few factor entries by hand.
        let fl = factored.factored_layer(0).unwrap();
        let mut u_hat = fl.u_hat().clone();
        let mut u_mask = fl.u_mask().clone();
        for r in 0..3 {
            u_hat[(r, 3)] = 0.0;
            u_mask.set(r, 3, false);
        }
        let sparser = FactoredLayer::new(
            u_hat,
            fl.s_hat().to_vec(),
            fl.v_hat().clone(),
            fl.bias().to_vec(),
            u_mask,
            fl.v_mask().clone(),
            fl.activation(),
        )
        .unwrap();
        let sparse_net = factored
            .with_layer_replaced(0, Layer::Factored(sparser))
            .unwrap();
        assert!(compression_rate(&net, &sparse_net) > rate_dense);
    }

    #[test]
    fn diag_s_accounting_is_smaller() {
        let net = random_net(11, &[8, 8, 3]);
        let factored = factorize_layer(&net, 0, 4).unwrap();
        assert!(stored_weights_diag_s(&factored) < stored_weights(&factored));
        assert_eq!(
            stored_weights(&factored) - stored_weights_diag_s(&factored),
            (4 * 4 - 4) as u64
        );
    }
}
