//! Sparse SVD over the truncated factors: pick rows of `û` and columns of
//! `v̂` by a strategy score, then zero each selected line's tail entries —
//! the positions tied to the smallest kept singular values.
//!
//! Strategies differ only in which lines they select; the dropped positions
//! within a line are always the tail. `rr` controls how deep the tail cut
//! goes and carries a semantics flag: `Removed` drops `floor(rr·k)` entries
//! per line (the definition in prose), `Retained` drops `floor((1−rr)·k)`
//! (the reading under which the published sparse-SVD compression figures
//! are self-consistent). Reports always state which one was used.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::network::{FactoredLayer, Layer, Network};
use crate::scoring::ScoreMatrix;
use crate::Result;

/// Line selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Absolute-weight sums of the original dense matrix.
    SlrW,
    /// Mean absolute activations over scoring data.
    SlrA,
    /// Fairness-aware scores.
    FairLrf,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::SlrW => "slr_w",
            Strategy::SlrA => "slr_a",
            Strategy::FairLrf => "fairlrf",
        }
    }
}

/// How the reduction rate maps to a per-line drop count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrSemantics {
    /// `rr` is the fraction removed: drop `floor(rr·k)` tail entries.
    Removed,
    /// `rr` is the fraction retained: drop `floor((1−rr)·k)` tail entries.
    Retained,
}

impl RrSemantics {
    pub fn name(&self) -> &'static str {
        match self {
            RrSemantics::Removed => "removed",
            RrSemantics::Retained => "retained",
        }
    }
}

/// The realized sparsification decision, echoed into run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyPlan {
    pub strategy: Strategy,
    pub sr: f64,
    pub rr: f64,
    pub rr_semantics: RrSemantics,
    /// Present for the fairness strategy only.
    pub beta: Option<f64>,
    /// Selected `û` rows, ascending.
    pub selected_rows_u: Vec<usize>,
    /// Selected `v̂` columns, ascending.
    pub selected_cols_v: Vec<usize>,
    pub drop_count_per_line: usize,
}

impl SparsifyPlan {
    /// Entries this plan zeroes when applied to an all-ones-mask layer.
    pub fn zeroed_count(&self) -> usize {
        (self.selected_rows_u.len() + self.selected_cols_v.len()) * self.drop_count_per_line
    }

    /// Human-readable block for `plan.txt` and report embedding.
    pub fn to_text(&self) -> String {
        let beta = match self.beta {
            Some(b) => format!("{b}"),
            None => "-".into(),
        };
        let rows: Vec<String> = self.selected_rows_u.iter().map(|i| format!("{i}")).collect();
        let cols: Vec<String> = self.selected_cols_v.iter().map(|i| format!("{i}")).collect();
        format!(
            "strategy = {}\nsr = {}\nrr = {}\nrr_semantics = {}\nbeta = {}\n\
             drop_count_per_line = {}\nzeroed_count = {}\nselected_rows_u = [{}]\nselected_cols_v = [{}]\n",
            self.strategy.name(),
            self.sr,
            self.rr,
            self.rr_semantics.name(),
            beta,
            self.drop_count_per_line,
            self.zeroed_count(),
            rows.join(", "),
            cols.join(", "),
        )
    }
}

/// Per-strategy inputs for [`line_scores`].
#[derive(Debug, Clone)]
pub enum ScoreContext<'a> {
    /// The original dense weight matrix the layer was factored from.
    AbsoluteWeight { original: &'a Matrix },
    /// Activations feeding the target layer over the scoring data, one row
    /// per sample.
    AbsoluteActivation { layer_inputs: &'a Matrix },
    /// Fairness scores for both factors.
    Fairness {
        u_scores: &'a ScoreMatrix,
        v_scores: &'a ScoreMatrix,
    },
}

/// `floor(rate · n)` as a line count, with a tiny nudge that absorbs binary
/// representation error (so 0.3 of 10 lines is 3, not 2).
pub fn line_count(n: usize, rate: f64) -> usize {
    (fmath::floor(rate * n as f64 + 1e-9) as usize).min(n)
}

/// Tail entries to drop per selected line: `floor(rr·k)` under `Removed`,
/// `floor((1−rr)·k)` under `Retained`.
pub fn drop_count(k: usize, rr: f64, semantics: RrSemantics) -> usize {
    match semantics {
        RrSemantics::Removed => line_count(k, rr),
        RrSemantics::Retained => line_count(k, 1.0 - rr),
    }
}

/// Score every `û` row and every `v̂` column under a strategy.
///
/// `tail_drop` is the number of tail entries a selected line would lose;
/// the fairness strategy sums scores over exactly those entries.
pub fn line_scores(
    layer: &FactoredLayer,
    strategy: Strategy,
    context: &ScoreContext,
    tail_drop: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d_in = layer.u_hat().rows();
    let d_out = layer.v_hat().cols();
    let k = layer.k();
    match (strategy, context) {
        (Strategy::SlrW, ScoreContext::AbsoluteWeight { original }) => {
            if original.rows() != d_in || original.cols() != d_out {
                return Err(Error::Shape(format!(
                    "original weights are {}x{}, layer is {d_in}x{d_out}",
                    original.rows(),
                    original.cols()
                )));
            }
            let mut rows = alloc::vec![0.0; d_in];
            let mut cols = alloc::vec![0.0; d_out];
            for r in 0..d_in {
                for c in 0..d_out {
                    let a = fmath::abs(original[(r, c)]);
                    rows[r] += a;
                    cols[c] += a;
                }
            }
            Ok((rows, cols))
        }
        (Strategy::SlrA, ScoreContext::AbsoluteActivation { layer_inputs }) => {
            if layer_inputs.cols() != d_in {
                return Err(Error::Shape(format!(
                    "activations are {} wide, layer input is {d_in}",
                    layer_inputs.cols()
                )));
            }
            let n = layer_inputs.rows() as f64;
            // Row score: mean |input activation| of that input neuron.
            let mut rows = alloc::vec![0.0; d_in];
            for r in 0..layer_inputs.rows() {
                for (acc, v) in rows.iter_mut().zip(layer_inputs.row(r).iter()) {
                    *acc += fmath::abs(*v);
                }
            }
            for v in rows.iter_mut() {
                *v /= n;
            }
            // Column score: mean |pre-activation| of that output neuron.
            let pre = layer_inputs
                .matmul(layer.u_hat())?
                .scale_cols(layer.s_hat())?
                .matmul(layer.v_hat())?;
            let mut cols = alloc::vec![0.0; d_out];
            for r in 0..pre.rows() {
                for (j, v) in pre.row(r).iter().enumerate() {
                    cols[j] += fmath::abs(v + layer.bias()[j]);
                }
            }
            for v in cols.iter_mut() {
                *v /= n;
            }
            Ok((rows, cols))
        }
        (Strategy::FairLrf, ScoreContext::Fairness { u_scores, v_scores }) => {
            let su = u_scores.values();
            let sv = v_scores.values();
            if su.rows() != d_in || su.cols() != k {
                return Err(Error::Shape(format!(
                    "u scores are {}x{}, expected {d_in}x{k}",
                    su.rows(),
                    su.cols()
                )));
            }
            if sv.rows() != k || sv.cols() != d_out {
                return Err(Error::Shape(format!(
                    "v scores are {}x{}, expected {k}x{d_out}",
                    sv.rows(),
                    sv.cols()
                )));
            }
            let tail = tail_drop.min(k);
            // Sum over exactly the entries a selected line would lose.
            let mut rows = alloc::vec![0.0; d_in];
            for (r, acc) in rows.iter_mut().enumerate() {
                for c in (k - tail)..k {
                    *acc += su[(r, c)];
                }
            }
            let mut cols = alloc::vec![0.0; d_out];
            for (c, acc) in cols.iter_mut().enumerate() {
                for r in (k - tail)..k {
                    *acc += sv[(r, c)];
                }
            }
            Ok((rows, cols))
        }
        (strategy, _) => Err(Error::Context(format!(
            "strategy {} was given the wrong scoring context",
            strategy.name()
        ))),
    }
}

/// Indices of the `floor(sr·n)` smallest scores, ties broken by lowest
/// index; returned ascending.
pub fn select_lines(scores: &[f64], sr: f64) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&sr), "sr must be in [0, 1]");
    let count = line_count(scores.len(), sr);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();
    chosen
}

/// Zero the last `drop_count_per_line` entries of every selected `û` row and
/// `v̂` column (along the k axis) and mark them in the masks. Every other
/// entry is carried over bit-identically.
pub fn apply_plan(layer: &FactoredLayer, plan: &SparsifyPlan) -> Result<FactoredLayer> {
    let k = layer.k();
    if plan.drop_count_per_line > k {
        return Err(Error::Plan(format!(
            "cannot drop {} of {k} entries per line",
            plan.drop_count_per_line
        )));
    }
    if let Some(&r) = plan.selected_rows_u.iter().find(|&&r| r >= layer.u_hat().rows()) {
        return Err(Error::Plan(format!("selected u row {r} out of range")));
    }
    if let Some(&c) = plan.selected_cols_v.iter().find(|&&c| c >= layer.v_hat().cols()) {
        return Err(Error::Plan(format!("selected v column {c} out of range")));
    }

    let mut u_hat = layer.u_hat().clone();
    let mut v_hat = layer.v_hat().clone();
    let mut u_mask = layer.u_mask().clone();
    let mut v_mask = layer.v_mask().clone();
    let tail = (k - plan.drop_count_per_line)..k;
    for &r in &plan.selected_rows_u {
        for c in tail.clone() {
            u_hat[(r, c)] = 0.0;
            u_mask.set(r, c, false);
        }
    }
    for &c in &plan.selected_cols_v {
        for r in tail.clone() {
            v_hat[(r, c)] = 0.0;
            v_mask.set(r, c, false);
        }
    }
    FactoredLayer::new(
        u_hat,
        layer.s_hat().to_vec(),
        v_hat,
        layer.bias().to_vec(),
        u_mask,
        v_mask,
        layer.activation(),
    )
}

/// Full sparse-SVD step on an already-factored layer: score lines, select
/// the `floor(sr·n)` lowest for each factor independently, drop their tails.
/// Returns the updated network and the realized plan.
#[allow(clippy::too_many_arguments)]
pub fn sparsify(
    net: &Network,
    layer_index: usize,
    strategy: Strategy,
    sr: f64,
    rr: f64,
    rr_semantics: RrSemantics,
    beta: Option<f64>,
    context: &ScoreContext,
) -> Result<(Network, SparsifyPlan)> {
    if !(0.0..=1.0).contains(&sr) {
        return Err(Error::Config(format!("sr must be in [0, 1], got {sr}")));
    }
    if !(0.0..=1.0).contains(&rr) {
        return Err(Error::Config(format!("rr must be in [0, 1], got {rr}")));
    }
    if strategy == Strategy::FairLrf && beta.is_none() {
        return Err(Error::Config("the fairness strategy requires beta".into()));
    }
    let layer = net.factored_layer(layer_index)?;
    let drop = drop_count(layer.k(), rr, rr_semantics);
    let (row_scores, col_scores) = line_scores(layer, strategy, context, drop)?;
    let plan = SparsifyPlan {
        strategy,
        sr,
        rr,
        rr_semantics,
        beta,
        selected_rows_u: select_lines(&row_scores, sr),
        selected_cols_v: select_lines(&col_scores, sr),
        drop_count_per_line: drop,
    };
    let sparsified = apply_plan(layer, &plan)?;
    let net = net.with_layer_replaced(layer_index, Layer::Factored(sparsified))?;
    Ok((net, plan))
}
