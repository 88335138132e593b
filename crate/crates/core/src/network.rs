//! A minimal feed-forward classifier: dense and factored layers, ReLU,
//! softmax cross-entropy, analytic gradients, plain SGD.
//!
//! The network stands in for a large pre-trained backbone at desk scale.
//! Factored layers carry the truncated SVD of a dense layer together with
//! binary masks; masked factor entries are pinned to exactly zero and stay
//! zero through any further update. There is no fine-tuning step anywhere:
//! training exists to produce the base model, sparsification never retrains.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::Sample;
use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::Result;

// ── Layer types ──────────────────────────────────────────────────────

/// Elementwise activation applied after the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Identity; used by the final (logit) layer.
    None,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative as a function of the pre-activation.
    #[inline]
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Row-major binary mask over a factor matrix. `true` = entry kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn all_true(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    /// Rebuild from row-major keep flags.
    pub fn from_flags(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} flags cannot fill a {rows}x{cols} mask",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        self.keep[r * self.cols + c] = keep;
    }

    /// Number of masked-off (dropped) entries.
    pub fn dropped(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// Row-major keep flags.
    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }
}

/// Plain affine layer: `y = act(x·W + b)`, weights `d_in x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                weights.cols()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Truncated-SVD replacement of a dense layer:
/// `y = act(x·(û∘u_mask)·diag(ŝ)·(v̂∘v_mask) + b)` with `û: d_in x k` and
/// `v̂: k x d_out`. The bias is carried over unchanged from the source dense
/// layer; masked entries of `û`/`v̂` are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredLayer {
    u_hat: Matrix,
    s_hat: Vec<f64>,
    v_hat: Matrix,
    bias: Vec<f64>,
    u_mask: Mask,
    v_mask: Mask,
    activation: Activation,
}

impl FactoredLayer {
    pub fn new(
        u_hat: Matrix,
        s_hat: Vec<f64>,
        v_hat: Matrix,
        bias: Vec<f64>,
        u_mask: Mask,
        v_mask: Mask,
        activation: Activation,
    ) -> Result<Self> {
        let k = s_hat.len();
        if u_hat.cols() != k || v_hat.rows() != k {
            return Err(Error::Shape(format!(
                "factor shapes {}x{} / {}x{} do not agree with k = {k}",
                u_hat.rows(),
                u_hat.cols(),
                v_hat.rows(),
                v_hat.cols()
            )));
        }
        if bias.len() != v_hat.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                v_hat.cols()
            )));
        }
        if u_mask.rows() != u_hat.rows()
            || u_mask.cols() != u_hat.cols()
            || v_mask.rows() != v_hat.rows()
            || v_mask.cols() != v_hat.cols()
        {
            return Err(Error::Shape("mask shapes do not match factors".into()));
        }
        let layer = Self {
            u_hat,
            s_hat,
            v_hat,
            bias,
            u_mask,
            v_mask,
            activation,
        };
        layer.check_masked_zero()?;
        Ok(layer)
    }

    fn check_masked_zero(&self) -> Result<()> {
        for r in 0..self.u_hat.rows() {
            for c in 0..self.u_hat.cols() {
                if !self.u_mask.get(r, c) && self.u_hat[(r, c)] != 0.0 {
                    return Err(Error::Plan(format!("masked u entry ({r},{c}) is nonzero")));
                }
            }
        }
        for r in 0..self.v_hat.rows() {
            for c in 0..self.v_hat.cols() {
                if !self.v_mask.get(r, c) && self.v_hat[(r, c)] != 0.0 {
                    return Err(Error::Plan(format!("masked v entry ({r},{c}) is nonzero")));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.s_hat.len()
    }

    pub fn u_hat(&self) -> &Matrix {
        &self.u_hat
    }

    pub fn s_hat(&self) -> &[f64] {
        &self.s_hat
    }

    pub fn v_hat(&self) -> &Matrix {
        &self.v_hat
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn u_mask(&self) -> &Mask {
        &self.u_mask
    }

    pub fn v_mask(&self) -> &Mask {
        &self.v_mask
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Total masked-off entries across both factors.
    pub fn zeroed_count(&self) -> usize {
        self.u_mask.dropped() + self.v_mask.dropped()
    }

    /// Pin masked entries back to exactly zero after a parameter update.
    fn refreeze_masked(&mut self) {
        for r in 0..self.u_hat.rows() {
            for c in 0..self.u_hat.cols() {
                if !self.u_mask.get(r, c) {
                    self.u_hat[(r, c)] = 0.0;
                }
            }
        }
        for r in 0..self.v_hat.rows() {
            for c in 0..self.v_hat.cols() {
                if !self.v_mask.get(r, c) {
                    self.v_hat[(r, c)] = 0.0;
                }
            }
        }
    }
}

/// One layer of the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Factored(FactoredLayer),
}

impl Layer {
    pub fn d_in(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.rows(),
            Layer::Factored(l) => l.u_hat.rows(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.cols(),
            Layer::Factored(l) => l.v_hat.cols(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Factored(l) => l.activation,
        }
    }
}

// ── Parameter addressing ─────────────────────────────────────────────

/// Which factor of a factored layer a score or probe addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSide {
    U,
    V,
}

/// Identifies one factor matrix inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorId {
    pub layer: usize,
    pub side: FactorSide,
}

/// Which parameter block of a layer an address points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamPart {
    Weight,
    Bias,
    FactorU,
    FactorS,
    FactorV,
}

/// Address of a single scalar parameter. `row` is 0 for bias and singular
/// value entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub layer: usize,
    pub part: ParamPart,
    pub row: usize,
    pub col: usize,
}

impl FactorId {
    /// Address of entry `(row, col)` of this factor.
    pub fn param(&self, row: usize, col: usize) -> ParamId {
        ParamId {
            layer: self.layer,
            part: match self.side {
                FactorSide::U => ParamPart::FactorU,
                FactorSide::V => ParamPart::FactorV,
            },
            row,
            col,
        }
    }
}

// ── Network ──────────────────────────────────────────────────────────

/// Ordered stack of layers; the last layer emits `class_count` logits and
/// uses no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    class_count: usize,
}

impl Network {
    /// Assemble from layers, validating that adjacent dimensions chain and
    /// the last layer is a logit layer.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::Layer("network needs at least one layer".into()))?;
        if last.activation() != Activation::None {
            return Err(Error::Layer(
                "final layer must use no activation (logits)".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Shape(format!(
                    "layer {} output width {} does not match layer {} input width {}",
                    i,
                    pair[0].d_out(),
                    i + 1,
                    pair[1].d_in()
                )));
            }
        }
        let class_count = last.d_out();
        Ok(Self {
            layers,
            class_count,
        })
    }

    /// Fresh dense network `input_dim -> hidden... -> class_count` with ReLU
    /// between layers, seeded uniform init in `±sqrt(6 / (d_in + d_out))`,
    /// zero biases.
    pub fn seeded(
        input_dim: usize,
        hidden: &[usize],
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || class_count == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = Rng::new(seed);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(class_count);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (d_in, d_out) = (dims[i], dims[i + 1]);
            let bound = fmath::sqrt(6.0 / (d_in + d_out) as f64);
            let mut w = Matrix::zeros(d_in, d_out);
            for r in 0..d_in {
                for c in 0..d_out {
                    w[(r, c)] = rng.next_in_range(-bound, bound);
                }
            }
            let activation = if i + 2 == dims.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            layers.push(Layer::Dense(DenseLayer::new(
                w,
                vec![0.0; d_out],
                activation,
            )?));
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&Layer> {
        self.layers
            .get(index)
            .ok_or_else(|| Error::Layer(format!("layer index {index} out of range")))
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Replace one layer; the new layer must preserve both widths.
    pub fn with_layer_replaced(&self, index: usize, layer: Layer) -> Result<Network> {
        let old = self.layer(index)?;
        if old.d_in() != layer.d_in() || old.d_out() != layer.d_out() {
            return Err(Error::Shape(format!(
                "replacement layer is {}x{}, expected {}x{}",
                layer.d_in(),
                layer.d_out(),
                old.d_in(),
                old.d_out()
            )));
        }
        let mut layers = self.layers.clone();
        layers[index] = layer;
        Network::from_layers(layers)
    }

    /// The factored layer at `index`, or a layer error.
    pub fn factored_layer(&self, index: usize) -> Result<&FactoredLayer> {
        match self.layer(index)? {
            Layer::Factored(fl) => Ok(fl),
            Layer::Dense(_) => Err(Error::Layer(format!(
                "layer {index} is dense, expected a factored layer"
            ))),
        }
    }

    /// Fixed enumeration of every scalar parameter address.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(l) => {
                    for r in 0..l.weights.rows() {
                        for c in 0..l.weights.cols() {
                            out.push(ParamId {
                                layer: li,
                                part: ParamPart::Weight,
                                row: r,
                                col: c,
                            });
                        }
                    }
                    for c in 0..l.bias.len() {
                        out.push(ParamId {
                            layer: li,
                            part: ParamPart::Bias,
                            row: 0,
                            col: c,
                        });
                    }
                }
                Layer::Factored(l) => {
                    for r in 0..l.u_hat.rows() {
                        for c in 0..l.u_hat.cols() {
                            out.push(ParamId {
                                layer: li,
                                part: ParamPart::FactorU,
                                row: r,
                                col: c,
                            });
                        }
                    }
                    for c in 0..l.s_hat.len() {
                        out.push(ParamId {
                            layer: li,
                            part: ParamPart::FactorS,
                            row: 0,
                            col: c,
                        });
                    }
                    for r in 0..l.v_hat.rows() {
                        for c in 0..l.v_hat.cols() {
                            out.push(ParamId {
                                layer: li,
                                part: ParamPart::FactorV,
                                row: r,
                                col: c,
                            });
                        }
                    }
                    for c in 0..l.bias.len() {
                        out.push(ParamId {
                            layer: li,
                            part: ParamPart::Bias,
                            row: 0,
                            col: c,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_ids().len()
    }

    pub fn get_param(&self, id: ParamId) -> Result<f64> {
        let layer = self.layer(id.layer)?;
        let err = || Error::Layer(format!("parameter address {id:?} does not exist"));
        match (layer, id.part) {
            (Layer::Dense(l), ParamPart::Weight) => in_matrix(&l.weights, id).ok_or_else(err),
            (Layer::Dense(l), ParamPart::Bias) => l.bias.get(id.col).copied().ok_or_else(err),
            (Layer::Factored(l), ParamPart::FactorU) => in_matrix(&l.u_hat, id).ok_or_else(err),
            (Layer::Factored(l), ParamPart::FactorS) => {
                l.s_hat.get(id.col).copied().ok_or_else(err)
            }
            (Layer::Factored(l), ParamPart::FactorV) => in_matrix(&l.v_hat, id).ok_or_else(err),
            (Layer::Factored(l), ParamPart::Bias) => l.bias.get(id.col).copied().ok_or_else(err),
            _ => Err(err()),
        }
    }

    /// Overwrite a single parameter. Probe machinery may write masked factor
    /// entries; training is what keeps them frozen, not this accessor.
    pub fn set_param(&mut self, id: ParamId, value: f64) -> Result<()> {
        self.get_param(id)?; // address validation
        let layer = &mut self.layers[id.layer];
        match (layer, id.part) {
            (Layer::Dense(l), ParamPart::Weight) => l.weights[(id.row, id.col)] = value,
            (Layer::Dense(l), ParamPart::Bias) => l.bias[id.col] = value,
            (Layer::Factored(l), ParamPart::FactorU) => l.u_hat[(id.row, id.col)] = value,
            (Layer::Factored(l), ParamPart::FactorS) => l.s_hat[id.col] = value,
            (Layer::Factored(l), ParamPart::FactorV) => l.v_hat[(id.row, id.col)] = value,
            (Layer::Factored(l), ParamPart::Bias) => l.bias[id.col] = value,
            _ => unreachable!("validated above"),
        }
        Ok(())
    }

    /// The factor matrix a `FactorId` addresses.
    pub fn factor_matrix(&self, id: FactorId) -> Result<&Matrix> {
        let fl = self.factored_layer(id.layer).map_err(|_| {
            Error::Target(format!(
                "layer {} does not hold the requested factor",
                id.layer
            ))
        })?;
        Ok(match id.side {
            FactorSide::U => &fl.u_hat,
            FactorSide::V => &fl.v_hat,
        })
    }

    fn sgd_step(&mut self, grad: &NetworkGrad, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grad.layers.iter()) {
            match (layer, g) {
                (Layer::Dense(l), LayerGrad::Dense { weights, bias }) => {
                    axpy_matrix(&mut l.weights, weights, -lr);
                    axpy_slice(&mut l.bias, bias, -lr);
                }
                (
                    Layer::Factored(l),
                    LayerGrad::Factored {
                        u_hat,
                        s_hat,
                        v_hat,
                        bias,
                    },
                ) => {
                    axpy_matrix(&mut l.u_hat, u_hat, -lr);
                    axpy_slice(&mut l.s_hat, s_hat, -lr);
                    axpy_matrix(&mut l.v_hat, v_hat, -lr);
                    axpy_slice(&mut l.bias, bias, -lr);
                    l.refreeze_masked();
                }
                _ => unreachable!("gradient layout always mirrors the network"),
            }
        }
    }
}

fn in_matrix(m: &Matrix, id: ParamId) -> Option<f64> {
    (id.row < m.rows() && id.col < m.cols()).then(|| m[(id.row, id.col)])
}

fn axpy_matrix(dst: &mut Matrix, src: &Matrix, alpha: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice().iter()) {
        *d += alpha * s;
    }
}

fn axpy_slice(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += alpha * s;
    }
}

// ── Batches ──────────────────────────────────────────────────────────

/// A non-empty batch of feature rows with 1-based class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Matrix,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    /// Gather features and labels out of dataset samples.
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = samples[0].x.len();
        let mut data = Vec::with_capacity(samples.len() * d);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.x.len() != d {
                return Err(Error::Shape("samples have mixed feature widths".into()));
            }
            data.extend_from_slice(&s.x);
            labels.push(s.y0);
        }
        Ok(Self {
            features: Matrix::from_vec(samples.len(), d, data)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

// ── Forward / loss / gradient ────────────────────────────────────────

struct Trace {
    /// `inputs[i]` is the input to layer `i`; `inputs[0]` is the batch.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    preacts: Vec<Matrix>,
    /// For factored layers: `(z1 = x·û, z2 = z1·diag(ŝ))`.
    mids: Vec<Option<(Matrix, Matrix)>>,
}

fn forward_trace(net: &Network, x: &Matrix) -> Result<(Trace, Matrix)> {
    if x.cols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} does not match network input width {}",
            x.cols(),
            net.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(net.layer_count());
    let mut preacts = Vec::with_capacity(net.layer_count());
    let mut mids = Vec::with_capacity(net.layer_count());
    let mut cur = x.clone();
    for layer in net.layers() {
        inputs.push(cur.clone());
        let pre = match layer {
            Layer::Dense(l) => {
                let mut pre = cur.matmul(&l.weights)?;
                add_bias(&mut pre, &l.bias);
                mids.push(None);
                pre
            }
            Layer::Factored(l) => {
                let z1 = cur.matmul(&l.u_hat)?;
                let z2 = z1.scale_cols(&l.s_hat)?;
                let mut pre = z2.matmul(&l.v_hat)?;
                add_bias(&mut pre, &l.bias);
                mids.push(Some((z1, z2)));
                pre
            }
        };
        let act = layer.activation();
        let mut out = pre.clone();
        for v in out.as_mut_slice() {
            *v = act.apply(*v);
        }
        preacts.push(pre);
        cur = out;
    }
    Ok((
        Trace {
            inputs,
            preacts,
            mids,
        },
        cur,
    ))
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias.iter()) {
            *v += b;
        }
    }
}

/// Batch logits, one row per input row.
pub fn forward(net: &Network, x: &Matrix) -> Result<Matrix> {
    forward_trace(net, x).map(|(_, logits)| logits)
}

/// Post-activation output of the first `count` layers — the input the layer
/// at index `count` sees. `count = 0` returns the batch unchanged.
pub fn forward_prefix(net: &Network, count: usize, x: &Matrix) -> Result<Matrix> {
    if count > net.layer_count() {
        return Err(Error::Layer(format!(
            "prefix of {count} layers exceeds network depth {}",
            net.layer_count()
        )));
    }
    if x.cols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} does not match network input width {}",
            x.cols(),
            net.input_dim()
        )));
    }
    let mut cur = x.clone();
    for layer in net.layers().iter().take(count) {
        let mut pre = match layer {
            Layer::Dense(l) => cur.matmul(&l.weights)?,
            Layer::Factored(l) => cur
                .matmul(&l.u_hat)?
                .scale_cols(&l.s_hat)?
                .matmul(&l.v_hat)?,
        };
        add_bias(
            &mut pre,
            match layer {
                Layer::Dense(l) => &l.bias,
                Layer::Factored(l) => &l.bias,
            },
        );
        let act = layer.activation();
        for v in pre.as_mut_slice() {
            *v = act.apply(*v);
        }
        cur = pre;
    }
    Ok(cur)
}

/// Logits for one feature vector.
pub fn forward_one(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(forward(net, &m)?.row(0).to_vec())
}

/// Row-wise softmax of a logit matrix.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = fmath::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn validate_labels(net: &Network, labels: &[usize]) -> Result<()> {
    for &y in labels {
        if y == 0 || y > net.class_count() {
            return Err(Error::Label(format!(
                "label {y} outside 1..={}",
                net.class_count()
            )));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy of the batch under the network.
pub fn loss(net: &Network, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    validate_labels(net, batch.labels())?;
    let logits = forward(net, batch.features())?;
    let mut total = 0.0;
    for (r, &label) in batch.labels().iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = row.iter().map(|&v| fmath::exp(v - max)).sum();
        total += max + fmath::ln(lse) - row[label - 1];
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of one layer's parameters, mirroring the layer layout.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Dense {
        weights: Matrix,
        bias: Vec<f64>,
    },
    Factored {
        u_hat: Matrix,
        s_hat: Vec<f64>,
        v_hat: Matrix,
        bias: Vec<f64>,
    },
}

/// Gradients of the mean batch loss for every parameter.
#[derive(Debug, Clone)]
pub struct NetworkGrad {
    layers: Vec<LayerGrad>,
}

impl NetworkGrad {
    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    /// Gradient of a single parameter by address.
    pub fn get(&self, id: ParamId) -> Result<f64> {
        let err = || Error::Layer(format!("gradient address {id:?} does not exist"));
        let layer = self.layers.get(id.layer).ok_or_else(err)?;
        match (layer, id.part) {
            (LayerGrad::Dense { weights, .. }, ParamPart::Weight) => {
                in_matrix(weights, id).ok_or_else(err)
            }
            (LayerGrad::Dense { bias, .. }, ParamPart::Bias) => {
                bias.get(id.col).copied().ok_or_else(err)
            }
            (LayerGrad::Factored { u_hat, .. }, ParamPart::FactorU) => {
                in_matrix(u_hat, id).ok_or_else(err)
            }
            (LayerGrad::Factored { s_hat, .. }, ParamPart::FactorS) => {
                s_hat.get(id.col).copied().ok_or_else(err)
            }
            (LayerGrad::Factored { v_hat, .. }, ParamPart::FactorV) => {
                in_matrix(v_hat, id).ok_or_else(err)
            }
            (LayerGrad::Factored { bias, .. }, ParamPart::Bias) => {
                bias.get(id.col).copied().ok_or_else(err)
            }
            _ => Err(err()),
        }
    }
}

/// Analytic backpropagation gradients of the mean batch loss.
///
/// Masked factor entries receive their gradient as computed; freezing them
/// is the updater's job.
pub fn gradient(net: &Network, batch: &Batch) -> Result<NetworkGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    validate_labels(net, batch.labels())?;
    let (trace, logits) = forward_trace(net, batch.features())?;
    let n = batch.len() as f64;

    // d(mean CE)/d(logits) = (softmax - onehot) / n
    let mut delta = softmax(&logits);
    for (r, &label) in batch.labels().iter().enumerate() {
        delta[(r, label - 1)] -= 1.0;
    }
    for v in delta.as_mut_slice() {
        *v /= n;
    }

    let mut grads: Vec<LayerGrad> = Vec::with_capacity(net.layer_count());
    for li in (0..net.layer_count()).rev() {
        let layer = &net.layers()[li];
        // Through the activation.
        let pre = &trace.preacts[li];
        let act = layer.activation();
        for (d, p) in delta.as_mut_slice().iter_mut().zip(pre.as_slice().iter()) {
            *d *= act.derivative(*p);
        }
        let input = &trace.inputs[li];
        match layer {
            Layer::Dense(l) => {
                let d_w = input.transpose().matmul(&delta)?;
                let d_b = column_sums(&delta);
                grads.push(LayerGrad::Dense {
                    weights: d_w,
                    bias: d_b,
                });
                if li > 0 {
                    delta = delta.matmul(&l.weights.transpose())?;
                }
            }
            Layer::Factored(l) => {
                let (z1, z2) = trace.mids[li].as_ref().expect("factored trace entry");
                let d_v = z2.transpose().matmul(&delta)?;
                let d_z2 = delta.matmul(&l.v_hat.transpose())?;
                let mut d_s = vec![0.0; l.k()];
                for r in 0..z1.rows() {
                    for (j, ds) in d_s.iter_mut().enumerate() {
                        *ds += z1[(r, j)] * d_z2[(r, j)];
                    }
                }
                let d_z1 = d_z2.scale_cols(&l.s_hat)?;
                let d_u = input.transpose().matmul(&d_z1)?;
                let d_b = column_sums(&delta);
                grads.push(LayerGrad::Factored {
                    u_hat: d_u,
                    s_hat: d_s,
                    v_hat: d_v,
                    bias: d_b,
                });
                if li > 0 {
                    delta = d_z1.matmul(&l.u_hat.transpose())?;
                }
            }
        }
    }
    grads.reverse();
    Ok(NetworkGrad { layers: grads })
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r).iter()) {
            *o += v;
        }
    }
    out
}

// ── Training ─────────────────────────────────────────────────────────

/// SGD schedule. Defaults mirror the reference pre-training recipe
/// (lr 0.01 decayed by 0.57 every 10 of 100 epochs, batches of 128);
/// desk-scale runs usually override them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_every: usize,
    pub lr_decay_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            lr_decay_every: 10,
            lr_decay_gamma: 0.57,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(Error::Config("lr_decay_gamma must be in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Mini-batch SGD with the step schedule from `cfg`. Deterministic given the
/// seed: fixed shuffle order, fixed accumulation order. Returns the trained
/// copy; with `epochs = 0` that copy is bitwise-identical to the input.
pub fn train(net: &Network, samples: &[Sample], cfg: &TrainConfig) -> Result<Network> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut net = net.clone();
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let decay_steps = (epoch / cfg.lr_decay_every) as i32;
        let lr = cfg.learning_rate * fmath::powi(cfg.lr_decay_gamma, decay_steps);
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let grad = gradient(&net, &batch)?;
            net.sgd_step(&grad, lr);
        }
    }
    Ok(net)
}

/// Index of the largest logit, ties toward the lowest index (0-based; add
/// one to compare against 1-based dataset labels).
pub fn predict(net: &Network, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward_one(net, x)?))
}

/// Predicted logit indices for a whole batch.
pub fn predict_batch(net: &Network, x: &Matrix) -> Result<Vec<usize>> {
    let logits = forward(net, x)?;
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
