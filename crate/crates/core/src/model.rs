//! Twin uplift models: the logistic interaction model and ReLU networks with
//! per-node scaling factors.
//!
//! Every penalized coefficient (weights and scaling factors) is stored as a
//! pair of nonnegative parts, `theta = pos - neg`. Intercepts are stored
//! plainly and are never penalized.
//!
//! Both architectures share one flat layout. The interaction model is a
//! network without hidden layers whose output weights act on
//! `(x_1..x_p, t x_1..t x_p, t)`.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn relu(h: f64) -> f64 {
    if h > 0.0 {
        h
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    /// Logistic model with `2p + 1` coefficients on `(x, t x, t)`.
    Interaction { p: usize },
    /// Fully connected ReLU layers of the given widths on input `(x, t)`.
    Hidden { p: usize, widths: Vec<usize> },
}

impl Arch {
    pub fn hidden1(p: usize, m: usize) -> Self {
        Arch::Hidden { p, widths: vec![m] }
    }

    pub fn hidden2(p: usize, m1: usize, m2: usize) -> Self {
        Arch::Hidden {
            p,
            widths: vec![m1, m2],
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Arch::Interaction { p } | Arch::Hidden { p, .. } => *p,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p() == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        if let Arch::Hidden { widths, .. } = self {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "hidden widths must be nonempty and positive: {widths:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Offsets of one hidden layer inside the flat parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in` weights in split storage; row `k` feeds node `k`.
    pub weights: Range<usize>,
    /// Scaling factors in split storage.
    pub scales: Range<usize>,
    /// Node intercepts in intercept storage.
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub out_weights: Range<usize>,
    pub out_bias: usize,
    pub n_split: usize,
    pub n_intercepts: usize,
}

impl Layout {
    fn new(arch: &Arch) -> Self {
        match arch {
            Arch::Interaction { p } => Layout {
                layers: Vec::new(),
                out_weights: 0..2 * p + 1,
                out_bias: 0,
                n_split: 2 * p + 1,
                n_intercepts: 1,
            },
            Arch::Hidden { p, widths } => {
                let mut layers = Vec::with_capacity(widths.len());
                let mut split = 0;
                let mut icpt = 0;
                let mut n_in = p + 1;
                for &n_out in widths {
                    let weights = split..split + n_in * n_out;
                    let scales = weights.end..weights.end + n_out;
                    split = scales.end;
                    let bias = icpt..icpt + n_out;
                    icpt = bias.end;
                    layers.push(LayerLayout {
                        n_in,
                        n_out,
                        weights,
                        scales,
                        bias,
                    });
                    n_in = n_out;
                }
                let out_weights = split..split + n_in;
                Layout {
                    layers,
                    out_weights: out_weights.clone(),
                    out_bias: icpt,
                    n_split: out_weights.end,
                    n_intercepts: icpt + 1,
                }
            }
        }
    }

    /// True when split coordinate `i` is a scaling factor (penalized by the
    /// structured constant) rather than a weight.
    pub fn is_scale(&self, i: usize) -> bool {
        self.layers.iter().any(|l| l.scales.contains(&i))
    }
}

/// Conditional means of both twin branches at one covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinOutput {
    pub mu1: f64,
    pub mu0: f64,
    pub uplift: f64,
}

impl TwinOutput {
    /// Mean of the branch selected by the observed treatment.
    pub fn mu_t(&self, t: u8) -> f64 {
        let t = f64::from(t);
        t * self.mu1 + (1.0 - t) * self.mu0
    }
}

/// All model coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinParams {
    arch: Arch,
    layout: Layout,
    pub(crate) pos: Vec<f64>,
    pub(crate) neg: Vec<f64>,
    pub(crate) intercepts: Vec<f64>,
}

impl TwinParams {
    /// Every coefficient zero, every scaling factor one.
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut pos = vec![0.0; layout.n_split];
        for l in &layout.layers {
            pos[l.scales.clone()].fill(1.0);
        }
        Ok(Self {
            neg: vec![0.0; layout.n_split],
            intercepts: vec![0.0; layout.n_intercepts],
            pos,
            layout,
            arch,
        })
    }

    /// Starting point for training.
    ///
    /// Interaction models start at zero. Networks draw each weight matrix
    /// uniformly in `±sqrt(6 / (fan_in + fan_out))`, with zero intercepts and
    /// unit scaling factors.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        if params.layout.layers.is_empty() {
            return Ok(params);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut blocks: Vec<(Range<usize>, f64)> = params
            .layout
            .layers
            .iter()
            .map(|l| (l.weights.clone(), (6.0 / (l.n_in + l.n_out) as f64).sqrt()))
            .collect();
        let m_last = params.layout.out_weights.len();
        blocks.push((
            params.layout.out_weights.clone(),
            (6.0 / (m_last + 1) as f64).sqrt(),
        ));
        for (range, bound) in blocks {
            for i in range {
                let w = rng.random_range(-bound..bound);
                params.set_theta(i, w);
            }
        }
        Ok(params)
    }

    /// Interaction model from its intercept and `2p + 1` coefficients.
    pub fn interaction(theta0: f64, theta: &[f64]) -> Result<Self> {
        if theta.len() < 3 || theta.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "interaction coefficients must have length 2p+1, got {}",
                theta.len()
            )));
        }
        let mut params = Self::zeros(Arch::Interaction {
            p: (theta.len() - 1) / 2,
        })?;
        for (i, &v) in theta.iter().enumerate() {
            params.set_theta(i, v);
        }
        params.intercepts[0] = theta0;
        Ok(params)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn p(&self) -> usize {
        self.arch.p()
    }

    pub fn pos(&self) -> &[f64] {
        &self.pos
    }

    pub fn neg(&self) -> &[f64] {
        &self.neg
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn intercepts_mut(&mut self) -> &mut [f64] {
        &mut self.intercepts
    }

    /// Effective value `pos[i] - neg[i]` of split coordinate `i`.
    pub fn theta(&self, i: usize) -> f64 {
        self.pos[i] - self.neg[i]
    }

    /// Effective values of all split coordinates.
    pub fn split_values(&self) -> Vec<f64> {
        self.pos.iter().zip(&self.neg).map(|(u, v)| u - v).collect()
    }

    /// Stores `value` in canonical form: `pos = max(value, 0)`, `neg = max(-value, 0)`.
    pub fn set_theta(&mut self, i: usize, value: f64) {
        self.pos[i] = value.max(0.0);
        self.neg[i] = (-value).max(0.0);
    }

    /// Sets both parts directly. Panics on negative input.
    pub fn set_split(&mut self, i: usize, pos: f64, neg: f64) {
        assert!(pos >= 0.0 && neg >= 0.0, "split parts must be nonnegative");
        self.pos[i] = pos;
        self.neg[i] = neg;
    }

    /// Scaling factors of every hidden layer, in layer order.
    pub fn scales(&self) -> Vec<f64> {
        self.layout
            .layers
            .iter()
            .flat_map(|l| l.scales.clone())
            .map(|i| self.theta(i))
            .collect()
    }

    /// Hidden nodes with a nonzero scaling factor, per layer.
    pub fn active_nodes_per_layer(&self) -> Vec<usize> {
        self.layout
            .layers
            .iter()
            .map(|l| l.scales.clone().filter(|&i| self.theta(i) != 0.0).count())
            .collect()
    }

    /// Hidden nodes with a nonzero scaling factor (0 for the interaction model).
    pub fn active_nodes(&self) -> usize {
        self.active_nodes_per_layer().iter().sum()
    }

    /// Weights (not scaling factors) that are exactly zero.
    pub fn zero_weights(&self) -> usize {
        (0..self.layout.n_split)
            .filter(|&i| self.theta(i) == 0.0 && !self.layout.is_scale(i))
            .count()
    }

    /// Number of scalar parameters (split coordinates plus intercepts).
    pub fn n_params(&self) -> usize {
        self.layout.n_split + self.layout.n_intercepts
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Conditional mean for treatment indicator `t`.
    pub fn forward(&self, x: &[f64], t: u8) -> Result<f64> {
        self.check_x(x)?;
        let theta = self.split_values();
        let net = Net::new(&self.layout, &theta, &self.intercepts);
        let mut ws = Workspace::new(&self.layout);
        let (o1, o0) = net.twin_logits(x, &mut ws);
        Ok(sigmoid(if t == 1 { o1 } else { o0 }))
    }

    /// Both branches from one pass sharing the same coefficients.
    pub fn twin_forward(&self, x: &[f64]) -> Result<TwinOutput> {
        self.check_x(x)?;
        let theta = self.split_values();
        let net = Net::new(&self.layout, &theta, &self.intercepts);
        let mut ws = Workspace::new(&self.layout);
        Ok(net.twin_output(x, &mut ws))
    }

    /// Predicted uplift for every row of `data`.
    pub fn predict_uplift(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: data.p(),
            });
        }
        let theta = self.split_values();
        let net = Net::new(&self.layout, &theta, &self.intercepts);
        let mut ws = Workspace::new(&self.layout);
        Ok((0..data.n())
            .map(|i| net.twin_output(data.row(i), &mut ws).uplift)
            .collect())
    }

    /// Pre-activations `s_k * z_k` of the first hidden layer for both branches.
    pub fn first_layer_preactivations(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_x(x)?;
        let theta = self.split_values();
        let net = Net::new(&self.layout, &theta, &self.intercepts);
        let mut ws = Workspace::new(&self.layout);
        net.twin_logits(x, &mut ws);
        Ok((ws.branch[1].h[0].clone(), ws.branch[0].h[0].clone()))
    }
}

/// Logistic interaction model evaluated at `(x, t)`.
pub fn interaction_forward(params: &TwinParams, x: &[f64], t: u8) -> Result<f64> {
    if !matches!(params.arch, Arch::Interaction { .. }) {
        return Err(Error::InvalidArgument("expected an interaction model".into()));
    }
    params.forward(x, t)
}

/// Hidden-layer network evaluated at `(x, t)`.
pub fn nn_forward(params: &TwinParams, x: &[f64], t: u8) -> Result<f64> {
    if !matches!(params.arch, Arch::Hidden { .. }) {
        return Err(Error::InvalidArgument("expected a hidden-layer model".into()));
    }
    params.forward(x, t)
}

/// One-hidden-layer network with `2p + 1` unit-scaled nodes that reproduces
/// the interaction model `(theta0, theta)` for every `x` in `[0, c]^p`.
///
/// Node `k < p` passes `x_k` through, node `p + k` computes
/// `ReLU(x_k - c + c t) = t x_k`, and the last node passes `t` through.
/// Outside the box the `t = 0` interaction nodes no longer vanish and the
/// two models differ.
pub fn construct_nn_from_interaction(theta0: f64, theta: &[f64], c: f64) -> Result<TwinParams> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("c must be positive and finite, got {c}")));
    }
    if theta.len() < 3 || theta.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "interaction coefficients must have length 2p+1, got {}",
            theta.len()
        )));
    }
    let p = (theta.len() - 1) / 2;
    let m = 2 * p + 1;
    let mut params = TwinParams::zeros(Arch::hidden1(p, m))?;
    let layer = params.layout.layers[0].clone();
    let n_in = layer.n_in;
    let w = |k: usize, j: usize| layer.weights.start + k * n_in + j;
    for k in 0..p {
        params.set_theta(w(k, k), 1.0);
        params.set_theta(w(p + k, k), 1.0);
        params.set_theta(w(p + k, p), c);
        params.intercepts[layer.bias.start + p + k] = -c;
    }
    params.set_theta(w(2 * p, p), 1.0);
    for (k, &v) in theta.iter().enumerate() {
        let i = params.layout.out_weights.start + k;
        params.set_theta(i, v);
    }
    let out_bias = params.layout.out_bias;
    params.intercepts[out_bias] = theta0;
    Ok(params)
}

/// Per-branch forward activations kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct BranchCache {
    /// Affine pre-activation before scaling, per hidden layer.
    pub z: Vec<Vec<f64>>,
    /// Scaled pre-activation `s * z`, per hidden layer.
    pub h: Vec<Vec<f64>>,
    /// `ReLU(h)`, per hidden layer.
    pub a: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Scratch buffers reused across observations.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// Index 1 is the treated branch, index 0 the control branch.
    pub branch: [BranchCache; 2],
    base: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
    dz_first: Vec<f64>,
}

impl Workspace {
    pub fn new(layout: &Layout) -> Self {
        let mk = || BranchCache {
            z: layout.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            h: layout.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            a: layout.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            logit: 0.0,
        };
        let widest = layout.layers.iter().map(|l| l.n_out).max().unwrap_or(0);
        let first = layout.layers.first().map_or(0, |l| l.n_out);
        Self {
            branch: [mk(), mk()],
            base: vec![0.0; first],
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
            dz_first: vec![0.0; first],
        }
    }
}

/// Read-only evaluation view over effective parameter values.
pub(crate) struct Net<'a> {
    layout: &'a Layout,
    theta: &'a [f64],
    icpt: &'a [f64],
}

impl<'a> Net<'a> {
    pub fn new(layout: &'a Layout, theta: &'a [f64], icpt: &'a [f64]) -> Self {
        Self {
            layout,
            theta,
            icpt,
        }
    }

    pub fn twin_output(&self, x: &[f64], ws: &mut Workspace) -> TwinOutput {
        let (o1, o0) = self.twin_logits(x, ws);
        let mu1 = sigmoid(o1);
        let mu0 = sigmoid(o0);
        TwinOutput {
            mu1,
            mu0,
            uplift: mu1 - mu0,
        }
    }

    /// Output logits `(treated, control)`; fills `ws` for a later backward pass.
    pub fn twin_logits(&self, x: &[f64], ws: &mut Workspace) -> (f64, f64) {
        let lay = self.layout;
        let p = x.len();
        if lay.layers.is_empty() {
            let w = &self.theta[lay.out_weights.clone()];
            let base = self.icpt[lay.out_bias] + dot(&w[..p], x);
            let inter = dot(&w[p..2 * p], x) + w[2 * p];
            ws.branch[1].logit = base + inter;
            ws.branch[0].logit = base;
            return (base + inter, base);
        }

        // First layer: covariate part shared by both branches.
        let first = &lay.layers[0];
        let n_in = first.n_in;
        for k in 0..first.n_out {
            let row = &self.theta[first.weights.start + k * n_in..first.weights.start + (k + 1) * n_in];
            ws.base[k] = self.icpt[first.bias.start + k] + dot(&row[..p], x);
        }
        for t in 0..2 {
            let cache = &mut ws.branch[t];
            for k in 0..first.n_out {
                let w_t = self.theta[first.weights.start + k * n_in + p];
                let z = ws.base[k] + if t == 1 { w_t } else { 0.0 };
                let h = self.theta[first.scales.start + k] * z;
                cache.z[0][k] = z;
                cache.h[0][k] = h;
                cache.a[0][k] = relu(h);
            }
            for (l, layer) in lay.layers.iter().enumerate().skip(1) {
                let (prev, rest) = cache.a.split_at_mut(l);
                let input = &prev[l - 1];
                for k in 0..layer.n_out {
                    let row = &self.theta
                        [layer.weights.start + k * layer.n_in..layer.weights.start + (k + 1) * layer.n_in];
                    let z = self.icpt[layer.bias.start + k] + dot(row, input);
                    let h = self.theta[layer.scales.start + k] * z;
                    cache.z[l][k] = z;
                    cache.h[l][k] = h;
                    rest[0][k] = relu(h);
                }
            }
            let last = cache.a.last().expect("at least one hidden layer");
            cache.logit =
                self.icpt[lay.out_bias] + dot(&self.theta[lay.out_weights.clone()], last);
        }
        (ws.branch[1].logit, ws.branch[0].logit)
    }

    /// Accumulates `d loss / d theta` into `g_split` and `d loss / d intercept`
    /// into `g_icpt`, given the logit sensitivities of both branches. Must
    /// follow `twin_logits` on the same `x` and `ws`.
    pub fn backward(
        &self,
        x: &[f64],
        d_logit1: f64,
        d_logit0: f64,
        ws: &mut Workspace,
        g_split: &mut [f64],
        g_icpt: &mut [f64],
    ) {
        let lay = self.layout;
        let p = x.len();
        g_icpt[lay.out_bias] += d_logit1 + d_logit0;
        if lay.layers.is_empty() {
            let o = lay.out_weights.start;
            let both = d_logit1 + d_logit0;
            for j in 0..p {
                g_split[o + j] += both * x[j];
                g_split[o + p + j] += d_logit1 * x[j];
            }
            g_split[o + 2 * p] += d_logit1;
            return;
        }

        ws.dz_first.fill(0.0);
        let n_layers = lay.layers.len();
        for (t, d_logit) in [(0usize, d_logit0), (1usize, d_logit1)] {
            if d_logit == 0.0 {
                continue;
            }
            let cache = &ws.branch[t];
            let last = &cache.a[n_layers - 1];
            let out = lay.out_weights.start;
            let m_last = last.len();
            for k in 0..m_last {
                g_split[out + k] += d_logit * last[k];
                ws.delta[k] = d_logit * self.theta[out + k];
            }
            for l in (0..n_layers).rev() {
                let layer = &lay.layers[l];
                // ws.delta holds d loss / d a for this layer; turn it into d loss / d z.
                for k in 0..layer.n_out {
                    let dh = if cache.h[l][k] > 0.0 { ws.delta[k] } else { 0.0 };
                    g_split[layer.scales.start + k] += dh * cache.z[l][k];
                    let dz = dh * self.theta[layer.scales.start + k];
                    ws.delta[k] = dz;
                    g_icpt[layer.bias.start + k] += dz;
                }
                if l == 0 {
                    let n_in = layer.n_in;
                    for k in 0..layer.n_out {
                        let dz = ws.delta[k];
                        ws.dz_first[k] += dz;
                        if t == 1 {
                            g_split[layer.weights.start + k * n_in + p] += dz;
                        }
                    }
                } else {
                    let input = &cache.a[l - 1];
                    ws.delta_next[..layer.n_in].fill(0.0);
                    for k in 0..layer.n_out {
                        let dz = ws.delta[k];
                        if dz == 0.0 {
                            continue;
                        }
                        let start = layer.weights.start + k * layer.n_in;
                        for j in 0..layer.n_in {
                            g_split[start + j] += dz * input[j];
                            ws.delta_next[j] += dz * self.theta[start + j];
                        }
                    }
                    let n = layer.n_in;
                    ws.delta[..n].copy_from_slice(&ws.delta_next[..n]);
                }
            }
        }
        // Covariate weights of the first layer see the summed branch sensitivities.
        let first = &lay.layers[0];
        for k in 0..first.n_out {
            let dz = ws.dz_first[k];
            if dz == 0.0 {
                continue;
            }
            let start = first.weights.start + k * first.n_in;
            for j in 0..p {
                g_split[start + j] += dz * x[j];
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MODEL_FORMAT: &str = "upliftlab-twin";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    weights_u: Vec<f64>,
    weights_v: Vec<f64>,
    bias: Vec<f64>,
    scale_a: Vec<f64>,
    scale_b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    arch: String,
    p: usize,
    widths: Vec<usize>,
    layers: Vec<LayerFile>,
    out_u: Vec<f64>,
    out_v: Vec<f64>,
    out_bias: f64,
}

impl TwinParams {
    /// Version-tagged JSON document with flat parameter arrays.
    pub fn to_json(&self) -> String {
        let (arch, widths) = match &self.arch {
            Arch::Interaction { .. } => ("interaction", Vec::new()),
            Arch::Hidden { widths, .. } => ("hidden", widths.clone()),
        };
        let layers = self
            .layout
            .layers
            .iter()
            .map(|l| LayerFile {
                weights_u: self.pos[l.weights.clone()].to_vec(),
                weights_v: self.neg[l.weights.clone()].to_vec(),
                bias: self.intercepts[l.bias.clone()].to_vec(),
                scale_a: self.pos[l.scales.clone()].to_vec(),
                scale_b: self.neg[l.scales.clone()].to_vec(),
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            arch: arch.into(),
            p: self.p(),
            widths,
            layers,
            out_u: self.pos[self.layout.out_weights.clone()].to_vec(),
            out_v: self.neg[self.layout.out_weights.clone()].to_vec(),
            out_bias: self.intercepts[self.layout.out_bias],
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let arch = match file.arch.as_str() {
            "interaction" => Arch::Interaction { p: file.p },
            "hidden" => Arch::Hidden {
                p: file.p,
                widths: file.widths.clone(),
            },
            other => return Err(Error::ModelFormat(format!("unknown arch {other:?}"))),
        };
        let mut params = TwinParams::zeros(arch)?;
        let layout = params.layout.clone();
        if file.layers.len() != layout.layers.len() {
            return Err(Error::ModelFormat("layer count does not match widths".into()));
        }
        let mut put = |range: Range<usize>, u: &[f64], v: &[f64], what: &str| -> Result<()> {
            if u.len() != range.len() || v.len() != range.len() {
                return Err(Error::ModelFormat(format!("{what}: wrong length")));
            }
            if u.iter().chain(v).any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::ModelFormat(format!("{what}: split parts must be finite and >= 0")));
            }
            params.pos[range.clone()].copy_from_slice(u);
            params.neg[range].copy_from_slice(v);
            Ok(())
        };
        for (l, lf) in layout.layers.iter().zip(&file.layers) {
            put(l.weights.clone(), &lf.weights_u, &lf.weights_v, "weights")?;
            put(l.scales.clone(), &lf.scale_a, &lf.scale_b, "scales")?;
        }
        put(layout.out_weights.clone(), &file.out_u, &file.out_v, "output weights")?;
        for (l, lf) in layout.layers.iter().zip(&file.layers) {
            if lf.bias.len() != l.bias.len() {
                return Err(Error::ModelFormat("bias: wrong length".into()));
            }
            params.intercepts[l.bias.clone()].copy_from_slice(&lf.bias);
        }
        params.intercepts[layout.out_bias] = file.out_bias;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(arch: Arch, seed: u64) -> TwinParams {
        let mut params = TwinParams::init(arch, seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabc);
        for i in 0..params.layout.n_split {
            if !params.layout.is_scale(i) {
                params.set_theta(i, rng.random_range(-1.0..1.0));
            }
        }
        for b in params.intercepts.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        params
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn interaction_zero_params_give_half() {
        let params = TwinParams::zeros(Arch::Interaction { p: 3 }).unwrap();
        for t in [0, 1] {
            assert_eq!(interaction_forward(&params, &[1.0, -2.0, 3.0], t).unwrap(), 0.5);
        }
    }

    #[test]
    fn interaction_intercept_only() {
        let params = TwinParams::interaction(1.0, &[0.0; 5]).unwrap();
        let v = interaction_forward(&params, &[0.3, 0.9], 1).unwrap();
        assert!((v - 0.731_059).abs() < 1e-6);
    }

    #[test]
    fn control_branch_ignores_treatment_block() {
        let a = TwinParams::interaction(0.2, &[0.5, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = TwinParams::interaction(0.2, &[0.5, -1.0, 3.0, -7.0, 2.5]).unwrap();
        let x = [0.4, 1.0];
        assert_eq!(a.forward(&x, 0).unwrap(), b.forward(&x, 0).unwrap());
        assert_ne!(a.forward(&x, 1).unwrap(), b.forward(&x, 1).unwrap());
    }

    #[test]
    fn uplift_vanishes_without_treatment_terms() {
        let params = TwinParams::interaction(-0.3, &[1.5, -2.0, 0.0, 0.0, 0.0]).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [2.5, 7.0]] {
            assert_eq!(params.twin_forward(&x).unwrap().uplift, 0.0);
        }
    }

    #[test]
    fn negating_treatment_coefficient_flips_uplift_sign() {
        let a = TwinParams::interaction(0.1, &[0.3, 0.7, 0.8]).unwrap();
        let b = TwinParams::interaction(0.1, &[0.3, 0.7, -0.8]).unwrap();
        let ua = a.twin_forward(&[0.0]).unwrap().uplift;
        let ub = b.twin_forward(&[0.0]).unwrap().uplift;
        assert!(ua > 0.0 && ub < 0.0);
    }

    #[test]
    fn pruned_network_outputs_output_intercept() {
        let mut params = random_params(Arch::hidden1(4, 6), 3);
        for i in params.layout.layers[0].scales.clone() {
            params.set_theta(i, 0.0);
        }
        let b2 = params.intercepts[params.layout.out_bias];
        for x in [[0.0; 4], [1.0, -2.0, 3.0, 0.5]] {
            for t in [0, 1] {
                assert_eq!(nn_forward(&params, &x, t).unwrap(), sigmoid(b2));
            }
        }
        assert_eq!(params.active_nodes(), 0);
    }

    #[test]
    fn network_all_zero_gives_half() {
        let mut params = TwinParams::zeros(Arch::hidden1(3, 4)).unwrap();
        assert_eq!(params.forward(&[1.0, 2.0, 3.0], 1).unwrap(), 0.5);
        params.intercepts[0] = 5.0;
        assert_eq!(params.forward(&[1.0, 2.0, 3.0], 0).unwrap(), 0.5);
    }

    #[test]
    fn single_node_hand_trace() {
        let mut params = TwinParams::zeros(Arch::hidden1(2, 1)).unwrap();
        let l = params.layout.layers[0].clone();
        params.set_theta(l.weights.start, 1.0);
        let out = params.layout.out_weights.start;
        params.set_theta(out, 1.0);
        let v = nn_forward(&params, &[2.0, 0.0], 0).unwrap();
        assert!((v - 0.880_797).abs() < 1e-6);
    }

    #[test]
    fn twin_output_matches_direct_calls() {
        for arch in [Arch::Interaction { p: 5 }, Arch::hidden1(5, 7), Arch::hidden2(5, 6, 5)] {
            let params = random_params(arch, 21);
            let mut rng = ChaCha20Rng::seed_from_u64(4);
            for _ in 0..100 {
                let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
                let out = params.twin_forward(&x).unwrap();
                assert!(out.uplift > -1.0 && out.uplift < 1.0);
                for t in [0, 1] {
                    let direct = params.forward(&x, t).unwrap();
                    assert!((out.mu_t(t) - direct).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn construction_rejects_nonpositive_c() {
        assert!(construct_nn_from_interaction(0.0, &[1.0, 1.0, 1.0], 0.0).is_err());
        assert!(construct_nn_from_interaction(0.0, &[1.0, 1.0, 1.0], -1.0).is_err());
        assert!(construct_nn_from_interaction(0.0, &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn construction_hand_trace_p1() {
        let nn = construct_nn_from_interaction(0.0, &[1.0, 1.0, 1.0], 1.0).unwrap();
        let lin = TwinParams::interaction(0.0, &[1.0, 1.0, 1.0]).unwrap();
        let expect = sigmoid(2.0);
        assert!((nn_forward(&nn, &[0.5], 1).unwrap() - expect).abs() < 1e-15);
        assert!((interaction_forward(&lin, &[0.5], 1).unwrap() - expect).abs() < 1e-15);
        assert_eq!(nn.active_nodes(), 3);
    }

    #[test]
    fn construction_at_origin_control() {
        let theta = [0.3, -1.2, 2.0, 0.4, -0.9];
        let nn = construct_nn_from_interaction(-0.7, &theta, 2.0).unwrap();
        assert_eq!(nn.forward(&[0.0, 0.0], 0).unwrap(), sigmoid(-0.7));
    }

    #[test]
    fn active_nodes_counts() {
        let mut params = TwinParams::init(Arch::hidden1(3, 10), 0).unwrap();
        assert_eq!(params.active_nodes(), 10);
        let scales = params.layout.layers[0].scales.clone();
        params.set_theta(scales.start + 2, 0.0);
        params.set_theta(scales.start + 6, 0.0);
        assert_eq!(params.active_nodes(), 8);
    }

    #[test]
    fn init_respects_bounds_and_split_canonical() {
        let params = TwinParams::init(Arch::hidden1(10, 20), 7).unwrap();
        let l = &params.layout.layers[0];
        let bound = (6.0f64 / 31.0).sqrt();
        for i in l.weights.clone() {
            assert!(params.theta(i).abs() <= bound);
            assert!(params.pos[i] == 0.0 || params.neg[i] == 0.0);
        }
        let out_bound = (6.0f64 / 21.0).sqrt();
        assert!(params.layout.out_weights.clone().all(|i| params.theta(i).abs() <= out_bound));
        assert!(params.scales().iter().all(|&s| s == 1.0));
        assert!(params.intercepts.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let params = TwinParams::zeros(Arch::hidden1(3, 2)).unwrap();
        assert!(matches!(
            params.forward(&[1.0], 0),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn json_round_trip() {
        for arch in [Arch::Interaction { p: 3 }, Arch::hidden2(3, 4, 2)] {
            let params = random_params(arch, 99);
            let back = TwinParams::from_json(&params.to_json()).unwrap();
            assert_eq!(back, params);
        }
        assert!(TwinParams::from_json("{\"format\":\"other\"}").is_err());
    }
}
