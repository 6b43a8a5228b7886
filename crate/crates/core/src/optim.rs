//! Mini-batch proximal SGD on split parameters.
//!
//! Each penalized coordinate `theta = u - v` takes a gradient step on both
//! parts (`u` sees `lambda + g`, `v` sees `lambda - g`) followed by projection
//! onto the nonnegative orthant. Weights use the weight constant (lasso),
//! scaling factors use the structured constant, which zeroes whole nodes.
//! Intercepts take plain SGD steps.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{accumulate, Gradients, LossKind};
use crate::model::{TwinParams, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegKind {
    /// Proximal lasso on weights.
    L1,
    /// Ridge decay added to the weight gradient.
    L2,
    None,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
            RegKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "l1" => Ok(RegKind::L1),
            "l2" => Ok(RegKind::L2),
            "none" => Ok(RegKind::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown regularization {other:?} (expected l1, l2 or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    /// Structured (scaling factor) constant.
    pub lambda1: f64,
    /// Weight regularization constant.
    pub lambda2: f64,
    pub reg: RegKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Multiplier on the treatment term of the loss.
    pub treatment_weight: f64,
    /// Rewrite every split pair as `(max(theta, 0), max(-theta, 0))` after each step.
    pub canonicalize: bool,
    /// Use the crossed structured projection `a <- ReLU(b~), b <- ReLU(a~)`.
    pub crossed_structured_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            lambda1: 0.0,
            lambda2: 0.0,
            reg: RegKind::L1,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            loss: LossKind::Uplift,
            treatment_weight: 1.0,
            canonicalize: true,
            crossed_structured_projection: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be > 0, got {}", self.eta)));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.treatment_weight >= 0.0) {
            return Err(Error::InvalidArgument("treatment_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// One proximal lasso update on a split pair. Returns `(u', v', u' - v')`.
pub fn prox_lasso_step(u: f64, v: f64, grad: f64, eta: f64, lambda: f64) -> (f64, f64, f64) {
    debug_assert!(u >= 0.0 && v >= 0.0);
    let u_tilde = u - eta * (lambda + grad);
    let v_tilde = v - eta * (lambda - grad);
    let u1 = u_tilde.max(0.0);
    let v1 = v_tilde.max(0.0);
    (u1, v1, u1 - v1)
}

/// Proximal update of a scaling factor `s = a - b`. The node is pruned
/// (`s' = 0`) exactly when both intermediate points are nonpositive.
pub fn prox_structured_step(a: f64, b: f64, grad_s: f64, eta: f64, lambda1: f64) -> (f64, f64, f64) {
    prox_lasso_step(a, b, grad_s, eta, lambda1)
}

/// Crossed projection variant: `a' = ReLU(b~)`, `b' = ReLU(a~)`.
pub fn prox_structured_step_crossed(
    a: f64,
    b: f64,
    grad_s: f64,
    eta: f64,
    lambda1: f64,
) -> (f64, f64, f64) {
    let a_tilde = a - eta * (lambda1 + grad_s);
    let b_tilde = b - eta * (lambda1 - grad_s);
    let a1 = b_tilde.max(0.0);
    let b1 = a_tilde.max(0.0);
    (a1, b1, a1 - b1)
}

/// `(max(theta, 0), max(-theta, 0))` for `theta = u - v`.
pub fn canonicalize(u: f64, v: f64) -> (f64, f64) {
    let theta = u - v;
    (theta.max(0.0), (-theta).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub active_nodes: usize,
    pub zero_weights: usize,
    pub clamped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,l1,l2,active_nodes,zero_weights")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{},{}",
                e.epoch, e.loss, e.l1, e.l2, e.active_nodes, e.zero_weights
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// What the training loop should do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Applies one proximal SGD step with mean-batch gradients `grads`.
pub fn apply_step(params: &mut TwinParams, grads: &Gradients, scale_mask: &[bool], cfg: &TrainConfig) {
    let eta = cfg.eta;
    for (i, &is_scale) in scale_mask.iter().enumerate() {
        let (u, v) = (params.pos[i], params.neg[i]);
        let mut g = grads.split[i];
        let (u1, v1, theta) = if is_scale {
            if cfg.crossed_structured_projection {
                prox_structured_step_crossed(u, v, g, eta, cfg.lambda1)
            } else {
                prox_structured_step(u, v, g, eta, cfg.lambda1)
            }
        } else {
            let lambda = match cfg.reg {
                RegKind::L1 => cfg.lambda2,
                RegKind::L2 => {
                    g += cfg.lambda2 * (u - v);
                    0.0
                }
                RegKind::None => 0.0,
            };
            prox_lasso_step(u, v, g, eta, lambda)
        };
        if cfg.canonicalize {
            params.set_theta(i, theta);
        } else {
            params.pos[i] = u1;
            params.neg[i] = v1;
        }
        debug_assert!(params.pos[i] >= 0.0 && params.neg[i] >= 0.0);
    }
    for (b, g) in params.intercepts.iter_mut().zip(&grads.intercepts) {
        *b -= eta * g;
    }
}

/// Trains for `cfg.epochs` epochs.
pub fn train(params: TwinParams, data: &Dataset, cfg: &TrainConfig) -> Result<(TwinParams, TrainTrace)> {
    train_monitored(params, data, cfg, |_, _| Control::Continue)
}

/// Trains, calling `monitor` after every epoch. Stops early when it returns
/// [`Control::Stop`].
///
/// A non-finite loss aborts with [`Error::Diverged`], which carries the
/// parameters at the end of the last finite epoch.
pub fn train_monitored<F>(
    mut params: TwinParams,
    data: &Dataset,
    cfg: &TrainConfig,
    mut monitor: F,
) -> Result<(TwinParams, TrainTrace)>
where
    F: FnMut(&EpochStats, &TwinParams) -> Control,
{
    cfg.validate()?;
    if data.p() != params.p() {
        return Err(Error::DimensionMismatch {
            expected: params.p(),
            got: data.p(),
        });
    }
    if data.n() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n_split = params.layout().n_split;
    let scale_mask: Vec<bool> = (0..n_split).map(|i| params.layout().is_scale(i)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut ws = Workspace::new(params.layout());
    let mut grads = Gradients::zeros_like(&params);
    let mut trace = TrainTrace::default();
    let mut last_good = params.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut l1_sum, mut l2_sum, mut clamped) = (0.0, 0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let theta = params.split_values();
            grads.split.fill(0.0);
            grads.intercepts.fill(0.0);
            let (l1, l2, c) = accumulate(
                &params,
                &theta,
                data,
                batch,
                cfg.loss,
                cfg.treatment_weight,
                &mut ws,
                &mut grads,
            );
            if !(l1 + l2).is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            l1_sum += l1;
            l2_sum += l2;
            clamped += c;
            let inv = 1.0 / batch.len() as f64;
            grads.split.iter_mut().for_each(|g| *g *= inv);
            grads.intercepts.iter_mut().for_each(|g| *g *= inv);
            apply_step(&mut params, &grads, &scale_mask, cfg);
        }
        let all_finite = params
            .pos
            .iter()
            .chain(&params.neg)
            .chain(&params.intercepts)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Diverged {
                epoch,
                last_good: Box::new(last_good),
            });
        }
        let n = data.n() as f64;
        let stats = EpochStats {
            epoch,
            loss: (l1_sum + l2_sum) / n,
            l1: l1_sum / n,
            l2: l2_sum / n,
            active_nodes: params.active_nodes(),
            zero_weights: params.zero_weights(),
            clamped,
        };
        let control = monitor(&stats, &params);
        trace.epochs.push(stats);
        last_good.clone_from(&params);
        if control == Control::Stop {
            break;
        }
    }
    Ok((last_good, trace))
}
