//! Uplift losses with analytic gradients through both twin branches.
//!
//! For one observation with conditional means `mu1 = m_{1|t=1}`,
//! `mu0 = m_{1|t=0}`:
//!
//! * outcome term: cross-entropy of `y` against the mean of the observed branch;
//! * treatment term: cross-entropy of `t` against the posterior propensity
//!   `p_{y1}`, i.e. `mu1 / (mu1 + mu0)` when `y = 1` and
//!   `(1 - mu1) / ((1 - mu1) + (1 - mu0))` when `y = 0`.
//!
//! The treatment term depends on both branches, so its gradient flows into
//! both. Penalties are not part of the loss value; the proximal optimizer
//! applies them.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Net, TwinParams, Workspace};

/// Lower bound applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Outcome cross-entropy plus posterior-propensity cross-entropy.
    Uplift,
    /// Joint (Y, T) negative log-likelihood.
    LogLik,
    /// Outcome cross-entropy only (plain logistic fit).
    BceOnly,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Uplift => "uplift",
            LossKind::LogLik => "loglik",
            LossKind::BceOnly => "bce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "uplift" => Ok(LossKind::Uplift),
            "loglik" => Ok(LossKind::LogLik),
            "bce" => Ok(LossKind::BceOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss {other:?} (expected uplift, loglik or bce)"
            ))),
        }
    }
}

/// Gradients congruent with [`TwinParams`]: one entry per split coordinate
/// (with respect to its effective value) and one per intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub split: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &TwinParams) -> Self {
        Self {
            split: vec![0.0; params.layout().n_split],
            intercepts: vec![0.0; params.layout().n_intercepts],
        }
    }

    fn scale(&mut self, s: f64) {
        self.split.iter_mut().for_each(|g| *g *= s);
        self.intercepts.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossResult {
    pub total: f64,
    /// Outcome term (for `LogLik`, the marginal outcome term).
    pub l1_term: f64,
    /// Posterior-propensity term; zero for `BceOnly`.
    pub l2_term: f64,
    pub grads: Gradients,
    /// Number of log arguments raised to [`LOG_FLOOR`].
    pub clamped: usize,
}

/// Posterior propensity `Pr(T = 1 | Y = y, x)` under a 1/2 design.
pub fn posterior_propensity(mu1: f64, mu0: f64, y: u8) -> Result<f64> {
    for m in [mu1, mu0] {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "conditional means must lie in (0, 1), got {m}"
            )));
        }
    }
    Ok(if y == 1 {
        mu1 / (mu1 + mu0)
    } else {
        (1.0 - mu1) / ((1.0 - mu1) + (1.0 - mu0))
    })
}

fn clamped_ln(v: f64, clamped: &mut usize) -> f64 {
    if v < LOG_FLOOR || v.is_nan() {
        *clamped += 1;
        LOG_FLOOR.ln()
    } else {
        v.ln()
    }
}

/// Loss of one observation and its sensitivities to the two output logits.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointLoss {
    pub l1: f64,
    pub l2: f64,
    pub d_logit1: f64,
    pub d_logit0: f64,
}

pub(crate) fn point_loss(
    mu1: f64,
    mu0: f64,
    t: u8,
    y: u8,
    kind: LossKind,
    treatment_weight: f64,
    clamped: &mut usize,
) -> PointLoss {
    let tf = f64::from(t);
    let yf = f64::from(y);
    let q1 = 1.0 - mu1;
    let q0 = 1.0 - mu0;
    // d mu / d logit
    let s1 = mu1 * q1;
    let s0 = mu0 * q0;

    let (l1, mut d1, mut d0) = match kind {
        LossKind::Uplift | LossKind::BceOnly => {
            let mu_t = if t == 1 { mu1 } else { mu0 };
            let l = -(yf * clamped_ln(mu_t, clamped) + (1.0 - yf) * clamped_ln(1.0 - mu_t, clamped));
            let d = mu_t - yf;
            if t == 1 {
                (l, d, 0.0)
            } else {
                (l, 0.0, d)
            }
        }
        LossKind::LogLik => {
            // -log Pr(Y = y | x) with Pr(Y = 1 | x) = (mu1 + mu0) / 2.
            if y == 1 {
                let sum = mu1 + mu0;
                let l = -clamped_ln(0.5 * sum, clamped);
                (l, -s1 / sum, -s0 / sum)
            } else {
                let sum = q1 + q0;
                let l = -clamped_ln(0.5 * sum, clamped);
                (l, s1 / sum, s0 / sum)
            }
        }
    };

    let mut l2 = 0.0;
    if kind != LossKind::BceOnly {
        // a_i = m_{y,i}: the probability of the observed outcome in branch i.
        // r_i = s_i / a_i, written without the division.
        let (a1, a0, r1, r0, sign) = if y == 1 {
            (mu1, mu0, q1, q0, 1.0)
        } else {
            (q1, q0, mu1, mu0, -1.0)
        };
        let sum = a1 + a0;
        let p = a1 / sum;
        l2 = -(tf * clamped_ln(p, clamped) + (1.0 - tf) * clamped_ln(1.0 - p, clamped));
        // l2 = -[t ln a1 + (1-t) ln a0 - ln(a1 + a0)], so
        // d l2 / d logit1 = sign * (-t / a1 + 1 / sum) * s1.
        let d_l2_1 = sign * (-tf * r1 + s1 / sum);
        let d_l2_0 = sign * (-(1.0 - tf) * r0 + s0 / sum);
        d1 += treatment_weight * d_l2_1;
        d0 += treatment_weight * d_l2_0;
        l2 *= treatment_weight;
    }
    PointLoss {
        l1,
        l2,
        d_logit1: d1,
        d_logit0: d0,
    }
}

/// Mean loss over the rows `idx` of `data`, with gradients.
pub fn uplift_loss_batch(
    params: &TwinParams,
    data: &Dataset,
    idx: &[usize],
    kind: LossKind,
) -> Result<BatchLossResult> {
    uplift_loss_batch_weighted(params, data, idx, kind, 1.0)
}

/// As [`uplift_loss_batch`], with the treatment term multiplied by `treatment_weight`.
pub fn uplift_loss_batch_weighted(
    params: &TwinParams,
    data: &Dataset,
    idx: &[usize],
    kind: LossKind,
    treatment_weight: f64,
) -> Result<BatchLossResult> {
    if idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if data.p() != params.p() {
        return Err(Error::DimensionMismatch {
            expected: params.p(),
            got: data.p(),
        });
    }
    let theta = params.split_values();
    let mut ws = Workspace::new(params.layout());
    let mut grads = Gradients::zeros_like(params);
    let (l1, l2, clamped) = accumulate(
        params,
        &theta,
        data,
        idx,
        kind,
        treatment_weight,
        &mut ws,
        &mut grads,
    );
    let n = idx.len() as f64;
    grads.scale(1.0 / n);
    let l1_term = l1 / n;
    let l2_term = l2 / n;
    Ok(BatchLossResult {
        total: l1_term + l2_term,
        l1_term,
        l2_term,
        grads,
        clamped,
    })
}

/// Sums (not averages) losses and gradients over `idx` into `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate(
    params: &TwinParams,
    theta: &[f64],
    data: &Dataset,
    idx: &[usize],
    kind: LossKind,
    treatment_weight: f64,
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> (f64, f64, usize) {
    let net = Net::new(params.layout(), theta, params.intercepts());
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut clamped = 0;
    for &i in idx {
        let x = data.row(i);
        let out = net.twin_output(x, ws);
        let pl = point_loss(
            out.mu1,
            out.mu0,
            data.t()[i],
            data.y()[i],
            kind,
            treatment_weight,
            &mut clamped,
        );
        l1 += pl.l1;
        l2 += pl.l2;
        net.backward(
            x,
            pl.d_logit1,
            pl.d_logit0,
            ws,
            &mut grads.split,
            &mut grads.intercepts,
        );
    }
    (l1, l2, clamped)
}

/// Loss value only, without gradients.
pub fn loss_value(params: &TwinParams, data: &Dataset, idx: &[usize], kind: LossKind) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let theta = params.split_values();
    let net = Net::new(params.layout(), &theta, params.intercepts());
    let mut ws = Workspace::new(params.layout());
    let mut clamped = 0;
    let mut sum = 0.0;
    for &i in idx {
        let out = net.twin_output(data.row(i), &mut ws);
        let pl = point_loss(out.mu1, out.mu0, data.t()[i], data.y()[i], kind, 1.0, &mut clamped);
        sum += pl.l1 + pl.l2;
    }
    Ok(sum / idx.len() as f64)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub masked: usize,
}

/// ReLU on/off pattern of every hidden node over the batch, both branches.
fn activation_pattern(params: &TwinParams, data: &Dataset, idx: &[usize]) -> Vec<bool> {
    let theta = params.split_values();
    let net = Net::new(params.layout(), &theta, params.intercepts());
    let mut ws = Workspace::new(params.layout());
    let mut pattern = Vec::new();
    for &i in idx {
        net.twin_logits(data.row(i), &mut ws);
        for b in &ws.branch {
            for layer in &b.h {
                pattern.extend(layer.iter().map(|&h| h > 0.0));
            }
        }
    }
    pattern
}

/// Compares analytic gradients with central differences of step `h` on every
/// coordinate (effective weight, scaling factor and intercept values).
/// Coordinates whose perturbation changes the ReLU activation pattern are
/// masked out.
pub fn check_gradients(
    params: &TwinParams,
    data: &Dataset,
    idx: &[usize],
    kind: LossKind,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = uplift_loss_batch(params, data, idx, kind)?.grads;
    let base_pattern = activation_pattern(params, data, idx);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        masked: 0,
    };
    let n_split = params.layout().n_split;
    let n_total = n_split + params.layout().n_intercepts;
    let mut probe = params.clone();
    for c in 0..n_total {
        let eval = |probe: &mut TwinParams, delta: f64| -> Result<(f64, bool)> {
            if c < n_split {
                // Move the positive part with the negative part fixed.
                let (u, v) = (params.pos()[c], params.neg()[c]);
                let shifted = u + delta;
                if shifted >= 0.0 {
                    probe.set_split(c, shifted, v);
                } else {
                    probe.set_theta(c, u - v + delta);
                }
            } else {
                probe.intercepts_mut()[c - n_split] = params.intercepts()[c - n_split] + delta;
            }
            let value = loss_value(probe, data, idx, kind)?;
            let same = activation_pattern(probe, data, idx) == base_pattern;
            Ok((value, same))
        };
        let (plus, same_plus) = eval(&mut probe, h)?;
        let (minus, same_minus) = eval(&mut probe, -h)?;
        if c < n_split {
            probe.set_split(c, params.pos()[c], params.neg()[c]);
        } else {
            probe.intercepts_mut()[c - n_split] = params.intercepts()[c - n_split];
        }
        if !(same_plus && same_minus) {
            report.masked += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = if c < n_split {
            analytic.split[c]
        } else {
            analytic.intercepts[c - n_split]
        };
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
