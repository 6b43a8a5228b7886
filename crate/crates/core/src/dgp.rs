//! Synthetic randomized experiments with a probit outcome and known uplift.
//!
//! Covariates with odd 1-based index are standard Gaussian, even ones are
//! Bernoulli(1/2). The latent outcome is `mu(x) + t tau(x) + sigma eps` and the
//! observed outcome is its sign indicator.
//!
//! Random streams: every draw comes from `ChaCha20Rng::seed_from_u64(seed)`
//! with a fixed stream id per purpose, so each column (and the treatment and
//! noise vectors) can be regenerated independently of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use libm::erfc;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const STREAM_TREATMENT: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_FIRST_COLUMN: u64 = 2;

/// Highest 1-based covariate index read by any of f1..f8.
pub const MIN_COVARIATES: usize = 9;

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Phi((mu + tau) / sigma) - Phi(mu / sigma)`.
pub fn true_uplift(mu: f64, tau: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(std_normal_cdf((mu + tau) / sigma) - std_normal_cdf(mu / sigma))
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Highest 1-based covariate index used by `f{fn_id}`.
fn max_index(fn_id: u8) -> usize {
    match fn_id {
        1 => 0,
        2 | 3 => 1,
        _ => 9,
    }
}

/// Evaluates `f{fn_id}(x)`; `x[0]` is x1.
pub fn eval_f(fn_id: u8, x: &[f64]) -> Result<f64> {
    if !(1..=8).contains(&fn_id) {
        return Err(Error::UnknownFunction(fn_id));
    }
    if x.len() < max_index(fn_id) {
        return Err(Error::TooFewCovariates { fn_id, p: x.len() });
    }
    Ok(eval_unchecked(fn_id, x))
}

fn eval_unchecked(fn_id: u8, x: &[f64]) -> f64 {
    let xi = |i: usize| x[i - 1];
    match fn_id {
        1 => 0.0,
        2 => 5.0 * ind(xi(1) > 1.0) - 5.0,
        3 => 2.0 * xi(1) - 4.0,
        4 => {
            let (a, b, c) = (xi(2), xi(4), xi(6));
            a * b * c
                + 2.0 * a * b * (1.0 - c)
                + 3.0 * a * (1.0 - b) * c
                + 4.0 * a * (1.0 - b) * (1.0 - c)
                + 5.0 * (1.0 - a) * b * c
                + 6.0 * (1.0 - a) * b * (1.0 - c)
                + 7.0 * (1.0 - a) * (1.0 - b) * c
                + 8.0 * (1.0 - a) * (1.0 - b) * (1.0 - c)
        }
        5 => xi(1) + xi(3) + xi(5) + xi(7) + xi(8) + xi(9) - 2.0,
        6 => {
            4.0 * ind(xi(1) > 1.0) * ind(xi(3) > 0.0)
                + 4.0 * ind(xi(5) > 1.0) * ind(xi(7) > 0.0)
                + 2.0 * xi(8) * xi(9)
        }
        7 => {
            0.5 * (xi(1).powi(2)
                + xi(2)
                + xi(3).powi(2)
                + xi(4)
                + xi(5).powi(2)
                + xi(6)
                + xi(7).powi(2)
                + xi(8)
                + xi(9).powi(2)
                - 11.0)
        }
        8 => (eval_unchecked(4, x) + eval_unchecked(5, x)) / std::f64::consts::SQRT_2,
        _ => unreachable!("fn_id validated by caller"),
    }
}

/// One row of the simulation table, or a custom variant of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub id: u8,
    pub n: usize,
    pub p: usize,
    pub mu_fn: u8,
    pub tau_fn: u8,
    pub sigma: f64,
}

impl Scenario {
    /// The five tabulated scenarios.
    pub fn get(id: u8) -> Result<Self> {
        let (n, p, mu_fn, tau_fn, sigma) = match id {
            1 => (10_000, 200, 7, 4, 0.5),
            2 => (20_000, 100, 3, 5, 1.0),
            3 => (20_000, 100, 1, 6, 1.0),
            4 => (20_000, 100, 2, 7, 2.0),
            5 => (20_000, 100, 6, 8, 4.0),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "scenario id must be 1..=5, got {id}"
                )))
            }
        };
        Ok(Self {
            id,
            n,
            p,
            mu_fn,
            tau_fn,
            sigma,
        })
    }

    /// Same functions and noise with a different sample size.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("scenario n must be positive".into()));
        }
        if self.p < MIN_COVARIATES {
            return Err(Error::InvalidArgument(format!(
                "scenario p must be >= {MIN_COVARIATES}, got {}",
                self.p
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scenario sigma must be > 0, got {}",
                self.sigma
            )));
        }
        for f in [self.mu_fn, self.tau_fn] {
            if !(1..=8).contains(&f) {
                return Err(Error::UnknownFunction(f));
            }
        }
        Ok(())
    }

    pub fn mu(&self, x: &[f64]) -> Result<f64> {
        eval_f(self.mu_fn, x)
    }

    pub fn tau(&self, x: &[f64]) -> Result<f64> {
        eval_f(self.tau_fn, x)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Row-major n x p covariates: Gaussian at odd 1-based columns, Bernoulli(1/2) at even ones.
pub fn generate_covariates(n: usize, p: usize, seed: u64) -> Vec<f64> {
    let mut x = vec![0.0; n * p];
    for j in 0..p {
        let mut rng = stream(seed, STREAM_FIRST_COLUMN + j as u64);
        let gaussian = j % 2 == 0;
        for i in 0..n {
            x[i * p + j] = if gaussian {
                rng.sample(StandardNormal)
            } else {
                ind(rng.random_bool(0.5))
            };
        }
    }
    x
}

/// Draws a full dataset for `scenario`, including the true uplift of every row.
pub fn generate_dataset(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let Scenario { n, p, sigma, .. } = *scenario;
    let x = generate_covariates(n, p, seed);

    let mut t_rng = stream(seed, STREAM_TREATMENT);
    let mut noise_rng = stream(seed, STREAM_NOISE);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let mu = eval_unchecked(scenario.mu_fn, row);
        let tau = eval_unchecked(scenario.tau_fn, row);
        let ti = u8::from(t_rng.random_bool(0.5));
        let eps: f64 = noise_rng.sample(StandardNormal);
        let latent = mu + f64::from(ti) * tau + sigma * eps;
        t.push(ti);
        y.push(u8::from(latent > 0.0));
        u.push(true_uplift(mu, tau, sigma)?);
    }
    Dataset::new(p, x, t, y, Some(u))
}
