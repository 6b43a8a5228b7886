//! Qini curve, Qini coefficient, Kendall uplift rank correlation and the
//! adjusted Qini coefficient.
//!
//! Observations are ranked by predicted uplift, descending, with ties broken
//! by ascending row index.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Default number of Qini grid intervals.
pub const DEFAULT_GRID: usize = 20;
/// Default number of Kendall bins.
pub const DEFAULT_BINS: usize = 10;

/// `J + 1` equally spaced proportions `0, 1/J, ..., 1`.
pub fn uniform_grid(j: usize) -> Vec<f64> {
    (0..=j).map(|k| k as f64 / j as f64).collect()
}

/// Row indices sorted by descending prediction, ascending index on ties.
pub fn rank_order(predictions: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(a.cmp(&b)));
    order
}

/// Number of top-ranked rows in `N_phi`: `ceil(phi * n)`, robust to rounding
/// in `phi * n` (e.g. `0.3 * 10`).
fn top_count(phi: f64, n: usize) -> usize {
    let raw = phi * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= 1e-9 * n.max(1) as f64 {
        nearest
    } else {
        raw.ceil()
    };
    (k.max(0.0) as usize).min(n)
}

fn check_inputs(predictions: &[f64], t: &[u8], y: &[u8]) -> Result<()> {
    let n = predictions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    if t.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: t.len(),
        });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if predictions.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN prediction".into()));
    }
    Ok(())
}

/// Qini curve values `g(phi)` at each grid proportion.
///
/// `g(phi) = (sum_N y t - sum_N y (1 - t) * sum_N t / sum_N (1 - t)) / sum t`
/// over the top-ranked set `N_phi`. The control term is zero when `N_phi`
/// holds no controls, and `g(0) = 0`.
pub fn qini_curve(predictions: &[f64], t: &[u8], y: &[u8], grid: &[f64]) -> Result<Vec<f64>> {
    check_inputs(predictions, t, y)?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|phi| !(0.0..=1.0).contains(phi)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("grid must be sorted within [0, 1]".into()));
    }
    let total_treated = t.iter().filter(|&&v| v == 1).count();
    if total_treated == 0 {
        return Err(Error::NoTreated);
    }
    let n = predictions.len();
    let order = rank_order(predictions);

    // Prefix sums over the ranked order: (y t, y (1 - t), t, 1 - t).
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = [0usize; 4];
    prefix.push(acc);
    for &i in &order {
        let (ti, yi) = (t[i] as usize, y[i] as usize);
        acc[0] += yi * ti;
        acc[1] += yi * (1 - ti);
        acc[2] += ti;
        acc[3] += 1 - ti;
        prefix.push(acc);
    }

    Ok(grid
        .iter()
        .map(|&phi| {
            let k = top_count(phi, n);
            if k == 0 {
                return 0.0;
            }
            let [yt, yc, nt, nc] = prefix[k];
            let control = if nc == 0 {
                0.0
            } else {
                yc as f64 * (nt as f64 / nc as f64)
            };
            (yt as f64 - control) / total_treated as f64
        })
        .collect())
}

/// Trapezoid area between the Qini curve and the random-targeting line, in percent.
///
/// `grid` must start at 0 and end at 1.
pub fn qini_coefficient(grid: &[f64], g: &[f64]) -> Result<f64> {
    if grid.len() < 2 || grid.len() != g.len() {
        return Err(Error::InvalidArgument(
            "qini coefficient needs matching grid and curve with >= 2 points".into(),
        ));
    }
    if grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
        return Err(Error::InvalidArgument("grid must start at 0 and end at 1".into()));
    }
    let g1 = *g.last().unwrap();
    let q: Vec<f64> = grid.iter().zip(g).map(|(phi, gv)| gv - phi * g1).collect();
    let area: f64 = (0..grid.len() - 1)
        .map(|k| (grid[k + 1] - grid[k]) * (q[k + 1] + q[k]))
        .sum();
    Ok(0.5 * area * 100.0)
}

/// Per-bin averages used by the Kendall correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    /// Mean predicted uplift in the bin.
    pub predicted: f64,
    /// Treated outcome rate minus control outcome rate; `None` when the bin
    /// lacks treated or control rows.
    pub observed: Option<f64>,
}

/// Splits the ranked order into `k` contiguous quantile bins and summarizes each.
pub fn bin_stats(predictions: &[f64], t: &[u8], y: &[u8], k: usize) -> Result<Vec<BinStat>> {
    check_inputs(predictions, t, y)?;
    let n = predictions.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} bins for {n} observations")));
    }
    let order = rank_order(predictions);
    Ok((0..k)
        .map(|b| {
            let rows = &order[b * n / k..(b + 1) * n / k];
            let predicted = rows.iter().map(|&i| predictions[i]).sum::<f64>() / rows.len() as f64;
            let (mut yt, mut nt, mut yc, mut nc) = (0usize, 0usize, 0usize, 0usize);
            for &i in rows {
                if t[i] == 1 {
                    nt += 1;
                    yt += y[i] as usize;
                } else {
                    nc += 1;
                    yc += y[i] as usize;
                }
            }
            let observed = (nt > 0 && nc > 0).then(|| yt as f64 / nt as f64 - yc as f64 / nc as f64);
            BinStat {
                predicted,
                observed,
            }
        })
        .collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Kendall correlation between bin-mean predictions and observed bin uplifts.
///
/// Returns `(rho, warnings)`; every pair touching a bin with undefined observed
/// uplift contributes 0 and counts one warning.
pub fn kendall_from_bins(bins: &[BinStat]) -> (f64, usize) {
    let k = bins.len();
    let mut sum = 0.0;
    let mut warnings = 0;
    for i in 0..k {
        for j in i + 1..k {
            match (bins[i].observed, bins[j].observed) {
                (Some(oi), Some(oj)) => {
                    sum += sign(bins[i].predicted - bins[j].predicted) * sign(oi - oj);
                }
                _ => warnings += 1,
            }
        }
    }
    (2.0 * sum / (k * (k - 1)) as f64, warnings)
}

/// Kendall uplift rank correlation over `k` quantile bins of the predictions.
pub fn kendall_uplift_corr(predictions: &[f64], t: &[u8], y: &[u8], k: usize) -> Result<(f64, usize)> {
    Ok(kendall_from_bins(&bin_stats(predictions, t, y, k)?))
}

/// `rho * max(0, q_hat)`.
pub fn adjusted_qini(q_hat: f64, rho_hat: f64) -> f64 {
    if q_hat > 0.0 {
        rho_hat * q_hat
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Number of grid intervals J.
    pub grid: usize,
    /// Number of Kendall bins K.
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QiniReport {
    pub grid: Vec<f64>,
    pub g_values: Vec<f64>,
    pub q_hat: f64,
    pub rho_hat: f64,
    pub q_adj: f64,
    pub bins: Vec<BinStat>,
    /// Kendall pairs skipped because a bin lacked treated or control rows.
    pub warnings: usize,
}

impl QiniReport {
    /// `Q(phi) = g(phi) - phi g(1)` at every grid point.
    pub fn q_values(&self) -> Vec<f64> {
        let g1 = *self.g_values.last().unwrap_or(&0.0);
        self.grid
            .iter()
            .zip(&self.g_values)
            .map(|(phi, g)| g - phi * g1)
            .collect()
    }

    pub fn write_curve_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "phi,g,Q")?;
        for ((phi, g), q) in self.grid.iter().zip(&self.g_values).zip(self.q_values()) {
            writeln!(w, "{phi:?},{g:?},{q:?}")?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "q_hat,rho_hat,q_adj,K,J,warnings")?;
        writeln!(
            w,
            "{:?},{:?},{:?},{},{},{}",
            self.q_hat,
            self.rho_hat,
            self.q_adj,
            self.bins.len(),
            self.grid.len() - 1,
            self.warnings
        )
    }

    /// Writes `qini_curve.csv` and `qini_summary.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let curve = dir.join("qini_curve.csv");
        let file = std::fs::File::create(&curve).map_err(|e| Error::io(&curve, e))?;
        self.write_curve_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&curve, e))?;
        let summary = dir.join("qini_summary.csv");
        let file = std::fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
        self.write_summary_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&summary, e))
    }
}

/// Full report for one set of predictions.
pub fn evaluate(predictions: &[f64], t: &[u8], y: &[u8], cfg: EvalConfig) -> Result<QiniReport> {
    if cfg.grid == 0 {
        return Err(Error::EmptyGrid);
    }
    let grid = uniform_grid(cfg.grid);
    let g_values = qini_curve(predictions, t, y, &grid)?;
    let q_hat = qini_coefficient(&grid, &g_values)?;
    let bins = bin_stats(predictions, t, y, cfg.bins)?;
    let (rho_hat, warnings) = kendall_from_bins(&bins);
    Ok(QiniReport {
        grid,
        g_values,
        q_hat,
        rho_hat,
        q_adj: adjusted_qini(q_hat, rho_hat),
        bins,
        warnings,
    })
}
