//! Randomized-trial datasets: covariates, binary treatment, binary outcome
//! and (for synthetic data) the true per-row uplift.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Propensity score of the randomized design. Constant.
pub const PROPENSITY: f64 = 0.5;

/// Immutable n x p design with treatment, outcome and optional true uplift.
///
/// Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    t: Vec<u8>,
    y: Vec<u8>,
    u_true: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        p: usize,
        x: Vec<f64>,
        t: Vec<u8>,
        y: Vec<u8>,
        u_true: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = t.len();
        if p == 0 {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        if x.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: x.len(),
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!("t[{i}] = {} is not binary", t[i])));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!("y[{i}] = {} is not binary", y[i])));
        }
        if let Some(u) = &u_true {
            if u.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: u.len(),
                });
            }
            if let Some(i) = u.iter().position(|v| !(*v > -1.0 && *v < 1.0)) {
                return Err(Error::InvalidArgument(format!(
                    "u_true[{i}] = {} outside (-1, 1)",
                    u[i]
                )));
            }
        }
        Ok(Self {
            n,
            p,
            x,
            t,
            y,
            u_true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn u_true(&self) -> Option<&[f64]> {
        self.u_true.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            n: idx.len(),
            p: self.p,
            x,
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            u_true: self
                .u_true
                .as_ref()
                .map(|u| idx.iter().map(|&i| u[i]).collect()),
        }
    }

    /// Writes `x1,...,xp,t,y[,u_true]` with shortest round-trip float formatting.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut header: Vec<String> = (1..=self.p).map(|j| format!("x{j}")).collect();
        header.push("t".into());
        header.push("y".into());
        if self.u_true.is_some() {
            header.push("u_true".into());
        }
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        let mut line = String::new();
        for i in 0..self.n {
            line.clear();
            for v in self.row(i) {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&format!("{},{}", self.t[i], self.y[i]));
            if let Some(u) = &self.u_true {
                line.push_str(&format!(",{:?}", u[i]));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a CSV with header `x1,...,xp,t,y[,u_true]`.
    ///
    /// Row numbers in diagnostics are 1-based data rows (the header is row 0).
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |row: usize, column: &str, message: String| Error::Csv {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(std::io::BufReader::new(file));
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_err(0, "", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();

        let has_u = header.last().map(String::as_str) == Some("u_true");
        let tail = if has_u { 3 } else { 2 };
        if header.len() < tail + 1 {
            return Err(csv_err(0, "", "header needs x1..xp,t,y".into()));
        }
        let p = header.len() - tail;
        for (j, name) in header[..p].iter().enumerate() {
            if *name != format!("x{}", j + 1) {
                return Err(csv_err(0, name, format!("expected column x{}", j + 1)));
            }
        }
        if header[p] != "t" || header[p + 1] != "y" {
            return Err(csv_err(0, &header[p], "expected columns t,y after covariates".into()));
        }

        let mut x = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut u = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let row = r + 1;
            let record = record.map_err(|e| csv_err(row, "", e.to_string()))?;
            if record.len() != header.len() {
                return Err(csv_err(
                    row,
                    "",
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            for (j, field) in record.iter().enumerate() {
                let name = &header[j];
                if j < p || (has_u && j == p + 2) {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| csv_err(row, name, format!("not a number: {field:?}")))?;
                    if !v.is_finite() {
                        return Err(csv_err(row, name, format!("non-finite value {field:?}")));
                    }
                    if j < p {
                        x.push(v);
                    } else {
                        u.push(v);
                    }
                } else {
                    let v = match field {
                        "0" => 0u8,
                        "1" => 1u8,
                        _ => return Err(csv_err(row, name, format!("expected 0 or 1, found {field:?}"))),
                    };
                    if j == p {
                        t.push(v);
                    } else {
                        y.push(v);
                    }
                }
            }
        }
        Dataset::new(p, x, t, y, has_u.then_some(u)).map_err(|e| csv_err(0, "", e.to_string()))
    }
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.4,
            valid: 0.3,
            test: 0.3,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive: {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1: {parts:?}"
            )));
        }
        Ok(())
    }

    /// Partition sizes: floor(f * n) for validation and test, the rest to train.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let valid = (self.valid * n as f64).floor() as usize;
        let test = (self.test * n as f64).floor() as usize;
        let train = n - valid - test;
        if train == 0 || valid == 0 || test == 0 {
            return Err(Error::InvalidArgument(format!(
                "n = {n} too small for three nonempty parts"
            )));
        }
        Ok((train, valid, test))
    }
}

/// Row indices of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random permutation of `0..n` cut into train / valid / test.
pub fn split_indices(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    let (n_train, n_valid, _) = fractions.sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let test = perm.split_off(n_train + n_valid);
    let valid = perm.split_off(n_train);
    Ok(SplitIndices {
        train: perm,
        valid,
        test,
    })
}

/// Three-way random split of a dataset.
pub fn split(
    data: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(data.n(), fractions, seed)?;
    Ok((
        data.subset(&idx.train),
        data.subset(&idx.valid),
        data.subset(&idx.test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            2,
            vec![0.1, 1.0, -0.5, 0.0, 2.25, 1.0],
            vec![1, 0, 1],
            vec![0, 1, 1],
            Some(vec![0.1, -0.2, 0.3]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let err = Dataset::new(1, vec![0.0, 1.0], vec![0, 2], vec![0, 1], None).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn rejects_ragged_covariates() {
        let err = Dataset::new(2, vec![0.0; 3], vec![0, 1], vec![0, 1], None).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, got: 3 }));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = tiny();
        d.save_csv(&path).unwrap();
        assert_eq!(Dataset::load_csv(&path).unwrap(), d);
    }

    #[test]
    fn csv_without_u_true() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x1,t,y\n0.5,1,0\n-1,0,1\n").unwrap();
        let d = Dataset::load_csv(&path).unwrap();
        assert_eq!(d.n(), 2);
        assert!(d.u_true().is_none());
    }

    #[test]
    fn csv_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut body = String::from("x1,t,y\n");
        for _ in 0..4 {
            body.push_str("0.5,1,0\n");
        }
        body.push_str("0.5,2,0\n");
        std::fs::write(&path, body).unwrap();
        match Dataset::load_csv(&path).unwrap_err() {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 5);
                assert_eq!(column, "t");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_rejects_ragged_rows_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x1,t,y\n0.5,1,0\n0.5,1\n").unwrap();
        assert!(matches!(
            Dataset::load_csv(&path).unwrap_err(),
            Error::Csv { row: 2, .. }
        ));
        std::fs::write(&path, "x1,x3,t,y\n0.5,1,1,0\n").unwrap();
        assert!(matches!(
            Dataset::load_csv(&path).unwrap_err(),
            Error::Csv { row: 0, .. }
        ));
    }

    #[test]
    fn split_sizes_for_ten_rows() {
        let idx = split_indices(10, SplitFractions::default(), 3).unwrap();
        assert_eq!((idx.train.len(), idx.valid.len(), idx.test.len()), (4, 3, 3));
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let a = split_indices(101, SplitFractions::default(), 9).unwrap();
        let b = split_indices(101, SplitFractions::default(), 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.valid)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_tiny_or_bad_fractions() {
        assert!(split_indices(2, SplitFractions::default(), 0).is_err());
        let bad = SplitFractions {
            train: 0.5,
            valid: 0.3,
            test: 0.3,
        };
        assert!(split_indices(100, bad, 0).is_err());
    }
}
