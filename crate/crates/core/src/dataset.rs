//! Dataset generation, preprocessing, and loss scoring for the three
//! separable target families.
//!
//! Rows are drawn uniformly on `[-1,1]^d`, sorted ascending to enforce
//! permutation symmetry, labelled with the scaled target `(1/d) Σ g(x_i)`,
//! and split 64/16/20 into train/validation/test in generation order.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Stream label separating dataset draws from other RNG uses.
const DATA_STREAM: u64 = 0x6461_7461; // "data"

/// The separable target family: `y = (1/d) Σ g(x_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Square,
    Quartic,
    Cosine,
}

impl TargetKind {
    /// The scalar component function g.
    pub fn component(self, x: f64) -> f64 {
        match self {
            TargetKind::Square => x * x,
            TargetKind::Quartic => {
                let s = x * x;
                s * s
            }
            TargetKind::Cosine => x.cos(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(TargetKind::Square),
            "quartic" => Ok(TargetKind::Quartic),
            "cosine" => Ok(TargetKind::Cosine),
            _ => Err(Error::Parameter(format!("unknown target '{s}'"))),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TargetKind::Square => "square",
            TargetKind::Quartic => "quartic",
            TargetKind::Cosine => "cosine",
        };
        f.write_str(s)
    }
}

/// Which loss scale a score is reported in.
///
/// The networks learn the scaled target; `Original` multiplies the scaled
/// mean squared error by `d^2` to report the error against the unscaled
/// function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossScale {
    Scaled,
    Original,
}

/// Scaled target value `(1/d) Σ g(x_i)` for one input row.
pub fn scaled_target(x: &[f64], target: TargetKind) -> f64 {
    let sum: f64 = x.iter().map(|&v| target.component(v)).sum();
    sum / x.len() as f64
}

/// Mean squared error between predictions and targets.
///
/// `Original` is exactly `d^2` times the `Scaled` value (one multiply).
pub fn mse(pred: &[f64], y: &[f64], scale: LossScale, d: usize) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::Dimension(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            y.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Parameter("mse: empty inputs".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let e = p - t;
            e * e
        })
        .sum();
    let scaled = sum / pred.len() as f64;
    Ok(match scale {
        LossScale::Scaled => scaled,
        LossScale::Original => (d * d) as f64 * scaled,
    })
}

/// A generated dataset split 64/16/20 into train/validation/test.
///
/// Immutable after generation. Every row is sorted ascending and every
/// entry lies in `[-1, 1]`; targets are stored in scaled form only.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub d: usize,
    pub target: TargetKind,
    pub seed: u64,
    pub x_train: Matrix,
    pub x_val: Matrix,
    pub x_test: Matrix,
    pub y_train: Vec<f64>,
    pub y_val: Vec<f64>,
    pub y_test: Vec<f64>,
}

/// Split sizes for a total row count: 64% train, 16% validation, rest test.
pub fn split_sizes(n_total: usize) -> (usize, usize, usize) {
    let n_train = n_total * 64 / 100;
    let n_val = n_total * 16 / 100;
    (n_train, n_val, n_total - n_train - n_val)
}

/// Sorts a raw row ascending and computes its scaled target.
pub fn preprocess_row(row: &mut [f64], target: TargetKind) -> f64 {
    row.sort_by(|a, b| a.partial_cmp(b).expect("non-finite input entry"));
    scaled_target(row, target)
}

/// Generates a split dataset of `n_total` rows on `[-1,1]^d`.
///
/// Deterministic: the same `(d, n_total, target, seed)` always produces a
/// bit-identical dataset. Targets are computed from the sorted row; the
/// sum is permutation-invariant, so this matches evaluation on the raw
/// draw order up to the associativity of the sum, and makes the stored
/// target exactly independent of the draw order.
pub fn generate(d: usize, n_total: usize, target: TargetKind, seed: u64) -> Result<SplitDataset> {
    if d < 1 {
        return Err(Error::Parameter("generate: d must be >= 1".into()));
    }
    let (n_train, n_val, n_test) = split_sizes(n_total);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Parameter(format!(
            "generate: n_total = {n_total} leaves an empty split \
             (train {n_train} / val {n_val} / test {n_test})"
        )));
    }
    let mut rng = Rng::derive(seed, DATA_STREAM);
    let mut rows = Matrix::zeros(n_total, d);
    let mut ys = Vec::with_capacity(n_total);
    for r in 0..n_total {
        let row = rows.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.uniform_one(-1.0, 1.0);
        }
        ys.push(preprocess_row(row, target));
    }

    let take = |lo: usize, hi: usize| -> Matrix {
        let mut m = Matrix::zeros(hi - lo, d);
        for (i, r) in (lo..hi).enumerate() {
            m.row_mut(i).copy_from_slice(rows.row(r));
        }
        m
    };
    Ok(SplitDataset {
        d,
        target,
        seed,
        x_train: take(0, n_train),
        x_val: take(n_train, n_train + n_val),
        x_test: take(n_train + n_val, n_total),
        y_train: ys[0..n_train].to_vec(),
        y_val: ys[n_train..n_train + n_val].to_vec(),
        y_test: ys[n_train + n_val..].to_vec(),
    })
}

impl SplitDataset {
    pub fn n_train(&self) -> usize {
        self.y_train.len()
    }

    pub fn n_val(&self) -> usize {
        self.y_val.len()
    }

    pub fn n_test(&self) -> usize {
        self.y_test.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_train() + self.n_val() + self.n_test()
    }

    /// Writes all rows (train, then val, then test) as CSV with header
    /// `x0,...,x{d-1},y`. Debug aid for reproducibility checks.
    pub fn export_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (0..self.d).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        writeln!(out, "{}", header.join(","))?;
        let splits = [
            (&self.x_train, &self.y_train),
            (&self.x_val, &self.y_val),
            (&self.x_test, &self.y_test),
        ];
        for (xs, ys) in splits {
            for (r, y) in ys.iter().enumerate() {
                let mut fields: Vec<String> =
                    xs.row(r).iter().map(|v| format!("{v:.16e}")).collect();
                fields.push(format!("{y:.16e}"));
                writeln!(out, "{}", fields.join(","))?;
            }
        }
        Ok(())
    }

    pub fn export_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.export_csv(std::io::BufWriter::new(f))
    }
}

/// Reads rows exported by [`SplitDataset::export_csv`].
pub fn import_csv_rows<R: std::io::Read>(input: R) -> Result<(Matrix, Vec<f64>)> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parameter("empty dataset CSV".into()))??;
    let d = header.split(',').count() - 1;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Dimension(format!(
                "dataset CSV row has {} fields, expected {}",
                fields.len(),
                d + 1
            )));
        }
        let mut row = Vec::with_capacity(d);
        for f in &fields[..d] {
            row.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Parameter(format!("bad float '{f}': {e}")))?,
            );
        }
        ys.push(
            fields[d]
                .parse::<f64>()
                .map_err(|e| Error::Parameter(format!("bad float '{}': {e}", fields[d])))?,
        );
        rows.push(row);
    }
    Ok((Matrix::from_rows(&rows)?, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_targets() {
        let x = [0.0; 4];
        assert_eq!(scaled_target(&x, TargetKind::Square), 0.0);
        assert_eq!(scaled_target(&x, TargetKind::Quartic), 0.0);
        assert_eq!(scaled_target(&x, TargetKind::Cosine), 1.0);
    }

    #[test]
    fn cube_corner_square_target() {
        let x = [1.0, -1.0, 1.0, -1.0, -1.0];
        assert_eq!(scaled_target(&x, TargetKind::Square), 1.0);
        assert_eq!(scaled_target(&x, TargetKind::Quartic), 1.0);
    }

    #[test]
    fn hand_square_target() {
        let y = scaled_target(&[0.5, -0.5, 0.0], TargetKind::Square);
        assert!((y - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mse_identity_and_offset() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(mse(&y, &y, LossScale::Scaled, 3).unwrap(), 0.0);
        assert_eq!(mse(&y, &y, LossScale::Original, 3).unwrap(), 0.0);
        let pred: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        let scaled = mse(&pred, &y, LossScale::Scaled, 3).unwrap();
        assert!((scaled - 0.0625).abs() < 1e-15);
        let orig = mse(&pred, &y, LossScale::Original, 3).unwrap();
        assert_eq!(orig, 9.0 * scaled);
    }

    #[test]
    fn mse_hand_values() {
        let pred = [1.0, 2.0];
        let y = [0.0, 0.0];
        assert_eq!(mse(&pred, &y, LossScale::Scaled, 3).unwrap(), 2.5);
        assert_eq!(mse(&pred, &y, LossScale::Original, 3).unwrap(), 22.5);
    }

    #[test]
    fn mse_length_mismatch() {
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0], LossScale::Scaled, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn generate_is_deterministic_and_well_formed() {
        let a = generate(4, 100, TargetKind::Square, 7).unwrap();
        let b = generate(4, 100, TargetKind::Square, 7).unwrap();
        assert_eq!(a.x_train.data(), b.x_train.data());
        assert_eq!(a.y_test, b.y_test);
        assert_eq!(a.n_train(), 64);
        assert_eq!(a.n_val(), 16);
        assert_eq!(a.n_test(), 20);

        for xs in [&a.x_train, &a.x_val, &a.x_test] {
            for r in 0..xs.rows() {
                let row = xs.row(r);
                for w in row.windows(2) {
                    assert!(w[0] <= w[1], "row not sorted");
                }
                for &v in row {
                    assert!((-1.0..1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn generate_target_recompute_oracle() {
        let ds = generate(4, 100, TargetKind::Square, 3).unwrap();
        let row = ds.x_train.row(0);
        let direct = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((ds.y_train[0] - direct).abs() <= 1e-12);
    }

    #[test]
    fn generate_rejects_tiny_total() {
        assert!(generate(3, 4, TargetKind::Square, 0).is_err());
        assert!(generate(3, 10, TargetKind::Square, 0).is_ok());
    }

    #[test]
    fn permutation_invariant_preprocessing() {
        let raw = [0.7, -0.3, 0.1, -0.9];
        let mut a = raw;
        let ya = preprocess_row(&mut a, TargetKind::Quartic);
        let mut b = [-0.9, 0.7, -0.3, 0.1];
        let yb = preprocess_row(&mut b, TargetKind::Quartic);
        assert_eq!(a, b);
        assert_eq!(ya.to_bits(), yb.to_bits());
    }

    #[test]
    fn seeds_change_data() {
        let a = generate(3, 50, TargetKind::Cosine, 1).unwrap();
        let b = generate(3, 50, TargetKind::Cosine, 2).unwrap();
        assert_ne!(a.x_train.data(), b.x_train.data());
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate(3, 20, TargetKind::Square, 11).unwrap();
        let mut buf = Vec::new();
        ds.export_csv(&mut buf).unwrap();
        let (rows, ys) = import_csv_rows(buf.as_slice()).unwrap();
        assert_eq!(rows.rows(), 20);
        assert_eq!(rows.row(0), ds.x_train.row(0));
        assert_eq!(ys[0].to_bits(), ds.y_train[0].to_bits());
        let n_train = ds.n_train();
        assert_eq!(rows.row(n_train), ds.x_val.row(0));
    }
}
