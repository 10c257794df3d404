//! Data loading, scaling, windowing, masking, synthetic generators and
//! split policies. All counting here is exact: window counts, masked-cell
//! counts and split sizes are asserted by tests downstream, so every edge
//! rounds the same way everywhere.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};

/// A raw multivariate series: rows are time steps, columns are features.
#[derive(Debug, Clone)]
pub struct Dataset<E: Element> {
    pub names: Vec<String>,
    /// [n_steps, n_features]
    pub values: Tensor<E>,
}

impl<E: Element> Dataset<E> {
    pub fn n_steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.values.shape()[1]
    }

    /// Split the `label` column off as class indices, keeping the rest as
    /// features. Labels must be non-negative integers.
    pub fn take_labels(mut self) -> Result<(Dataset<E>, Vec<usize>)> {
        let Some(col) = self.names.iter().position(|n| n == "label") else {
            return Err(Error::Data("classification from CSV needs a 'label' column".into()));
        };
        let (n, d) = (self.n_steps(), self.n_features());
        let mut labels = Vec::with_capacity(n);
        let mut rest = Vec::with_capacity(n * (d - 1));
        for r in 0..n {
            for c in 0..d {
                let v = self.values.at(&[r, c]).to_f64();
                if c == col {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Data(format!(
                            "row {}: label {} is not a non-negative integer",
                            r + 2,
                            v
                        )));
                    }
                    labels.push(v as usize);
                } else {
                    rest.push(self.values.at(&[r, c]));
                }
            }
        }
        if d < 2 {
            return Err(Error::Data("no feature columns besides 'label'".into()));
        }
        self.names.remove(col);
        let values = Tensor::new(vec![n, d - 1], rest)?;
        Ok((Dataset { names: self.names, values }, labels))
    }
}

/// Parse a CSV of numbers. Two layout details are detected, not configured:
/// a leading timestamp column exists iff the first non-header row's first
/// field is not numeric (timestamps are dropped; row order carries time),
/// and a header exists iff any remaining field of row one is not numeric.
/// Headerless columns are named f0, f1, ... Ragged rows, non-numeric cells
/// and empty inputs are data errors naming the offending row and column.
pub fn load_csv<E: Element, R: Read>(reader: R) -> Result<Dataset<E>> {
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        rows.push(rec.map_err(|e| Error::Data(format!("row {}: {e}", i + 1)))?);
    }
    let Some(first) = rows.first() else {
        return Err(Error::Data("CSV is empty".into()));
    };
    let width = first.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Data(format!("row {}: {} fields, row 1 has {width}", i + 1, r.len())));
    }

    let is_num = |s: &str| s.parse::<f64>().is_ok();
    // row 2 is a data row under either header hypothesis, so its first
    // field settles the timestamp question without circularity
    let probe = rows.get(1).unwrap_or(first);
    let skip = usize::from(!is_num(&probe[0]));
    if width == skip {
        return Err(Error::Data("CSV has no feature columns".into()));
    }
    let has_header = first.iter().skip(skip).any(|f| !is_num(f));

    let names: Vec<String> = if has_header {
        first.iter().skip(skip).map(str::to_string).collect()
    } else {
        (0..width - skip).map(|c| format!("f{c}")).collect()
    };

    let mut data = Vec::new();
    let mut n = 0usize;
    for (i, rec) in rows.iter().enumerate().skip(usize::from(has_header)) {
        for (c, field) in rec.iter().skip(skip).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!("row {}, column '{}': cannot parse '{field}'", i + 1, names[c]))
            })?;
            data.push(E::from_f64(v));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("CSV has no data rows".into()));
    }
    let values = Tensor::new(vec![n, names.len()], data)?;
    Ok(Dataset { names, values })
}

pub fn load_csv_path<E: Element>(path: &Path) -> Result<Dataset<E>> {
    let file = std::fs::File::open(path)?;
    load_csv(std::io::BufReader::new(file))
}

// ── scaling ─────────────────────────────────────────────────────────────

/// Per-feature min-max scaling to [0, 1], fitted on training rows only.
#[derive(Debug, Clone)]
pub struct MinMaxScaler<E: Element> {
    min: Vec<E>,
    max: Vec<E>,
}

impl<E: Element> MinMaxScaler<E> {
    /// Fit on the first `rows` rows of a [n, d] series (the training span).
    /// A feature that is constant over that span cannot be scaled.
    pub fn fit(values: &Tensor<E>, rows: usize) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Data(format!("scaler wants [n, d], got {:?}", values.shape())));
        }
        let (n, d) = (values.shape()[0], values.shape()[1]);
        if rows == 0 || rows > n {
            return Err(Error::Data(format!("cannot fit scaler on {rows} of {n} rows")));
        }
        let mut min = vec![E::infinity(); d];
        let mut max = vec![E::neg_infinity(); d];
        for r in 0..rows {
            for c in 0..d {
                let v = values.at(&[r, c]);
                if v < min[c] {
                    min[c] = v;
                }
                if v > max[c] {
                    max[c] = v;
                }
            }
        }
        for c in 0..d {
            if min[c] == max[c] {
                return Err(Error::Data(format!(
                    "feature {c} is constant ({}) over the fit span; min-max scaling is undefined",
                    min[c]
                )));
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    fn want_features(&self, t: &Tensor<E>) -> Result<usize> {
        let d = *t.shape().last().ok_or_else(|| Error::Data("rank-0 input".into()))?;
        if d != self.min.len() {
            return Err(Error::Data(format!(
                "scaler fitted on {} features, input has {d}",
                self.min.len()
            )));
        }
        Ok(d)
    }

    /// (x - min) / (max - min) along the last axis.
    pub fn transform(&self, t: &Tensor<E>) -> Result<Tensor<E>> {
        let d = self.want_features(t)?;
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.min[c]) / (self.max[c] - self.min[c]);
        }
        Ok(out)
    }

    pub fn inverse(&self, t: &Tensor<E>) -> Result<Tensor<E>> {
        let d = self.want_features(t)?;
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = *v * (self.max[c] - self.min[c]) + self.min[c];
        }
        Ok(out)
    }
}

// ── windowing ───────────────────────────────────────────────────────────

/// Sliding windows of length `len`, stride 1: [n, d] -> [n - len + 1, len, d].
pub fn make_windows<E: Element>(series: &Tensor<E>, len: usize) -> Result<Tensor<E>> {
    if series.rank() != 2 {
        return Err(Error::Data(format!("windowing wants [n, d], got {:?}", series.shape())));
    }
    let (n, d) = (series.shape()[0], series.shape()[1]);
    if len == 0 || len > n {
        return Err(Error::Data(format!("window length {len} does not fit {n} steps")));
    }
    let count = n - len + 1;
    let mut data = Vec::with_capacity(count * len * d);
    for w in 0..count {
        data.extend_from_slice(&series.data()[w * d..(w + len) * d]);
    }
    Tensor::new(vec![count, len, d], data)
}

/// Windows paired with their next `horizon` steps:
/// inputs [N, len, d], futures [N, horizon, d], N = n - len - horizon + 1.
pub fn make_forecast_windows<E: Element>(
    series: &Tensor<E>,
    len: usize,
    horizon: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if series.rank() != 2 {
        return Err(Error::Data(format!("windowing wants [n, d], got {:?}", series.shape())));
    }
    let (n, d) = (series.shape()[0], series.shape()[1]);
    if len == 0 || horizon == 0 || len + horizon > n {
        return Err(Error::Data(format!(
            "window {len} + horizon {horizon} does not fit {n} steps"
        )));
    }
    let count = n - len - horizon + 1;
    let mut x = Vec::with_capacity(count * len * d);
    let mut y = Vec::with_capacity(count * horizon * d);
    for w in 0..count {
        x.extend_from_slice(&series.data()[w * d..(w + len) * d]);
        y.extend_from_slice(&series.data()[(w + len) * d..(w + len + horizon) * d]);
    }
    Ok((Tensor::new(vec![count, len, d], x)?, Tensor::new(vec![count, horizon, d], y)?))
}

// ── masking ─────────────────────────────────────────────────────────────

/// Hide exactly round(ratio · T · D) cells per window, chosen without
/// replacement; hidden cells are zero-filled in the returned inputs and
/// flagged with 1 in the mask. The count must leave at least one cell on
/// each side.
pub fn apply_mask<E: Element>(
    windows: &Tensor<E>,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if windows.rank() != 3 {
        return Err(Error::Data(format!("masking wants [N, T, D], got {:?}", windows.shape())));
    }
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::Config(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let (n, t, d) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    let cells = t * d;
    let k = (ratio * cells as f64).round() as usize;
    if k == 0 {
        return Err(Error::Config(format!("mask ratio {ratio} rounds to zero cells per window")));
    }
    if k >= cells {
        return Err(Error::Config(format!(
            "mask ratio {ratio} rounds to all {cells} cells per window"
        )));
    }
    let mut corrupted = windows.clone();
    let mut mask = Tensor::zeros(windows.shape().to_vec());
    for w in 0..n {
        let picks = rng.sample_without_replacement(cells, k);
        for p in picks {
            corrupted.data_mut()[w * cells + p] = E::zero();
            mask.data_mut()[w * cells + p] = E::one();
        }
    }
    Ok((corrupted, mask))
}

// ── synthetic data ──────────────────────────────────────────────────────

/// Sinusoid mixture per feature: `components` sines with amplitude in
/// [0.5, 1.5], period in [10, 100] steps and random phase, plus uniform
/// noise in [-noise, noise]. Each feature draws from its own (seed, label)
/// stream, so feature j is stable no matter how many features exist.
pub fn synth_sine<E: Element>(
    n_steps: usize,
    n_features: usize,
    components: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset<E>> {
    if n_steps == 0 || n_features == 0 || components == 0 {
        return Err(Error::Config("synth:sine needs steps, features, components >= 1".into()));
    }
    if noise < 0.0 {
        return Err(Error::Config(format!("noise {noise} must be >= 0")));
    }
    let mut values = Tensor::zeros(vec![n_steps, n_features]);
    for j in 0..n_features {
        let mut rng = Rng::seed_from_label(seed, &format!("synth.sine.f{j}"));
        let comps: Vec<(f64, f64, f64)> = (0..components)
            .map(|_| {
                let amp: f64 = rng.uniform(0.5, 1.5);
                let period: f64 = rng.uniform(10.0, 100.0);
                let phase: f64 = rng.uniform(0.0, std::f64::consts::TAU);
                (amp, period, phase)
            })
            .collect();
        for t in 0..n_steps {
            let mut v = 0.0;
            for &(amp, period, phase) in &comps {
                v += amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            }
            v += rng.uniform::<f64>(-noise, noise);
            values.data_mut()[t * n_features + j] = E::from_f64(v);
        }
    }
    Ok(Dataset { names: (0..n_features).map(|j| format!("f{j}")).collect(), values })
}

/// Labeled windows where class k completes k+1 cycles per window, with a
/// random phase per window and feature plus uniform noise. Frequency is
/// the only thing separating classes, so any model that scores above
/// chance has to read temporal structure.
pub fn synth_classes<E: Element>(
    per_class: usize,
    classes: usize,
    seq_len: usize,
    n_features: usize,
    noise: f64,
    seed: u64,
) -> Result<(Tensor<E>, Vec<usize>)> {
    if per_class == 0 || classes < 2 || seq_len < 4 || n_features == 0 {
        return Err(Error::Config(
            "synth:classes needs per_class >= 1, classes >= 2, seq_len >= 4, features >= 1".into(),
        ));
    }
    if noise < 0.0 {
        return Err(Error::Config(format!("noise {noise} must be >= 0")));
    }
    let n = per_class * classes;
    let mut x = Tensor::zeros(vec![n, seq_len, n_features]);
    let mut labels = Vec::with_capacity(n);
    let mut rng = Rng::seed_from_label(seed, "synth.classes");
    for k in 0..classes {
        for w in 0..per_class {
            let row = k * per_class + w;
            labels.push(k);
            for j in 0..n_features {
                let phase: f64 = rng.uniform(0.0, std::f64::consts::TAU);
                for t in 0..seq_len {
                    let angle =
                        std::f64::consts::TAU * (k + 1) as f64 * t as f64 / seq_len as f64 + phase;
                    let v = angle.sin() + rng.uniform::<f64>(-noise, noise);
                    x.data_mut()[(row * seq_len + t) * n_features + j] = E::from_f64(v);
                }
            }
        }
    }
    Ok((x, labels))
}

// ── splits ──────────────────────────────────────────────────────────────

/// The split policy used everywhere: 70% train, 10% val, 20% test.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIdx {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIdx {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Index split in time order: the earliest windows train, the latest test.
/// Counts are floor(n·f_train) and floor(n·f_val); the remainder tests.
pub fn chronological_split(n: usize, fractions: (f64, f64, f64)) -> Result<SplitIdx> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n_train = (n as f64 * ft).floor() as usize;
    let n_val = (n as f64 * fv).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Data(format!("{n} windows are too few for a {fractions:?} split")));
    }
    Ok(SplitIdx {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
    })
}

/// Per-class chronological split, merged back in index order. Every class
/// must be large enough to appear in all three splits.
pub fn stratified_split(labels: &[usize], fractions: (f64, f64, f64)) -> Result<SplitIdx> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut split = SplitIdx { train: vec![], val: vec![], test: vec![] };
    for k in 0..classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        let sub = chronological_split(idx.len(), fractions)
            .map_err(|e| Error::Data(format!("class {k}: {e}")))?;
        split.train.extend(sub.train.iter().map(|&i| idx[i]));
        split.val.extend(sub.val.iter().map(|&i| idx[i]));
        split.test.extend(sub.test.iter().map(|&i| idx[i]));
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = load_csv::<f64, _>("a,b\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!(ds.names, ["a", "b"]);
        assert_eq!(ds.values.shape(), &[3, 2]);
        assert_eq!(ds.values.at(&[2, 1]), 6.0);

        let err = load_csv::<f64, _>("a,b\n1,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2, column 'b'"), "{err}");
        let err = load_csv::<f64, _>("a,b\n1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(load_csv::<f64, _>("a,b\n".as_bytes()).is_err());
        assert!(load_csv::<f64, _>("".as_bytes()).is_err());
    }

    #[test]
    fn headerless_csv_gets_synthesized_names() {
        let ds = load_csv::<f64, _>("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(ds.names, ["f0", "f1"]);
        assert_eq!(ds.values.shape(), &[2, 2]);
        assert_eq!(ds.values.at(&[0, 0]), 1.0);
    }

    #[test]
    fn leading_timestamp_column_is_dropped() {
        let headed = "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n";
        let ds = load_csv::<f64, _>(headed.as_bytes()).unwrap();
        assert_eq!(ds.names, ["a", "b"]);
        assert_eq!(ds.values.data(), &[1.0, 2.0, 3.0, 4.0]);

        let bare = "2020-01-01,1,2\n2020-01-02,3,4\n";
        let ds = load_csv::<f64, _>(bare.as_bytes()).unwrap();
        assert_eq!(ds.names, ["f0", "f1"]);
        assert_eq!(ds.values.data(), &[1.0, 2.0, 3.0, 4.0]);

        assert!(load_csv::<f64, _>("2020-01-01\n2020-01-02\n".as_bytes()).is_err());
    }

    #[test]
    fn label_column_splits_off() {
        let ds = load_csv::<f64, _>("x,label,y\n1,0,2\n3,1,4\n".as_bytes()).unwrap();
        let (feats, labels) = ds.take_labels().unwrap();
        assert_eq!(labels, [0, 1]);
        assert_eq!(feats.names, ["x", "y"]);
        assert_eq!(feats.values.data(), &[1.0, 2.0, 3.0, 4.0]);

        let ds = load_csv::<f64, _>("x,label\n1,0.5\n".as_bytes()).unwrap();
        assert!(ds.take_labels().is_err(), "fractional label");
    }

    #[test]
    fn scaler_round_trips_and_rejects_constant() {
        let v: Tensor<f64> =
            Tensor::new(vec![4, 2], vec![0.0, 5.0, 2.0, 7.0, 4.0, 9.0, 100.0, 11.0]).unwrap();
        let s = MinMaxScaler::fit(&v, 3).unwrap(); // fit ignores the last row
        let scaled = s.transform(&v).unwrap();
        assert_eq!(scaled.at(&[0, 0]), 0.0);
        assert_eq!(scaled.at(&[2, 0]), 1.0);
        assert_eq!(scaled.at(&[3, 0]), 25.0); // outside the fit span extrapolates
        let back = s.inverse(&scaled).unwrap();
        for (&a, &b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }

        let flat = Tensor::new(vec![3, 1], vec![2.0, 2.0, 2.0]).unwrap();
        assert!(MinMaxScaler::fit(&flat, 3).is_err());
    }

    #[test]
    fn window_counts_are_exact() {
        let series = Tensor::new(vec![10, 1], (0..10).map(|i| i as f64).collect()).unwrap();
        let w = make_windows(&series, 4).unwrap();
        assert_eq!(w.shape(), &[7, 4, 1]);
        assert_eq!(w.at(&[6, 3, 0]), 9.0);

        let (x, y) = make_forecast_windows(&series, 4, 3).unwrap();
        assert_eq!(x.shape(), &[4, 4, 1]); // 10 - 4 - 3 + 1
        assert_eq!(y.shape(), &[4, 3, 1]);
        assert_eq!(x.at(&[3, 3, 0]), 6.0);
        assert_eq!(y.at(&[3, 0, 0]), 7.0);

        assert!(make_windows(&series, 11).is_err());
        assert!(make_forecast_windows(&series, 8, 3).is_err());
    }

    #[test]
    fn mask_counts_are_exact_and_cells_zeroed() {
        let windows = Tensor::full(vec![5, 6, 3], 2.5f64);
        let mut rng = Rng::seed_from_u64(3);
        let (x, m) = apply_mask(&windows, 0.25, &mut rng).unwrap();
        let per = (0.25f64 * 18.0).round() as usize;
        assert_eq!(per, 5);
        for w in 0..5 {
            let cells = &m.data()[w * 18..(w + 1) * 18];
            let count = cells.iter().filter(|&&c| c == 1.0).count();
            assert_eq!(count, per, "window {w}");
            for (i, &c) in cells.iter().enumerate() {
                let v = x.data()[w * 18 + i];
                if c == 1.0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, 2.5);
                }
            }
        }
        assert!(apply_mask(&windows, 0.001, &mut rng).is_err(), "rounds to zero");
        assert!(apply_mask(&windows, 0.99, &mut rng).is_err(), "rounds to all");
    }

    #[test]
    fn synth_sine_is_deterministic_and_feature_stable() {
        let a = synth_sine::<f64>(50, 3, 2, 0.1, 7).unwrap();
        let b = synth_sine::<f64>(50, 3, 2, 0.1, 7).unwrap();
        assert_eq!(a.values.data(), b.values.data());
        // feature 0 does not depend on how many features follow it
        let wider = synth_sine::<f64>(50, 5, 2, 0.1, 7).unwrap();
        for t in 0..50 {
            assert_eq!(a.values.at(&[t, 0]), wider.values.at(&[t, 0]));
        }
        let other = synth_sine::<f64>(50, 3, 2, 0.1, 8).unwrap();
        assert_ne!(a.values.data(), other.values.data());
    }

    #[test]
    fn synth_classes_shapes_and_labels() {
        let (x, labels) = synth_classes::<f64>(4, 3, 16, 2, 0.05, 1).unwrap();
        assert_eq!(x.shape(), &[12, 16, 2]);
        assert_eq!(labels.len(), 12);
        for k in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 4);
        }
        // class frequencies differ: zero crossings grow with the label
        let crossings = |row: usize| {
            let mut n = 0;
            for t in 1..16 {
                let a = x.at(&[row, t - 1, 0]);
                let b = x.at(&[row, t, 0]);
                if (a < 0.0) != (b < 0.0) {
                    n += 1;
                }
            }
            n
        };
        assert!(crossings(0) < crossings(8), "class 0 vs class 2 frequency");
    }

    #[test]
    fn chronological_split_is_ordered_and_exhaustive() {
        let s = chronological_split(100, SPLIT_FRACTIONS).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.train.last(), Some(&69));
        assert_eq!(s.val.first(), Some(&70));
        assert_eq!(s.test.last(), Some(&99));

        // the remainder goes to test
        let s = chronological_split(23, SPLIT_FRACTIONS).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 5));
        assert_eq!(s.total(), 23);

        assert!(chronological_split(5, SPLIT_FRACTIONS).is_err());
    }

    #[test]
    fn stratified_split_keeps_class_balance() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let s = stratified_split(&labels, SPLIT_FRACTIONS).unwrap();
        assert_eq!(s.total(), 60);
        for split in [&s.train, &s.val, &s.test] {
            let mut counts = [0usize; 3];
            for &i in split.iter() {
                counts[labels[i]] += 1;
            }
            assert_eq!(counts[0], counts[1]);
            assert_eq!(counts[1], counts[2]);
        }
        // disjoint and exhaustive
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());

        let tiny: Vec<usize> = vec![0, 0, 1];
        assert!(stratified_split(&tiny, SPLIT_FRACTIONS).is_err());
    }
}
