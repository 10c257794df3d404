//! Evaluation: the metrics record emitted everywhere, classification scores,
//! reference baselines and the end-to-end task runners the CLI drives.
//!
//! Metrics are computed in normalized space by default; runners accept an
//! `inverse` flag to undo the scaler first. `seconds` stays unset in records
//! so repeated runs serialize byte-identically.

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_mask, chronological_split, make_forecast_windows, make_windows, stratified_split,
    MinMaxScaler, SPLIT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::model::{AblationVariant, Mstn, MstnConfig, TaskKind};
use crate::tensor::{Element, Rng, Tape, Tensor};
use crate::train::{fit, gather_rows, FitReport, TaskData, TaskTruth, TrainConfig};

// ── the record ──────────────────────────────────────────────────────────

/// One evaluation result. Serialized as a JSONL line; absent fields are
/// omitted rather than null so lines stay scannable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: String,
    pub dataset: String,
    /// model variant or baseline name
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn new(task: &str, dataset: &str, variant: &str, seed: u64) -> Self {
        MetricsRecord {
            task: task.into(),
            dataset: dataset.into(),
            variant: variant.into(),
            horizon: None,
            mask_ratio: None,
            mse: None,
            mae: None,
            accuracy: None,
            f1_macro: None,
            precision: None,
            recall: None,
            seconds: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mse", self.mse), ("mae", self.mae)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Numeric(format!("{name} {v} must be finite and >= 0")));
                }
            }
        }
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("f1_macro", self.f1_macro),
            ("precision", self.precision),
            ("recall", self.recall),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Numeric(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

// ── regression metrics ──────────────────────────────────────────────────

/// Mean squared and mean absolute error over every cell.
pub fn mse_mae<E: Element>(pred: &Tensor<E>, truth: &Tensor<E>) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::Data(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let d = p.to_f64() - t.to_f64();
        se += d * d;
        ae += d.abs();
    }
    Ok((se / n, ae / n))
}

/// MSE/MAE over masked cells only (mask 1 = hidden). Unmasked cells never
/// enter the sums, so perturbing them cannot change the result.
pub fn masked_mse_mae<E: Element>(
    pred: &Tensor<E>,
    truth: &Tensor<E>,
    mask: &Tensor<E>,
) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() || mask.shape() != truth.shape() {
        return Err(Error::Data(format!(
            "prediction {:?} / truth {:?} / mask {:?} must agree",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0u64);
    for i in 0..pred.len() {
        if mask.data()[i] == E::one() {
            let d = pred.data()[i].to_f64() - truth.data()[i].to_f64();
            se += d * d;
            ae += d.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("mask hides no cells".into()));
    }
    Ok((se / n as f64, ae / n as f64))
}

// ── classification metrics ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    /// macro averages over all `classes`, absent classes included at zero
    pub precision: f64,
    pub recall: f64,
    pub f1_macro: f64,
}

/// Accuracy and macro precision/recall/F1. Every class in 0..classes counts
/// toward the macro denominators; a class missing from both predictions and
/// truth contributes zero, pulling the average down rather than vanishing.
pub fn classification_metrics(
    pred: &[usize],
    truth: &[usize],
    classes: usize,
) -> Result<ClassMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    if classes < 2 {
        return Err(Error::Config(format!("scoring needs >= 2 classes, got {classes}")));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::Data(format!("class {bad} out of range 0..{classes}")));
    }

    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fne = vec![0u64; classes];
    let mut correct = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }

    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut ps, mut rs, mut f1s) = (0.0, 0.0, 0.0);
    for k in 0..classes {
        let p = ratio(tp[k], tp[k] + fp[k]);
        let r = ratio(tp[k], tp[k] + fne[k]);
        ps += p;
        rs += r;
        if p + r > 0.0 {
            f1s += 2.0 * p * r / (p + r);
        }
    }
    let c = classes as f64;
    Ok(ClassMetrics {
        accuracy: correct as f64 / pred.len() as f64,
        precision: ps / c,
        recall: rs / c,
        f1_macro: f1s / c,
    })
}

// ── baselines ───────────────────────────────────────────────────────────

/// Repeat each window's final step across the horizon: [N,T,D] -> [N,H,D].
pub fn last_value_repeat<E: Element>(x: &Tensor<E>, horizon: usize) -> Result<Tensor<E>> {
    if x.rank() != 3 {
        return Err(Error::Data(format!("wanted [N, T, D], got {:?}", x.shape())));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(n * horizon * d);
    for b in 0..n {
        let last = &x.data()[(b * t + t - 1) * d..(b * t + t) * d];
        for _ in 0..horizon {
            out.extend_from_slice(last);
        }
    }
    Tensor::new(vec![n, horizon, d], out)
}

/// Fill masked cells with the window's per-feature unmasked mean, falling
/// back to the window-wide unmasked mean when a feature is fully hidden.
/// Unmasked cells pass through untouched.
pub fn mean_fill<E: Element>(corrupted: &Tensor<E>, mask: &Tensor<E>) -> Result<Tensor<E>> {
    if corrupted.rank() != 3 || mask.shape() != corrupted.shape() {
        return Err(Error::Data(format!(
            "wanted matching [N, T, D], got {:?} and {:?}",
            corrupted.shape(),
            mask.shape()
        )));
    }
    let (n, t, d) = (corrupted.shape()[0], corrupted.shape()[1], corrupted.shape()[2]);
    let mut out = corrupted.data().to_vec();
    for b in 0..n {
        let win = &corrupted.data()[b * t * d..(b + 1) * t * d];
        let m = &mask.data()[b * t * d..(b + 1) * t * d];
        let mut sums = vec![0.0f64; d];
        let mut counts = vec![0u64; d];
        for i in 0..t * d {
            if m[i] == E::zero() {
                sums[i % d] += win[i].to_f64();
                counts[i % d] += 1;
            }
        }
        let total: f64 = sums.iter().sum();
        let seen: u64 = counts.iter().sum();
        if seen == 0 {
            return Err(Error::Data(format!("window {b} has every cell masked")));
        }
        let global = total / seen as f64;
        for i in 0..t * d {
            if m[i] == E::one() {
                let c = i % d;
                let fill = if counts[c] > 0 { sums[c] / counts[c] as f64 } else { global };
                out[b * t * d + i] = E::from_f64(fill);
            }
        }
    }
    Tensor::new(vec![n, t, d], out)
}

/// Nearest-centroid classifier on time-averaged features. The weakest
/// creditable baseline: anything trained should beat it.
pub struct GlobalMeanClassifier<E: Element> {
    /// [classes, D]
    pub centroids: Tensor<E>,
}

fn time_mean_features<E: Element>(x: &Tensor<E>) -> Result<Vec<Vec<f64>>> {
    if x.rank() != 3 {
        return Err(Error::Data(format!("wanted [N, T, D], got {:?}", x.shape())));
    }
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut rows = Vec::with_capacity(n);
    for b in 0..n {
        let mut row = vec![0.0f64; d];
        for i in 0..t * d {
            row[i % d] += x.data()[b * t * d + i].to_f64();
        }
        for v in &mut row {
            *v /= t as f64;
        }
        rows.push(row);
    }
    Ok(rows)
}

impl<E: Element> GlobalMeanClassifier<E> {
    pub fn fit(x: &Tensor<E>, labels: &[usize], classes: usize) -> Result<Self> {
        let rows = time_mean_features(x)?;
        if labels.len() != rows.len() {
            return Err(Error::Data(format!("{} labels for {} windows", labels.len(), rows.len())));
        }
        let d = x.shape()[2];
        let mut sums = vec![vec![0.0f64; d]; classes];
        let mut counts = vec![0u64; classes];
        for (row, &k) in rows.iter().zip(labels) {
            if k >= classes {
                return Err(Error::Data(format!("label {k} out of range 0..{classes}")));
            }
            for c in 0..d {
                sums[k][c] += row[c];
            }
            counts[k] += 1;
        }
        let mut data = Vec::with_capacity(classes * d);
        for k in 0..classes {
            if counts[k] == 0 {
                return Err(Error::Data(format!("class {k} has no training windows")));
            }
            data.extend(sums[k].iter().map(|&s| E::from_f64(s / counts[k] as f64)));
        }
        Ok(GlobalMeanClassifier { centroids: Tensor::new(vec![classes, d], data)? })
    }

    pub fn predict(&self, x: &Tensor<E>) -> Result<Vec<usize>> {
        let rows = time_mean_features(x)?;
        let (classes, d) = (self.centroids.shape()[0], self.centroids.shape()[1]);
        if x.shape()[2] != d {
            return Err(Error::Data(format!("{} features, centroids have {d}", x.shape()[2])));
        }
        Ok(rows
            .iter()
            .map(|row| {
                let mut best = (0, f64::INFINITY);
                for k in 0..classes {
                    let dist: f64 = (0..d)
                        .map(|c| {
                            let diff = row[c] - self.centroids.at(&[k, c]).to_f64();
                            diff * diff
                        })
                        .sum();
                    if dist < best.1 {
                        best = (k, dist);
                    }
                }
                best.0
            })
            .collect())
    }
}

// ── batched prediction ──────────────────────────────────────────────────

fn for_batches<F>(n: usize, batch: usize, mut f: F) -> Result<()>
where
    F: FnMut(usize, usize) -> Result<()>,
{
    if batch == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        f(start, end)?;
        start = end;
    }
    Ok(())
}

fn rows_range<E: Element>(t: &Tensor<E>, start: usize, end: usize) -> Tensor<E> {
    let idx: Vec<usize> = (start..end).collect();
    gather_rows(t, &idx)
}

/// Forecast every window: [N,T,D] -> [N,H,D], eval mode.
pub fn predict_forecast<E: Element>(
    model: &Mstn<E>,
    x: &Tensor<E>,
    batch: usize,
) -> Result<Tensor<E>> {
    let TaskKind::Forecast(h) = model.cfg.task else {
        return Err(Error::Config("model head is not a forecaster".into()));
    };
    let (n, d) = (x.shape()[0], model.cfg.input_dim);
    let mut out = Vec::with_capacity(n * h * d);
    for_batches(n, batch, |s, e| {
        let mut tape = Tape::new();
        let (o, _) = model.forward_eval(&mut tape, &rows_range(x, s, e), None)?;
        out.extend_from_slice(tape.value(o.var()).data());
        Ok(())
    })?;
    Tensor::new(vec![n, h, d], out)
}

/// Reconstruct corrupted windows: [N,T,D] -> [N,T,D], eval mode. Observed
/// cells pass through; only masked cells are model output.
pub fn predict_impute<E: Element>(
    model: &Mstn<E>,
    corrupted: &Tensor<E>,
    mask: &Tensor<E>,
    batch: usize,
) -> Result<Tensor<E>> {
    if model.cfg.task != TaskKind::Impute {
        return Err(Error::Config("model head is not an imputer".into()));
    }
    let n = corrupted.shape()[0];
    let mut out = Vec::with_capacity(corrupted.len());
    for_batches(n, batch, |s, e| {
        let mut tape = Tape::new();
        let (o, _) = model.forward_eval(
            &mut tape,
            &rows_range(corrupted, s, e),
            Some(&rows_range(mask, s, e)),
        )?;
        out.extend_from_slice(tape.value(o.var()).data());
        Ok(())
    })?;
    Tensor::new(corrupted.shape().to_vec(), out)
}

/// Class index per window by logit argmax, eval mode.
pub fn predict_classify<E: Element>(
    model: &Mstn<E>,
    x: &Tensor<E>,
    batch: usize,
) -> Result<Vec<usize>> {
    let TaskKind::Classify(classes) = model.cfg.task else {
        return Err(Error::Config("model head is not a classifier".into()));
    };
    let n = x.shape()[0];
    let mut out = Vec::with_capacity(n);
    for_batches(n, batch, |s, e| {
        let mut tape = Tape::new();
        let (o, _) = model.forward_eval(&mut tape, &rows_range(x, s, e), None)?;
        let logits = tape.value(o.var());
        for b in 0..e - s {
            let row = &logits.data()[b * classes..(b + 1) * classes];
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            out.push(best);
        }
        Ok(())
    })?;
    Ok(out)
}

// ── protocols ───────────────────────────────────────────────────────────
//
// A protocol is a dataset already scaled, windowed and split the one way
// this codebase does it: scaler fitted on the training era (first 70% of
// raw rows), the whole series transformed, windows split chronologically.

pub struct ForecastProtocol<E: Element> {
    pub train: TaskData<E>,
    pub val: TaskData<E>,
    pub test: TaskData<E>,
    pub horizon: usize,
    pub scaler: MinMaxScaler<E>,
}

fn fit_rows(n: usize) -> usize {
    ((n as f64 * SPLIT_FRACTIONS.0).floor() as usize).max(1)
}

pub fn prepare_forecast<E: Element>(
    series: &Tensor<E>,
    lookback: usize,
    horizon: usize,
) -> Result<ForecastProtocol<E>> {
    let scaler = MinMaxScaler::fit(series, fit_rows(series.shape()[0]))?;
    let scaled = scaler.transform(series)?;
    let (x, y) = make_forecast_windows(&scaled, lookback, horizon)?;
    let split = chronological_split(x.shape()[0], SPLIT_FRACTIONS)?;
    let take = |idx: &[usize]| TaskData {
        x: gather_rows(&x, idx),
        truth: TaskTruth::Future(gather_rows(&y, idx)),
    };
    Ok(ForecastProtocol {
        train: take(&split.train),
        val: take(&split.val),
        test: take(&split.test),
        horizon,
        scaler,
    })
}

pub struct ImputeProtocol<E: Element> {
    /// clean windows; training draws a fresh mask each epoch
    pub train: TaskData<E>,
    /// fixed masks, drawn once from the (seed, "mask.val"/"mask.test") streams
    pub val: TaskData<E>,
    pub test: TaskData<E>,
    pub ratio: f64,
    pub scaler: MinMaxScaler<E>,
}

pub fn prepare_impute<E: Element>(
    series: &Tensor<E>,
    lookback: usize,
    ratio: f64,
    seed: u64,
) -> Result<ImputeProtocol<E>> {
    let scaler = MinMaxScaler::fit(series, fit_rows(series.shape()[0]))?;
    let scaled = scaler.transform(series)?;
    let windows = make_windows(&scaled, lookback)?;
    let split = chronological_split(windows.shape()[0], SPLIT_FRACTIONS)?;
    let fixed = |idx: &[usize], label: &str| -> Result<TaskData<E>> {
        let clean = gather_rows(&windows, idx);
        let mut rng = Rng::seed_from_label(seed, label);
        let (corrupt, mask) = apply_mask(&clean, ratio, &mut rng)?;
        Ok(TaskData { x: corrupt, truth: TaskTruth::Masked { truth: clean, mask } })
    };
    Ok(ImputeProtocol {
        train: TaskData { x: gather_rows(&windows, &split.train), truth: TaskTruth::MaskedFresh },
        val: fixed(&split.val, "mask.val")?,
        test: fixed(&split.test, "mask.test")?,
        ratio,
        scaler,
    })
}

pub struct ClassifyProtocol<E: Element> {
    pub train: TaskData<E>,
    pub val: TaskData<E>,
    pub test: TaskData<E>,
    pub classes: usize,
}

/// Windows are the samples here, so the split is stratified per class and
/// the scaler fits on the train windows' cells.
pub fn prepare_classify<E: Element>(
    x: &Tensor<E>,
    labels: &[usize],
    classes: usize,
) -> Result<ClassifyProtocol<E>> {
    if x.rank() != 3 {
        return Err(Error::Data(format!("wanted [N, T, D], got {:?}", x.shape())));
    }
    if labels.len() != x.shape()[0] {
        return Err(Error::Data(format!("{} labels for {} windows", labels.len(), x.shape()[0])));
    }
    let split = stratified_split(labels, SPLIT_FRACTIONS)?;
    let (t, d) = (x.shape()[1], x.shape()[2]);
    let train_x = gather_rows(x, &split.train);
    let flat = Tensor::new(vec![split.train.len() * t, d], train_x.data().to_vec())?;
    let scaler = MinMaxScaler::fit(&flat, flat.shape()[0])?;
    let take = |idx: &[usize]| -> Result<TaskData<E>> {
        Ok(TaskData {
            x: scaler.transform(&gather_rows(x, idx))?,
            truth: TaskTruth::Classes(idx.iter().map(|&i| labels[i]).collect()),
        })
    };
    Ok(ClassifyProtocol {
        train: take(&split.train)?,
        val: take(&split.val)?,
        test: take(&split.test)?,
        classes,
    })
}

// ── runners ─────────────────────────────────────────────────────────────

/// A trained model plus everything the caller reports: metric records
/// (model first, then reference baselines) and the fit history.
pub struct RunOutcome<E: Element> {
    pub records: Vec<MetricsRecord>,
    pub model: Mstn<E>,
    pub fit: FitReport,
}

fn set_regression(rec: &mut MetricsRecord, mse: f64, mae: f64) {
    rec.mse = Some(mse);
    rec.mae = Some(mae);
}

fn set_classification(rec: &mut MetricsRecord, m: &ClassMetrics) {
    rec.accuracy = Some(m.accuracy);
    rec.f1_macro = Some(m.f1_macro);
    rec.precision = Some(m.precision);
    rec.recall = Some(m.recall);
}

/// Score a trained forecaster and the repeat baseline on the test split.
pub fn eval_forecast<E: Element>(
    model: &Mstn<E>,
    proto: &ForecastProtocol<E>,
    batch: usize,
    dataset: &str,
    inverse: bool,
) -> Result<Vec<MetricsRecord>> {
    let pred = predict_forecast(model, &proto.test.x, batch)?;
    let TaskTruth::Future(truth) = &proto.test.truth else { unreachable!() };
    let naive = last_value_repeat(&proto.test.x, proto.horizon)?;
    let (pred, truth, naive) = if inverse {
        (proto.scaler.inverse(&pred)?, proto.scaler.inverse(truth)?, proto.scaler.inverse(&naive)?)
    } else {
        (pred, truth.clone(), naive)
    };

    let cfg = &model.cfg;
    let mut rec = MetricsRecord::new("forecast", dataset, cfg.variant.as_str(), cfg.seed);
    rec.horizon = Some(proto.horizon);
    let (mse, mae) = mse_mae(&pred, &truth)?;
    set_regression(&mut rec, mse, mae);

    let mut base = MetricsRecord::new("forecast", dataset, "LastValueRepeat", cfg.seed);
    base.horizon = Some(proto.horizon);
    let (mse, mae) = mse_mae(&naive, &truth)?;
    set_regression(&mut base, mse, mae);
    Ok(vec![rec, base])
}

pub fn run_forecast<E: Element>(
    proto: &ForecastProtocol<E>,
    cfg: &MstnConfig,
    tc: &TrainConfig,
    dataset: &str,
    inverse: bool,
) -> Result<RunOutcome<E>> {
    if cfg.task != TaskKind::Forecast(proto.horizon) {
        return Err(Error::Config(format!(
            "model task {} does not fit a horizon-{} forecast protocol",
            cfg.task.as_str(),
            proto.horizon
        )));
    }
    let mut model = Mstn::new(cfg.clone())?;
    let fit_report = fit(&mut model, &proto.train, &proto.val, tc)?;
    let records = eval_forecast(&model, proto, tc.batch_size, dataset, inverse)?;
    Ok(RunOutcome { records, model, fit: fit_report })
}

pub fn run_impute<E: Element>(
    proto: &ImputeProtocol<E>,
    cfg: &MstnConfig,
    tc: &TrainConfig,
    dataset: &str,
    inverse: bool,
) -> Result<RunOutcome<E>> {
    if cfg.task != TaskKind::Impute {
        return Err(Error::Config(format!(
            "model task {} does not fit an imputation protocol",
            cfg.task.as_str()
        )));
    }
    let tc = TrainConfig { mask_ratio: proto.ratio, ..tc.clone() };
    let mut model = Mstn::new(cfg.clone())?;
    let fit_report = fit(&mut model, &proto.train, &proto.val, &tc)?;
    let records = eval_impute(&model, proto, tc.batch_size, dataset, inverse)?;
    Ok(RunOutcome { records, model, fit: fit_report })
}

/// Score a trained imputer and the mean-fill baseline on the fixed test mask.
pub fn eval_impute<E: Element>(
    model: &Mstn<E>,
    proto: &ImputeProtocol<E>,
    batch: usize,
    dataset: &str,
    inverse: bool,
) -> Result<Vec<MetricsRecord>> {
    let TaskTruth::Masked { truth, mask } = &proto.test.truth else {
        return Err(Error::Config("test split needs a fixed mask".into()));
    };
    let pred = predict_impute(model, &proto.test.x, mask, batch)?;
    let filled = mean_fill(&proto.test.x, mask)?;
    let (pred, truth, filled) = if inverse {
        (proto.scaler.inverse(&pred)?, proto.scaler.inverse(truth)?, proto.scaler.inverse(&filled)?)
    } else {
        (pred, truth.clone(), filled)
    };

    let cfg = &model.cfg;
    let mut rec = MetricsRecord::new("impute", dataset, cfg.variant.as_str(), cfg.seed);
    rec.mask_ratio = Some(proto.ratio);
    let (mse, mae) = masked_mse_mae(&pred, &truth, mask)?;
    set_regression(&mut rec, mse, mae);

    let mut base = MetricsRecord::new("impute", dataset, "MeanFill", cfg.seed);
    base.mask_ratio = Some(proto.ratio);
    let (mse, mae) = masked_mse_mae(&filled, &truth, mask)?;
    set_regression(&mut base, mse, mae);
    Ok(vec![rec, base])
}

/// One trained model per mask ratio; each outcome carries the model record
/// and the MeanFill reference on the identical test mask.
pub fn run_impute_sweep<E: Element>(
    series: &Tensor<E>,
    lookback: usize,
    ratios: &[f64],
    cfg: &MstnConfig,
    tc: &TrainConfig,
    dataset: &str,
    inverse: bool,
) -> Result<Vec<RunOutcome<E>>> {
    if ratios.is_empty() {
        return Err(Error::Config("no mask ratios given".into()));
    }
    ratios
        .iter()
        .map(|&r| {
            let proto = prepare_impute(series, lookback, r, cfg.seed)?;
            run_impute(&proto, cfg, tc, dataset, inverse)
        })
        .collect()
}

pub fn run_classify<E: Element>(
    proto: &ClassifyProtocol<E>,
    cfg: &MstnConfig,
    tc: &TrainConfig,
    dataset: &str,
) -> Result<RunOutcome<E>> {
    if cfg.task != TaskKind::Classify(proto.classes) {
        return Err(Error::Config(format!(
            "model task {} does not fit a {}-class protocol",
            cfg.task.as_str(),
            proto.classes
        )));
    }
    let mut model = Mstn::new(cfg.clone())?;
    let fit_report = fit(&mut model, &proto.train, &proto.val, tc)?;
    let records = eval_classify(&model, proto, tc.batch_size, dataset)?;
    Ok(RunOutcome { records, model, fit: fit_report })
}

/// Score a trained classifier and the nearest-centroid baseline (fitted on
/// the protocol's train split) on the test split.
pub fn eval_classify<E: Element>(
    model: &Mstn<E>,
    proto: &ClassifyProtocol<E>,
    batch: usize,
    dataset: &str,
) -> Result<Vec<MetricsRecord>> {
    let TaskTruth::Classes(truth) = &proto.test.truth else { unreachable!() };
    let cfg = &model.cfg;
    let pred = predict_classify(model, &proto.test.x, batch)?;
    let mut rec = MetricsRecord::new("classify", dataset, cfg.variant.as_str(), cfg.seed);
    set_classification(&mut rec, &classification_metrics(&pred, truth, proto.classes)?);

    let TaskTruth::Classes(train_labels) = &proto.train.truth else { unreachable!() };
    let centroid = GlobalMeanClassifier::fit(&proto.train.x, train_labels, proto.classes)?;
    let base_pred = centroid.predict(&proto.test.x)?;
    let mut base = MetricsRecord::new("classify", dataset, "GlobalMeanClassifier", cfg.seed);
    set_classification(&mut base, &classification_metrics(&base_pred, truth, proto.classes)?);
    Ok(vec![rec, base])
}

// ── ablation ────────────────────────────────────────────────────────────

pub enum TaskProtocol<E: Element> {
    Forecast(ForecastProtocol<E>),
    Impute(ImputeProtocol<E>),
    Classify(ClassifyProtocol<E>),
}

/// Train one model per variant on the identical protocol. Variants share
/// the seed, so parameters present in several variants start bit-identical
/// and differences are attributable to the removed stage.
pub fn run_ablation<E: Element>(
    proto: &TaskProtocol<E>,
    base: &MstnConfig,
    tc: &TrainConfig,
    dataset: &str,
    variants: &[AblationVariant],
) -> Result<Vec<RunOutcome<E>>> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants given".into()));
    }
    variants
        .iter()
        .map(|&v| {
            let cfg = base.make_ablated(v)?;
            match proto {
                TaskProtocol::Forecast(p) => run_forecast(p, &cfg, tc, dataset, false),
                TaskProtocol::Impute(p) => run_impute(p, &cfg, tc, dataset, false),
                TaskProtocol::Classify(p) => run_classify(p, &cfg, tc, dataset),
            }
        })
        .collect()
}

/// Fixed-width text grid of ablation results, one row per record, columns
/// for whichever metrics are present.
pub fn ablation_grid(records: &[MetricsRecord]) -> String {
    type Col = fn(&MetricsRecord) -> Option<f64>;
    let cols: [(&str, Col); 4] = [
        ("mse", |r| r.mse),
        ("mae", |r| r.mae),
        ("accuracy", |r| r.accuracy),
        ("f1_macro", |r| r.f1_macro),
    ];
    let active: Vec<_> =
        cols.iter().filter(|(_, get)| records.iter().any(|r| get(r).is_some())).collect();

    let label = |r: &MetricsRecord| {
        AblationVariant::parse(&r.variant)
            .map(|v| v.label().to_string())
            .unwrap_or_else(|_| r.variant.clone())
    };
    let name_w = records.iter().map(|r| label(r).len()).chain(["variant".len()]).max().unwrap_or(7);

    let mut s = format!("{:name_w$}", "variant");
    for (name, _) in &active {
        s.push_str(&format!("  {name:>12}"));
    }
    s.push('\n');
    for r in records {
        s.push_str(&format!("{:name_w$}", label(r)));
        for (_, get) in &active {
            match get(r) {
                Some(v) => s.push_str(&format!("  {v:>12.6}")),
                None => s.push_str(&format!("  {:>12}", "-")),
            }
        }
        s.push('\n');
    }
    s
}
