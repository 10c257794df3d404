//! Training: AdamW, the epoch loop with early stopping, and the per-task
//! loss dispatch. Everything is deterministic given the model seed; wall
//! clock only ever appears in the returned history, never in the math.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bound, Mstn, Output, TaskKind};
use crate::tensor::{Element, Rng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// fraction of cells hidden when training/evaluating imputation
    pub mask_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            mask_ratio: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr {} must be positive", self.lr));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.eps <= 0.0 {
            return bad(format!("train.eps {} must be positive", self.eps));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("train.weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("train.batch_size, train.max_epochs, train.patience must be >= 1".into());
        }
        if self.focal_gamma < 0.0 {
            return bad(format!("train.focal_gamma {} must be >= 0", self.focal_gamma));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return bad(format!("train.focal_alpha {} outside (0, 1]", self.focal_alpha));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) || self.mask_ratio <= 0.0 {
            return bad(format!("train.mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        Ok(())
    }

    /// Canonical `train.key=value` lines, parseable by `apply_kv_lines`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str("train.");
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("lr", format!("{}", self.lr));
        kv("beta1", format!("{}", self.beta1));
        kv("beta2", format!("{}", self.beta2));
        kv("eps", format!("{}", self.eps));
        kv("weight_decay", format!("{}", self.weight_decay));
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("focal_gamma", format!("{}", self.focal_gamma));
        kv("focal_alpha", format!("{}", self.focal_alpha));
        kv("mask_ratio", format!("{}", self.mask_ratio));
        s
    }

    /// Apply `train.*` lines on top of the current values. Unknown keys,
    /// bad values and duplicates are errors; non-`train.` lines too.
    pub fn apply_kv_lines(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
            let field = k
                .strip_prefix("train.")
                .ok_or_else(|| Error::Config(format!("unknown config key '{k}'")))?;
            fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
                v.parse().map_err(|_| Error::Config(format!("key '{k}': cannot parse '{v}'")))
            }
            match field {
                "lr" => self.lr = num(k, v)?,
                "beta1" => self.beta1 = num(k, v)?,
                "beta2" => self.beta2 = num(k, v)?,
                "eps" => self.eps = num(k, v)?,
                "weight_decay" => self.weight_decay = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "max_epochs" => self.max_epochs = num(k, v)?,
                "patience" => self.patience = num(k, v)?,
                "focal_gamma" => self.focal_gamma = num(k, v)?,
                "focal_alpha" => self.focal_alpha = num(k, v)?,
                "mask_ratio" => self.mask_ratio = num(k, v)?,
                _ => return Err(Error::Config(format!("unknown config key '{k}'"))),
            }
        }
        self.validate()
    }
}

// ── task data ───────────────────────────────────────────────────────────

/// Ground truth aligned with a set of input windows.
#[derive(Debug, Clone)]
pub enum TaskTruth<E: Element> {
    /// class index per window
    Classes(Vec<usize>),
    /// future values per window [N,H,D]
    Future(Tensor<E>),
    /// original values and the 0/1 corruption mask, both [N,T,D]
    Masked { truth: Tensor<E>, mask: Tensor<E> },
    /// imputation training data: `x` holds the clean windows and a fresh
    /// mask is drawn every epoch, so the model never memorizes one corruption
    MaskedFresh,
}

/// Inputs plus truth for one split. For imputation, `x` holds the corrupted
/// windows (masked cells zeroed) and the truth keeps the originals.
#[derive(Debug, Clone)]
pub struct TaskData<E: Element> {
    pub x: Tensor<E>,
    pub truth: TaskTruth<E>,
}

pub(crate) fn gather_rows<E: Element>(t: &Tensor<E>, idx: &[usize]) -> Tensor<E> {
    let row = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    Tensor::new(shape, data).expect("gather preserves row size")
}

impl<E: Element> TaskData<E> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self.truth {
            TaskTruth::Classes(_) => "classify",
            TaskTruth::Future(_) => "forecast",
            TaskTruth::Masked { .. } | TaskTruth::MaskedFresh => "impute",
        }
    }

    pub fn validate_for(&self, task: TaskKind) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("split contains no windows".into()));
        }
        let n = self.len();
        match (&self.truth, task) {
            (TaskTruth::Classes(c), TaskKind::Classify(classes)) => {
                if c.len() != n {
                    return Err(Error::Data(format!("{} labels for {} windows", c.len(), n)));
                }
                if let Some(&bad) = c.iter().find(|&&l| l >= classes) {
                    return Err(Error::Data(format!("label {bad} out of range 0..{classes}")));
                }
                Ok(())
            }
            (TaskTruth::Future(f), TaskKind::Forecast(h)) => {
                if f.rank() != 3 || f.shape()[0] != n || f.shape()[1] != h {
                    return Err(Error::Data(format!(
                        "future truth shape {:?}, want [{n}, {h}, D]",
                        f.shape()
                    )));
                }
                Ok(())
            }
            (TaskTruth::Masked { truth, mask }, TaskKind::Impute) => {
                if truth.shape() != self.x.shape() || mask.shape() != self.x.shape() {
                    return Err(Error::Data(format!(
                        "truth {:?} / mask {:?} must match inputs {:?}",
                        truth.shape(),
                        mask.shape(),
                        self.x.shape()
                    )));
                }
                Ok(())
            }
            (TaskTruth::MaskedFresh, TaskKind::Impute) => Ok(()),
            (_, task) => Err(Error::Data(format!(
                "data prepared for {} but model task is {}",
                self.kind(),
                task.as_str()
            ))),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> TaskData<E> {
        let truth = match &self.truth {
            TaskTruth::Classes(c) => TaskTruth::Classes(idx.iter().map(|&i| c[i]).collect()),
            TaskTruth::Future(f) => TaskTruth::Future(gather_rows(f, idx)),
            TaskTruth::Masked { truth, mask } => {
                TaskTruth::Masked { truth: gather_rows(truth, idx), mask: gather_rows(mask, idx) }
            }
            TaskTruth::MaskedFresh => TaskTruth::MaskedFresh,
        };
        TaskData { x: gather_rows(&self.x, idx), truth }
    }

    /// The mask a forward pass needs (imputation only).
    pub fn mask(&self) -> Option<&Tensor<E>> {
        match &self.truth {
            TaskTruth::Masked { mask, .. } => Some(mask),
            _ => None,
        }
    }
}

/// Loss node for a batch output, dispatched on the truth kind.
pub fn task_loss<E: Element>(
    tape: &mut Tape<E>,
    out: Output,
    truth: &TaskTruth<E>,
    cfg: &TrainConfig,
) -> Result<Var> {
    match (out, truth) {
        (Output::Classify(logits), TaskTruth::Classes(targets)) => tape.focal_loss(
            logits,
            targets,
            E::from_f64(cfg.focal_gamma),
            E::from_f64(cfg.focal_alpha),
        ),
        (Output::Forecast(pred), TaskTruth::Future(future)) => tape.mse_loss(pred, future),
        (Output::Impute(pred), TaskTruth::Masked { truth, mask }) => {
            tape.masked_mse_loss(pred, truth, mask)
        }
        (_, TaskTruth::MaskedFresh) => Err(Error::Config(
            "fresh-mask data must be materialized before computing a loss".into(),
        )),
        _ => Err(Error::Config("output kind does not match truth kind".into())),
    }
}

// ── optimizer ───────────────────────────────────────────────────────────

/// Decoupled weight decay Adam. Decay multiplies the parameter by
/// (1 - lr·wd) before the moment step, matching the reference decoupled
/// formulation. Parameters whose gradient is absent this step (off the
/// loss path) are skipped entirely: no decay, no moment update.
pub struct AdamW<E: Element> {
    cfg: TrainConfig,
    t: u64,
    m: BTreeMap<String, Vec<E>>,
    v: BTreeMap<String, Vec<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(cfg: TrainConfig) -> Self {
        AdamW { cfg, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all trainable parameters with gradients on the tape.
    pub fn step(
        &mut self,
        params: &mut crate::model::ModelParams<E>,
        tape: &Tape<E>,
        bound: &Bound,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let lr = E::from_f64(self.cfg.lr);
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let eps = E::from_f64(self.cfg.eps);
        let decay = E::one() - lr * E::from_f64(self.cfg.weight_decay);
        let bc1 = E::from_f64(1.0 - self.cfg.beta1.powi(t as i32));
        let bc2 = E::from_f64(1.0 - self.cfg.beta2.powi(t as i32));

        let paths: Vec<String> =
            params.iter().filter(|(_, p)| p.trainable).map(|(path, _)| path.to_string()).collect();
        for path in paths {
            let Some(grad) = tape.grad(bound.var(&path)) else {
                continue;
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("gradient for '{path}' is not finite")));
            }
            let grad = grad.to_vec();
            let n = grad.len();
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![E::zero(); n]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![E::zero(); n]);
            let theta = params.tensor_mut(&path).data_mut();
            for i in 0..n {
                let g = grad[i];
                theta[i] = theta[i] * decay;
                m[i] = b1 * m[i] + (E::one() - b1) * g;
                v[i] = b2 * v[i] + (E::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("parameter '{path}' became non-finite")));
            }
        }
        Ok(())
    }
}

// ── early stopping ──────────────────────────────────────────────────────

/// Stops after `patience` consecutive epochs without a strict improvement.
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Record this epoch's validation loss. Returns true when the loss
    /// improved (caller snapshots weights).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

// ── the loop ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean loss over a split in eval mode (no dropout, running statistics).
pub fn evaluate_loss<E: Element>(
    model: &Mstn<E>,
    data: &TaskData<E>,
    cfg: &TrainConfig,
) -> Result<f64> {
    data.validate_for(model.cfg.task)?;
    if matches!(data.truth, TaskTruth::MaskedFresh) {
        return Err(Error::Config(
            "evaluation needs a fixed mask; draw one with apply_mask".into(),
        ));
    }
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + cfg.batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = data.gather(&idx);
        let mut tape = Tape::new();
        let (out, _) = model.forward_eval(&mut tape, &batch.x, batch.mask())?;
        let loss = task_loss(&mut tape, out, &batch.truth, cfg)?;
        let value = tape.value(loss).item().to_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss is not finite (windows {start}..{end})"
            )));
        }
        total += value * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Train until the validation loss stops improving or the epoch budget runs
/// out. The model is left holding the best-validation weights; the history
/// records every epoch that ran.
pub fn fit<E: Element>(
    model: &mut Mstn<E>,
    train: &TaskData<E>,
    val: &TaskData<E>,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    train.validate_for(model.cfg.task)?;
    val.validate_for(model.cfg.task)?;
    if matches!(val.truth, TaskTruth::MaskedFresh) {
        return Err(Error::Config(
            "validation needs a fixed mask; draw one with apply_mask".into(),
        ));
    }

    let mut rng = Rng::seed_from_label(model.cfg.seed, "train");
    let mut opt = AdamW::<E>::new(cfg.clone());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut history = Vec::new();
    let n = train.len();

    for epoch in 1..=cfg.max_epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);

        // imputation training corrupts with a fresh mask every epoch
        let epoch_data: std::borrow::Cow<TaskData<E>> = match &train.truth {
            TaskTruth::MaskedFresh => {
                let (corrupt, mask) = crate::data::apply_mask(&train.x, cfg.mask_ratio, &mut rng)?;
                std::borrow::Cow::Owned(TaskData {
                    x: corrupt,
                    truth: TaskTruth::Masked { truth: train.x.clone(), mask },
                })
            }
            _ => std::borrow::Cow::Borrowed(train),
        };

        let mut train_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = epoch_data.gather(chunk);
            let mut tape = Tape::new();
            let (out, bound, _) =
                model.forward_train(&mut tape, &batch.x, batch.mask(), &mut rng)?;
            let loss = task_loss(&mut tape, out, &batch.truth, cfg)?;
            let value = tape.value(loss).item().to_f64();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("training loss is not finite (epoch {epoch})")));
            }
            train_total += value * chunk.len() as f64;
            tape.backward(loss)?;
            opt.step(&mut model.params, &tape, &bound)?;
        }
        let train_loss = train_total / n as f64;
        let val_loss = evaluate_loss(model, val, cfg)?;

        if stopper.observe(epoch, val_loss) {
            best_params = model.params.clone();
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: Some(started.elapsed().as_secs_f64()),
        });
        if stopper.should_stop() {
            break;
        }
    }

    model.params = best_params;
    let (best_epoch, best_val_loss) = stopper.best();
    let stopped_early = history.len() < cfg.max_epochs;
    Ok(FitReport { history, best_epoch, best_val_loss, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MstnConfig, Param};

    fn one_param(value: &[f64]) -> crate::model::ModelParams<f64> {
        let mut m = crate::model::ModelParams::empty();
        m.insert(
            "w".into(),
            Param {
                tensor: Tensor::new(vec![value.len()], value.to_vec()).unwrap(),
                trainable: true,
            },
        );
        m
    }

    /// Drive AdamW with a fixed gradient sequence through a real tape.
    fn run_adamw(cfg: TrainConfig, theta0: f64, grads: &[f64]) -> f64 {
        let mut params = one_param(&[theta0]);
        let mut opt = AdamW::new(cfg);
        for &g in grads {
            let mut tape = Tape::new();
            let bound = crate::model::bind_params(&mut tape, &params, true);
            // loss = g * w has d(loss)/dw = g
            let gv = tape.constant(Tensor::new(vec![1], vec![g]).unwrap());
            let prod = tape.mul(bound.var("w"), gv).unwrap();
            let loss = tape.sum_all(prod);
            tape.backward(loss).unwrap();
            opt.step(&mut params, &tape, &bound).unwrap();
        }
        params.tensor("w").data()[0]
    }

    #[test]
    fn adamw_matches_hand_oracle() {
        // lr 0.1, wd 0.01, betas (0.9, 0.999), eps 1e-8, theta0 1,
        // grads [0.5, -0.3, 0.2]; thetas from the decoupled update:
        let cfg = TrainConfig { lr: 0.1, weight_decay: 0.01, ..TrainConfig::default() };
        let expect = [0.899000002, 0.8789511989397751, 0.8433294795899422];
        for steps in 1..=3 {
            let got = run_adamw(cfg.clone(), 1.0, &[0.5, -0.3, 0.2][..steps]);
            assert!(
                (got - expect[steps - 1]).abs() < 1e-12,
                "step {steps}: {got} vs {}",
                expect[steps - 1]
            );
        }
    }

    #[test]
    fn adamw_first_step_is_scale_invariant() {
        // with zero decay the first step is lr * g/(|g| + eps): gradient
        // scale cancels up to eps/|g|, which bounds the tolerance here
        let cfg = TrainConfig { lr: 0.01, weight_decay: 0.0, ..TrainConfig::default() };
        let base = run_adamw(cfg.clone(), 1.0, &[0.01]);
        for scale in [1.0, 10.0, 1e4] {
            let got = run_adamw(cfg.clone(), 1.0, &[0.01 * scale]);
            assert!((got - base).abs() < 1e-7, "scale {scale}: {got} vs {base}");
        }
        assert!((base - (1.0 - 0.01)).abs() < 1e-5, "first step should be about lr");
    }

    #[test]
    fn adamw_skips_params_without_gradient() {
        let mut params = one_param(&[1.0, 2.0]);
        params.insert(
            "dead".into(),
            Param { tensor: Tensor::new(vec![1], vec![5.0]).unwrap(), trainable: true },
        );
        let mut opt = AdamW::new(TrainConfig { lr: 0.1, ..TrainConfig::default() });
        let mut tape = Tape::new();
        let bound = crate::model::bind_params(&mut tape, &params, true);
        let sum = tape.sum_all(bound.var("w"));
        tape.backward(sum).unwrap();
        opt.step(&mut params, &tape, &bound).unwrap();
        assert_eq!(params.tensor("dead").data()[0], 5.0, "no decay without a gradient");
        assert!(params.tensor("w").data()[0] < 1.0);
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let mut params = one_param(&[1.0]);
        let mut opt = AdamW::new(TrainConfig::default());
        let mut tape = Tape::new();
        let bound = crate::model::bind_params(&mut tape, &params, true);
        let inf = tape.constant(Tensor::new(vec![1], vec![f64::INFINITY]).unwrap());
        let prod = tape.mul(bound.var("w"), inf).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        let err = opt.step(&mut params, &tape, &bound).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        assert!(err.to_string().contains("'w'"), "{err}");
    }

    #[test]
    fn early_stopper_counts_consecutive_non_improvements() {
        let mut s = EarlyStopper::new(2);
        assert!(s.observe(1, 1.0));
        assert!(!s.observe(2, 1.5));
        assert!(!s.should_stop());
        assert!(s.observe(3, 0.5));
        assert!(!s.observe(4, 0.6));
        assert!(!s.observe(5, 0.5)); // ties do not improve
        assert!(s.should_stop());
        assert_eq!(s.best(), (3, 0.5));
    }

    fn tiny_classify_data(
        n: usize,
        classes: usize,
        t: usize,
        d: usize,
        seed: u64,
    ) -> TaskData<f32> {
        // class k pushes feature values toward level k: trivially separable
        let mut rng = Rng::seed_from_u64(seed);
        let mut x = Tensor::zeros(vec![n, t, d]);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % classes;
            labels.push(k);
            for j in 0..t * d {
                x.data_mut()[i * t * d + j] = k as f32 + rng.uniform::<f32>(-0.1, 0.1);
            }
        }
        TaskData { x, truth: TaskTruth::Classes(labels) }
    }

    fn tiny_cfg(classes: usize, t: usize, d: usize) -> MstnConfig {
        let mut cfg = MstnConfig::new(d, t, crate::model::TaskKind::Classify(classes));
        cfg.conv_channels = (4, 4);
        cfg.conv_kernels = (3, 3);
        cfg.transformer.layers = 1;
        cfg.transformer.heads = 2;
        cfg.transformer.model_dim = 4;
        cfg.transformer.ffn_dim = 8;
        cfg.se_reduction = 2;
        cfg.mhta_heads = 2;
        cfg.dropout = 0.1;
        cfg
    }

    #[test]
    fn fit_reduces_loss_and_restores_best() {
        let cfg = tiny_cfg(2, 6, 2);
        let mut model = Mstn::<f32>::new(cfg).unwrap();
        let train = tiny_classify_data(16, 2, 6, 2, 1);
        let val = tiny_classify_data(8, 2, 6, 2, 2);
        let tc = TrainConfig {
            lr: 3e-3,
            batch_size: 8,
            max_epochs: 15,
            patience: 15,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &train, &val, &tc).unwrap();
        let first = report.history.first().unwrap().train_loss;
        let last = report.history.last().unwrap().train_loss;
        assert!(last < first * 0.7, "train loss {first} -> {last}");

        // the held weights reproduce the reported best validation loss
        let reval = evaluate_loss(&model, &val, &tc).unwrap();
        assert!(
            (reval - report.best_val_loss).abs() < 1e-6,
            "restored weights give {reval}, report says {}",
            report.best_val_loss
        );
    }

    #[test]
    fn fit_is_deterministic_for_a_seed() {
        let run = || {
            let cfg = tiny_cfg(2, 6, 2);
            let mut model = Mstn::<f32>::new(cfg).unwrap();
            let train = tiny_classify_data(12, 2, 6, 2, 1);
            let val = tiny_classify_data(6, 2, 6, 2, 2);
            let tc = TrainConfig { batch_size: 4, max_epochs: 3, ..TrainConfig::default() };
            fit(&mut model, &train, &val, &tc).unwrap();
            let mut buf = Vec::new();
            model.save(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fit_aborts_on_poisoned_weights() {
        let cfg = tiny_cfg(2, 6, 2);
        let mut model = Mstn::<f32>::new(cfg).unwrap();
        model.params.tensor_mut("gate.bias").data_mut()[0] = f32::NAN;
        let train = tiny_classify_data(8, 2, 6, 2, 1);
        let val = tiny_classify_data(4, 2, 6, 2, 2);
        let err = fit(&mut model, &train, &val, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn config_text_round_trip() {
        let tc = TrainConfig { lr: 1e-3, batch_size: 32, ..TrainConfig::default() };
        let mut parsed = TrainConfig::default();
        parsed.apply_kv_lines(&tc.to_config_string()).unwrap();
        assert_eq!(parsed, tc);
        assert!(parsed.apply_kv_lines("train.bogus=1").is_err());
        assert!(parsed.apply_kv_lines("input_dim=3").is_err());
    }

    #[test]
    fn data_task_mismatch_is_rejected() {
        let cfg = tiny_cfg(2, 6, 2);
        let mut model = Mstn::<f32>::new(cfg).unwrap();
        let data = TaskData::<f32> {
            x: Tensor::zeros(vec![4, 6, 2]),
            truth: TaskTruth::Future(Tensor::zeros(vec![4, 3, 2])),
        };
        let err = fit(&mut model, &data, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    // with dropout off, one batch per epoch and a vanishing learning rate,
    // the only thing that can move the train loss between epochs is the mask
    #[test]
    fn fresh_mask_training_redraws_every_epoch() {
        let mut cfg = tiny_cfg(2, 6, 2);
        cfg.task = crate::model::TaskKind::Impute;
        cfg.dropout = 0.0;
        cfg.validate().unwrap();
        let mut model = Mstn::<f32>::new(cfg).unwrap();

        let n = 8;
        let mut rng = Rng::seed_from_u64(7);
        let mut x = Tensor::<f32>::zeros(vec![n, 6, 2]);
        for v in x.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let train = TaskData { x: x.clone(), truth: TaskTruth::MaskedFresh };
        let (vx, vmask) = crate::data::apply_mask(&x, 0.25, &mut rng).unwrap();
        let val = TaskData { x: vx, truth: TaskTruth::Masked { truth: x, mask: vmask } };

        let tc = TrainConfig {
            lr: 1e-30,
            batch_size: n,
            max_epochs: 2,
            mask_ratio: 0.25,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &train, &val, &tc).unwrap();
        assert_ne!(
            report.history[0].train_loss, report.history[1].train_loss,
            "identical losses mean the mask was reused"
        );

        assert!(matches!(evaluate_loss(&model, &train, &tc).unwrap_err(), Error::Config(_)));
        assert!(matches!(fit(&mut model, &train, &train, &tc).unwrap_err(), Error::Config(_)));
    }

    // MHTA parameters stay at init when the head reads z_se: the optimizer
    // skips gradient-free parameters, decay included
    #[test]
    fn mhta_stays_at_init_for_forecast_training() {
        let mut cfg = tiny_cfg(2, 6, 2);
        cfg.task = crate::model::TaskKind::Forecast(3);
        cfg.validate().unwrap();
        let mut model = Mstn::<f32>::new(cfg).unwrap();
        let init_wq = model.params.tensor("mhta.wq.weight").data().to_vec();
        let gate_before = model.params.tensor("gate.weight").data().to_vec();

        let n = 8;
        let x = Tensor::<f32>::full(vec![n, 6, 2], 0.5);
        let truth = TaskTruth::Future(Tensor::full(vec![n, 3, 2], 0.25));
        let data = TaskData { x, truth };
        let tc = TrainConfig { batch_size: 4, max_epochs: 2, ..TrainConfig::default() };
        fit(&mut model, &data, &data, &tc).unwrap();

        assert_eq!(model.params.tensor("mhta.wq.weight").data(), &init_wq[..]);
        assert_ne!(model.params.tensor("gate.weight").data(), &gate_before[..]);
    }
}
