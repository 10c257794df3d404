//! The assembled model: parameters plus the composed forward pass.

use super::config::{MstnConfig, TaskKind};
use super::params::{bind_params, init_params, Bound, ModelParams};
use super::stages;
use crate::error::{Error, Result};
use crate::tensor::{Element, Mode, Rng, Tape, Tensor, Var};

/// Task output on the tape. Shapes: classify [B,C], forecast [B,H,D],
/// impute [B,T,D] (observed cells passed through, masked cells filled).
#[derive(Debug, Clone, Copy)]
pub enum Output {
    Classify(Var),
    Forecast(Var),
    Impute(Var),
}

impl Output {
    pub fn var(self) -> Var {
        match self {
            Output::Classify(v) | Output::Forecast(v) | Output::Impute(v) => v,
        }
    }
}

/// Stage outputs of one forward pass, for tests and shape reporting.
/// Values live on the tape the pass ran on.
#[derive(Debug, Default)]
pub struct ForwardTrace {
    pub stages: Vec<(&'static str, Var)>,
}

impl ForwardTrace {
    fn put(&mut self, name: &'static str, v: Var) {
        self.stages.push((name, v));
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.stages.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

pub struct Mstn<E: Element> {
    pub cfg: MstnConfig,
    pub params: ModelParams<E>,
}

/// Batch-norm running-stat momentum (fraction of the new batch statistic).
const BN_MOMENTUM: f64 = 0.1;

impl<E: Element> Mstn<E> {
    pub fn new(cfg: MstnConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg);
        Ok(Mstn { cfg, params })
    }

    pub fn load<R: std::io::Read>(cfg: MstnConfig, input: &mut R) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::read_from(&cfg, input)?;
        Ok(Mstn { cfg, params })
    }

    pub fn save<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        self.params.write_to(out)
    }

    /// Training pass: batch statistics for norm layers, dropout active,
    /// parameters bound as gradient leaves. Folds the batch statistics into
    /// the running buffers before returning.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        mask: Option<&Tensor<E>>,
        rng: &mut Rng,
    ) -> Result<(Output, Bound, ForwardTrace)> {
        let (out, bound, trace, stats) = self.build(tape, x, mask, Mode::Train, rng, true)?;
        for s in stats {
            let correction =
                if s.n > 1 { E::from_usize(s.n) / E::from_usize(s.n - 1) } else { E::one() };
            let m = E::from_f64(BN_MOMENTUM);
            let keep = E::one() - m;
            let mean_buf = self.params.tensor_mut(&format!("{}.running_mean", s.path));
            for (r, &b) in mean_buf.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            let var_buf = self.params.tensor_mut(&format!("{}.running_var", s.path));
            for (r, &b) in var_buf.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * (b * correction);
            }
        }
        Ok((out, bound, trace))
    }

    /// Inference pass: running statistics, dropout off, no gradients.
    pub fn forward_eval(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        mask: Option<&Tensor<E>>,
    ) -> Result<(Output, ForwardTrace)> {
        let mut rng = Rng::seed_from_u64(0); // eval draws nothing
        let (out, _, trace, _) = self.build(tape, x, mask, Mode::Eval, &mut rng, false)?;
        Ok((out, trace))
    }

    /// Eval-mode graph with parameters bound as gradient leaves: fully
    /// deterministic and differentiable, for gradient verification.
    pub fn forward_diff(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        mask: Option<&Tensor<E>>,
    ) -> Result<(Output, Bound, ForwardTrace)> {
        let mut rng = Rng::seed_from_u64(0);
        let (out, bound, trace, _) = self.build(tape, x, mask, Mode::Eval, &mut rng, true)?;
        Ok((out, bound, trace))
    }

    fn check_input(&self, x: &Tensor<E>, mask: Option<&Tensor<E>>) -> Result<()> {
        let cfg = &self.cfg;
        let want_rank3 = |name: &str, t: &Tensor<E>| -> Result<()> {
            if t.rank() != 3 || t.shape()[1] != cfg.seq_len || t.shape()[2] != cfg.input_dim {
                return Err(Error::Data(format!(
                    "{name} shape {:?}, expected [B, {}, {}]",
                    t.shape(),
                    cfg.seq_len,
                    cfg.input_dim
                )));
            }
            if t.shape()[0] == 0 {
                return Err(Error::Data(format!("{name} has batch size 0")));
            }
            Ok(())
        };
        want_rank3("input", x)?;
        match (cfg.task, mask) {
            (TaskKind::Impute, None) => {
                Err(Error::Config("imputation forward needs a mask".into()))
            }
            (TaskKind::Impute, Some(m)) => {
                want_rank3("mask", m)?;
                if m.shape() != x.shape() {
                    return Err(Error::Data(format!(
                        "mask shape {:?} does not match input {:?}",
                        m.shape(),
                        x.shape()
                    )));
                }
                if m.data().iter().any(|&v| v != E::zero() && v != E::one()) {
                    return Err(Error::Data("mask entries must be 0 or 1".into()));
                }
                Ok(())
            }
            (_, Some(_)) => {
                Err(Error::Config(format!("mask given but task is {}", cfg.task.as_str())))
            }
            (_, None) => Ok(()),
        }
    }

    fn build(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        mask: Option<&Tensor<E>>,
        mode: Mode,
        rng: &mut Rng,
        with_grads: bool,
    ) -> Result<(Output, Bound, ForwardTrace, Vec<stages::BnBatchStats<E>>)> {
        self.check_input(x, mask)?;
        let cfg = &self.cfg;
        let t = cfg.seq_len;
        let bound = bind_params(tape, &self.params, with_grads);
        let mut trace = ForwardTrace::default();
        let x_var = tape.constant(x.clone());

        let mut bn_stats = Vec::new();
        let z_cnn = if cfg.has_cnn() {
            let (_, z_cnn, stats) = stages::conv_pathway(tape, &bound, &self.params, x_var, mode)?;
            bn_stats = stats;
            trace.put("z_cnn", z_cnn);
            Some(z_cnn)
        } else {
            None
        };

        let z_core = if cfg.has_core() {
            let seq = stages::sequence_core(tape, &bound, cfg, x_var, mode, rng)?;
            let z = tape.mean_axis(seq, 1)?;
            trace.put("z_core", z);
            Some(z)
        } else {
            None
        };

        let z_concat = match (z_cnn, z_core) {
            (Some(a), Some(b)) => tape.concat_last(&[a, b])?,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("config validation keeps one pathway"),
        };
        trace.put("z_concat", z_concat);

        let z_fused =
            if cfg.has_gate() { stages::gated_fusion(tape, &bound, z_concat)? } else { z_concat };
        trace.put("z_fused", z_fused);

        let z_seq = tape.repeat_time(z_fused, t)?;
        trace.put("z_seq", z_seq);

        let z_se = if cfg.has_se() {
            let (z, _) = stages::se_block(tape, &bound, z_seq)?;
            z
        } else {
            z_seq
        };
        trace.put("z_se", z_se);

        let z_final = stages::mhta_final(tape, &bound, cfg, z_se, mode, rng)?;
        trace.put("z_final", z_final);

        let out_var = stages::task_head(tape, &bound, cfg, z_final, z_se, x_var, mask)?;
        trace.put("output", out_var);

        let out = match cfg.task {
            TaskKind::Classify(_) => Output::Classify(out_var),
            TaskKind::Forecast(_) => Output::Forecast(out_var),
            TaskKind::Impute => Output::Impute(out_var),
        };
        Ok((out, bound, trace, bn_stats))
    }
}
