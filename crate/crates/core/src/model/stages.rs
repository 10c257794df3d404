//! The seven architecture stages, each building its piece of the graph.
//!
//! Every stage takes the tape, the bound parameter vars, the config and the
//! stage input and returns output vars. Mode and rng only matter where
//! dropout or batch statistics are involved.

use super::config::{CoreKind, MstnConfig, TaskKind};
use super::params::{Bound, ModelParams};
use crate::error::Result;
use crate::tensor::{Element, Mode, Rng, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const BN_EPS: f64 = 1e-5;

/// Per-layer batch statistics produced by a training forward pass, to be
/// folded into the running buffers afterwards.
pub struct BnBatchStats<E> {
    pub path: String,
    pub mean: Vec<E>,
    pub var: Vec<E>,
    /// number of samples the statistics were taken over (B*T)
    pub n: usize,
}

fn linear<E: Element>(tape: &mut Tape<E>, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, bound.var(&format!("{prefix}.weight")))?;
    tape.add_bias(h, bound.var(&format!("{prefix}.bias")))
}

fn layer_norm<E: Element>(tape: &mut Tape<E>, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    tape.layer_norm(
        x,
        bound.var(&format!("{prefix}.gamma")),
        bound.var(&format!("{prefix}.beta")),
        E::from_f64(LN_EPS),
    )
}

/// Scaled dot-product attention with `heads` heads over the last dim of
/// x [B,T,dim]. Standard projection layout: consecutive channel blocks of
/// width dim/heads form the heads.
fn multi_head_attention<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, t, dim) = (shape[0], shape[1], shape[2]);
    let hd = dim / heads;

    let proj = |name: &str, tape: &mut Tape<E>| -> Result<Var> {
        let p = linear(tape, bound, &format!("{prefix}.{name}"), x)?;
        // [B,T,dim] -> [B,T,h,hd] -> [B,h,T,hd] -> [B*h,T,hd]
        let p = tape.reshape(p, vec![b, t, heads, hd])?;
        let p = tape.swap12(p)?;
        tape.reshape(p, vec![b * heads, t, hd])
    };
    let q = proj("wq", tape)?;
    let k = proj("wk", tape)?;
    let v = proj("wv", tape)?;

    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, E::from_f64(1.0 / (hd as f64).sqrt()));
    let attn = tape.softmax_last(scores)?;
    let ctx = tape.matmul(attn, v)?;

    // [B*h,T,hd] -> [B,h,T,hd] -> [B,T,h,hd] -> [B,T,dim]
    let ctx = tape.reshape(ctx, vec![b, heads, t, hd])?;
    let ctx = tape.swap12(ctx)?;
    let ctx = tape.reshape(ctx, vec![b, t, dim])?;
    linear(tape, bound, &format!("{prefix}.wo"), ctx)
}

/// Conv stack over time: x [B,T,D] -> h [B,c2,T] and its time mean [B,c2].
/// Returns (h, z_cnn, batch stats for the two norm layers in train mode).
pub fn conv_pathway<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    params: &ModelParams<E>,
    x: Var,
    mode: Mode,
) -> Result<(Var, Var, Vec<BnBatchStats<E>>)> {
    let shape = tape.shape(x).to_vec();
    let (b, t) = (shape[0], shape[1]);
    let mut stats = Vec::new();
    let mut h = tape.swap12(x)?; // [B,D,T]
    for layer in ["conv1", "conv2"] {
        h = tape.conv1d(
            h,
            bound.var(&format!("{layer}.weight")),
            bound.var(&format!("{layer}.bias")),
        )?;
        let bn = format!("{layer}.bn");
        let (normed, batch) = tape.batch_norm(
            h,
            bound.var(&format!("{bn}.gamma")),
            bound.var(&format!("{bn}.beta")),
            params.tensor(&format!("{bn}.running_mean")).data(),
            params.tensor(&format!("{bn}.running_var")).data(),
            E::from_f64(BN_EPS),
            mode,
        )?;
        if let Some((mean, var)) = batch {
            stats.push(BnBatchStats { path: bn, mean, var, n: b * t });
        }
        h = tape.relu(normed);
    }
    let z_cnn = tape.mean_axis(h, 2)?; // [B,c2]
    Ok((h, z_cnn, stats))
}

/// Pre-norm transformer encoder: embed + sinusoidal positions, then
/// `layers` blocks of (LN, MHA, residual, LN, FFN, residual), then a final
/// LN. Returns the full sequence [B,T,model_dim].
pub fn transformer_core<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    cfg: &MstnConfig,
    x: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    let tf = cfg.transformer;
    let shape = tape.shape(x).to_vec();
    let (b, t) = (shape[0], shape[1]);

    let mut h = linear(tape, bound, "core.embed", x)?; // [B,T,dm]
    let pe = bound.var("core.pos_encoding");
    let pe_flat = tape.reshape(pe, vec![t * tf.model_dim])?;
    let h_flat = tape.reshape(h, vec![b, t * tf.model_dim])?;
    let h_pe = tape.add_bias(h_flat, pe_flat)?;
    h = tape.reshape(h_pe, vec![b, t, tf.model_dim])?;

    for l in 0..tf.layers {
        let p = format!("core.layer{l}");
        let a = layer_norm(tape, bound, &format!("{p}.ln1"), h)?;
        let attn = multi_head_attention(tape, bound, &format!("{p}.attn"), a, tf.heads)?;
        let attn = tape.dropout(attn, cfg.dropout, mode, rng)?;
        h = tape.add(h, attn)?;

        let f = layer_norm(tape, bound, &format!("{p}.ln2"), h)?;
        let f = linear(tape, bound, &format!("{p}.ffn.w1"), f)?;
        let f = tape.relu(f);
        let f = tape.dropout(f, cfg.dropout, mode, rng)?;
        let f = linear(tape, bound, &format!("{p}.ffn.w2"), f)?;
        let f = tape.dropout(f, cfg.dropout, mode, rng)?;
        h = tape.add(h, f)?;
    }
    layer_norm(tape, bound, "core.final_ln", h)
}

/// One LSTM cell step. Gate layout along the 4h axis is (i, f, g, o).
fn lstm_cell<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    prefix: &str,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x_t, bound.var(&format!("{prefix}.w_ih")))?;
    let hw = tape.matmul(h_prev, bound.var(&format!("{prefix}.w_hh")))?;
    let pre = tape.add(xw, hw)?;
    let gates = tape.add_bias(pre, bound.var(&format!("{prefix}.bias")))?;

    let i_raw = tape.slice_last(gates, 0, hidden)?;
    let f_raw = tape.slice_last(gates, hidden, hidden)?;
    let g_raw = tape.slice_last(gates, 2 * hidden, hidden)?;
    let o_raw = tape.slice_last(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let g = tape.tanh(g_raw);
    let o = tape.sigmoid(o_raw);

    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let ct = tape.tanh(c);
    let h = tape.mul(o, ct)?;
    Ok((h, c))
}

/// Run one direction of one LSTM layer over the precomputed per-step inputs.
fn lstm_direction<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    prefix: &str,
    steps: &[Var],
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let b = tape.shape(steps[0])[0];
    let mut h = tape.constant(Tensor::zeros(vec![b, hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![b, hidden]));
    let mut out: Vec<Option<Var>> = vec![None; steps.len()];
    let order: Vec<usize> =
        if reverse { (0..steps.len()).rev().collect() } else { (0..steps.len()).collect() };
    for t in order {
        let (nh, nc) = lstm_cell(tape, bound, prefix, steps[t], h, c, hidden)?;
        h = nh;
        c = nc;
        out[t] = Some(h);
    }
    Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
}

/// Stacked bidirectional LSTM: x [B,T,D] -> [B,T,2*hidden]. Directions are
/// concatenated per step; dropout sits between layers in train mode.
pub fn bilstm_core<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    cfg: &MstnConfig,
    x: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    let h = cfg.bilstm.hidden_per_dir;
    let t = tape.shape(x)[1];
    let mut seq = x;
    for l in 0..cfg.bilstm.layers {
        let steps: Vec<Var> = (0..t).map(|i| tape.select_time(seq, i)).collect::<Result<_>>()?;
        let fwd = lstm_direction(tape, bound, &format!("core.lstm.l{l}.fwd"), &steps, h, false)?;
        let bwd = lstm_direction(tape, bound, &format!("core.lstm.l{l}.bwd"), &steps, h, true)?;
        let joined: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat_last(&[f, b]))
            .collect::<Result<_>>()?;
        seq = tape.stack_time(&joined)?;
        if l + 1 < cfg.bilstm.layers {
            seq = tape.dropout(seq, cfg.dropout, mode, rng)?;
        }
    }
    Ok(seq)
}

/// z_fused = z ⊙ sigmoid(W z + b), elementwise over [B,d].
pub fn gated_fusion<E: Element>(tape: &mut Tape<E>, bound: &Bound, z: Var) -> Result<Var> {
    let s = linear(tape, bound, "gate", z)?;
    let s = tape.sigmoid(s);
    tape.mul(z, s)
}

/// Squeeze-excitation over channels: gate from the time-mean descriptor,
/// applied to every step. Returns (z_se [B,T,d], gate [B,d]).
pub fn se_block<E: Element>(tape: &mut Tape<E>, bound: &Bound, z_seq: Var) -> Result<(Var, Var)> {
    let s = tape.mean_axis(z_seq, 1)?;
    let a = linear(tape, bound, "se.w1", s)?;
    let a = tape.relu(a);
    let g = linear(tape, bound, "se.w2", a)?;
    let g = tape.sigmoid(g);
    let z = tape.mul_time_gate(z_seq, g)?;
    Ok((z, g))
}

/// Final temporal attention, pooled over time, normalized, dropped out.
/// Without MHTA the attention is replaced by the time mean; the LayerNorm
/// and dropout stay.
pub fn mhta_final<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    cfg: &MstnConfig,
    z_se: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    let pooled = if cfg.has_mhta() {
        let attn = multi_head_attention(tape, bound, "mhta", z_se, cfg.mhta_heads)?;
        tape.mean_axis(attn, 1)?
    } else {
        tape.mean_axis(z_se, 1)?
    };
    let normed = layer_norm(tape, bound, "mhta.ln", pooled)?;
    tape.dropout(normed, cfg.dropout, mode, rng)
}

/// Task-specific output head.
///
/// classify: logits [B,C] from z_final.
/// forecast: per-step linear d->D on z_se, then a linear map over the time
///           axis T->H, giving [B,H,D].
/// impute:   per-step linear d->D on z_se; only masked cells come from the
///           reconstruction, observed cells pass through from the input.
pub fn task_head<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    cfg: &MstnConfig,
    z_final: Var,
    z_se: Var,
    x: Var,
    mask: Option<&Tensor<E>>,
) -> Result<Var> {
    match cfg.task {
        TaskKind::Classify(_) => linear(tape, bound, "head.classify", z_final),
        TaskKind::Forecast(_) => {
            let steps = linear(tape, bound, "head.step", z_se)?; // [B,T,D]
            let dt = tape.swap12(steps)?; // [B,D,T]
            let horiz = linear(tape, bound, "head.temporal", dt)?; // [B,D,H]
            tape.swap12(horiz) // [B,H,D]
        }
        TaskKind::Impute => {
            let mask = mask.ok_or_else(|| {
                crate::error::Error::Config("imputation forward needs a mask".into())
            })?;
            let recon = linear(tape, bound, "head.step", z_se)?; // [B,T,D]
            if tape.shape(recon) != mask.shape() {
                return Err(crate::error::Error::shape(
                    "task_head",
                    format!("mask {:?} vs reconstruction {:?}", mask.shape(), tape.shape(recon)),
                ));
            }
            // observed = x where mask==0, reconstruction where mask==1
            let keep = Tensor::new(
                mask.shape().to_vec(),
                mask.data().iter().map(|&m| E::one() - m).collect(),
            )?;
            let observed = Tensor::new(
                mask.shape().to_vec(),
                tape.value(x).data().iter().zip(keep.data()).map(|(&v, &k)| v * k).collect(),
            )?;
            let mask_c = tape.constant(mask.clone());
            let filled = tape.mul(recon, mask_c)?;
            let obs_c = tape.constant(observed);
            tape.add(filled, obs_c)
        }
    }
}

/// Build the sequence core for `cfg` (dispatch on kind).
pub fn sequence_core<E: Element>(
    tape: &mut Tape<E>,
    bound: &Bound,
    cfg: &MstnConfig,
    x: Var,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    match cfg.core {
        CoreKind::Transformer => transformer_core(tape, bound, cfg, x, mode, rng),
        CoreKind::Bilstm => bilstm_core(tape, bound, cfg, x, mode, rng),
    }
}
