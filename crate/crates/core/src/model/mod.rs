//! The network: configuration, parameters, stages and the composed forward.
//!
//! Data flow for an input window x [B, T, D]:
//!
//! ```text
//! x ─┬─ conv pathway: Conv1d(k=7, D→128)·BN·ReLU → Conv1d(k=5, 128→64)·BN·ReLU
//!    │                → mean over time → z_cnn [B, 64]
//!    └─ sequence core: transformer encoder (or BiLSTM) → mean over time
//!                      → z_core [B, 64 or 128]
//! z_concat = [z_cnn ; z_core]            [B, d]   d = 128 (transformer) / 192 (bilstm)
//! z_fused  = z_concat ⊙ σ(W z_concat+b)  [B, d]   gated fusion
//! z_seq    = repeat over T               [B, T, d]
//! z_se     = z_seq ⊙ σ(W2 relu(W1 mean_t z_seq))   squeeze-excite, reduction 8
//! z_final  = dropout(layer_norm(mean_t MHA(z_se)))  [B, d]  4-head attention pool
//! head     = classify: linear(z_final) → [B, C]
//!            forecast: per-step linear d→D on z_se, then temporal linear T→H → [B, H, D]
//!            impute:   per-step linear d→D on z_se, masked cells replaced    → [B, T, D]
//! ```
//!
//! Ablation variants drop one stage each; removed stages contribute no
//! parameters, and shared parameters initialize identically across variants
//! because every parameter draws from its own (seed, path) stream.

mod config;
mod forward;
mod params;
mod stages;

pub use config::{
    AblationVariant, BilstmCfg, CoreKind, MstnConfig, Precision, TaskKind, TransformerCfg,
};
pub use forward::{ForwardTrace, Mstn, Output};
pub use params::{
    bind_params, init_params, param_count, serialized_size_bytes, Bound, ModelParams, Param,
};
pub use stages::{
    bilstm_core, conv_pathway, gated_fusion, mhta_final, se_block, sequence_core, task_head,
    transformer_core, BnBatchStats,
};
