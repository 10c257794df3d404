//! Parameter enumeration, initialization and counting.
//!
//! Every parameter has a stable dotted path and draws its init values from
//! `Rng::seed_from_label(seed, path)`. Two configs that share a parameter
//! therefore produce bit-identical values for it, no matter which other
//! parameters exist around it. Iteration order is lexicographic by path
//! everywhere (map order, serialization, optimizer state).

use std::collections::BTreeMap;

use super::config::{CoreKind, MstnConfig, TaskKind};
use crate::error::{Error, Result};
use crate::tensor::{serialize, Element, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub tensor: Tensor<E>,
    pub trainable: bool,
}

/// Named parameter set. Includes non-trainable buffers (positional encoding,
/// batch-norm running stats), which serialize like everything else.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Element> {
    map: BTreeMap<String, Param<E>>,
}

impl<E: Element> ModelParams<E> {
    /// Empty set, for optimizer tests and hand-built layouts.
    pub fn empty() -> Self {
        ModelParams { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: String, p: Param<E>) {
        self.map.insert(path, p);
    }

    pub fn get(&self, path: &str) -> &Param<E> {
        self.map.get(path).unwrap_or_else(|| panic!("unknown parameter path '{path}'"))
    }

    pub fn tensor(&self, path: &str) -> &Tensor<E> {
        &self.get(path).tensor
    }

    pub fn tensor_mut(&mut self, path: &str) -> &mut Tensor<E> {
        &mut self
            .map
            .get_mut(path)
            .unwrap_or_else(|| panic!("unknown parameter path '{path}'"))
            .tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<E>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all tensors, buffers included.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|p| p.tensor.len()).sum()
    }

    pub fn write_to<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        let entries: Vec<(String, &Tensor<E>)> =
            self.map.iter().map(|(k, v)| (k.clone(), &v.tensor)).collect();
        serialize::write_weights(out, &entries)
    }

    /// Read weights and bind them to `cfg`'s parameter layout. Any missing,
    /// extra or shape-mismatched record is a `WeightMismatch`.
    pub fn read_from<R: std::io::Read>(cfg: &MstnConfig, input: &mut R) -> Result<ModelParams<E>> {
        let records = serialize::read_weights::<E, R>(input)?;
        let mut loaded: BTreeMap<String, Tensor<E>> = BTreeMap::new();
        for (name, tensor) in records {
            if loaded.insert(name.clone(), tensor).is_some() {
                return Err(Error::WeightMismatch(format!("duplicate record '{name}'")));
            }
        }
        let mut map = BTreeMap::new();
        for spec in param_specs(cfg) {
            let tensor = loaded.remove(&spec.path).ok_or_else(|| {
                Error::WeightMismatch(format!("missing parameter '{}'", spec.path))
            })?;
            if tensor.shape() != spec.shape {
                return Err(Error::WeightMismatch(format!(
                    "parameter '{}': stored shape {:?}, expected {:?}",
                    spec.path,
                    tensor.shape(),
                    spec.shape
                )));
            }
            let trainable = spec.trainable();
            map.insert(spec.path, Param { tensor, trainable });
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::WeightMismatch(format!("unexpected parameter '{extra}'")));
        }
        Ok(ModelParams { map })
    }
}

/// How a parameter gets its initial values.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// uniform(-a, a) with a = sqrt(1 / fan_in)
    FanIn(usize),
    Zeros,
    Ones,
    /// zeros with the forget-gate slice [h, 2h) set to 1
    LstmBias(usize),
    /// fixed sinusoidal table over (seq_len, model_dim)
    PosEncoding,
}

struct ParamSpec {
    path: String,
    shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    fn trainable(&self) -> bool {
        !matches!(self.init, Init::PosEncoding) && !self.path.contains(".running_")
    }
}

fn spec(path: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { path: path.into(), shape, init }
}

/// Linear layer stored [in, out]; applied as x @ W + b, so fan_in = in.
fn linear(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, output: usize) {
    out.push(spec(format!("{prefix}.weight"), vec![input, output], Init::FanIn(input)));
    out.push(spec(format!("{prefix}.bias"), vec![output], Init::Zeros));
}

fn layer_norm(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    out.push(spec(format!("{prefix}.gamma"), vec![dim], Init::Ones));
    out.push(spec(format!("{prefix}.beta"), vec![dim], Init::Zeros));
}

fn batch_norm(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize) {
    out.push(spec(format!("{prefix}.gamma"), vec![channels], Init::Ones));
    out.push(spec(format!("{prefix}.beta"), vec![channels], Init::Zeros));
    out.push(spec(format!("{prefix}.running_mean"), vec![channels], Init::Zeros));
    out.push(spec(format!("{prefix}.running_var"), vec![channels], Init::Ones));
}

/// Four-head attention block over `dim` (both the encoder MHA and the final
/// temporal attention share this layout).
fn attention(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    for name in ["wq", "wk", "wv", "wo"] {
        linear(out, &format!("{prefix}.{name}"), dim, dim);
    }
}

/// The full parameter layout for `cfg`, in declaration order. This is the
/// single source of truth: init, counting, serialization size and weight
/// loading all walk this list.
fn param_specs(cfg: &MstnConfig) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    let d_in = cfg.input_dim;
    let t = cfg.seq_len;

    if cfg.has_cnn() {
        let (c1, c2) = cfg.conv_channels;
        let (k1, k2) = cfg.conv_kernels;
        v.push(spec("conv1.weight", vec![c1, d_in, k1], Init::FanIn(d_in * k1)));
        v.push(spec("conv1.bias", vec![c1], Init::Zeros));
        batch_norm(&mut v, "conv1.bn", c1);
        v.push(spec("conv2.weight", vec![c2, c1, k2], Init::FanIn(c1 * k2)));
        v.push(spec("conv2.bias", vec![c2], Init::Zeros));
        batch_norm(&mut v, "conv2.bn", c2);
    }

    if cfg.has_core() {
        match cfg.core {
            CoreKind::Transformer => {
                let tf = cfg.transformer;
                linear(&mut v, "core.embed", d_in, tf.model_dim);
                v.push(spec("core.pos_encoding", vec![t, tf.model_dim], Init::PosEncoding));
                for l in 0..tf.layers {
                    let p = format!("core.layer{l}");
                    layer_norm(&mut v, &format!("{p}.ln1"), tf.model_dim);
                    attention(&mut v, &format!("{p}.attn"), tf.model_dim);
                    layer_norm(&mut v, &format!("{p}.ln2"), tf.model_dim);
                    linear(&mut v, &format!("{p}.ffn.w1"), tf.model_dim, tf.ffn_dim);
                    linear(&mut v, &format!("{p}.ffn.w2"), tf.ffn_dim, tf.model_dim);
                }
                layer_norm(&mut v, "core.final_ln", tf.model_dim);
            }
            CoreKind::Bilstm => {
                let h = cfg.bilstm.hidden_per_dir;
                for l in 0..cfg.bilstm.layers {
                    let input = if l == 0 { d_in } else { 2 * h };
                    for dir in ["fwd", "bwd"] {
                        let p = format!("core.lstm.l{l}.{dir}");
                        v.push(spec(format!("{p}.w_ih"), vec![input, 4 * h], Init::FanIn(input)));
                        v.push(spec(format!("{p}.w_hh"), vec![h, 4 * h], Init::FanIn(h)));
                        v.push(spec(format!("{p}.bias"), vec![4 * h], Init::LstmBias(h)));
                    }
                }
            }
        }
    }

    let d = cfg.fused_width();
    if cfg.has_gate() {
        linear(&mut v, "gate", d, d);
    }
    if cfg.has_se() {
        let r = d / cfg.se_reduction;
        linear(&mut v, "se.w1", d, r);
        linear(&mut v, "se.w2", r, d);
    }
    if cfg.has_mhta() {
        attention(&mut v, "mhta", d);
    }
    // The post-attention LayerNorm stays in the no_mhta variant: that
    // ablation replaces only the attention itself with a time mean.
    layer_norm(&mut v, "mhta.ln", d);

    match cfg.task {
        TaskKind::Classify(c) => linear(&mut v, "head.classify", d, c),
        TaskKind::Forecast(h) => {
            linear(&mut v, "head.step", d, d_in);
            linear(&mut v, "head.temporal", t, h);
        }
        TaskKind::Impute => linear(&mut v, "head.step", d, d_in),
    }
    v
}

fn fill<E: Element>(spec: &ParamSpec, seed: u64) -> Tensor<E> {
    let mut t = Tensor::zeros(spec.shape.clone());
    match spec.init {
        Init::Zeros => {}
        Init::Ones => t.data_mut().fill(E::from_f64(1.0)),
        Init::FanIn(fan_in) => {
            let a = (1.0 / fan_in as f64).sqrt();
            let mut rng = Rng::seed_from_label(seed, &spec.path);
            for x in t.data_mut() {
                *x = rng.uniform(-a, a);
            }
        }
        Init::LstmBias(h) => {
            for x in &mut t.data_mut()[h..2 * h] {
                *x = E::from_f64(1.0);
            }
        }
        Init::PosEncoding => {
            let (seq, dm) = (spec.shape[0], spec.shape[1]);
            let data = t.data_mut();
            for pos in 0..seq {
                for i in 0..dm / 2 {
                    let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dm as f64);
                    data[pos * dm + 2 * i] = E::from_f64(angle.sin());
                    if 2 * i + 1 < dm {
                        data[pos * dm + 2 * i + 1] = E::from_f64(angle.cos());
                    }
                }
            }
        }
    }
    t
}

/// Freshly initialized parameters for `cfg`.
pub fn init_params<E: Element>(cfg: &MstnConfig) -> ModelParams<E> {
    let mut map = BTreeMap::new();
    for s in param_specs(cfg) {
        let trainable = s.trainable();
        let tensor = fill::<E>(&s, cfg.seed);
        map.insert(s.path, Param { tensor, trainable });
    }
    ModelParams { map }
}

/// Scalar count over all parameters and buffers of `cfg`.
///
/// For the full transformer model this expands to
///   conv:        c1(Dk1 + 5) + c2(c1 k2 + 5)
///   core:        dm(D+1) + T dm + L(4 dm(dm+1) + 2 dm(ffn+1) + ffn + 4 dm) + 2 dm
///   fusion/SE:   d(d+1) + (d²/r + d/r) + (d²/r + d)
///   mhta (+ln):  4 d(d+1) + 2d
/// plus the task head.
pub fn param_count(cfg: &MstnConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

/// Exact byte size of the serialized weight file for `cfg` at f32 values.
pub fn serialized_size_bytes(cfg: &MstnConfig) -> usize {
    serialize::serialized_len(
        param_specs(cfg)
            .iter()
            .map(|s| (s.path.len(), s.shape.len(), s.shape.iter().product::<usize>())),
    )
}

/// Tape bindings for one forward pass: parameter path -> Var.
pub struct Bound {
    vars: BTreeMap<String, crate::tensor::Var>,
}

impl Bound {
    pub fn var(&self, path: &str) -> crate::tensor::Var {
        *self.vars.get(path).unwrap_or_else(|| panic!("parameter '{path}' not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, crate::tensor::Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Push every parameter onto the tape. Trainable params become gradient
/// leaves when `with_grads`; buffers are always constants. Running stats are
/// bound too so eval-mode batch norm can read them as tape values.
pub fn bind_params<E: Element>(
    tape: &mut crate::tensor::Tape<E>,
    params: &ModelParams<E>,
    with_grads: bool,
) -> Bound {
    let mut vars = BTreeMap::new();
    for (path, p) in params.iter() {
        let var = if p.trainable && with_grads {
            tape.leaf(p.tensor.clone(), true)
        } else {
            tape.constant(p.tensor.clone())
        };
        vars.insert(path.to_string(), var);
    }
    Bound { vars }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{AblationVariant, TaskKind};

    fn small_cfg() -> MstnConfig {
        let mut cfg = MstnConfig::new(3, 8, TaskKind::Classify(4));
        cfg.conv_channels = (6, 4);
        cfg.conv_kernels = (3, 3);
        cfg.transformer.layers = 1;
        cfg.transformer.heads = 2;
        cfg.transformer.model_dim = 4;
        cfg.transformer.ffn_dim = 6;
        cfg.bilstm.layers = 2;
        cfg.bilstm.hidden_per_dir = 4;
        cfg.se_reduction = 2;
        cfg.mhta_heads = 2;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn count_matches_materialized_params() {
        for variant in AblationVariant::ALL {
            let cfg = small_cfg().make_ablated(variant).unwrap();
            let params = init_params::<f32>(&cfg);
            assert_eq!(param_count(&cfg), params.scalar_count(), "{variant:?}");
            let mut lstm = cfg.clone();
            lstm.core = CoreKind::Bilstm;
            let params = init_params::<f32>(&lstm);
            assert_eq!(param_count(&lstm), params.scalar_count(), "bilstm {variant:?}");
        }
    }

    #[test]
    fn hand_counted_linear_head() {
        // classify head on d=8: weight 8*4 + bias 4 = 36
        let cfg = small_cfg();
        let d = cfg.fused_width();
        assert_eq!(d, 8);
        let head = param_specs(&cfg)
            .iter()
            .filter(|s| s.path.starts_with("head."))
            .map(|s| s.shape.iter().product::<usize>())
            .sum::<usize>();
        assert_eq!(head, 36);
    }

    #[test]
    fn serialized_size_predicts_file_bytes() {
        let cfg = small_cfg();
        let params = init_params::<f32>(&cfg);
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), serialized_size_bytes(&cfg));
    }

    #[test]
    fn shared_params_identical_across_variants() {
        let full = init_params::<f32>(&small_cfg());
        let no_se = init_params::<f32>(&small_cfg().make_ablated(AblationVariant::NoSe).unwrap());
        for (path, p) in no_se.iter() {
            assert_eq!(p.tensor.data(), full.tensor(path).data(), "{path}");
        }
        // removed stage's params are absent, everything else is shared
        assert!(full.iter().any(|(p, _)| p.starts_with("se.")));
        assert!(!no_se.iter().any(|(p, _)| p.starts_with("se.")));
    }

    #[test]
    fn init_is_seed_and_path_keyed() {
        let a = init_params::<f32>(&small_cfg());
        let b = init_params::<f32>(&small_cfg());
        for (path, p) in a.iter() {
            assert_eq!(p.tensor.data(), b.tensor(path).data(), "{path}");
        }
        let mut other = small_cfg();
        other.seed = 43;
        let c = init_params::<f32>(&other);
        assert_ne!(a.tensor("gate.weight").data(), c.tensor("gate.weight").data());
    }

    #[test]
    fn fan_in_bounds_hold() {
        let cfg = small_cfg();
        let params = init_params::<f64>(&cfg);
        // conv1: fan_in = input_dim * k1 = 9
        let a = (1.0f64 / 9.0).sqrt();
        for &x in params.tensor("conv1.weight").data() {
            assert!(x > -a && x < a, "{x} outside (-{a}, {a})");
        }
        // biases start at zero, norm scales at one
        assert!(params.tensor("conv1.bias").data().iter().all(|&x| x == 0.0));
        assert!(params.tensor("conv1.bn.gamma").data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn lstm_bias_opens_forget_gate() {
        let mut cfg = small_cfg();
        cfg.core = CoreKind::Bilstm;
        let params = init_params::<f32>(&cfg);
        let bias = params.tensor("core.lstm.l0.fwd.bias").data();
        let h = cfg.bilstm.hidden_per_dir;
        assert!(bias[..h].iter().all(|&x| x == 0.0));
        assert!(bias[h..2 * h].iter().all(|&x| x == 1.0));
        assert!(bias[2 * h..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pos_encoding_matches_sinusoid() {
        let cfg = small_cfg();
        let pe = init_params::<f64>(&cfg);
        let pe = pe.tensor("core.pos_encoding");
        let dm = cfg.transformer.model_dim;
        assert_eq!(pe.shape(), &[cfg.seq_len, dm]);
        assert_eq!(pe.at(&[0, 0]), 0.0); // sin 0
        assert_eq!(pe.at(&[0, 1]), 1.0); // cos 0
        let expect = (2.0f64 / 10000f64.powf(2.0 / dm as f64)).sin();
        assert!((pe.at(&[2, 2]) - expect).abs() < 1e-12);
        let trainable = init_params::<f64>(&cfg);
        assert!(!trainable.get("core.pos_encoding").trainable);
    }

    #[test]
    fn weight_file_round_trip_and_mismatches() {
        let cfg = small_cfg();
        let params = init_params::<f32>(&cfg);
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let loaded = ModelParams::<f32>::read_from(&cfg, &mut buf.as_slice()).unwrap();
        for (path, p) in params.iter() {
            assert_eq!(p.tensor.data(), loaded.tensor(path).data(), "{path}");
            assert_eq!(p.trainable, loaded.get(path).trainable, "{path}");
        }
        // different seq_len changes pos_encoding shape -> mismatch
        let mut other = cfg.clone();
        other.seq_len = 9;
        let err = ModelParams::<f32>::read_from(&other, &mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::WeightMismatch(_)), "{err}");
        // different variant drops params -> unexpected record
        let no_se = cfg.make_ablated(AblationVariant::NoSe).unwrap();
        let err = ModelParams::<f32>::read_from(&no_se, &mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::WeightMismatch(_)), "{err}");
    }
}
