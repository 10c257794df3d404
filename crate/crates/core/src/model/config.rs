//! Model configuration plus its flat `key=value` text form.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreKind {
    Transformer,
    Bilstm,
}

impl CoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoreKind::Transformer => "transformer",
            CoreKind::Bilstm => "bilstm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify(usize),
    Forecast(usize),
    Impute,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classify(_) => "classify",
            TaskKind::Forecast(_) => "forecast",
            TaskKind::Impute => "impute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Structural ablations. Each variant removes one stage; the removed stage
/// contributes no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoCnn,
    NoCore,
    NoSe,
    NoMhta,
    NoGatedFusion,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoCnn,
        AblationVariant::NoCore,
        AblationVariant::NoSe,
        AblationVariant::NoMhta,
        AblationVariant::NoGatedFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoCnn => "no_cnn",
            AblationVariant::NoCore => "no_core",
            AblationVariant::NoSe => "no_se",
            AblationVariant::NoMhta => "no_mhta",
            AblationVariant::NoGatedFusion => "no_gated_fusion",
        }
    }

    /// Human label for ablation grids.
    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full",
            AblationVariant::NoCnn => "w/o CNN",
            AblationVariant::NoCore => "w/o Core",
            AblationVariant::NoSe => "w/o SE",
            AblationVariant::NoMhta => "w/o MHTA",
            AblationVariant::NoGatedFusion => "w/o GatedF",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerCfg {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BilstmCfg {
    pub layers: usize,
    pub hidden_per_dir: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MstnConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub core: CoreKind,
    pub conv_channels: (usize, usize),
    pub conv_kernels: (usize, usize),
    pub transformer: TransformerCfg,
    pub bilstm: BilstmCfg,
    pub dropout: f64,
    pub se_reduction: usize,
    pub mhta_heads: usize,
    pub task: TaskKind,
    pub seed: u64,
    pub precision: Precision,
    pub variant: AblationVariant,
}

impl MstnConfig {
    /// Architecture defaults; callers override fields as needed.
    pub fn new(input_dim: usize, seq_len: usize, task: TaskKind) -> Self {
        MstnConfig {
            input_dim,
            seq_len,
            core: CoreKind::Transformer,
            conv_channels: (128, 64),
            conv_kernels: (7, 5),
            transformer: TransformerCfg { layers: 4, heads: 8, model_dim: 64, ffn_dim: 256 },
            bilstm: BilstmCfg { layers: 2, hidden_per_dir: 64 },
            dropout: 0.3,
            se_reduction: 8,
            mhta_heads: 4,
            task,
            seed: 42,
            precision: Precision::F32,
            variant: AblationVariant::Full,
        }
    }

    pub fn has_cnn(&self) -> bool {
        self.variant != AblationVariant::NoCnn
    }

    pub fn has_core(&self) -> bool {
        self.variant != AblationVariant::NoCore
    }

    pub fn has_se(&self) -> bool {
        self.variant != AblationVariant::NoSe
    }

    pub fn has_mhta(&self) -> bool {
        self.variant != AblationVariant::NoMhta
    }

    pub fn has_gate(&self) -> bool {
        self.variant != AblationVariant::NoGatedFusion
    }

    /// Width of the sequence core summary (before fusion).
    pub fn core_width(&self) -> usize {
        match self.core {
            CoreKind::Transformer => self.transformer.model_dim,
            CoreKind::Bilstm => 2 * self.bilstm.hidden_per_dir,
        }
    }

    /// Width d of the fused representation for this variant.
    pub fn fused_width(&self) -> usize {
        match (self.has_cnn(), self.has_core()) {
            (true, true) => self.conv_channels.1 + self.core_width(),
            (false, true) => self.core_width(),
            (true, false) => self.conv_channels.1,
            (false, false) => unreachable!("variants remove at most one pathway"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.seq_len == 0 {
            return bad(format!(
                "input_dim {} / seq_len {} must be >= 1",
                self.input_dim, self.seq_len
            ));
        }
        if self.conv_channels.0 == 0 || self.conv_channels.1 == 0 {
            return bad("conv_channels must be >= 1".into());
        }
        if self.conv_kernels.0.is_multiple_of(2) || self.conv_kernels.1.is_multiple_of(2) {
            return bad(format!("conv_kernels {:?} must be odd", self.conv_kernels));
        }
        let tf = &self.transformer;
        if tf.layers == 0 || tf.heads == 0 || tf.model_dim == 0 || tf.ffn_dim == 0 {
            return bad("transformer dims must be >= 1".into());
        }
        if !tf.model_dim.is_multiple_of(tf.heads) {
            return bad(format!(
                "transformer heads {} must divide model_dim {}",
                tf.heads, tf.model_dim
            ));
        }
        if self.bilstm.layers == 0 || self.bilstm.hidden_per_dir == 0 {
            return bad("bilstm dims must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let d = self.fused_width();
        if self.has_mhta() && !d.is_multiple_of(self.mhta_heads) {
            return bad(format!("mhta_heads {} must divide fused width {}", self.mhta_heads, d));
        }
        if self.has_se() && !d.is_multiple_of(self.se_reduction) {
            return bad(format!(
                "se_reduction {} must divide fused width {}",
                self.se_reduction, d
            ));
        }
        match self.task {
            TaskKind::Classify(c) if c < 2 => bad(format!("classify needs >= 2 classes, got {c}")),
            TaskKind::Forecast(0) => bad("forecast horizon must be >= 1".into()),
            _ => Ok(()),
        }
    }

    /// Same architecture with one stage removed. Shared parameters keep
    /// identical init because each draws from its own (seed, path) stream.
    pub fn make_ablated(&self, variant: AblationVariant) -> Result<MstnConfig> {
        let mut cfg = self.clone();
        cfg.variant = variant;
        cfg.validate()?;
        Ok(cfg)
    }

    // ── text form ───────────────────────────────────────────────────────

    /// Canonical `key=value` lines; `parse_str` of the output reproduces
    /// the config exactly.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("input_dim", self.input_dim.to_string());
        kv("seq_len", self.seq_len.to_string());
        kv("core", self.core.as_str().into());
        kv("conv_channels", format!("{},{}", self.conv_channels.0, self.conv_channels.1));
        kv("conv_kernels", format!("{},{}", self.conv_kernels.0, self.conv_kernels.1));
        kv("transformer.layers", self.transformer.layers.to_string());
        kv("transformer.heads", self.transformer.heads.to_string());
        kv("transformer.model_dim", self.transformer.model_dim.to_string());
        kv("transformer.ffn_dim", self.transformer.ffn_dim.to_string());
        kv("bilstm.layers", self.bilstm.layers.to_string());
        kv("bilstm.hidden_per_dir", self.bilstm.hidden_per_dir.to_string());
        kv("dropout", format!("{}", self.dropout));
        kv("se_reduction", self.se_reduction.to_string());
        kv("mhta_heads", self.mhta_heads.to_string());
        kv("task", self.task.as_str().into());
        match self.task {
            TaskKind::Classify(c) => kv("task.classes", c.to_string()),
            TaskKind::Forecast(h) => kv("task.horizon", h.to_string()),
            TaskKind::Impute => {}
        }
        kv("seed", self.seed.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        );
        kv("variant", self.variant.as_str().into());
        s
    }

    /// Parse flat `key=value` text. Keys must match field paths exactly;
    /// unknown or duplicate keys are errors. `input_dim`, `seq_len` and
    /// `task` are required, everything else falls back to defaults.
    pub fn parse_str(text: &str) -> Result<MstnConfig> {
        let mut seen = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
        }
        Self::from_kv(&seen)
    }

    fn from_kv(kv: &std::collections::BTreeMap<String, String>) -> Result<MstnConfig> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("key '{k}': cannot parse '{v}'")))
        }
        fn pair(k: &str, v: &str) -> Result<(usize, usize)> {
            let (a, b) = v
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("key '{k}': want 'a,b', got '{v}'")))?;
            Ok((num(k, a.trim())?, num(k, b.trim())?))
        }

        let known = [
            "input_dim",
            "seq_len",
            "core",
            "conv_channels",
            "conv_kernels",
            "transformer.layers",
            "transformer.heads",
            "transformer.model_dim",
            "transformer.ffn_dim",
            "bilstm.layers",
            "bilstm.hidden_per_dir",
            "dropout",
            "se_reduction",
            "mhta_heads",
            "task",
            "task.classes",
            "task.horizon",
            "seed",
            "precision",
            "variant",
        ];
        for k in kv.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown config key '{k}'")));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let require =
            |k: &str| get(k).ok_or_else(|| Error::Config(format!("missing required key '{k}'")));

        let task = match require("task")? {
            "classify" => {
                let c = num("task.classes", require("task.classes")?)?;
                TaskKind::Classify(c)
            }
            "forecast" => {
                let h = num("task.horizon", require("task.horizon")?)?;
                TaskKind::Forecast(h)
            }
            "impute" => TaskKind::Impute,
            other => return Err(Error::Config(format!("unknown task '{other}'"))),
        };
        match task {
            TaskKind::Classify(_) if get("task.horizon").is_some() => {
                return Err(Error::Config("task.horizon is only valid for task=forecast".into()));
            }
            TaskKind::Forecast(_) | TaskKind::Impute if get("task.classes").is_some() => {
                return Err(Error::Config("task.classes is only valid for task=classify".into()));
            }
            TaskKind::Impute if get("task.horizon").is_some() => {
                return Err(Error::Config("task.horizon is only valid for task=forecast".into()));
            }
            _ => {}
        }

        let mut cfg = MstnConfig::new(
            num("input_dim", require("input_dim")?)?,
            num("seq_len", require("seq_len")?)?,
            task,
        );
        if let Some(v) = get("core") {
            cfg.core = match v {
                "transformer" => CoreKind::Transformer,
                "bilstm" => CoreKind::Bilstm,
                other => return Err(Error::Config(format!("unknown core '{other}'"))),
            };
        }
        if let Some(v) = get("conv_channels") {
            cfg.conv_channels = pair("conv_channels", v)?;
        }
        if let Some(v) = get("conv_kernels") {
            cfg.conv_kernels = pair("conv_kernels", v)?;
        }
        if let Some(v) = get("transformer.layers") {
            cfg.transformer.layers = num("transformer.layers", v)?;
        }
        if let Some(v) = get("transformer.heads") {
            cfg.transformer.heads = num("transformer.heads", v)?;
        }
        if let Some(v) = get("transformer.model_dim") {
            cfg.transformer.model_dim = num("transformer.model_dim", v)?;
        }
        if let Some(v) = get("transformer.ffn_dim") {
            cfg.transformer.ffn_dim = num("transformer.ffn_dim", v)?;
        }
        if let Some(v) = get("bilstm.layers") {
            cfg.bilstm.layers = num("bilstm.layers", v)?;
        }
        if let Some(v) = get("bilstm.hidden_per_dir") {
            cfg.bilstm.hidden_per_dir = num("bilstm.hidden_per_dir", v)?;
        }
        if let Some(v) = get("dropout") {
            cfg.dropout = num("dropout", v)?;
        }
        if let Some(v) = get("se_reduction") {
            cfg.se_reduction = num("se_reduction", v)?;
        }
        if let Some(v) = get("mhta_heads") {
            cfg.mhta_heads = num("mhta_heads", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = num("seed", v)?;
        }
        if let Some(v) = get("precision") {
            cfg.precision = match v {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                other => return Err(Error::Config(format!("unknown precision '{other}'"))),
            };
        }
        if let Some(v) = get("variant") {
            cfg.variant = AblationVariant::parse(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut cfg = MstnConfig::new(7, 48, TaskKind::Forecast(24));
        cfg.core = CoreKind::Bilstm;
        cfg.seed = 123;
        cfg.variant = AblationVariant::NoSe;
        let parsed = MstnConfig::parse_str(&cfg.to_config_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err =
            MstnConfig::parse_str("input_dim=3\nseq_len=8\ntask=impute\nbogus=1").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn missing_required_key_is_an_error() {
        assert!(MstnConfig::parse_str("input_dim=3\ntask=impute").is_err());
    }

    #[test]
    fn classify_requires_class_count() {
        assert!(MstnConfig::parse_str("input_dim=3\nseq_len=8\ntask=classify").is_err());
        let cfg =
            MstnConfig::parse_str("input_dim=3\nseq_len=8\ntask=classify\ntask.classes=4").unwrap();
        assert_eq!(cfg.task, TaskKind::Classify(4));
    }

    #[test]
    fn fused_width_tracks_core_and_variant() {
        let cfg = MstnConfig::new(3, 8, TaskKind::Impute);
        assert_eq!(cfg.fused_width(), 128);
        let mut lstm = cfg.clone();
        lstm.core = CoreKind::Bilstm;
        assert_eq!(lstm.fused_width(), 192);
        assert_eq!(cfg.make_ablated(AblationVariant::NoCnn).unwrap().fused_width(), 64);
        assert_eq!(cfg.make_ablated(AblationVariant::NoCore).unwrap().fused_width(), 64);
    }

    #[test]
    fn head_divisibility_is_validated() {
        let mut cfg = MstnConfig::new(3, 8, TaskKind::Impute);
        cfg.mhta_heads = 5;
        assert!(cfg.validate().is_err());
    }
}
