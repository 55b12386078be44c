//! Run configuration: a TOML file of dotted sections, `--key=value`
//! overrides, and the mode rules that turn it into model and training plans.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mocha_core::ctc::BoundaryRule;
use mocha_core::data::CorpusSpec;
use mocha_core::decoder::DecodeConfig;
use mocha_core::losses::LossWeights;
use mocha_core::model::ModelConfig;
use mocha_core::optim::AdamConfig;
use mocha_core::train::{RefSource, TrainPlan};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub chunk_width: usize,
    pub noise_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { hidden_dim: m.hidden_dim, encoder_layers: m.encoder_layers, chunk_width: m.chunk_width, noise_std: m.noise_std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub lr_decay: f64,
    pub boundary_rule: BoundaryRule,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 8, warmup_steps: 0, lr_decay: 1.0, boundary_rule: BoundaryRule::Onset, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// JSON-lines reference boundaries for `decot` and `minlt`.
    pub boundaries: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub lambda_se: Vec<f64>,
    pub tau: Vec<f64>,
    /// Empty means the run's own `mode`.
    pub modes: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { lambda_se: vec![0.0, 0.1], tau: vec![0.5, 0.4, 0.3, 0.2, 0.1], modes: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `baseline`, or `+`-joined components from `stableemit`, `decot`,
    /// `decot-ctc`, `ctc-st`, `minlt`.
    pub mode: String,
    pub seed: u64,
    pub data: CorpusSpec,
    pub model: ModelSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub decode: DecodeConfig,
    pub paths: PathsSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: "baseline".into(),
            seed: 0,
            data: CorpusSpec::default(),
            model: ModelSection::default(),
            loss: LossWeights { lambda_se: 0.1, ..LossWeights::default() },
            train: TrainSection::default(),
            decode: DecodeConfig::default(),
            paths: PathsSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    StableEmit,
    Decot,
    DecotCtc,
    CtcSt,
    MinLt,
}

impl Component {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "stableemit" => Component::StableEmit,
            "decot" => Component::Decot,
            "decot-ctc" => Component::DecotCtc,
            "ctc-st" => Component::CtcSt,
            "minlt" => Component::MinLt,
            _ => return Err(Error::config(format!("unknown mode component '{s}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::StableEmit => "stableemit",
            Component::Decot => "decot",
            Component::DecotCtc => "decot-ctc",
            Component::CtcSt => "ctc-st",
            Component::MinLt => "minlt",
        }
    }
}

/// Components of a mode string; `baseline` is the empty set.
pub fn parse_mode(mode: &str) -> Result<BTreeSet<Component>> {
    let mode = mode.trim();
    if mode == "baseline" {
        return Ok(BTreeSet::new());
    }
    let mut set = BTreeSet::new();
    for part in mode.split('+').map(str::trim) {
        if part == "baseline" {
            return Err(Error::config("baseline cannot be combined with other modes"));
        }
        if !set.insert(Component::parse(part)?) {
            return Err(Error::config(format!("mode component '{part}' repeated")));
        }
    }
    if set.contains(&Component::Decot) && set.contains(&Component::DecotCtc) {
        return Err(Error::config("decot and decot-ctc are exclusive"));
    }
    if set.contains(&Component::CtcSt) && set.contains(&Component::MinLt) {
        return Err(Error::config("ctc-st and minlt are exclusive"));
    }
    Ok(set)
}

pub fn mode_string(set: &BTreeSet<Component>) -> String {
    if set.is_empty() {
        "baseline".into()
    } else {
        set.iter().map(|c| c.name()).collect::<Vec<_>>().join("+")
    }
}

/// Everything a training run needs, after the mode rules are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub epochs: u64,
    pub decode: DecodeConfig,
    /// External reference boundaries, required when a component uses them.
    pub boundaries: Option<PathBuf>,
}

impl RunConfig {
    /// Applies the mode rules: StableEmit only in modes that name it,
    /// latency weight 1 and quantity weight 0 for `ctc-st` and `minlt`.
    pub fn resolve(&self) -> Result<Resolved> {
        let set = parse_mode(&self.mode)?;
        let mut weights = self.loss;
        if !set.contains(&Component::StableEmit) {
            weights.lambda_se = 0.0;
        }
        let latency_mode = set.contains(&Component::CtcSt) || set.contains(&Component::MinLt);
        if latency_mode {
            weights.lambda_latency = 1.0;
            weights.lambda_qua = 0.0;
        } else if weights.lambda_latency != 0.0 {
            return Err(Error::config("loss.lambda_latency is only used by the ctc-st and minlt modes"));
        }
        weights.validate()?;
        let needs_file = set.contains(&Component::Decot) || set.contains(&Component::MinLt);
        let boundaries = match (&self.paths.boundaries, needs_file) {
            (Some(p), true) => Some(PathBuf::from(p)),
            (None, true) => {
                return Err(Error::config(format!(
                    "mode {} needs reference boundaries (set paths.boundaries)",
                    self.mode
                )))
            }
            (_, false) => None,
        };
        let decot = if set.contains(&Component::Decot) {
            Some(RefSource::Provided)
        } else if set.contains(&Component::DecotCtc) {
            Some(RefSource::CtcViterbi)
        } else {
            None
        };
        let latency = if set.contains(&Component::MinLt) {
            Some(RefSource::Provided)
        } else if set.contains(&Component::CtcSt) {
            Some(RefSource::CtcViterbi)
        } else {
            None
        };
        let model = ModelConfig {
            input_dim: self.data.input_dim,
            hidden_dim: self.model.hidden_dim,
            vocab_size: self.data.vocab_size,
            encoder_layers: self.model.encoder_layers,
            chunk_width: self.model.chunk_width,
            weights,
            noise_std: self.model.noise_std,
            seed: self.seed,
        };
        model.validate()?;
        let plan = TrainPlan {
            decot,
            latency,
            batch_size: self.train.batch_size,
            adam: self.train.adam,
            warmup_steps: self.train.warmup_steps,
            lr_decay: self.train.lr_decay,
            boundary_rule: self.train.boundary_rule,
            frame_ms: self.data.frame_ms,
        };
        mocha_core::train::Trainer::check_plan(&model, &plan)?;
        self.decode.validate()?;
        Ok(Resolved { model, plan, epochs: self.train.epochs, decode: self.decode, boundaries })
    }

    /// Corpus generation spec with the run seed applied.
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec { seed: self.seed, ..self.data.clone() }
    }
}

/// Builds a config from defaults (or `base`), an optional TOML file, then
/// `key=value` overrides in order.
pub fn load_config(base: Option<&RunConfig>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let base = base.cloned().unwrap_or_default();
    let mut tree = serde_json::to_value(&base).map_err(|e| Error::config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let value = serde_json::to_value(table).map_err(|e| Error::config(e.to_string()))?;
        let mut leaves = Vec::new();
        flatten("", &value, &mut leaves);
        for (key, v) in leaves {
            set_key(&mut tree, &key, v)?;
        }
    }
    for (key, raw) in overrides {
        set_key(&mut tree, key, parse_scalar(raw))?;
    }
    serde_json::from_value(tree).map_err(|e| Error::config(format!("config: {e}")))
}

/// All dotted keys the config accepts.
pub fn known_keys() -> BTreeSet<String> {
    let tree = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    let mut leaves = Vec::new();
    flatten("", &tree, &mut leaves);
    leaves.into_iter().map(|(k, _)| k).collect()
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn set_key(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| Error::config(format!("unknown config key '{key}'")))?;
        let child = obj.get_mut(*part).ok_or_else(|| Error::config(format!("unknown config key '{key}'")))?;
        if k + 1 == parts.len() {
            if child.is_object() {
                return Err(Error::config(format!("config key '{key}' is a section")));
            }
            *child = value;
            return Ok(());
        }
        node = child;
    }
    unreachable!("split yields at least one part")
}

/// A TOML literal if it parses as one, else the raw string.
fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Splits `--key=value` arguments naming config keys out of `args`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let keys = known_keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if keys.contains(k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}
