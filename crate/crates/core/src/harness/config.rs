//! Run configuration and its flat dotted-key JSON form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::NodeFeatureMode;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::model::{GraphSource, ModelConfig, ModelKind};
use crate::numerics::AdamConfig;
use crate::predictor::PredictorConfig;

/// Which loss terms are switched on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "ce+gl")]
    CeGl,
    #[serde(rename = "ce+sl")]
    CeSl,
    #[default]
    #[serde(rename = "full")]
    Full,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Ce, Self::CeGl, Self::CeSl, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::CeGl => "ce+gl",
            Self::CeSl => "ce+sl",
            Self::Full => "full",
        }
    }

    /// Zeroes the weights of the terms this variant leaves out.
    pub fn apply(self, w: LossWeights) -> LossWeights {
        match self {
            Self::Ce => LossWeights::zero(),
            Self::CeGl => LossWeights { gamma: 0.0, ..w },
            Self::CeSl => LossWeights { alpha: 0.0, beta: 0.0, ..w },
            Self::Full => w,
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown loss variant '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Evaluate test AUROC after every epoch rather than only the last.
    pub eval_every_epoch: bool,
}

/// Epoch count used for synthetic desk-scale runs; 500 reproduces the long schedule.
pub const DESK_EPOCHS: usize = 150;

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: DESK_EPOCHS,
            batch_size: 16,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub repetitions: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, repetitions: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub graph_source: GraphSource,
    pub node_feature_mode: NodeFeatureMode,
    pub loss_variant: LossVariant,
    pub loss: LossWeights,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub baseline_hidden: usize,
    pub train: TrainConfig,
    pub cv: CvConfig,
}

pub const DEFAULT_SEED: u64 = 7;

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            seed: DEFAULT_SEED,
            model: m.kind,
            graph_source: m.graph_source,
            node_feature_mode: m.node_feature_mode,
            loss_variant: LossVariant::Full,
            loss: LossWeights::default(),
            encoder: m.encoder,
            predictor: m.predictor,
            baseline_hidden: m.baseline_hidden,
            train: TrainConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            graph_source: self.graph_source,
            node_feature_mode: self.node_feature_mode,
            encoder: self.encoder.clone(),
            predictor: self.predictor.clone(),
            baseline_hidden: self.baseline_hidden,
        }
    }

    /// Loss weights after the variant switched terms off; the baseline trains on CE only.
    pub fn effective_weights(&self) -> LossWeights {
        match self.model {
            ModelKind::Baseline => LossWeights::zero(),
            ModelKind::Graph => self.loss_variant.apply(self.loss),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.epochs must be ≥ 1 and train.batch_size ≥ 2 (got {} and {})",
                t.epochs, t.batch_size
            )));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) || !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "train.lr must be > 0 and train.weight_decay ≥ 0 (got {} and {})",
                t.lr, t.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.cv.folds < 2 || self.cv.repetitions == 0 {
            return Err(Error::Config(format!(
                "cv.folds must be ≥ 2 and cv.repetitions ≥ 1 (got {} and {})",
                self.cv.folds, self.cv.repetitions
            )));
        }
        self.loss.validate()
    }

    pub fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        from_flat(flat)
    }

    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        to_flat(self)
    }
}

/// Nested value → `{"a.b.c": leaf}`; arrays are leaves.
pub fn flatten_value(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &BTreeMap<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("key '{key}' nests under a non-object value")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    Ok(Value::Object(root))
}

pub fn to_flat<T: Serialize>(value: &T) -> BTreeMap<String, Value> {
    flatten_value(&serde_json::to_value(value).expect("configuration serializes"))
}

/// Deserializes a flat map, rejecting keys the type does not know.
pub fn from_flat<T: Serialize + DeserializeOwned + Default>(flat: &BTreeMap<String, Value>) -> Result<T> {
    let known = to_flat(&T::default());
    for key in flat.keys() {
        let is_known = known.contains_key(key) || known.keys().any(|k| key.starts_with(&format!("{k}.")));
        if !is_known {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
    }
    let mut merged = known;
    merged.extend(flat.iter().map(|(k, v)| (k.clone(), v.clone())));
    serde_json::from_value(unflatten(&merged)?).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a flat JSON object from disk; nested objects are accepted and flattened.
pub fn read_flat(path: &Path) -> Result<BTreeMap<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if !value.is_object() {
        return Err(Error::Config(format!("{} does not hold a JSON object", path.display())));
    }
    Ok(flatten_value(&value))
}

/// Applies `key=value` overrides; the value is parsed as JSON, falling back to a string.
pub fn apply_overrides(flat: &mut BTreeMap<String, Value>, overrides: &[String]) -> Result<()> {
    let mut seen: BTreeMap<String, Value> = BTreeMap::new();
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not of the form key=value")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("override '{item}' has an empty key")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if let Some(prev) = seen.get(&key) {
            if *prev != value {
                return Err(Error::Config(format!("conflicting overrides for '{key}': {prev} and {value}")));
            }
        }
        seen.insert(key.clone(), value.clone());
        flat.insert(key, value);
    }
    Ok(())
}

/// Pretty JSON of a flat map with sorted keys.
pub fn flat_to_json(flat: &BTreeMap<String, Value>) -> String {
    let map: Map<String, Value> = flat.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    serde_json::to_string_pretty(&Value::Object(map)).expect("JSON values serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SyntheticConfig;
    use crate::encoder::EncoderKind;

    #[test]
    fn defaults_round_trip_through_flat_form() {
        let cfg = RunConfig::default();
        let flat = cfg.to_flat();
        assert!(flat.contains_key("encoder.variant"));
        assert!(flat.contains_key("train.epochs"));
        assert_eq!(RunConfig::from_flat(&flat).unwrap(), cfg);
        assert_eq!(cfg.train.epochs, 150);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!((cfg.cv.folds, cfg.cv.repetitions), (5, 3));
    }

    #[test]
    fn overrides_parse_json_and_strings() {
        let mut flat = RunConfig::default().to_flat();
        apply_overrides(
            &mut flat,
            &["encoder.variant=gru".into(), "train.epochs=3".into(), "encoder.cnn_channels=[4,4,2]".into()],
        )
        .unwrap();
        let cfg = RunConfig::from_flat(&flat).unwrap();
        assert_eq!(cfg.encoder.variant, EncoderKind::Gru);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.encoder.cnn_channels, vec![4, 4, 2]);
    }

    #[test]
    fn unknown_and_conflicting_overrides_fail() {
        let mut flat = RunConfig::default().to_flat();
        apply_overrides(&mut flat, &["encoder.nope=1".into()]).unwrap();
        assert!(RunConfig::from_flat(&flat).is_err());
        let mut flat = RunConfig::default().to_flat();
        assert!(apply_overrides(&mut flat, &["seed=1".into(), "seed=2".into()]).is_err());
        assert!(apply_overrides(&mut flat, &["seed".into()]).is_err());
    }

    #[test]
    fn loss_variants_mask_weights() {
        let w = LossWeights::default();
        assert_eq!(LossVariant::Ce.apply(w), LossWeights::zero());
        assert_eq!(LossVariant::CeGl.apply(w), LossWeights { alpha: 1e-3, beta: 1e-3, gamma: 0.0 });
        assert_eq!(LossVariant::CeSl.apply(w), LossWeights { alpha: 0.0, beta: 0.0, gamma: 1e-4 });
        assert_eq!(LossVariant::Full.apply(w), w);
        assert_eq!("ce+gl".parse::<LossVariant>().unwrap(), LossVariant::CeGl);
    }

    #[test]
    fn synthetic_config_flattens_too() {
        let flat = to_flat(&SyntheticConfig::default());
        assert!(flat.contains_key("n") && flat.contains_key("planted"));
        let back: SyntheticConfig = from_flat(&flat).unwrap();
        assert_eq!(back, SyntheticConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.loss.gamma = -1.0;
        assert!(cfg.validate().is_err());
    }
}
