//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! an error.
//!
//! ```text
//! learning_rate = 1e-4
//! max_epochs = 200
//! patience = 10
//! seed = 42
//! class_weights = auto            # or five comma-separated numbers
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! weight_decay = 0.01
//! stop_on_perfect = true
//! val_fraction = 0.25
//! d_proj = 768
//! d_model = 768
//! layers = 4
//! heads = 4
//! d_ff = 3072
//! dropout = 0.4
//! max_positions = 512
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchDescriptor, Variant};
use crate::nn::EncoderConfig;
use crate::stream::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClassWeights {
    /// Inverse class frequency over the training pages.
    Auto,
    Fixed([f64; NUM_CLASSES]),
}

/// Architecture knobs that are not fixed by the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_proj: usize,
    pub encoder: EncoderConfig,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_proj: 768,
            encoder: EncoderConfig::default(),
            max_positions: 512,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, variant: Variant, d_vis: usize, d_text: usize) -> ArchDescriptor {
        let mut a = ArchDescriptor::new(variant, d_vis, d_text);
        a.d_proj = self.d_proj;
        a.encoder = self.encoder.clone();
        a.max_positions = self.max_positions;
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// End training once validation F1-Macro reaches 1.0, which no later
    /// epoch can strictly improve on.
    pub stop_on_perfect: bool,
    /// Share of manifest books held out for validation when no separate
    /// validation manifest is given.
    pub val_fraction: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            max_epochs: 200,
            patience: 10,
            seed: 42,
            class_weights: ClassWeights::Auto,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            stop_on_perfect: true,
            val_fraction: 0.25,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if let ClassWeights::Fixed(w) = &self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight_decay non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        self.model.encoder.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let enc = &mut self.model.encoder;
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "class_weights" => {
                self.class_weights = if value == "auto" {
                    ClassWeights::Auto
                } else {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|p| parse(key, p.trim()))
                        .collect::<Result<_>>()?;
                    let arr: [f64; NUM_CLASSES] = parts.try_into().map_err(|_| {
                        Error::Config(format!("class_weights needs {NUM_CLASSES} values or \"auto\""))
                    })?;
                    ClassWeights::Fixed(arr)
                }
            }
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "stop_on_perfect" => self.stop_on_perfect = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "d_proj" => self.model.d_proj = parse(key, value)?,
            "d_model" => enc.d_model = parse(key, value)?,
            "layers" => enc.layers = parse(key, value)?,
            "heads" => enc.heads = parse(key, value)?,
            "d_ff" => enc.d_ff = parse(key, value)?,
            "dropout" => enc.dropout = parse(key, value)?,
            "max_positions" => self.model.max_positions = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renders the config in the format [`TrainConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let weights = match &self.class_weights {
            ClassWeights::Auto => "auto".to_string(),
            ClassWeights::Fixed(w) => w.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        };
        let e = &self.model.encoder;
        let _ = write!(
            s,
            "learning_rate = {}\nmax_epochs = {}\npatience = {}\nseed = {}\nclass_weights = {}\n\
             beta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}\nstop_on_perfect = {}\nval_fraction = {}\n\
             d_proj = {}\nd_model = {}\nlayers = {}\nheads = {}\nd_ff = {}\ndropout = {}\nmax_positions = {}\n",
            self.learning_rate,
            self.max_epochs,
            self.patience,
            self.seed,
            weights,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
            self.stop_on_perfect,
            self.val_fraction,
            self.model.d_proj,
            e.d_model,
            e.layers,
            e.heads,
            e.d_ff,
            e.dropout,
            self.model.max_positions
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-6);
        assert_eq!((c.beta1, c.beta2, c.eps, c.weight_decay), (0.9, 0.999, 1e-8, 0.01));
        assert_eq!(c.model.encoder, EncoderConfig::default());
        assert_eq!(c.model.d_proj, 768);
        c.validate().unwrap();
    }

    #[test]
    fn parse_and_render_round_trip() {
        let c = TrainConfig::parse(
            "# overrides\nlearning_rate = 1e-4\npatience=3\nclass_weights = 1, 2, 3, 4, 5\nlayers = 2 # inline\n",
        )
        .unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.patience, 3);
        assert_eq!(c.class_weights, ClassWeights::Fixed([1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(c.model.encoder.layers, 2);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("patience = 0").is_err());
        assert!(TrainConfig::parse("learning_rate = -1").is_err());
        assert!(TrainConfig::parse("class_weights = 1,2,3").is_err());
        assert!(TrainConfig::parse("class_weights = 1,2,3,4,0").is_err());
        assert!(TrainConfig::parse("heads = 5").is_err());
        assert!(TrainConfig::parse("no equals sign").is_err());
    }
}
