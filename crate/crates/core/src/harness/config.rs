//! Flat `key = value` configuration files.
//!
//! One setting per line, dotted keys, `#` starts a comment. Unknown keys and
//! repeated keys are errors so typos never pass silently.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::channel::{ChannelModel, TransitionMatrix};
use crate::codec::Strides;
use crate::diffusion::SigmaRule;
use crate::error::{Error, Result};
use crate::metrics::Hd95Mode;
use crate::semantics::CannyParams;
use crate::volume::Dims;

use super::{DdpmConfig, DenoiseSettings, PipelineConfig, PredictorKind, SweepConfig, SweepParam};

/// Parsed key/value pairs with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries
                .insert(k.to_string(), (n + 1, v.to_string()))
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    n + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{v}` for `{key}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::Config(format!("line {line}: cannot parse `{p}` in `{key}`"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn triple(&self, key: &str) -> Result<Option<[usize; 3]>> {
        match self.list::<usize>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 3 => Ok(Some([v[0], v[1], v[2]])),
            Some(_) => Err(Error::Config(format!(
                "`{key}` needs three comma-separated values"
            ))),
        }
    }
}

const PIPELINE_KEYS: &[&str] = &[
    "seed",
    "phantom.depth",
    "phantom.height",
    "phantom.width",
    "canny.sigma",
    "canny.low",
    "canny.high",
    "codec.strides",
    "channel.kind",
    "channel.snr_db",
    "channel.flip_p",
    "channel.transition_eps",
    "denoise.enabled",
    "denoise.kernel",
    "denoise.prior_strength",
    "ddpm.steps",
    "ddpm.beta_start",
    "ddpm.beta_end",
    "ddpm.sigma_rule",
    "ddpm.predictor",
    "metrics.hd95_mode",
];

const SWEEP_KEYS: &[&str] = &["sweep.param", "sweep.values", "sweep.repetitions"];

fn check_keys(map: &ConfigMap, allowed: &[&[&str]]) -> Result<()> {
    for k in map.keys() {
        if !allowed.iter().any(|set| set.contains(&k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
    }
    Ok(())
}

fn channel_from(map: &ConfigMap, num_classes: u16) -> Result<ChannelModel> {
    let kind: String = map.get("channel.kind")?.unwrap_or_else(|| "none".into());
    let need = |key: &str| -> Result<f64> {
        map.get(key)?
            .ok_or_else(|| Error::Config(format!("channel.kind = {kind} needs `{key}`")))
    };
    let model = match kind.as_str() {
        "none" => ChannelModel::None,
        "awgn" => ChannelModel::Awgn {
            snr_db: need("channel.snr_db")?,
        },
        "bitflip" => ChannelModel::BitFlip {
            p: need("channel.flip_p")?,
        },
        "transition" => ChannelModel::Transition(
            TransitionMatrix::symmetric(num_classes as usize, need("channel.transition_eps")?)
                .map_err(|e| Error::Config(e.to_string()))?,
        ),
        other => return Err(Error::Config(format!("unknown channel kind `{other}`"))),
    };
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(model)
}

impl PipelineConfig {
    /// Defaults overridden by every key present in `map`.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        check_keys(map, &[PIPELINE_KEYS, SWEEP_KEYS])?;
        let mut cfg = Self::default();
        if let Some(s) = map.get("seed")? {
            cfg.seed = s;
        }
        let d = cfg.dims;
        cfg.dims = Dims::new(
            map.get("phantom.depth")?.unwrap_or(d.depth),
            map.get("phantom.height")?.unwrap_or(d.height),
            map.get("phantom.width")?.unwrap_or(d.width),
        );
        cfg.canny = CannyParams {
            sigma: map.get("canny.sigma")?.unwrap_or(cfg.canny.sigma),
            low: map.get("canny.low")?.unwrap_or(cfg.canny.low),
            high: map.get("canny.high")?.unwrap_or(cfg.canny.high),
        };
        if let Some([a, b, c]) = map.triple("codec.strides")? {
            cfg.strides = Strides::new(a, b, c);
        }
        cfg.channel = channel_from(map, super::NUM_CLASSES)?;
        cfg.denoise = DenoiseSettings {
            enabled: map.get("denoise.enabled")?.unwrap_or(cfg.denoise.enabled),
            kernel: map.triple("denoise.kernel")?.unwrap_or(cfg.denoise.kernel),
            prior_strength: map
                .get("denoise.prior_strength")?
                .unwrap_or(cfg.denoise.prior_strength),
        };
        let betas = match (
            map.get::<f64>("ddpm.beta_start")?,
            map.get::<f64>("ddpm.beta_end")?,
        ) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "ddpm.beta_start and ddpm.beta_end must be given together".into(),
                ))
            }
        };
        cfg.ddpm = DdpmConfig {
            steps: map.get("ddpm.steps")?.unwrap_or(cfg.ddpm.steps),
            betas,
            sigma_rule: match map.get::<String>("ddpm.sigma_rule")?.as_deref() {
                None | Some("beta") => SigmaRule::Beta,
                Some("posterior") => SigmaRule::Posterior,
                Some(o) => return Err(Error::Config(format!("unknown sigma rule `{o}`"))),
            },
            predictor: match map.get::<String>("ddpm.predictor")?.as_deref() {
                None | Some("renderer") => PredictorKind::Renderer,
                Some("gaussian") => PredictorKind::GaussianOracle,
                Some(o) => return Err(Error::Config(format!("unknown predictor `{o}`"))),
            },
        };
        cfg.hd95_mode = match map.get::<String>("metrics.hd95_mode")?.as_deref() {
            None | Some("pooled") => Hd95Mode::Pooled,
            Some("directed_max") => Hd95Mode::DirectedMax,
            Some(o) => return Err(Error::Config(format!("unknown hd95 mode `{o}`"))),
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }
}

impl SweepConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let base = PipelineConfig::from_map(map)?;
        let param = match map.get::<String>("sweep.param")?.as_deref() {
            None | Some("snr_db") => SweepParam::SnrDb,
            Some("flip_p") => SweepParam::FlipP,
            Some(o) => return Err(Error::Config(format!("unknown sweep parameter `{o}`"))),
        };
        let values = map
            .list("sweep.values")?
            .unwrap_or_else(|| param.default_values());
        let repetitions = map.get("sweep.repetitions")?.unwrap_or(1);
        let cfg = Self {
            base,
            param,
            values,
            repetitions,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }
}
