//! End-to-end runner, parameter sweeps, CSV output and file I/O.

mod config;
mod pipeline;
mod sweep;
pub mod volume_io;

pub use config::ConfigMap;
pub use pipeline::{
    latent_real_view, receive_discrete, receive_soft, reconstruct, render_table, run_pipeline,
    run_pipeline_full, transmit, MetricsRecord, PipelineRun, Transmission, METRIC_NAMES,
};
pub use sweep::{fmt_g6, run_sweep, to_csv, CsvRow, CSV_HEADER};

use crate::channel::ChannelModel;
use crate::codec::Strides;
use crate::diffusion::{make_schedule_with, scaled_linear, NoiseSchedule, SigmaRule};
use crate::error::{Error, Result};
use crate::metrics::Hd95Mode;
use crate::receiver::DenoiseConfig;
use crate::semantics::CannyParams;
use crate::volume::Dims;

/// Classes of the abdominal phantom: background, body, liver, kidney.
pub const NUM_CLASSES: u16 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseSettings {
    pub enabled: bool,
    pub kernel: [usize; 3],
    pub prior_strength: f64,
}

impl Default for DenoiseSettings {
    /// The window spans one latent cell either side in-plane (`2·4 + 1`) so a
    /// corrupted latent sample, which spreads over a whole cell after
    /// upsampling, is still a minority inside it.
    fn default() -> Self {
        Self {
            enabled: true,
            kernel: [3, 9, 9],
            prior_strength: 1.0,
        }
    }
}

impl DenoiseSettings {
    pub fn config(&self, channel: ChannelModel) -> DenoiseConfig {
        DenoiseConfig {
            kernel: self.kernel,
            channel,
            prior_strength: self.prior_strength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictorKind {
    #[default]
    Renderer,
    /// Gaussian oracle fitted to the clean volume's mean and variance.
    GaussianOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpmConfig {
    pub steps: usize,
    /// Explicit linear β range; `None` selects the step-scaled default.
    pub betas: Option<(f64, f64)>,
    pub sigma_rule: SigmaRule,
    pub predictor: PredictorKind,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            betas: None,
            sigma_rule: SigmaRule::Beta,
            predictor: PredictorKind::Renderer,
        }
    }
}

impl DdpmConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.betas {
            Some((a, b)) => make_schedule_with(self.steps, a, b, self.sigma_rule),
            None => scaled_linear(self.steps, self.sigma_rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dims: Dims,
    pub canny: CannyParams,
    pub strides: Strides,
    pub channel: ChannelModel,
    pub denoise: DenoiseSettings,
    pub ddpm: DdpmConfig,
    pub hd95_mode: Hd95Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: Dims::new(16, 64, 64),
            canny: CannyParams::default(),
            strides: Strides::default(),
            channel: ChannelModel::None,
            denoise: DenoiseSettings::default(),
            ddpm: DdpmConfig::default(),
            hd95_mode: Hd95Mode::Pooled,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.ensure_nonempty()?;
        self.strides.latent_dims(self.dims)?;
        self.canny.validate()?;
        self.channel.validate()?;
        if let ChannelModel::Transition(t) = &self.channel {
            if t.size() != NUM_CLASSES as usize {
                return Err(Error::dims(format!(
                    "transition matrix must be {NUM_CLASSES}x{NUM_CLASSES}"
                )));
            }
        }
        self.denoise.config(ChannelModel::None).validate()?;
        self.ddpm.schedule()?;
        Ok(())
    }
}

/// The channel parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    SnrDb,
    FlipP,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::SnrDb => "snr_db",
            SweepParam::FlipP => "flip_p",
        }
    }

    /// SNR −5..20 dB in steps of 5; flip probability 0..0.3 in steps of 0.05.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::SnrDb => (0..6).map(|i| -5.0 + 5.0 * i as f64).collect(),
            SweepParam::FlipP => (0..7).map(|i| i as f64 * 5.0 / 100.0).collect(),
        }
    }

    pub fn channel(self, value: f64) -> ChannelModel {
        match self {
            SweepParam::SnrDb => ChannelModel::Awgn { snr_db: value },
            SweepParam::FlipP => ChannelModel::BitFlip { p: value },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: PipelineConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Runs per value; repetition `r` uses seed `base.seed + r`.
    pub repetitions: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("sweep needs at least one repetition"));
        }
        for &v in &self.values {
            self.param.channel(v).validate()?;
        }
        self.base.validate()
    }

    /// Pipeline configuration of one sweep point.
    pub fn point(&self, value: f64, repetition: usize) -> PipelineConfig {
        PipelineConfig {
            seed: self.base.seed.wrapping_add(repetition as u64),
            channel: self.param.channel(value),
            ..self.base.clone()
        }
    }
}
