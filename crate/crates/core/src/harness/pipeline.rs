use std::time::{Duration, Instant};

use crate::bits::{self, bits_per_label};
use crate::channel::{self, ChannelModel};
use crate::codec::{compress, LatentPacket};
use crate::diffusion::{
    self, oracle_gaussian_predictor, renderer_predictor, to_internal, NoisePredictor,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::metrics::{self, segmentation_report, Measure, SegmentationReport, UNIT_SPACING};
use crate::phantom::{generate_phantom, normalize_hu, PhantomSpec};
use crate::receiver::{self, upsample_edges, upsample_labels};
use crate::rng::{tags, Stream};
use crate::semantics::{
    extract_edges, extract_segmentation, one_hot, segment_by_intensity, SegVolume,
};
use crate::volume::{CtVolume, Dims, EdgeVolume, Grid, LabelVolume};

use super::{DenoiseSettings, PipelineConfig, PredictorKind};

/// CSV metric names, in output order.
pub const METRIC_NAMES: [&str; 10] = [
    "dice", "iou", "miou_w", "hd95", "ber", "ber_seg", "ber_edge", "snr_db", "mse", "psnr",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Foreground-class means of the per-class values below.
    pub dice: Measure,
    pub iou: Measure,
    pub miou_w: Measure,
    pub hd95: Measure,
    /// Bit error rate over all transmitted bits, then per stream.
    pub ber: Measure,
    pub ber_seg: Measure,
    pub ber_edge: Measure,
    /// SNR of the received one-hot + edge view against the sent one.
    pub snr_db: Measure,
    pub mse: Measure,
    pub psnr: Measure,
    pub dice_per_class: Vec<Measure>,
    pub iou_per_class: Vec<Measure>,
    pub hd95_per_class: Vec<Measure>,
    pub compression_ratio: f64,
    /// Wall time per stage; excluded from every determinism guarantee.
    pub timings: Vec<(Stage, Duration)>,
}

impl MetricsRecord {
    /// `(name, value)` pairs in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [(&'static str, Measure); 10] {
        let v = [
            self.dice,
            self.iou,
            self.miou_w,
            self.hd95,
            self.ber,
            self.ber_seg,
            self.ber_edge,
            self.snr_db,
            self.mse,
            self.psnr,
        ];
        std::array::from_fn(|i| (METRIC_NAMES[i], v[i]))
    }
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub record: MetricsRecord,
    pub ct: CtVolume,
    pub ground_truth: LabelVolume,
    pub edges: EdgeVolume,
    pub packet: LatentPacket,
    pub transmission: Transmission,
    pub restored_seg: LabelVolume,
    pub restored_edges: EdgeVolume,
    pub reconstruction: CtVolume,
    pub prediction: LabelVolume,
}

/// Result of sending a packet through its declared channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    /// Hard-decision packet (argmax / threshold for AWGN).
    pub received: LatentPacket,
    /// Received real-valued latent view, AWGN only.
    pub soft: Option<Vec<f64>>,
    pub ber: Measure,
    pub ber_seg: Measure,
    pub ber_edge: Measure,
    pub snr_db: Measure,
}

/// Channel-major `(C + 1, D', H', W')` view: one-hot labels, then edges.
pub fn latent_real_view(seg: &LabelVolume, edges: &EdgeVolume) -> Result<Vec<f64>> {
    let oh = one_hot(seg, seg.num_classes() as usize)?;
    let mut z: Vec<f64> = oh.as_slice().iter().map(|&v| v as f64).collect();
    z.extend(edges.mask().iter().map(|&b| b as u8 as f64));
    Ok(z)
}

fn bit_errors(sent: &[bool], received: &[bool]) -> usize {
    sent.iter().zip(received).filter(|(a, b)| a != b).count()
}

fn rate(errors: usize, total: usize) -> Measure {
    if total == 0 {
        Measure::Fail
    } else {
        Measure::Value(errors as f64 / total as f64)
    }
}

fn label_bits(labels: &[u8], width: u32) -> Vec<bool> {
    let n = labels.len() * width as usize;
    bits::unpack_bools(&bits::pack_labels(labels, width), n).expect("sized")
}

/// Hard decisions from a soft `(C + 1)`-channel view: argmax, then `> 1/2`.
fn hard_decisions(z: &[f64], num_classes: usize, dims: Dims) -> Result<(LabelVolume, EdgeVolume)> {
    let n = dims.len();
    let labels = (0..n)
        .map(|i| {
            (1..num_classes).fold(
                0usize,
                |b, c| if z[c * n + i] > z[b * n + i] { c } else { b },
            ) as u8
        })
        .collect();
    let edges = z[num_classes * n..].iter().map(|&v| v > 0.5).collect();
    Ok((
        LabelVolume::new(Grid::from_vec(dims, labels)?, num_classes as u16)?,
        EdgeVolume::new(Grid::from_vec(dims, edges)?),
    ))
}

/// Send the packet's latents through its declared channel.
///
/// Labels travel as `⌈log2 C⌉`-bit codes and edges as single bits; the
/// transition channel acts on labels only.
pub fn transmit(packet: &LatentPacket, seed: u64) -> Result<Transmission> {
    let stream = Stream::new(seed).derive(tags::CHANNEL);
    let (seg_seed, edge_seed, awgn_seed) = (
        stream.derive(0).key(),
        stream.derive(1).key(),
        stream.derive(2).key(),
    );
    let seg = packet.seg_latent();
    let edges = packet.edge_latent();
    let c = packet.num_classes();
    let dims = packet.latent_dims();
    let mut soft = None;
    let (seg_rx, edge_rx) = match packet.channel() {
        ChannelModel::None => (seg.clone(), edges.clone()),
        ChannelModel::BitFlip { p } => {
            let l = channel::bitflip_labels(seg.labels(), c, *p, seg_seed)?;
            let e = channel::bitflip_transmit(edges.mask(), *p, edge_seed)?;
            (
                LabelVolume::new(Grid::from_vec(dims, l)?, c)?,
                EdgeVolume::new(Grid::from_vec(dims, e)?),
            )
        }
        ChannelModel::Transition(t) => (channel::label_transmit(seg, t, seg_seed)?, edges.clone()),
        ChannelModel::Awgn { snr_db } => {
            let z = latent_real_view(seg, edges)?;
            let rx = channel::awgn_transmit(&z, *snr_db, awgn_seed)?;
            let hard = hard_decisions(&rx, c as usize, dims)?;
            soft = Some(rx);
            hard
        }
    };
    let width = bits_per_label(c);
    let seg_errors = bit_errors(
        &label_bits(seg.labels(), width),
        &label_bits(seg_rx.labels(), width),
    );
    let edge_errors = bit_errors(edges.mask(), edge_rx.mask());
    let (seg_bits, edge_bits) = (dims.len() * width as usize, dims.len());
    let z = latent_real_view(seg, edges)?;
    let z_rx = match &soft {
        Some(s) => s.clone(),
        None => latent_real_view(&seg_rx, &edge_rx)?,
    };
    Ok(Transmission {
        received: packet.with_latents(seg_rx, edge_rx)?,
        soft,
        ber: rate(seg_errors + edge_errors, seg_bits + edge_bits),
        ber_seg: rate(seg_errors, seg_bits),
        ber_edge: rate(edge_errors, edge_bits),
        snr_db: Measure::Value(channel::measure_snr_db(&z, &z_rx)?),
    })
}

/// Upsample hard latents and apply the channel-aware discrete denoisers.
///
/// An AWGN-declared packet carries no discrete noise model once hard
/// decisions are taken, so it is only upsampled.
pub fn receive_discrete(
    packet: &LatentPacket,
    settings: &DenoiseSettings,
) -> Result<(LabelVolume, EdgeVolume)> {
    let dims = packet.original_dims();
    let seg =
        upsample_labels(packet.seg_latent(), packet.num_classes(), dims).stage(Stage::Upsample)?;
    let edges = upsample_edges(packet.edge_latent(), dims).stage(Stage::Upsample)?;
    let channel = packet.channel();
    if !settings.enabled || matches!(channel, ChannelModel::None | ChannelModel::Awgn { .. }) {
        return Ok((seg, edges));
    }
    let edge_channel = match channel {
        ChannelModel::BitFlip { .. } => channel.clone(),
        _ => ChannelModel::None,
    };
    let seg =
        receiver::denoise_labels(&seg, &settings.config(channel.clone())).stage(Stage::Denoise)?;
    let edges =
        receiver::denoise_edges(&edges, &settings.config(edge_channel)).stage(Stage::Denoise)?;
    Ok((seg, edges))
}

/// Upsample every channel of a received soft view, smooth it according to the
/// declared SNR, then take hard decisions.
pub fn receive_soft(
    soft: &[f64],
    num_classes: u16,
    latent: Dims,
    target: Dims,
    snr_db: f64,
    settings: &DenoiseSettings,
) -> Result<(LabelVolume, EdgeVolume)> {
    let channels = num_classes as usize + 1;
    if soft.len() != channels * latent.len() {
        return Err(Error::dims(format!(
            "soft view has {} values, expected {}",
            soft.len(),
            channels * latent.len()
        )));
    }
    let sigma = receiver::noise_sigma_from_received(channel::signal_power(soft), snr_db);
    let mut full = Vec::with_capacity(channels * target.len());
    for c in 0..channels {
        let lat = Grid::from_vec(
            latent,
            soft[c * latent.len()..(c + 1) * latent.len()].to_vec(),
        )?;
        let up = receiver::trilinear_upsample(&lat, target).stage(Stage::Upsample)?;
        let up = if settings.enabled {
            receiver::denoise_continuous_with_sigma(&up, sigma).stage(Stage::Denoise)?
        } else {
            up
        };
        full.extend(up.into_vec());
    }
    hard_decisions(&full, num_classes as usize, target)
}

fn timed<T>(
    timings: &mut Vec<(Stage, Duration)>,
    stage: Stage,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().stage(stage);
    timings.push((stage, start.elapsed()));
    out
}

/// Intensity of each phantom class in the normalized domain.
pub fn render_table(cfg: &PipelineConfig) -> Vec<f64> {
    PhantomSpec::abdominal(cfg.seed, cfg.dims).intensity_table()
}

/// Regenerate a normalized CT volume from restored semantics.
///
/// The Gaussian oracle is fitted to `reference`, which it therefore requires.
pub fn reconstruct(
    cfg: &PipelineConfig,
    seg: &LabelVolume,
    edges: &EdgeVolume,
    reference: Option<&CtVolume>,
) -> Result<CtVolume> {
    let schedule = cfg.ddpm.schedule()?;
    let p: Box<dyn NoisePredictor> = match (cfg.ddpm.predictor, reference) {
        (PredictorKind::Renderer, _) => Box::new(renderer_predictor(render_table(cfg))?),
        (PredictorKind::GaussianOracle, Some(ct)) => {
            let x: Vec<f64> = ct.to_f64().into_iter().map(to_internal).collect();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
            Box::new(oracle_gaussian_predictor(mean, var.max(1e-12))?)
        }
        (PredictorKind::GaussianOracle, None) => {
            return Err(Error::invalid(
                "the gaussian predictor needs a reference volume",
            ))
        }
    };
    let seed = Stream::new(cfg.seed).derive(tags::RECONSTRUCT).key();
    diffusion::reconstruct_volume(
        &SegVolume::from(seg.clone()),
        edges,
        p.as_ref(),
        &schedule,
        seed,
    )
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<MetricsRecord> {
    run_pipeline_full(cfg).map(|r| r.record)
}

pub fn run_pipeline_full(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let spec = PhantomSpec::abdominal(cfg.seed, cfg.dims);
    let table = render_table(cfg);
    let (ct, gt) = timed(&mut timings, Stage::Phantom, || {
        let (raw, gt) = generate_phantom(&spec)?;
        Ok((normalize_hu(&raw)?, gt))
    })?;
    let (seg, edges) = timed(&mut timings, Stage::Semantics, || {
        Ok((extract_segmentation(&gt), extract_edges(&ct, &cfg.canny)?))
    })?;
    let packet = timed(&mut timings, Stage::Compress, || {
        compress(&seg, &edges, cfg.strides)?.with_channel(cfg.channel.clone())
    })?;
    let transmission = timed(&mut timings, Stage::Channel, || transmit(&packet, cfg.seed))?;

    let start = Instant::now();
    let (restored_seg, restored_edges) = match (&transmission.soft, &cfg.channel) {
        (Some(soft), ChannelModel::Awgn { snr_db }) => receive_soft(
            soft,
            packet.num_classes(),
            packet.latent_dims(),
            cfg.dims,
            *snr_db,
            &cfg.denoise,
        )?,
        _ => receive_discrete(&transmission.received, &cfg.denoise)?,
    };
    timings.push((Stage::Denoise, start.elapsed()));

    let reconstruction = timed(&mut timings, Stage::Reconstruct, || {
        reconstruct(cfg, &restored_seg, &restored_edges, Some(&ct))
    })?;

    let (prediction, report, mse, psnr) = timed(&mut timings, Stage::Metrics, || {
        let prediction = segment_by_intensity(&reconstruction, &table)?;
        let report = segmentation_report(&prediction, &gt, UNIT_SPACING, cfg.hd95_mode)?;
        let (a, b) = (reconstruction.to_f64(), ct.to_f64());
        Ok((
            prediction,
            report,
            metrics::mse(&a, &b)?,
            metrics::psnr(&a, &b, 1.0)?,
        ))
    })?;

    let record = record_from(
        &report,
        &transmission,
        mse,
        psnr,
        packet.compression_ratio()?,
        timings,
    );
    Ok(PipelineRun {
        record,
        ct,
        ground_truth: gt,
        edges,
        packet,
        transmission,
        restored_seg,
        restored_edges,
        reconstruction,
        prediction,
    })
}

fn record_from(
    report: &SegmentationReport,
    tx: &Transmission,
    mse: f64,
    psnr: f64,
    compression_ratio: f64,
    timings: Vec<(Stage, Duration)>,
) -> MetricsRecord {
    MetricsRecord {
        dice: SegmentationReport::foreground_mean(&report.dice),
        iou: SegmentationReport::foreground_mean(&report.iou),
        miou_w: report.miou_w,
        hd95: SegmentationReport::foreground_mean(&report.hd95),
        ber: tx.ber,
        ber_seg: tx.ber_seg,
        ber_edge: tx.ber_edge,
        snr_db: tx.snr_db,
        mse: Measure::Value(mse),
        psnr: Measure::Value(psnr),
        dice_per_class: report.dice.clone(),
        iou_per_class: report.iou.clone(),
        hd95_per_class: report.hd95.clone(),
        compression_ratio,
        timings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Strides;

    fn small() -> PipelineConfig {
        PipelineConfig {
            dims: Dims::new(8, 32, 32),
            ddpm: super::super::DdpmConfig {
                steps: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_run_has_zero_ber_and_infinite_snr() {
        let r = run_pipeline(&small()).unwrap();
        assert_eq!(r.ber, Measure::Value(0.0));
        assert_eq!(r.snr_db, Measure::Value(f64::INFINITY));
        // Small organs lose their thin parts to the 2x4x4 downsampling at this size.
        assert!(r.dice.value().unwrap() > 0.6, "{r:?}");
    }

    #[test]
    fn same_config_same_metrics() {
        let mut cfg = small();
        cfg.channel = ChannelModel::BitFlip { p: 0.1 };
        let a = run_pipeline(&cfg).unwrap();
        let b = run_pipeline(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.dice_per_class, b.dice_per_class);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = small();
        let packet = {
            let spec = PhantomSpec::abdominal(0, cfg.dims);
            let (_, gt) = generate_phantom(&spec).unwrap();
            compress(
                &extract_segmentation(&gt),
                &EdgeVolume::zeros(cfg.dims),
                Strides::default(),
            )
            .unwrap()
        };
        let bad = DenoiseSettings {
            kernel: [2, 3, 3],
            ..Default::default()
        };
        let packet = packet
            .with_channel(ChannelModel::BitFlip { p: 0.1 })
            .unwrap();
        let err = receive_discrete(&packet, &bad).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Stage {
                    stage: Stage::Denoise,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn soft_view_layout() {
        let dims = Dims::new(1, 1, 2);
        let seg = LabelVolume::new(Grid::from_vec(dims, vec![1, 0]).unwrap(), 2).unwrap();
        let edges = EdgeVolume::new(Grid::from_vec(dims, vec![true, false]).unwrap());
        assert_eq!(
            latent_real_view(&seg, &edges).unwrap(),
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]
        );
        let (l, e) = hard_decisions(&[0.2, 0.9, 0.7, 0.1, 0.51, 0.5], 2, dims).unwrap();
        assert_eq!(l.labels(), &[1, 0]);
        assert_eq!(e.mask(), &[true, false]);
    }
}
