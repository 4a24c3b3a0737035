use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medsem::channel::ChannelModel;
use medsem::codec::{self, compress, LatentPacket};
use medsem::harness::volume_io::{read_volume, write_volume, VolumeData};
use medsem::harness::{
    self, fmt_g6, reconstruct, render_table, run_pipeline_full, run_sweep, to_csv, transmit,
    ConfigMap, CsvRow, PipelineConfig, SweepConfig,
};
use medsem::metrics::{self, segmentation_report, Measure, SegmentationReport, UNIT_SPACING};
use medsem::phantom::{generate_phantom, normalize_hu, PhantomSpec};
use medsem::semantics::{extract_edges, extract_segmentation, segment_by_intensity};
use medsem::{CtVolume, EdgeVolume, Error, ErrorKind, LabelVolume, Result, ValueDomain};

/// Semantic-communication simulator for synthetic CT volumes.
///
/// Every subcommand reads the same flat `key = value` config file; flags
/// override the matching keys.
#[derive(Parser)]
#[command(name = "medsem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an abdominal phantom; writes the CT volume to --out.
    Phantom(PhantomArgs),
    /// Canny edge map of a CT volume; writes an edge volume to --out.
    Extract(ExtractArgs),
    /// Downsample labels and edges into a latent packet.
    Compress(CompressArgs),
    /// Send a packet through its declared channel; prints bit error rates.
    Transmit(TransmitArgs),
    /// Upsample and denoise a received packet; writes labels to --out.
    Receive(ReceiveArgs),
    /// Regenerate a CT volume from labels and edges.
    Reconstruct(ReconstructArgs),
    /// Re-segment a reconstruction and score it against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the pipeline over a grid of channel parameters; writes CSV.
    Sweep(SweepArgs),
    /// Run the whole pipeline once; writes the metric CSV.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChannelArgs {
    /// none | awgn | bitflip | transition (overrides `channel.kind`).
    #[arg(long, value_name = "KIND")]
    channel: Option<String>,
    #[arg(long, value_name = "DB", allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long, value_name = "P")]
    flip_p: Option<f64>,
    /// Off-diagonal mass of the symmetric transition matrix.
    #[arg(long, value_name = "EPS")]
    transition_eps: Option<f64>,
}

#[derive(Args)]
struct PhantomArgs {
    #[command(flatten)]
    common: Common,
    /// Volume size as D,H,W.
    #[arg(long, value_name = "D,H,W")]
    dims: Option<String>,
    /// Also write the ground-truth labels here.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Write Hounsfield units instead of the normalized volume.
    #[arg(long)]
    hu: bool,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// CT volume (Hounsfield input is normalized first).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Label volume.
    #[arg(long, value_name = "PATH")]
    seg: PathBuf,
    /// Edge volume.
    #[arg(long, value_name = "PATH")]
    edges: PathBuf,
    /// Downsampling strides as D,H,W.
    #[arg(long, value_name = "D,H,W")]
    strides: Option<String>,
}

#[derive(Args)]
struct TransmitArgs {
    #[command(flatten)]
    common: Common,
    /// Latent packet.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
}

#[derive(Args)]
struct ReceiveArgs {
    #[command(flatten)]
    common: Common,
    /// Received latent packet.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Write the restored edge volume here.
    #[arg(long, value_name = "PATH")]
    edges_out: Option<PathBuf>,
    /// Skip the channel-aware denoisers.
    #[arg(long)]
    no_denoise: bool,
    /// Denoiser window as D,H,W (odd sizes).
    #[arg(long, value_name = "D,H,W")]
    kernel: Option<String>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH")]
    seg: PathBuf,
    #[arg(long, value_name = "PATH")]
    edges: PathBuf,
    /// Clean CT volume, needed by the gaussian predictor.
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
    /// Number of diffusion steps.
    #[arg(long, value_name = "T")]
    steps: Option<usize>,
    /// renderer | gaussian.
    #[arg(long, value_name = "NAME")]
    predictor: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Reconstructed CT volume.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Ground-truth labels.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    /// Clean CT volume; adds mse and psnr.
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// snr_db | flip_p.
    #[arg(long, value_name = "NAME")]
    param: Option<String>,
    /// Comma-separated parameter values.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    values: Option<String>,
    /// Runs per value, with seeds seed, seed+1, ...
    #[arg(long, value_name = "N")]
    repetitions: Option<usize>,
    /// Bypass the denoisers.
    #[arg(long)]
    no_denoise: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Bypass the denoisers.
    #[arg(long)]
    no_denoise: bool,
    /// Also write every intermediate volume and packet into this directory.
    #[arg(long, value_name = "DIR")]
    volumes: Option<PathBuf>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Format => 2,
        ErrorKind::Contract => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Extract(a) => extract(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Transmit(a) => transmit_cmd(a),
        Command::Receive(a) => receive(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

impl Common {
    fn map(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::parse(&std::fs::read_to_string(p)?)?,
            None => ConfigMap::default(),
        };
        if let Some(s) = self.seed {
            map.set("seed", s);
        }
        Ok(map)
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }
}

impl ChannelArgs {
    fn apply(&self, map: &mut ConfigMap) {
        let pairs = [
            ("channel.snr_db", self.snr_db),
            ("channel.flip_p", self.flip_p),
            ("channel.transition_eps", self.transition_eps),
        ];
        if let Some(k) = &self.channel {
            map.set("channel.kind", k);
        }
        for (key, v) in pairs {
            if let Some(v) = v {
                map.set(key, v);
            }
        }
    }
}

fn set_triple(map: &mut ConfigMap, keys: [&str; 3], value: &str) -> Result<()> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected D,H,W, got `{value}`")));
    }
    for (k, v) in keys.iter().zip(parts) {
        map.set(k, v);
    }
    Ok(())
}

fn read_ct(path: &Path) -> Result<CtVolume> {
    match read_volume(path)? {
        VolumeData::Ct(v) => Ok(v),
        other => Err(wrong_kind(path, "ct", &other)),
    }
}

fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read_volume(path)? {
        VolumeData::Labels(v) => Ok(v),
        other => Err(wrong_kind(path, "labels", &other)),
    }
}

fn read_edges(path: &Path) -> Result<EdgeVolume> {
    match read_volume(path)? {
        VolumeData::Edges(v) => Ok(v),
        other => Err(wrong_kind(path, "edges", &other)),
    }
}

fn wrong_kind(path: &Path, want: &str, got: &VolumeData) -> Error {
    Error::malformed(format!(
        "{}: expected a {want} volume, found {}",
        path.display(),
        got.kind_name()
    ))
}

fn read_packet(path: &Path) -> Result<LatentPacket> {
    codec::deserialize(&std::fs::read(path)?)
}

fn normalized(ct: CtVolume) -> Result<CtVolume> {
    match ct.domain() {
        ValueDomain::Normalized => Ok(ct),
        ValueDomain::RawHu => normalize_hu(&ct),
    }
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let mut map = a.common.map()?;
    if let Some(d) = &a.dims {
        set_triple(
            &mut map,
            ["phantom.depth", "phantom.height", "phantom.width"],
            d,
        )?;
    }
    let cfg = PipelineConfig::from_map(&map)?;
    let out = a.common.out()?;
    let (raw, gt) = generate_phantom(&PhantomSpec::abdominal(cfg.seed, cfg.dims))?;
    let ct = if a.hu { raw } else { normalize_hu(&raw)? };
    write_volume(out, &VolumeData::Ct(ct))?;
    if let Some(p) = &a.labels {
        write_volume(p, &VolumeData::Labels(gt))?;
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = PipelineConfig::from_map(&a.common.map()?)?;
    let ct = normalized(read_ct(&a.input)?)?;
    let edges = extract_edges(&ct, &cfg.canny)?;
    write_volume(a.common.out()?, &VolumeData::Edges(edges))
}

fn compress_cmd(a: CompressArgs) -> Result<()> {
    let mut map = a.common.map()?;
    a.channel.apply(&mut map);
    if let Some(s) = &a.strides {
        map.set("codec.strides", s);
    }
    let cfg = PipelineConfig::from_map(&map)?;
    let seg = extract_segmentation(&read_labels(&a.seg)?);
    let edges = read_edges(&a.edges)?;
    let packet = compress(&seg, &edges, cfg.strides)?.with_channel(cfg.channel)?;
    std::fs::write(a.common.out()?, codec::serialize(&packet))?;
    Ok(())
}

fn transmit_cmd(a: TransmitArgs) -> Result<()> {
    let cfg = PipelineConfig::from_map(&a.common.map()?)?;
    let packet = read_packet(&a.input)?;
    let tx = transmit(&packet, cfg.seed)?;
    std::fs::write(a.common.out()?, codec::serialize(&tx.received))?;
    let mut stdout = std::io::stdout().lock();
    for (name, m) in [
        ("ber", tx.ber),
        ("ber_seg", tx.ber_seg),
        ("ber_edge", tx.ber_edge),
        ("snr_db", tx.snr_db),
    ] {
        writeln!(stdout, "{name},{}", measure_str(m))?;
    }
    Ok(())
}

fn receive(a: ReceiveArgs) -> Result<()> {
    let mut map = a.common.map()?;
    if a.no_denoise {
        map.set("denoise.enabled", false);
    }
    if let Some(k) = &a.kernel {
        map.set("denoise.kernel", k);
    }
    let cfg = PipelineConfig::from_map(&map)?;
    let packet = read_packet(&a.input)?;
    let (seg, edges) = harness::receive_discrete(&packet, &cfg.denoise)?;
    write_volume(a.common.out()?, &VolumeData::Labels(seg))?;
    if let Some(p) = &a.edges_out {
        write_volume(p, &VolumeData::Edges(edges))?;
    }
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let mut map = a.common.map()?;
    if let Some(t) = a.steps {
        map.set("ddpm.steps", t);
    }
    if let Some(p) = &a.predictor {
        map.set("ddpm.predictor", p);
    }
    let seg = read_labels(&a.seg)?;
    let d = seg.dims();
    map.set("phantom.depth", d.depth);
    map.set("phantom.height", d.height);
    map.set("phantom.width", d.width);
    let cfg = PipelineConfig::from_map(&map)?;
    let edges = read_edges(&a.edges)?;
    let reference = a
        .reference
        .as_deref()
        .map(read_ct)
        .transpose()?
        .map(normalized)
        .transpose()?;
    let ct = reconstruct(&cfg, &seg, &edges, reference.as_ref())?;
    write_volume(a.common.out()?, &VolumeData::Ct(ct))
}

fn measure_str(m: Measure) -> String {
    match m {
        Measure::Value(v) => fmt_g6(v),
        Measure::Fail => "Fail".into(),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = PipelineConfig::from_map(&a.common.map()?)?;
    let recon = normalized(read_ct(&a.input)?)?;
    let gt = read_labels(&a.gt)?;
    let pred = segment_by_intensity(&recon, &render_table(&cfg))?;
    let report = segmentation_report(&pred, &gt, UNIT_SPACING, cfg.hd95_mode)?;
    let mut rows = vec![
        (
            "dice".to_string(),
            SegmentationReport::foreground_mean(&report.dice),
        ),
        (
            "iou".to_string(),
            SegmentationReport::foreground_mean(&report.iou),
        ),
        ("miou_w".to_string(), report.miou_w),
        (
            "hd95".to_string(),
            SegmentationReport::foreground_mean(&report.hd95),
        ),
    ];
    if let Some(p) = &a.reference {
        let reference = normalized(read_ct(p)?)?;
        let (x, y) = (recon.to_f64(), reference.to_f64());
        rows.push(("mse".into(), Measure::Value(metrics::mse(&x, &y)?)));
        rows.push(("psnr".into(), Measure::Value(metrics::psnr(&x, &y, 1.0)?)));
    }
    for (name, col) in [
        ("dice", &report.dice),
        ("iou", &report.iou),
        ("hd95", &report.hd95),
    ] {
        for (c, m) in col.iter().enumerate() {
            rows.push((format!("{name}_{c}"), *m));
        }
    }
    let mut text = String::from("metric,value\n");
    for (name, m) in rows {
        text.push_str(&format!("{name},{}\n", measure_str(m)));
    }
    emit(a.common.out.as_deref(), &text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut map = a.common.map()?;
    if let Some(p) = &a.param {
        map.set("sweep.param", p);
    }
    if let Some(v) = &a.values {
        map.set("sweep.values", v);
    }
    if let Some(r) = a.repetitions {
        map.set("sweep.repetitions", r);
    }
    if a.no_denoise {
        map.set("denoise.enabled", false);
    }
    let cfg = SweepConfig::from_map(&map)?;
    emit(a.common.out.as_deref(), &to_csv(&run_sweep(&cfg)?))
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut map = a.common.map()?;
    a.channel.apply(&mut map);
    if a.no_denoise {
        map.set("denoise.enabled", false);
    }
    let cfg = PipelineConfig::from_map(&map)?;
    let run = run_pipeline_full(&cfg)?;
    let param_name = match &cfg.channel {
        ChannelModel::None => "none",
        ChannelModel::Awgn { .. } => "snr_db",
        ChannelModel::BitFlip { .. } => "flip_p",
        ChannelModel::Transition(_) => "transition_eps",
    };
    let param_value = match &cfg.channel {
        ChannelModel::Transition(t) => 1.0 - t.get(0, 0),
        other => other.parameter(),
    };
    let rows: Vec<CsvRow> = run
        .record
        .values()
        .into_iter()
        .map(|(metric, value)| CsvRow {
            seed: cfg.seed,
            channel_kind: cfg.channel.kind().name(),
            param_name,
            param_value,
            metric,
            value,
        })
        .collect();
    if let Some(dir) = &a.volumes {
        std::fs::create_dir_all(dir)?;
        let vols = [
            ("ct.vol", VolumeData::Ct(run.ct)),
            ("gt.vol", VolumeData::Labels(run.ground_truth)),
            ("edges.vol", VolumeData::Edges(run.edges)),
            ("restored_seg.vol", VolumeData::Labels(run.restored_seg)),
            ("restored_edges.vol", VolumeData::Edges(run.restored_edges)),
            ("recon.vol", VolumeData::Ct(run.reconstruction)),
            ("pred.vol", VolumeData::Labels(run.prediction)),
        ];
        for (name, v) in &vols {
            write_volume(&dir.join(name), v)?;
        }
        std::fs::write(dir.join("packet.dscp"), codec::serialize(&run.packet))?;
        std::fs::write(
            dir.join("received.dscp"),
            codec::serialize(&run.transmission.received),
        )?;
    }
    emit(a.common.out.as_deref(), &to_csv(&rows))
}
