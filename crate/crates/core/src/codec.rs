//! Strided compression of the semantic volumes and the latent packet format.
//!
//! Compression keeps the voxel at `(d'·s_d, h'·s_h, w'·s_w)` for every latent
//! coordinate, for both the label and the edge volume.
//!
//! Packet wire format, all integers little-endian:
//!
//! ```text
//! "DSCP" | version u8 = 1 | num_classes u16 | strides u8×3 (d, h, w)
//! | original dims u32×3 (D, H, W)
//! | seg payload length u64 | seg payload (⌈log2 C⌉ bits per label)
//! | edge payload length u64 | edge payload (1 bit per voxel)
//! | channel kind u8 (0 none, 1 awgn, 2 bitflip, 3 transition)
//! | parameter f64 (SNR dB, flip p, else 0) | [C² f64 row-major, kind 3 only]
//! ```
//!
//! Payloads are row-major `(d, h, w)`, LSB-first, zero-padded to a byte.

use crate::bits::{self, bits_per_label};
use crate::channel::{ChannelKind, ChannelModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::semantics::SegVolume;
use crate::volume::{Dims, EdgeVolume, Grid, LabelVolume};
use crate::wire::{check_padding, Reader};

pub const PACKET_MAGIC: [u8; 4] = *b"DSCP";
pub const PACKET_VERSION: u8 = 1;
/// Bits per voxel of the normalized CT volume in the compression-ratio model.
pub const ORIGINAL_BITS_PER_VOXEL: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strides {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for Strides {
    fn default() -> Self {
        Self::new(2, 4, 4)
    }
}

impl Strides {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
        }
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    /// Latent dims for a volume of `dims`; errors if a stride does not divide.
    pub fn latent_dims(&self, dims: Dims) -> Result<Dims> {
        let s = self.as_array();
        let e = dims.as_array();
        let mut out = [0; 3];
        for a in 0..3 {
            if s[a] == 0 || s[a] > u8::MAX as usize {
                return Err(Error::invalid(format!(
                    "stride {} must be in 1..=255",
                    s[a]
                )));
            }
            if !e[a].is_multiple_of(s[a]) {
                return Err(Error::invalid(format!(
                    "stride {} does not divide extent {} of {dims}",
                    s[a], e[a]
                )));
            }
            out[a] = e[a] / s[a];
        }
        Ok(Dims::from(out))
    }

    /// Stride that maps `latent` onto `target`, if every extent divides exactly.
    pub fn between(latent: Dims, target: Dims) -> Result<Self> {
        let (l, t) = (latent.as_array(), target.as_array());
        let mut s = [0; 3];
        for a in 0..3 {
            if l[a] == 0 || t[a] % l[a] != 0 {
                return Err(Error::invalid(format!(
                    "target {target} is not an integer multiple of latent {latent}"
                )));
            }
            s[a] = t[a] / l[a];
        }
        Ok(Self::new(s[0], s[1], s[2]))
    }
}

impl std::fmt::Display for Strides {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.depth, self.height, self.width)
    }
}

/// Compressed semantic payload plus the declared channel condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPacket {
    seg_latent: LabelVolume,
    edge_latent: EdgeVolume,
    original_dims: Dims,
    strides: Strides,
    channel: ChannelModel,
}

impl LatentPacket {
    pub fn new(
        seg_latent: LabelVolume,
        edge_latent: EdgeVolume,
        original_dims: Dims,
        strides: Strides,
        channel: ChannelModel,
    ) -> Result<Self> {
        let latent = strides.latent_dims(original_dims)?;
        if seg_latent.dims() != latent || edge_latent.dims() != latent {
            return Err(Error::dims(format!(
                "latents must be {latent} for {original_dims} with strides {strides}"
            )));
        }
        channel.validate()?;
        if let ChannelModel::Transition(t) = &channel {
            if t.size() != seg_latent.num_classes() as usize {
                return Err(Error::dims(
                    "transition matrix size differs from class count",
                ));
            }
        }
        Ok(Self {
            seg_latent,
            edge_latent,
            original_dims,
            strides,
            channel,
        })
    }

    pub fn seg_latent(&self) -> &LabelVolume {
        &self.seg_latent
    }

    pub fn edge_latent(&self) -> &EdgeVolume {
        &self.edge_latent
    }

    pub fn original_dims(&self) -> Dims {
        self.original_dims
    }

    pub fn latent_dims(&self) -> Dims {
        self.seg_latent.dims()
    }

    pub fn strides(&self) -> Strides {
        self.strides
    }

    pub fn num_classes(&self) -> u16 {
        self.seg_latent.num_classes()
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn with_channel(self, channel: ChannelModel) -> Result<Self> {
        Self::new(
            self.seg_latent,
            self.edge_latent,
            self.original_dims,
            self.strides,
            channel,
        )
    }

    /// Replace the latents, keeping geometry and channel declaration.
    pub fn with_latents(&self, seg_latent: LabelVolume, edge_latent: EdgeVolume) -> Result<Self> {
        Self::new(
            seg_latent,
            edge_latent,
            self.original_dims,
            self.strides,
            self.channel.clone(),
        )
    }

    /// `(original_bits, latent_bits)` under the documented bit model.
    pub fn bit_budget(&self) -> (u64, u64) {
        let original = self.original_dims.len() as u64 * ORIGINAL_BITS_PER_VOXEL;
        let per_voxel = bits_per_label(self.num_classes()) as u64 + 1;
        (original, self.latent_dims().len() as u64 * per_voxel)
    }

    pub fn compression_ratio(&self) -> Result<f64> {
        let (o, l) = self.bit_budget();
        compression_ratio(o, l)
    }
}

fn subsample<T: Copy>(src: &Grid<T>, strides: Strides, latent: Dims) -> Grid<T> {
    Grid::from_fn(latent, |d, h, w| {
        *src.get(d * strides.depth, h * strides.height, w * strides.width)
    })
}

/// Keep every `stride`-th voxel of the segmentation and edge volumes.
pub fn compress(seg: &SegVolume, edge: &EdgeVolume, strides: Strides) -> Result<LatentPacket> {
    let dims = seg.dims();
    if edge.dims() != dims {
        return Err(Error::dims(format!(
            "segmentation is {dims} but edge volume is {}",
            edge.dims()
        )));
    }
    let latent = strides.latent_dims(dims)?;
    let seg_latent = LabelVolume::new(
        subsample(seg.labels().grid(), strides, latent),
        seg.num_classes(),
    )?;
    let edge_latent = EdgeVolume::new(subsample(edge.grid(), strides, latent));
    LatentPacket::new(seg_latent, edge_latent, dims, strides, ChannelModel::None)
}

/// `original_bits / latent_bits`.
pub fn compression_ratio(original_bits: u64, latent_bits: u64) -> Result<f64> {
    if latent_bits == 0 {
        return Err(Error::invalid("latent bit count must be positive"));
    }
    Ok(original_bits as f64 / latent_bits as f64)
}

pub fn serialize(packet: &LatentPacket) -> Vec<u8> {
    let c = packet.num_classes();
    let width = bits_per_label(c);
    let seg = bits::pack_labels(packet.seg_latent.labels(), width);
    let edge = bits::pack_bools(packet.edge_latent.mask());
    let mut out = Vec::with_capacity(48 + seg.len() + edge.len());
    out.extend_from_slice(&PACKET_MAGIC);
    out.push(PACKET_VERSION);
    out.extend_from_slice(&c.to_le_bytes());
    for s in packet.strides.as_array() {
        out.push(s as u8);
    }
    for e in packet.original_dims.as_array() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&(seg.len() as u64).to_le_bytes());
    out.extend_from_slice(&seg);
    out.extend_from_slice(&(edge.len() as u64).to_le_bytes());
    out.extend_from_slice(&edge);
    out.push(packet.channel.kind() as u8);
    out.extend_from_slice(&packet.channel.parameter().to_le_bytes());
    if let ChannelModel::Transition(t) = &packet.channel {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn payload<'a>(r: &mut Reader<'a>, expected: usize, what: &str) -> Result<&'a [u8]> {
    let len = r.u64()?;
    if len != expected as u64 {
        return Err(Error::malformed(format!(
            "{what} payload is {len} bytes, expected {expected}"
        )));
    }
    r.take(expected)
}

pub fn deserialize(bytes: &[u8]) -> Result<LatentPacket> {
    let mut r = Reader::new(bytes);
    r.magic(PACKET_MAGIC)?;
    let version = r.u8()?;
    if version != PACKET_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let c = r.u16()?;
    if c == 0 || c > crate::volume::MAX_CLASSES {
        return Err(Error::malformed(format!("class count {c} out of range")));
    }
    let strides = Strides::new(r.u8()? as usize, r.u8()? as usize, r.u8()? as usize);
    let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if dims.is_empty() {
        return Err(Error::malformed(format!(
            "original dims {dims} have a zero extent"
        )));
    }
    let latent = strides
        .latent_dims(dims)
        .map_err(|e| Error::malformed(format!("dims/stride inconsistency: {e}")))?;
    let n = latent.len();
    let width = bits_per_label(c);

    let seg_bytes = payload(&mut r, bits::packed_len(n * width as usize), "segmentation")?;
    check_padding(seg_bytes, n * width as usize)?;
    let labels = bits::unpack_labels(seg_bytes, n, width).expect("length checked");
    if labels.iter().any(|&l| l as u16 >= c) {
        return Err(Error::malformed(format!("label outside {c} classes")));
    }
    let edge_bytes = payload(&mut r, bits::packed_len(n), "edge")?;
    check_padding(edge_bytes, n)?;
    let mask = bits::unpack_bools(edge_bytes, n).expect("length checked");

    let kind = r.u8()?;
    let param = r.f64()?;
    let channel = match ChannelKind::from_u8(kind) {
        Some(ChannelKind::None) => ChannelModel::None,
        Some(ChannelKind::Awgn) => ChannelModel::Awgn { snr_db: param },
        Some(ChannelKind::BitFlip) => ChannelModel::BitFlip { p: param },
        Some(ChannelKind::Transition) => {
            let size = c as usize;
            let mut m = Vec::with_capacity(size * size);
            for _ in 0..size * size {
                m.push(r.f64()?);
            }
            ChannelModel::Transition(
                TransitionMatrix::new(size, m).map_err(|e| Error::malformed(e.to_string()))?,
            )
        }
        None => return Err(Error::malformed(format!("unknown channel kind {kind}"))),
    };
    if matches!(channel, ChannelModel::None | ChannelModel::Transition(_)) && param != 0.0 {
        return Err(Error::malformed(
            "channel parameter must be zero for this kind",
        ));
    }
    r.finish()?;

    let seg_latent = LabelVolume::new(Grid::from_vec(latent, labels)?, c)?;
    let edge_latent = EdgeVolume::new(Grid::from_vec(latent, mask)?);
    LatentPacket::new(seg_latent, edge_latent, dims, strides, channel)
        .map_err(|e| Error::malformed(e.to_string()))
}
