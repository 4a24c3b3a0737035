//! Noisy channel models and BER/SNR measurement.
//!
//! Three corruption models act on the transmitted latents:
//!
//! * AWGN on a real-valued view, `z' = z + n`, `n ~ N(0, σ²)`, with
//!   `σ² = P_signal · 10^(-SNR_dB/10)` and `P_signal = mean(z²)`.
//! * Independent bit flips with probability `p`.
//! * Label substitution through a row-stochastic transition matrix `T`,
//!   `P(received = j | sent = k) = T[k][j]`.
//!
//! Each element's draw is keyed by `(seed, element index)` through
//! [`Stream`], so results are identical for any partition of the work.

use crate::bits::{self, bits_per_label};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{tags, Stream};
use crate::volume::{Grid, LabelVolume};

/// Row-stochastic `C × C` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

/// Allowed deviation of a row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl TransitionMatrix {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::invalid(format!(
                "transition matrix of size {size} needs {} entries, got {}",
                size * size,
                data.len()
            )));
        }
        for (k, row) in data.chunks(size).enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::invalid(format!(
                    "row {k} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row {k} sums to {sum}, not 1")));
            }
        }
        Ok(Self { size, data })
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for k in 0..size {
            data[k * size + k] = 1.0;
        }
        Self { size, data }
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            size,
            data: vec![1.0 / size as f64; size * size],
        }
    }

    /// Keep the label with probability `1 - error_rate`, otherwise move to one
    /// of the other classes uniformly.
    pub fn symmetric(size: usize, error_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::invalid(format!(
                "error rate {error_rate} outside [0, 1]"
            )));
        }
        if size == 1 {
            return Ok(Self::identity(1));
        }
        let off = error_rate / (size - 1) as f64;
        let mut data = vec![off; size * size];
        for k in 0..size {
            data[k * size + k] = 1.0 - error_rate;
        }
        Self::new(size, data)
    }

    /// Effective label channel when each label is sent as `⌈log2 C⌉` bits
    /// through a bit-flip channel and received codes `r ≥ C` decode as `r mod C`.
    pub fn from_bit_flips(p: f64, num_classes: u16) -> Result<Self> {
        check_probability(p)?;
        let size = num_classes as usize;
        if size == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        let width = bits_per_label(num_classes);
        let codes = 1usize << width;
        let mut data = vec![0.0; size * size];
        for k in 0..size {
            for r in 0..codes {
                let flips = ((k ^ r) as u32).count_ones() as i32;
                let prob = p.powi(flips) * (1.0 - p).powi(width as i32 - flips);
                data[k * size + r % size] += prob;
            }
        }
        Self::new(size, data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, sent: usize, received: usize) -> f64 {
        self.data[sent * self.size + received]
    }

    pub fn row(&self, sent: usize) -> &[f64] {
        &self.data[sent * self.size..(sent + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Wire tag of a channel model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ChannelKind {
    None = 0,
    Awgn = 1,
    BitFlip = 2,
    Transition = 3,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::None => "none",
            ChannelKind::Awgn => "awgn",
            ChannelKind::BitFlip => "bitflip",
            ChannelKind::Transition => "transition",
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => ChannelKind::None,
            1 => ChannelKind::Awgn,
            2 => ChannelKind::BitFlip,
            3 => ChannelKind::Transition,
            _ => return None,
        })
    }
}

/// Declared channel condition: what the receiver is told about the link.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ChannelModel {
    #[default]
    None,
    Awgn {
        snr_db: f64,
    },
    BitFlip {
        p: f64,
    },
    Transition(TransitionMatrix),
}

impl ChannelModel {
    pub fn kind(&self) -> ChannelKind {
        match self {
            ChannelModel::None => ChannelKind::None,
            ChannelModel::Awgn { .. } => ChannelKind::Awgn,
            ChannelModel::BitFlip { .. } => ChannelKind::BitFlip,
            ChannelModel::Transition(_) => ChannelKind::Transition,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelModel::None | ChannelModel::Transition(_) => Ok(()),
            ChannelModel::Awgn { snr_db } if snr_db.is_finite() => Ok(()),
            ChannelModel::Awgn { snr_db } => {
                Err(Error::invalid(format!("SNR {snr_db} dB is not finite")))
            }
            ChannelModel::BitFlip { p } => check_probability(*p),
        }
    }

    /// The single scalar parameter (SNR in dB or flip probability), 0 otherwise.
    pub fn parameter(&self) -> f64 {
        match self {
            ChannelModel::Awgn { snr_db } => *snr_db,
            ChannelModel::BitFlip { p } => *p,
            _ => 0.0,
        }
    }
}

/// A channel model plus the seed that drives its randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub model: ChannelModel,
    pub seed: u64,
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "flip probability {p} outside [0, 1]"
        )))
    }
}

/// Mean square of a signal.
pub fn signal_power(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64
}

/// Noise standard deviation for a given signal power and SNR.
pub fn noise_sigma(signal_power: f64, snr_db: f64) -> f64 {
    (signal_power * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Add white Gaussian noise scaled to `snr_db` relative to the signal's mean square.
pub fn awgn_transmit(z: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::invalid("cannot transmit an empty signal"));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR {snr_db} dB is not finite")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("signal contains non-finite values".into()));
    }
    let power = signal_power(z);
    if power == 0.0 {
        return Err(Error::Numeric(
            "all-zero signal has undefined SNR scaling".into(),
        ));
    }
    let sigma = noise_sigma(power, snr_db);
    let stream = Stream::new(seed).derive(tags::AWGN);
    Ok(exec::map_range(z.len(), |i| {
        z[i] + sigma * stream.normal_at(i as u64)
    }))
}

/// Flip each bit independently with probability `p`.
pub fn bitflip_transmit(bits: &[bool], p: f64, seed: u64) -> Result<Vec<bool>> {
    check_probability(p)?;
    let stream = Stream::new(seed).derive(tags::BITFLIP);
    Ok(exec::map_range(bits.len(), |i| {
        bits[i] ^ (stream.uniform_at(i as u64) < p)
    }))
}

/// Send labels as packed `⌈log2 C⌉`-bit codes through a bit-flip channel.
/// Received codes at or above `C` decode as `code mod C`.
pub fn bitflip_labels(labels: &[u8], num_classes: u16, p: f64, seed: u64) -> Result<Vec<u8>> {
    check_probability(p)?;
    let width = bits_per_label(num_classes);
    if width == 0 {
        return Ok(labels.to_vec());
    }
    let stream = Stream::new(seed).derive(tags::BITFLIP_SEG);
    let packed = bits::pack_labels(labels, width);
    let nbits = labels.len() * width as usize;
    let sent = bits::unpack_bools(&packed, nbits).expect("packed length matches");
    let flipped: Vec<bool> =
        exec::map_range(nbits, |i| sent[i] ^ (stream.uniform_at(i as u64) < p));
    let received = bits::unpack_labels(&bits::pack_bools(&flipped), labels.len(), width)
        .expect("packed length matches");
    Ok(received
        .into_iter()
        .map(|r| (r as u16 % num_classes) as u8)
        .collect())
}

/// Draw each voxel's received label from row `T[label]`.
pub fn label_transmit(
    labels: &LabelVolume,
    t: &TransitionMatrix,
    seed: u64,
) -> Result<LabelVolume> {
    if t.size() != labels.num_classes() as usize {
        return Err(Error::dims(format!(
            "transition matrix is {0}x{0} but volume has {1} classes",
            t.size(),
            labels.num_classes()
        )));
    }
    let received = transition_labels(labels.labels(), t, seed)?;
    LabelVolume::new(
        Grid::from_vec(labels.dims(), received)?,
        labels.num_classes(),
    )
}

/// Slice-level form of [`label_transmit`].
pub fn transition_labels(labels: &[u8], t: &TransitionMatrix, seed: u64) -> Result<Vec<u8>> {
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= t.size()) {
        return Err(Error::invalid(format!(
            "label {l} outside transition matrix"
        )));
    }
    let stream = Stream::new(seed).derive(tags::LABELS);
    Ok(exec::map_range(labels.len(), |i| {
        let row = t.row(labels[i] as usize);
        let u = stream.uniform_at(i as u64);
        let mut cum = 0.0;
        let mut last_nonzero = 0;
        for (j, &pj) in row.iter().enumerate() {
            if pj > 0.0 {
                last_nonzero = j;
                cum += pj;
                if u < cum {
                    return j as u8;
                }
            }
        }
        last_nonzero as u8
    }))
}

/// Fraction of positions where `received` differs from `sent`.
pub fn measure_ber<T: PartialEq>(sent: &[T], received: &[T]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::dims(format!(
            "sent {} symbols but received {}",
            sent.len(),
            received.len()
        )));
    }
    if sent.is_empty() {
        return Err(Error::invalid("BER of an empty sequence is undefined"));
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

/// `10·log10(mean(clean²) / mean((noisy − clean)²))`.
///
/// Identical inputs give `f64::INFINITY`.
pub fn measure_snr_db(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::dims("clean and noisy signals differ in length"));
    }
    if clean.is_empty() {
        return Err(Error::invalid("SNR of an empty signal is undefined"));
    }
    let ps = signal_power(clean);
    if ps == 0.0 {
        return Err(Error::Numeric("clean signal has zero power".into()));
    }
    let pn = clean
        .iter()
        .zip(noisy)
        .map(|(c, n)| (n - c) * (n - c))
        .sum::<f64>()
        / clean.len() as f64;
    if pn == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (ps / pn).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;

    #[test]
    fn sigma_from_snr() {
        assert!((noise_sigma(1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((noise_sigma(1.0, 10.0).powi(2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn awgn_rejects_zero_signal() {
        assert!(awgn_transmit(&[0.0; 8], 10.0, 1).is_err());
        assert!(awgn_transmit(&[], 10.0, 1).is_err());
    }

    #[test]
    fn awgn_measured_snr_and_noise_mean() {
        let n = 1_000_000;
        let z: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let rx = awgn_transmit(&z, 5.0, 9).unwrap();
        let snr = measure_snr_db(&z, &rx).unwrap();
        assert!((snr - 5.0).abs() < 0.2, "snr {snr}");
        let sigma = noise_sigma(1.0, 5.0);
        let mean = rx.iter().zip(&z).map(|(r, c)| r - c).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn bitflip_extremes() {
        let bits: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        assert_eq!(bitflip_transmit(&bits, 0.0, 4).unwrap(), bits);
        let inv: Vec<bool> = bits.iter().map(|b| !b).collect();
        assert_eq!(bitflip_transmit(&bits, 1.0, 4).unwrap(), inv);
        assert!(bitflip_transmit(&bits, 1.5, 4).is_err());
        assert!(bitflip_transmit(&bits, -0.1, 4).is_err());
    }

    #[test]
    fn bitflip_rate() {
        let bits = vec![false; 1_000_000];
        let rx = bitflip_transmit(&bits, 0.1, 17).unwrap();
        let ber = measure_ber(&bits, &rx).unwrap();
        assert!((0.099..=0.101).contains(&ber), "ber {ber}");
    }

    #[test]
    fn transitions_identity_and_swap() {
        let dims = Dims::new(2, 3, 4);
        let labels =
            LabelVolume::new(Grid::from_fn(dims, |d, h, w| ((d + h + w) % 2) as u8), 2).unwrap();
        let same = label_transmit(&labels, &TransitionMatrix::identity(2), 3).unwrap();
        assert_eq!(same, labels);
        let swap = TransitionMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let swapped = label_transmit(&labels, &swap, 3).unwrap();
        for (a, b) in labels.labels().iter().zip(swapped.labels()) {
            assert_eq!(*b, 1 - a);
        }
        assert!(label_transmit(&labels, &TransitionMatrix::identity(3), 3).is_err());
    }

    #[test]
    fn uniform_transition_frequencies() {
        let c = 4usize;
        let n = 1_000_000;
        let labels: Vec<u8> = (0..n).map(|i| (i % c) as u8).collect();
        let rx = transition_labels(&labels, &TransitionMatrix::uniform(c), 23).unwrap();
        let mut counts = vec![0usize; c];
        for &r in &rx {
            counts[r as usize] += 1;
        }
        for k in counts {
            assert!((k as f64 / n as f64 - 0.25).abs() < 0.005);
        }
    }

    #[test]
    fn transition_matrix_validation() {
        assert!(TransitionMatrix::new(2, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(TransitionMatrix::new(2, vec![1.5, -0.5, 0.0, 1.0]).is_err());
        assert!(TransitionMatrix::new(2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn bit_flip_matrix_two_classes() {
        let t = TransitionMatrix::from_bit_flips(0.2, 2).unwrap();
        assert_eq!(t.as_slice(), &[0.8, 0.2, 0.2, 0.8]);
        let t = TransitionMatrix::from_bit_flips(0.1, 4).unwrap();
        assert!((t.get(0, 0) - 0.81).abs() < 1e-15);
        assert!((t.get(0, 3) - 0.01).abs() < 1e-15);
        let t = TransitionMatrix::from_bit_flips(0.1, 3).unwrap();
        // code 3 folds onto class 0
        assert!((t.get(0, 0) - 0.82).abs() < 1e-15);
    }

    #[test]
    fn ber_examples() {
        assert_eq!(measure_ber(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(measure_ber(&[true, false], &[false, true]).unwrap(), 1.0);
        let a = [0u8, 1, 1, 0, 1, 0, 0, 1];
        let b = [0u8, 1, 0, 0, 1, 1, 0, 1];
        assert_eq!(measure_ber(&a, &b).unwrap(), 0.25);
        assert!(measure_ber::<u8>(&[], &[]).is_err());
        assert!(measure_ber(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn snr_examples() {
        let clean = vec![1.0, -1.0, 1.0, -1.0];
        let doubled: Vec<f64> = clean.iter().map(|v| 2.0 * v).collect();
        assert!(measure_snr_db(&clean, &doubled).unwrap().abs() < 1e-12);
        let noisy: Vec<f64> = clean.iter().map(|v| v + 0.1).collect();
        assert!((measure_snr_db(&clean, &noisy).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(measure_snr_db(&clean, &clean).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn flipping_twice_with_same_seed_restores(bits in proptest::collection::vec(any::<bool>(), 1..500), p in 0.0f64..=1.0, seed in any::<u64>()) {
            let once = bitflip_transmit(&bits, p, seed).unwrap();
            prop_assert_eq!(bitflip_transmit(&once, p, seed).unwrap(), bits);
        }

        #[test]
        fn label_bitflip_stays_in_range(labels in proptest::collection::vec(0u8..5, 1..200), p in 0.0f64..=1.0, seed in any::<u64>()) {
            let rx = bitflip_labels(&labels, 5, p, seed).unwrap();
            prop_assert!(rx.iter().all(|&l| l < 5));
            if p == 0.0 {
                prop_assert_eq!(rx, labels);
            }
        }
    }
}
