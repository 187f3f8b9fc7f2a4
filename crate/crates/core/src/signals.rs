//! Synthetic restoration benchmark and evaluation metrics.
//!
//! Clean signals are sums of a few sinusoids under a piecewise-smooth
//! amplitude envelope with strong level variation, normalized to unit peak;
//! degraded observations add noise scaled to an exact SNR. Generation is a
//! pure function of `(spec.seed, index)`, with train and test indices on
//! disjoint derived streams.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal_vec, StreamKind};
use crate::scalar::Scalar;

/// Segmental-SNR defaults: 30 ms at 16 kHz maps to 32 samples at toy scale,
/// 75% overlap, per-segment clip range [-10, 35] dB.
pub const SSNR_SEG_LEN: usize = 32;
pub const SSNR_OVERLAP: f64 = 0.75;
pub const SSNR_LO_DB: f64 = -10.0;
pub const SSNR_HI_DB: f64 = 35.0;

/// Sentinel SNR for a noiseless pair.
pub const SNR_CLEAN: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            other => Err(Error::Config(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// Dataset description; the whole benchmark is derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 2048,
            n_test: 256,
            d: 256,
            train_snrs: vec![0.0, 5.0, 10.0, 15.0],
            test_snrs: vec![2.5, 7.5, 12.5, 17.5],
            noise_kind: NoiseKind::White,
            seed: 42,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_snrs.is_empty() || self.test_snrs.is_empty() {
            return Err(Error::InvalidArgument("SNR lists must be nonempty".into()));
        }
        if self.d < 8 {
            return Err(Error::InvalidArgument("signal length too short".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("empty dataset split".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_test
    }

    /// Derived per-index generator seed; train and test live on different
    /// purpose streams so the splits cannot collide.
    pub fn pair_seed(&self, index: usize) -> u64 {
        if index < self.n_train {
            crate::rng::stream_seed(self.seed, StreamKind::DataTrain, index as u64, 0)
        } else {
            crate::rng::stream_seed(
                self.seed,
                StreamKind::DataTest,
                (index - self.n_train) as u64,
                0,
            )
        }
    }
}

/// Generator metadata recorded with each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeta {
    /// (cycles over the window, amplitude, phase) per carrier.
    pub carriers: Vec<(f64, f64, f64)>,
    pub envelope_knots: Vec<f64>,
}

/// A clean signal with its degraded observation.
#[derive(Debug, Clone)]
pub struct SignalPair<S> {
    pub x0: Vec<S>,
    pub y: Vec<S>,
    pub snr_db: f64,
    pub seed: u64,
    pub meta: PairMeta,
}

/// Deterministically generates the pair at `index`.
pub fn generate_pair<S: Scalar>(spec: &DatasetSpec, index: usize) -> Result<SignalPair<S>> {
    spec.validate()?;
    if index >= spec.total() {
        return Err(Error::InvalidArgument(format!(
            "index {index} outside dataset of {}",
            spec.total()
        )));
    }
    let snr_db = if index < spec.n_train {
        spec.train_snrs[index % spec.train_snrs.len()]
    } else {
        spec.test_snrs[(index - spec.n_train) % spec.test_snrs.len()]
    };
    let seed = spec.pair_seed(index);
    let mut rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    };
    let d = spec.d;

    let n_carriers = rng.gen_range(2..=4usize);
    let mut carriers = Vec::with_capacity(n_carriers);
    for _ in 0..n_carriers {
        let cycles = rng.gen_range(2.0..24.0);
        let amp = rng.gen_range(0.5..1.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        carriers.push((cycles, amp, phase));
    }

    // Piecewise-smooth level envelope, log-uniform knots in [0.05, 1], so the
    // variance profile carries real information about the clean signal.
    let n_knots = rng.gen_range(4..=7usize);
    let knots: Vec<f64> = (0..n_knots)
        .map(|_| (rng.gen_range(0.05f64.ln()..=0.0)).exp())
        .collect();
    let envelope = cosine_envelope(&knots, d);

    let mut x0: Vec<f64> = (0..d)
        .map(|i| {
            let t = i as f64 / d as f64;
            let s: f64 = carriers
                .iter()
                .map(|&(c, a, p)| a * (std::f64::consts::TAU * c * t + p).sin())
                .sum();
            envelope[i] * s
        })
        .collect();
    let peak = x0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for v in x0.iter_mut() {
        *v /= peak;
    }

    let y = if snr_db == SNR_CLEAN {
        x0.clone()
    } else {
        let mut noise: Vec<f64> = normal_vec(&mut rng, d);
        if spec.noise_kind == NoiseKind::Pink {
            noise = pink_filter(&noise);
        }
        let sig_pow: f64 = x0.iter().map(|v| v * v).sum();
        let noise_pow: f64 = noise.iter().map(|v| v * v).sum();
        // exact scaling to the requested SNR
        let scale = (sig_pow / (noise_pow * 10f64.powf(snr_db / 10.0))).sqrt();
        x0.iter().zip(&noise).map(|(s, n)| s + scale * n).collect()
    };

    Ok(SignalPair {
        x0: x0.iter().map(|&v| S::of(v)).collect(),
        y: y.iter().map(|&v| S::of(v)).collect(),
        snr_db,
        seed,
        meta: PairMeta {
            carriers,
            envelope_knots: knots,
        },
    })
}

fn cosine_envelope(knots: &[f64], d: usize) -> Vec<f64> {
    let segs = knots.len() - 1;
    (0..d)
        .map(|i| {
            let pos = i as f64 / (d - 1) as f64 * segs as f64;
            let k = (pos.floor() as usize).min(segs - 1);
            let u = pos - k as f64;
            let w = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
            knots[k] * (1.0 - w) + knots[k + 1] * w
        })
        .collect()
}

/// Paul Kellet's economy pink-noise filter over a white sequence.
fn pink_filter(white: &[f64]) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    white
        .iter()
        .map(|&w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Realized SNR of an (x0, y) pair in dB.
pub fn realized_snr_db<S: Scalar>(x0: &[S], y: &[S]) -> f64 {
    let sig: f64 = x0.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    let err: f64 = x0
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b.as_f64() - a.as_f64();
            e * e
        })
        .sum();
    if err == 0.0 {
        SNR_CLEAN
    } else {
        10.0 * (sig / err).log10()
    }
}

/// Scale-invariant SNR in dB, clamped to [-100, 100].
pub fn si_snr<S: Scalar>(estimate: &[S], reference: &[S]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            op: "si_snr",
            lhs: vec![estimate.len()],
            rhs: vec![reference.len()],
        });
    }
    let ref_pow: f64 = reference.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    if ref_pow == 0.0 {
        return Err(Error::InvalidArgument("si_snr reference is zero".into()));
    }
    let dot: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| a.as_f64() * b.as_f64())
        .sum();
    let c = dot / ref_pow;
    let s_pow = c * c * ref_pow;
    let e_pow: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let e = a.as_f64() - c * b.as_f64();
            e * e
        })
        .sum();
    if e_pow == 0.0 {
        return Ok(if s_pow > 0.0 { 100.0 } else { -100.0 });
    }
    if s_pow == 0.0 {
        return Ok(-100.0);
    }
    Ok((10.0 * (s_pow / e_pow).log10()).clamp(-100.0, 100.0))
}

/// Segmental SNR: mean of per-segment SNRs, each clipped to [lo_db, hi_db].
pub fn ssnr<S: Scalar>(
    estimate: &[S],
    reference: &[S],
    seg_len: usize,
    overlap: f64,
    lo_db: f64,
    hi_db: f64,
) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            op: "ssnr",
            lhs: vec![estimate.len()],
            rhs: vec![reference.len()],
        });
    }
    if seg_len < 2 || !(0.0..1.0).contains(&overlap) || lo_db > hi_db {
        return Err(Error::InvalidArgument("bad ssnr parameters".into()));
    }
    if reference.len() < seg_len {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples shorter than one {seg_len}-sample segment",
            reference.len()
        )));
    }
    let hop = ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut start = 0usize;
    while start + seg_len <= reference.len() {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in start..start + seg_len {
            let r = reference[i].as_f64();
            let e = estimate[i].as_f64() - r;
            num += r * r;
            den += e * e;
        }
        let snr = if den == 0.0 {
            hi_db
        } else if num == 0.0 {
            lo_db
        } else {
            (10.0 * (num / den).log10()).clamp(lo_db, hi_db)
        };
        total += snr;
        count += 1;
        start += hop;
    }
    Ok(total / count as f64)
}

/// Segmental SNR with the artifact defaults.
pub fn ssnr_default<S: Scalar>(estimate: &[S], reference: &[S]) -> Result<f64> {
    ssnr(
        estimate,
        reference,
        SSNR_SEG_LEN,
        SSNR_OVERLAP,
        SSNR_LO_DB,
        SSNR_HI_DB,
    )
}

/// Mean squared error.
pub fn mse<S: Scalar>(estimate: &[S], reference: &[S]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: vec![estimate.len()],
            rhs: vec![reference.len()],
        });
    }
    let n = estimate.len() as f64;
    Ok(estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let e = a.as_f64() - b.as_f64();
            e * e
        })
        .sum::<f64>()
        / n)
}

/// Pearson correlation of two equal-length sequences.
pub fn pearson<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs two equal sequences of length >= 2".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x.as_f64() - ma;
        let dy = y.as_f64() - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument("pearson of constant sequence".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Centered moving average of |x|, the level envelope used for prior
/// informativeness checks.
pub fn smoothed_abs_envelope<S: Scalar>(x: &[S], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let half = w / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            x[lo..hi].iter().map(|v| v.as_f64().abs()).sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Writes the dataset to one file: a `key = value` header echoing the spec,
/// one `index,snr_db` line per sample, a `payload` marker line, then raw
/// little-endian f32 samples (x0 then y, d each, per sample in index order).
pub fn dump_dataset(spec: &DatasetSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "dataset_version = 1")?;
    writeln!(w, "n_train = {}", spec.n_train)?;
    writeln!(w, "n_test = {}", spec.n_test)?;
    writeln!(w, "d = {}", spec.d)?;
    writeln!(w, "train_snrs = {}", join_f64(&spec.train_snrs))?;
    writeln!(w, "test_snrs = {}", join_f64(&spec.test_snrs))?;
    writeln!(w, "noise_kind = {}", spec.noise_kind.name())?;
    writeln!(w, "seed = {}", spec.seed)?;
    writeln!(w, "samples")?;
    let mut pairs = Vec::with_capacity(spec.total());
    for index in 0..spec.total() {
        let pair = generate_pair::<f32>(spec, index)?;
        writeln!(w, "{},{}", index, pair.snr_db)?;
        pairs.push(pair);
    }
    writeln!(w, "payload")?;
    let mut bytes = Vec::with_capacity(spec.total() * spec.d * 8);
    for pair in &pairs {
        for &v in pair.x0.iter().chain(pair.y.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a dataset dump back: `(header lines, (index, snr) rows, samples)`.
#[allow(clippy::type_complexity)]
pub fn load_dataset(path: &Path) -> Result<(Vec<String>, Vec<(usize, f64)>, Vec<(Vec<f32>, Vec<f32>)>)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let marker = b"payload\n";
    let pos = raw
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::InvalidArgument("dataset dump has no payload marker".into()))?;
    let text = std::str::from_utf8(&raw[..pos])
        .map_err(|_| Error::InvalidArgument("dataset header is not UTF-8".into()))?;
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut d = 0usize;
    let mut in_samples = false;
    for line in text.lines() {
        if line == "samples" {
            in_samples = true;
            continue;
        }
        if in_samples {
            let (i, s) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("bad sample row '{line}'")))?;
            let idx: usize = i
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad index '{i}'")))?;
            let snr: f64 = s
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad snr '{s}'")))?;
            rows.push((idx, snr));
        } else {
            if let Some(v) = line.strip_prefix("d = ") {
                d = v
                    .parse()
                    .map_err(|_| Error::InvalidArgument("bad d in header".into()))?;
            }
            header.push(line.to_string());
        }
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dataset header missing d".into()));
    }
    let payload = &raw[pos + marker.len()..];
    if payload.len() != rows.len() * d * 2 * 4 {
        return Err(Error::InvalidArgument(format!(
            "payload of {} bytes does not match {} samples of length {d}",
            payload.len(),
            rows.len()
        )));
    }
    let mut samples = Vec::with_capacity(rows.len());
    let mut off = 0usize;
    for _ in 0..rows.len() {
        let mut x0 = Vec::with_capacity(d);
        let mut y = Vec::with_capacity(d);
        for _ in 0..d {
            x0.push(f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        for _ in 0..d {
            y.push(f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        samples.push((x0, y));
    }
    Ok((header, rows, samples))
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            n_train: 16,
            n_test: 8,
            d: 128,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_pair::<f64>(&spec, 5).unwrap();
        let b = generate_pair::<f64>(&spec, 5).unwrap();
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.y, b.y);
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn realized_snr_matches_request() {
        let spec = small_spec();
        for index in [0, 3, 17, 23] {
            let pair = generate_pair::<f64>(&spec, index).unwrap();
            let got = realized_snr_db(&pair.x0, &pair.y);
            assert!(
                (got - pair.snr_db).abs() < 0.1,
                "index {index}: requested {} got {got}",
                pair.snr_db
            );
        }
    }

    #[test]
    fn unit_peak_normalization() {
        let spec = small_spec();
        let pair = generate_pair::<f64>(&spec, 2).unwrap();
        let peak = pair.x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clean_sentinel_copies_signal() {
        let mut spec = small_spec();
        spec.train_snrs = vec![SNR_CLEAN];
        let pair = generate_pair::<f64>(&spec, 0).unwrap();
        assert_eq!(pair.x0, pair.y);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let spec = small_spec();
        assert!(generate_pair::<f64>(&spec, spec.total()).is_err());
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let spec = small_spec();
        let mut seen = std::collections::HashSet::new();
        for index in 0..spec.total() {
            assert!(seen.insert(spec.pair_seed(index)), "seed collision at {index}");
        }
    }

    #[test]
    fn pink_noise_dataset_generates() {
        let mut spec = small_spec();
        spec.noise_kind = NoiseKind::Pink;
        let pair = generate_pair::<f64>(&spec, 1).unwrap();
        let got = realized_snr_db(&pair.x0, &pair.y);
        assert!((got - pair.snr_db).abs() < 0.1);
    }

    #[test]
    fn si_snr_scale_invariance_cap() {
        let x = vec![0.3f64, -1.0, 0.5, 0.2];
        for c in [0.5, 1.0, 7.0] {
            let xc: Vec<f64> = x.iter().map(|v| c * v).collect();
            assert_eq!(si_snr(&xc, &x).unwrap(), 100.0);
        }
        assert_eq!(si_snr(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn si_snr_hand_case() {
        // s = [1,0], e = [0,1] -> 0 dB
        let reference = vec![1.0f64, 0.0];
        let estimate = vec![1.0f64, 1.0];
        assert!((si_snr(&estimate, &reference).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn si_snr_decreases_with_noise_power() {
        // orthogonal contamination of growing power
        let n = 64;
        let x: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 3.0 * i as f64 / n as f64).sin())
            .collect();
        let o: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 7.0 * i as f64 / n as f64).sin())
            .collect();
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let amp = 10f64.powi(-4 + k);
            let est: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + amp * b).collect();
            let v = si_snr(&est, &x).unwrap();
            assert!(v < last, "amp {amp}: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn si_snr_sign_flip_invariance() {
        let x = vec![0.3f64, -1.0, 0.5, 0.2];
        let e = vec![0.25f64, -0.9, 0.6, 0.1];
        let xf: Vec<f64> = x.iter().map(|v| -v).collect();
        let ef: Vec<f64> = e.iter().map(|v| -v).collect();
        let a = si_snr(&e, &x).unwrap();
        let b = si_snr(&ef, &xf).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn si_snr_zero_reference_is_error() {
        let z = vec![0.0f64; 4];
        let e = vec![1.0f64; 4];
        assert!(si_snr(&e, &z).is_err());
    }

    #[test]
    fn ssnr_clips_at_bounds() {
        let spec = small_spec();
        let pair = generate_pair::<f64>(&spec, 0).unwrap();
        assert_eq!(ssnr_default(&pair.x0, &pair.x0).unwrap(), SSNR_HI_DB);
        let huge: Vec<f64> = pair.x0.iter().map(|v| v + 1e6).collect();
        assert_eq!(ssnr_default(&huge, &pair.x0).unwrap(), SSNR_LO_DB);
    }

    #[test]
    fn ssnr_matches_brute_force_recomputation() {
        let spec = small_spec();
        let a = generate_pair::<f64>(&spec, 4).unwrap();
        let est = &a.y;
        let got = ssnr(est, &a.x0, 16, 0.5, -10.0, 35.0).unwrap();
        // independent segment loop
        let hop = 8;
        let mut vals = Vec::new();
        let mut s = 0;
        while s + 16 <= a.x0.len() {
            let num: f64 = a.x0[s..s + 16].iter().map(|v| v * v).sum();
            let den: f64 = a.x0[s..s + 16]
                .iter()
                .zip(&est[s..s + 16])
                .map(|(r, e)| (e - r) * (e - r))
                .sum();
            vals.push((10.0 * (num / den).log10()).clamp(-10.0, 35.0));
            s += hop;
        }
        let expect = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn ssnr_range_and_short_signal() {
        let x = vec![0.5f64; 16];
        assert!(ssnr(&x, &x, 32, 0.75, -10.0, 35.0).is_err());
        let spec = small_spec();
        let pair = generate_pair::<f64>(&spec, 9).unwrap();
        let v = ssnr_default(&pair.y, &pair.x0).unwrap();
        assert!((SSNR_LO_DB..=SSNR_HI_DB).contains(&v));
    }

    #[test]
    fn dataset_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        let spec = DatasetSpec {
            n_train: 4,
            n_test: 2,
            d: 32,
            ..DatasetSpec::default()
        };
        dump_dataset(&spec, &path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        dump_dataset(&spec, &path).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2, "dump must be byte-stable");
        let (header, rows, samples) = load_dataset(&path).unwrap();
        assert!(header.iter().any(|l| l == "d = 32"));
        assert_eq!(rows.len(), 6);
        assert_eq!(samples.len(), 6);
        for (i, (x0, y)) in samples.iter().enumerate() {
            let pair = generate_pair::<f32>(&spec, i).unwrap();
            assert_eq!(&pair.x0, x0);
            assert_eq!(&pair.y, y);
        }
    }

    #[test]
    fn truncated_dataset_dump_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        let spec = DatasetSpec {
            n_train: 4,
            n_test: 2,
            d: 32,
            ..DatasetSpec::default()
        };
        dump_dataset(&spec, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn pearson_detects_correlation() {
        let a: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-12);
    }
}
