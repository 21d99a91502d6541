//! Checkpoint persistence and parameter-posterior statistics.
//!
//! A checkpoint file is one posterior sample θ. The container is
//! deliberately simple enough to parse from any language:
//!
//! ```text
//! magic "VDU1"
//! header_len: u32 little-endian
//! header:     header_len bytes of UTF-8 "key=value\n" lines in canonical
//!             order (version, arch.*, schedule.*, seed, epoch, dataset, d)
//! payload:    d IEEE-754 f32 values, little-endian
//! crc:        u32 little-endian CRC32 of the payload bytes
//! ```
//!
//! Stats files use the same layout with magic "VDUS" and an f64 payload
//! (μ* then σ*), since the regularizer weights 1/(2σ*²) are consumed at
//! full precision.
//!
//! `estimate_posterior_stats` turns ≥2 checkpoints into per-parameter
//! (μ*ᵢ, σ*ᵢ): sample mean and unbiased (n−1) standard deviation, with
//! σ*ᵢ floored away from zero so the regularizer stays finite.

use crate::denoiser::{Activation, DenoiserArch};
use crate::diffgraph::ParamVector;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"VDU1";
const STATS_MAGIC: &[u8; 4] = b"VDUS";
const FORMAT_VERSION: u32 = 1;

/// Training provenance recorded in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub dataset: String,
}

/// One persisted parameter vector with enough header to rebuild its
/// architecture and noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: DenoiserArch,
    pub schedule: ScheduleParams,
    pub meta: CheckpointMeta,
    pub params: ParamVector,
}

/// Whether posterior samples came from independent runs or from late
/// checkpoints of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    MultiRun,
    SingleRun,
}

impl StatsMode {
    fn name(&self) -> &'static str {
        match self {
            StatsMode::MultiRun => "multi_run",
            StatsMode::SingleRun => "single_run",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "multi_run" => Ok(StatsMode::MultiRun),
            "single_run" => Ok(StatsMode::SingleRun),
            other => Err(Error::Format(format!("unknown stats mode {other:?}"))),
        }
    }
}

/// Per-parameter posterior statistics (μ*ᵢ, σ*ᵢ).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPosteriorStats {
    pub mu_star: Vec<f64>,
    /// Standard deviations, already clamped to `[sigma_floor, sigma_ceiling]`.
    pub sigma_star: Vec<f64>,
    pub n_checkpoints: usize,
    pub mode: StatsMode,
    /// The floor that was applied to `sigma_star`.
    pub sigma_floor: f64,
    /// The ceiling that was applied to `sigma_star` (∞ when unbounded).
    pub sigma_ceiling: f64,
}

impl Checkpoint {
    pub fn new(
        arch: DenoiserArch,
        schedule: ScheduleParams,
        meta: CheckpointMeta,
        params: ParamVector,
    ) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::DimMismatch {
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(Checkpoint {
            arch,
            schedule,
            meta,
            params,
        })
    }

    /// Explicit error when a file's architecture is not the expected one.
    pub fn ensure_arch(&self, expected: &DenoiserArch) -> Result<()> {
        if &self.arch != expected {
            return Err(Error::Format(format!(
                "checkpoint architecture {:?} does not match expected {:?}",
                self.arch, expected
            )));
        }
        Ok(())
    }
}

fn dims_to_string(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn dims_from_string(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad hidden_dims entry {p:?}")))
        })
        .collect()
}

fn checkpoint_header(cp: &Checkpoint) -> String {
    let mut h = String::new();
    h.push_str(&format!("version={FORMAT_VERSION}\n"));
    h.push_str(&format!("arch.input_dim={}\n", cp.arch.input_dim));
    h.push_str(&format!(
        "arch.hidden_dims={}\n",
        dims_to_string(&cp.arch.hidden_dims)
    ));
    h.push_str(&format!("arch.embed_dim={}\n", cp.arch.embed_dim));
    h.push_str(&format!("arch.activation={}\n", cp.arch.activation.name()));
    match cp.schedule {
        ScheduleParams::Linear {
            t_steps,
            beta_start,
            beta_end,
        } => {
            h.push_str("schedule.kind=linear\n");
            h.push_str(&format!("schedule.t_steps={t_steps}\n"));
            h.push_str(&format!("schedule.beta_start={beta_start}\n"));
            h.push_str(&format!("schedule.beta_end={beta_end}\n"));
        }
        ScheduleParams::Cosine { t_steps } => {
            h.push_str("schedule.kind=cosine\n");
            h.push_str(&format!("schedule.t_steps={t_steps}\n"));
        }
    }
    h.push_str(&format!("seed={}\n", cp.meta.seed));
    h.push_str(&format!("epoch={}\n", cp.meta.epoch));
    h.push_str(&format!("dataset={}\n", cp.meta.dataset));
    h.push_str(&format!("d={}\n", cp.params.len()));
    h
}

/// Reads "key=value" lines in the exact canonical order.
struct HeaderReader<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> HeaderReader<'a> {
    fn new(text: &'a str) -> Self {
        HeaderReader {
            lines: text.lines(),
        }
    }

    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::Format(format!("header ended before key {key:?}")))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
        if k != key {
            return Err(Error::Format(format!(
                "expected header key {key:?}, found {k:?}"
            )));
        }
        Ok(v)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.expect(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("bad value {v:?} for header key {key:?}")))
    }
}

fn read_exact_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format("file too short for magic bytes".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<String> {
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("file too short for header length".into()))?
        as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("header truncated".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Format("header is not UTF-8".into()))
}

fn ensure_eof<R: Read>(r: &mut R) -> Result<()> {
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after checksum".into()));
    }
    Ok(())
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, cp: &Checkpoint) -> Result<()> {
    let header = checkpoint_header(cp);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(cp.params.len() * 4);
    for &v in cp.params.iter() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    w.write_u32::<LittleEndian>(crc32fast::hash(&payload))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    read_exact_magic(&mut r, CHECKPOINT_MAGIC)?;
    let header = read_header(&mut r)?;
    let mut h = HeaderReader::new(&header);
    let version: u32 = h.parse("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let input_dim: usize = h.parse("arch.input_dim")?;
    let hidden_dims = dims_from_string(h.expect("arch.hidden_dims")?)?;
    let embed_dim: usize = h.parse("arch.embed_dim")?;
    let activation = Activation::from_name(h.expect("arch.activation")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let arch = DenoiserArch {
        input_dim,
        hidden_dims,
        embed_dim,
        activation,
    };
    let schedule = match h.expect("schedule.kind")? {
        "linear" => ScheduleParams::Linear {
            t_steps: h.parse("schedule.t_steps")?,
            beta_start: h.parse("schedule.beta_start")?,
            beta_end: h.parse("schedule.beta_end")?,
        },
        "cosine" => ScheduleParams::Cosine {
            t_steps: h.parse("schedule.t_steps")?,
        },
        other => return Err(Error::Format(format!("unknown schedule kind {other:?}"))),
    };
    let meta = CheckpointMeta {
        seed: h.parse("seed")?,
        epoch: h.parse("epoch")?,
        dataset: h.expect("dataset")?.to_string(),
    };
    let d: usize = h.parse("d")?;
    if d != arch.param_count() {
        return Err(Error::Format(format!(
            "header d={d} does not match architecture parameter count {}",
            arch.param_count()
        )));
    }

    let mut payload = vec![0u8; d * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("parameter payload truncated".into()))?;
    let crc = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("file too short for checksum".into()))?;
    if crc != crc32fast::hash(&payload) {
        return Err(Error::Format("payload checksum mismatch".into()));
    }
    ensure_eof(&mut r)?;

    let params = ParamVector(
        payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
    );
    Checkpoint::new(arch, schedule, meta, params)
}

pub fn save_stats<P: AsRef<Path>>(path: P, stats: &ParamPosteriorStats) -> Result<()> {
    if stats.mu_star.len() != stats.sigma_star.len() {
        return Err(Error::DimMismatch {
            expected: stats.mu_star.len(),
            got: stats.sigma_star.len(),
        });
    }
    let header = format!(
        "version={FORMAT_VERSION}\nmode={}\nn_checkpoints={}\nsigma_floor={}\nsigma_ceiling={}\nd={}\n",
        stats.mode.name(),
        stats.n_checkpoints,
        stats.sigma_floor,
        stats.sigma_ceiling,
        stats.mu_star.len()
    );
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATS_MAGIC)?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(stats.mu_star.len() * 16);
    for v in stats.mu_star.iter().chain(stats.sigma_star.iter()) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    w.write_u32::<LittleEndian>(crc32fast::hash(&payload))?;
    w.flush()?;
    Ok(())
}

pub fn load_stats<P: AsRef<Path>>(path: P) -> Result<ParamPosteriorStats> {
    let mut r = BufReader::new(File::open(path)?);
    read_exact_magic(&mut r, STATS_MAGIC)?;
    let header = read_header(&mut r)?;
    let mut h = HeaderReader::new(&header);
    let version: u32 = h.parse("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mode = StatsMode::from_name(h.expect("mode")?)?;
    let n_checkpoints: usize = h.parse("n_checkpoints")?;
    let sigma_floor: f64 = h.parse("sigma_floor")?;
    let sigma_ceiling: f64 = h.parse("sigma_ceiling")?;
    let d: usize = h.parse("d")?;

    let mut payload = vec![0u8; d * 16];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("stats payload truncated".into()))?;
    let crc = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("file too short for checksum".into()))?;
    if crc != crc32fast::hash(&payload) {
        return Err(Error::Format("payload checksum mismatch".into()));
    }
    ensure_eof(&mut r)?;

    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(ParamPosteriorStats {
        mu_star: values[..d].to_vec(),
        sigma_star: values[d..].to_vec(),
        n_checkpoints,
        mode,
        sigma_floor,
        sigma_ceiling,
    })
}

/// Estimate (μ*ᵢ, σ*ᵢ) from ≥2 checkpoints of identical architecture.
///
/// σ*ᵢ uses the unbiased (n−1) estimator — material at n = 2..5 — and is
/// floored at `sigma_floor` (default 1e−4 · RMS(μ*)) so the stability
/// regularizer's 1/(2σ*ᵢ²) weights stay finite. `sigma_ceiling`, when
/// given, clamps from above as well: with 2–4 checkpoints the
/// per-coordinate deviations are extremely noisy (a chance-large spread
/// reads as "this weight is free"), so shrinking both tails toward a band
/// trades estimator variance for bias. The mode is inferred from the
/// headers: checkpoints sharing one training seed are single-run
/// snapshots, anything else is treated as independent runs.
pub fn estimate_posterior_stats(
    checkpoints: &[Checkpoint],
    sigma_floor: Option<f64>,
    sigma_ceiling: Option<f64>,
) -> Result<ParamPosteriorStats> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    let first = &checkpoints[0];
    let d = first.params.len();
    for cp in checkpoints {
        cp.ensure_arch(&first.arch)?;
        if cp.params.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: cp.params.len(),
            });
        }
    }

    let n = checkpoints.len() as f64;
    let mut mu = vec![0.0; d];
    for cp in checkpoints {
        for (m, &p) in mu.iter_mut().zip(cp.params.iter()) {
            *m += p;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut sigma = vec![0.0; d];
    for cp in checkpoints {
        for ((s, &m), &p) in sigma.iter_mut().zip(&mu).zip(cp.params.iter()) {
            let dlt = p - m;
            *s += dlt * dlt;
        }
    }
    for s in &mut sigma {
        *s = (*s / (n - 1.0)).sqrt();
    }

    let floor = match sigma_floor {
        Some(f) if f > 0.0 => f,
        Some(f) => {
            return Err(Error::InvalidArgument(format!(
                "sigma_floor must be positive, got {f}"
            )))
        }
        None => {
            let rms = (mu.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
            let f = 1e-4 * rms;
            if f <= 0.0 || f.is_nan() {
                return Err(Error::DegenerateCovariance(
                    "all-zero mean parameters; supply an explicit sigma_floor".into(),
                ));
            }
            f
        }
    };
    let ceiling = match sigma_ceiling {
        Some(c) if c > floor => c,
        Some(c) => {
            return Err(Error::InvalidArgument(format!(
                "sigma_ceiling must exceed the floor {floor}, got {c}"
            )))
        }
        None => f64::INFINITY,
    };
    for s in &mut sigma {
        *s = s.clamp(floor, ceiling);
    }

    let first_seed = checkpoints[0].meta.seed;
    let mode = if checkpoints.iter().all(|c| c.meta.seed == first_seed) {
        StatsMode::SingleRun
    } else {
        StatsMode::MultiRun
    };
    Ok(ParamPosteriorStats {
        mu_star: mu,
        sigma_star: sigma,
        n_checkpoints: checkpoints.len(),
        mode,
        sigma_floor: floor,
        sigma_ceiling: ceiling,
    })
}

/// The epochs at which a single training run should snapshot itself to
/// yield `k` late checkpoints `spacing_epochs` apart, ending at the final
/// epoch.
pub fn single_run_snapshot_epochs(
    total_epochs: usize,
    k: usize,
    spacing_epochs: usize,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 snapshots, got k={k}"
        )));
    }
    if spacing_epochs == 0 {
        return Err(Error::InvalidArgument("spacing must be positive".into()));
    }
    if total_epochs < k * spacing_epochs {
        return Err(Error::InvalidArgument(format!(
            "run of {total_epochs} epochs is shorter than k·spacing = {}",
            k * spacing_epochs
        )));
    }
    Ok((0..k)
        .map(|i| total_epochs - (k - 1 - i) * spacing_epochs)
        .collect())
}

/// Drive one training run and return its `k` late checkpoints. The
/// `train` closure receives the snapshot epochs and must return one
/// checkpoint per requested epoch, in order.
pub fn collect_single_run_checkpoints<F>(
    total_epochs: usize,
    k: usize,
    spacing_epochs: usize,
    train: F,
) -> Result<Vec<Checkpoint>>
where
    F: FnOnce(&[usize]) -> Result<Vec<Checkpoint>>,
{
    let epochs = single_run_snapshot_epochs(total_epochs, k, spacing_epochs)?;
    let cps = train(&epochs)?;
    if cps.len() != k {
        return Err(Error::InvalidArgument(format!(
            "training driver returned {} checkpoints, expected {k}",
            cps.len()
        )));
    }
    for (cp, &want) in cps.iter().zip(&epochs) {
        if cp.meta.epoch != want {
            return Err(Error::InvalidArgument(format!(
                "snapshot tagged epoch {}, expected {want}",
                cp.meta.epoch
            )));
        }
        cp.ensure_arch(&cps[0].arch)?;
    }
    Ok(cps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_arch() -> DenoiserArch {
        DenoiserArch {
            input_dim: 2,
            hidden_dims: vec![3],
            embed_dim: 4,
            activation: Activation::Silu,
        }
    }

    fn make_cp(seed: u64, epoch: usize, params: Vec<f64>) -> Checkpoint {
        let arch = tiny_arch();
        assert_eq!(params.len(), arch.param_count());
        Checkpoint::new(
            arch,
            ScheduleParams::Linear {
                t_steps: 100,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            CheckpointMeta {
                seed,
                epoch,
                dataset: "mixture8".into(),
            },
            ParamVector(params),
        )
        .unwrap()
    }

    fn ramp(d: usize, base: f64) -> Vec<f64> {
        (0..d).map(|i| base + i as f64 * 0.01).collect()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact_at_storage_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vdu");
        let d = tiny_arch().param_count();
        let cp = make_cp(9, 40, (0..d).map(|i| (i as f64 * 0.137).sin()).collect());
        save_checkpoint(&path, &cp).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.arch, cp.arch);
        assert_eq!(back.schedule, cp.schedule);
        assert_eq!(back.meta, cp.meta);
        for (got, want) in back.params.iter().zip(cp.params.iter()) {
            assert_eq!(got.to_bits(), ((*want as f32) as f64).to_bits());
        }
        // A second save of the loaded checkpoint is byte-identical.
        let path2 = dir.path().join("b.vdu");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vdu");
        let d = tiny_arch().param_count();
        save_checkpoint(&path, &make_cp(1, 5, ramp(d, 0.2))).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Flip one payload byte.
        let mut bad = bytes.clone();
        let payload_start = bytes.len() - 4 - d * 4;
        bad[payload_start + 2] ^= 0x40;
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");

        // Wrong magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Truncation.
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Trailing garbage.
        let mut bad = bytes.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Version bump.
        let mut bad = bytes;
        let hdr_start = 8;
        assert_eq!(&bad[hdr_start..hdr_start + 10], b"version=1\n");
        bad[hdr_start + 8] = b'2';
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn arch_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vdu");
        let d = tiny_arch().param_count();
        save_checkpoint(&path, &make_cp(1, 5, ramp(d, 0.0))).unwrap();
        let cp = load_checkpoint(&path).unwrap();
        let other = DenoiserArch {
            hidden_dims: vec![5],
            ..tiny_arch()
        };
        assert!(cp.ensure_arch(&tiny_arch()).is_ok());
        let err = cp.ensure_arch(&other).unwrap_err().to_string();
        assert!(err.contains("architecture"), "{err}");
    }

    #[test]
    fn stats_hand_example_and_flooring() {
        let d = tiny_arch().param_count();
        // Per-parameter samples {1, 2, 3} → mean 2, unbiased std 1.
        let cps = vec![
            make_cp(1, 10, vec![1.0; d]),
            make_cp(2, 10, vec![2.0; d]),
            make_cp(3, 10, vec![3.0; d]),
        ];
        let stats = estimate_posterior_stats(&cps, Some(1e-9), None).unwrap();
        assert_eq!(stats.n_checkpoints, 3);
        assert_eq!(stats.mode, StatsMode::MultiRun);
        for (m, s) in stats.mu_star.iter().zip(&stats.sigma_star) {
            assert!((m - 2.0).abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }

        // Identical checkpoints floor everywhere at 1e−4·RMS(μ*).
        let cps = vec![make_cp(1, 10, vec![2.0; d]), make_cp(1, 20, vec![2.0; d])];
        let stats = estimate_posterior_stats(&cps, None, None).unwrap();
        assert_eq!(stats.mode, StatsMode::SingleRun);
        let want_floor = 1e-4 * 2.0;
        assert!((stats.sigma_floor - want_floor).abs() < 1e-15);
        assert!(stats
            .sigma_star
            .iter()
            .all(|&s| (s - want_floor).abs() < 1e-15));

        assert!(estimate_posterior_stats(&cps[..1], None, None).is_err());
        assert!(estimate_posterior_stats(&cps, Some(0.0), None).is_err());
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.vdus");
        let stats = ParamPosteriorStats {
            mu_star: vec![0.25, -1.5, 3.0e-7],
            sigma_star: vec![0.1, 0.2, 1e-4],
            n_checkpoints: 4,
            mode: StatsMode::SingleRun,
            sigma_floor: 1e-4,
            sigma_ceiling: f64::INFINITY,
        };
        save_stats(&path, &stats).unwrap();
        let back = load_stats(&path).unwrap();
        assert_eq!(back, stats);

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_stats(&path).is_err());
    }

    #[test]
    fn single_run_snapshot_epochs_layout() {
        assert_eq!(single_run_snapshot_epochs(10, 2, 3).unwrap(), vec![7, 10]);
        assert_eq!(
            single_run_snapshot_epochs(40, 4, 5).unwrap(),
            vec![25, 30, 35, 40]
        );
        assert!(single_run_snapshot_epochs(5, 2, 3).is_err());
        assert!(single_run_snapshot_epochs(10, 1, 3).is_err());
        assert!(single_run_snapshot_epochs(10, 2, 0).is_err());
    }

    #[test]
    fn collect_single_run_validates_the_driver() {
        let d = tiny_arch().param_count();
        let cps = collect_single_run_checkpoints(10, 2, 3, |epochs| {
            assert_eq!(epochs, &[7, 10]);
            Ok(epochs
                .iter()
                .map(|&e| make_cp(42, e, ramp(d, e as f64)))
                .collect())
        })
        .unwrap();
        assert_eq!(cps.len(), 2);
        assert!(cps[0].meta.epoch < cps[1].meta.epoch);
        // Stats from one run are tagged single_run via the shared seed.
        let stats = estimate_posterior_stats(&cps, None, None).unwrap();
        assert_eq!(stats.mode, StatsMode::SingleRun);

        // A driver returning mislabeled epochs is rejected.
        let err = collect_single_run_checkpoints(10, 2, 3, |epochs| {
            Ok(epochs
                .iter()
                .map(|_| make_cp(42, 1, ramp(d, 0.0)))
                .collect())
        });
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn stats_are_permutation_invariant_and_scale(
            base in -2.0f64..2.0,
            spread in 0.01f64..1.0,
            c in prop::sample::select(vec![-3.0f64, -0.5, 0.7, 2.0]),
        ) {
            let d = tiny_arch().param_count();
            let mk = |s: u64, off: f64| make_cp(s, 10, ramp(d, base + off));
            let cps = vec![mk(1, 0.0), mk(2, spread), mk(3, 2.0 * spread), mk(4, -spread)];
            let stats = estimate_posterior_stats(&cps, Some(1e-300), None).unwrap();

            let perm = vec![cps[2].clone(), cps[0].clone(), cps[3].clone(), cps[1].clone()];
            let stats_p = estimate_posterior_stats(&perm, Some(1e-300), None).unwrap();
            for i in 0..d {
                let tol = 1e-12 * stats.mu_star[i].abs().max(1.0);
                prop_assert!((stats.mu_star[i] - stats_p.mu_star[i]).abs() <= tol);
                let tol = 1e-12 * stats.sigma_star[i].abs().max(1e-12);
                prop_assert!((stats.sigma_star[i] - stats_p.sigma_star[i]).abs() <= tol);
            }

            // Scaling all parameters by c scales μ* by c and σ* by |c|.
            let scaled: Vec<Checkpoint> = cps
                .iter()
                .map(|cp| {
                    let mut s = cp.clone();
                    for v in s.params.iter_mut() {
                        *v *= c;
                    }
                    s
                })
                .collect();
            let stats_s = estimate_posterior_stats(&scaled, Some(1e-300), None).unwrap();
            for i in 0..d {
                let tol = 1e-9 * stats.mu_star[i].abs().max(1e-9);
                prop_assert!((stats_s.mu_star[i] - c * stats.mu_star[i]).abs() <= tol.abs() * c.abs().max(1.0));
                let tol = 1e-9 * stats.sigma_star[i].abs().max(1e-12);
                prop_assert!((stats_s.sigma_star[i] - c.abs() * stats.sigma_star[i]).abs() <= tol * c.abs().max(1.0));
            }
            prop_assert!(stats.sigma_star.iter().all(|&s| s > 0.0));
        }
    }
}
