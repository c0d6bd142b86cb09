//! Training-pair preparation: pair sampling over frame sequences, relative
//! pose estimation from supplied matches and depth, confidence filtering and
//! JSON Lines manifest output.
//!
//! Dataset layout under a root directory:
//!
//! ```text
//! <sequence>/camera.json          intrinsics shared by all frames
//! <sequence>/frames/000042.png
//! <sequence>/depth/000042.dpt     DPT1, optional confidence plane
//! <sequence>/matches/42_97.mch    MCH1 matches from frame 42 to frame 97
//! ```
//!
//! The manifest starts with a header line `{"dataset_tag", "stats"}`
//! followed by one record per kept pair, sorted by sequence and frames.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::io::{read_camera, read_depth, read_matches, PoseJson};
use crate::posealign::{
    depth_to_correspondences, matches_with_depth, pnp_ransac, DEFAULT_CONFIDENCE, DEFAULT_INLIER_THRESHOLD,
};

pub const DEFAULT_MIN_INTERVAL: usize = 30;
pub const DEFAULT_MAX_INTERVAL: usize = 120;
pub const DEFAULT_STRIDE: usize = 10;
pub const DEFAULT_PARTNERS: usize = 1;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSampling {
    pub min_interval: usize,
    pub max_interval: usize,
    /// Distance between consecutive anchor frames.
    pub stride: usize,
    /// Partners drawn per anchor, at distinct intervals.
    pub partners: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            min_interval: DEFAULT_MIN_INTERVAL,
            max_interval: DEFAULT_MAX_INTERVAL,
            stride: DEFAULT_STRIDE,
            partners: DEFAULT_PARTNERS,
            seed: 0,
        }
    }
}

impl PairSampling {
    pub fn validate(&self) -> Result<()> {
        if self.min_interval == 0 || self.min_interval > self.max_interval {
            return Err(Error::InvalidArgument(format!(
                "interval range [{}, {}] is empty or starts at 0",
                self.min_interval, self.max_interval
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if self.partners == 0 || self.partners > self.max_interval - self.min_interval + 1 {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {} distinct intervals from [{}, {}]",
                self.partners, self.min_interval, self.max_interval
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FramePair {
    pub frame_i: usize,
    pub frame_j: usize,
}

impl FramePair {
    pub fn interval(&self) -> usize {
        self.frame_j - self.frame_i
    }
}

/// Samples pairs from the frame indices of one sequence.
///
/// Anchors are every `stride`-th entry of the sorted index list. Each anchor
/// draws `partners` distinct intervals uniformly from the configured range;
/// a partner is kept only if that frame exists.
pub fn sample_pairs(frames: &[usize], cfg: &PairSampling) -> Result<Vec<FramePair>> {
    cfg.validate()?;
    let mut frames = frames.to_vec();
    frames.sort_unstable();
    frames.dedup();
    if frames.len() <= cfg.min_interval {
        return Err(Error::SequenceTooShort {
            len: frames.len(),
            min_interval: cfg.min_interval,
        });
    }
    let span = cfg.max_interval - cfg.min_interval + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    for &anchor in frames.iter().step_by(cfg.stride) {
        let mut offsets = rand::seq::index::sample(&mut rng, span, cfg.partners).into_vec();
        offsets.sort_unstable();
        for off in offsets {
            let j = anchor + cfg.min_interval + off;
            if frames.binary_search(&j).is_ok() {
                pairs.push(FramePair { frame_i: anchor, frame_j: j });
            }
        }
    }
    Ok(pairs)
}

/// One training pair. Paths are relative to the dataset root and use `/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePairRecord {
    pub sequence_id: String,
    pub frame_i: usize,
    pub frame_j: usize,
    pub interval: usize,
    pub image_i: String,
    pub image_j: String,
    pub depth_i: String,
    pub camera: String,
    /// Mean depth confidence of frame i over valid pixels.
    pub mean_confidence: Option<f64>,
    /// Relative pose taking camera-i coordinates to camera-j coordinates.
    pub pose: PoseJson,
    pub inliers: usize,
    pub reprojection_rmse: f64,
}

impl FramePairRecord {
    fn key(&self) -> (&str, usize, usize) {
        (&self.sequence_id, self.frame_i, self.frame_j)
    }
}

/// Splits records into `(kept, excluded)` by `mean_confidence >= threshold`.
pub fn confidence_filter(
    records: Vec<FramePairRecord>,
    threshold: f64,
) -> Result<(Vec<FramePairRecord>, Vec<FramePairRecord>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("confidence threshold {threshold} outside [0, 1]")));
    }
    if let Some(i) = records.iter().position(|r| r.mean_confidence.is_none()) {
        return Err(Error::MissingConfidence(i));
    }
    Ok(records
        .into_iter()
        .partition(|r| r.mean_confidence.is_some_and(|c| c >= threshold)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestStats {
    pub sequences: usize,
    /// Sequences skipped for having too few frames.
    pub sequences_too_short: usize,
    pub sampled: usize,
    pub kept: usize,
    pub excluded_low_confidence: usize,
    /// Pairs whose files were missing or unreadable, or whose pose estimation failed.
    pub excluded_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_tag: String,
    pub stats: ManifestStats,
    pub records: Vec<FramePairRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset_tag: String,
    stats: ManifestStats,
}

impl Manifest {
    pub fn empty(dataset_tag: impl Into<String>) -> Self {
        Self {
            dataset_tag: dataset_tag.into(),
            stats: ManifestStats::default(),
            records: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            dataset_tag: self.dataset_tag.clone(),
            stats: self.stats,
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = match lines.next() {
            Some(l) => serde_json::from_str(l)?,
            None => return Err(Error::InvalidArgument("manifest has no header line".into())),
        };
        let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            dataset_tag: header.dataset_tag,
            stats: header.stats,
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Writes through a temporary file so an interrupted run never leaves a partial manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.partial");
        fs::write(&tmp, self.to_jsonl()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Checks ordering, uniqueness, interval bounds and stat totals.
    pub fn validate(&self, min_interval: usize, max_interval: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (n, r) in self.records.iter().enumerate() {
            if r.frame_i >= r.frame_j || r.interval != r.frame_j - r.frame_i {
                return bad(format!("record {n}: inconsistent frames {} -> {}", r.frame_i, r.frame_j));
            }
            if !(min_interval..=max_interval).contains(&r.interval) {
                return bad(format!("record {n}: interval {} outside [{min_interval}, {max_interval}]", r.interval));
            }
            if n > 0 && self.records[n - 1].key() >= r.key() {
                return bad(format!("record {n}: not strictly after its predecessor"));
            }
        }
        let s = &self.stats;
        if s.kept != self.records.len() {
            return bad(format!("stats list {} kept pairs, manifest has {}", s.kept, self.records.len()));
        }
        if s.kept + s.excluded_low_confidence + s.excluded_errors != s.sampled {
            return bad("kept and excluded counts do not add up to the sampled count".into());
        }
        Ok(())
    }

    /// Checks that every referenced file exists under `root`.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        for r in &self.records {
            for rel in [&r.image_i, &r.image_j, &r.depth_i, &r.camera] {
                if !root.join(rel).is_file() {
                    return Err(Error::InvalidArgument(format!("referenced file {rel} does not exist")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    pub sampling: PairSampling,
    pub conf_threshold: f64,
    pub inlier_threshold: f64,
    pub ransac_confidence: f64,
    pub dataset_tag: String,
}

impl Default for ManifestConfig {
    fn default() -> Self {
        Self {
            sampling: PairSampling::default(),
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            ransac_confidence: DEFAULT_CONFIDENCE,
            dataset_tag: "warpkit".into(),
        }
    }
}

/// A pair dropped because of an error, kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFailure {
    pub sequence_id: String,
    pub pair: FramePair,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub manifest: Manifest,
    pub failures: Vec<PairFailure>,
}

pub fn frame_path(sequence: &str, frame: usize) -> String {
    format!("{sequence}/frames/{frame:06}.png")
}

pub fn depth_path(sequence: &str, frame: usize) -> String {
    format!("{sequence}/depth/{frame:06}.dpt")
}

pub fn matches_path(sequence: &str, pair: FramePair) -> String {
    format!("{sequence}/matches/{}_{}.mch", pair.frame_i, pair.frame_j)
}

pub fn camera_path(sequence: &str) -> String {
    format!("{sequence}/camera.json")
}

/// Seed for one sequence, stable across runs and sequence order.
pub fn sequence_seed(seed: u64, sequence: &str) -> u64 {
    // FNV-1a over the name, folded with the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in sequence.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn pair_seed(seq_seed: u64, pair: FramePair) -> u64 {
    seq_seed ^ ((pair.frame_i as u64) << 32 | pair.frame_j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct Sequence {
    id: String,
    intrinsics: CameraIntrinsics,
    frames: Vec<usize>,
}

fn scan_sequence(root: &Path, dir: &Path) -> Result<Sequence> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::MalformedLayout(format!("non UTF-8 sequence name {}", dir.display())))?
        .to_string();
    let camera = root.join(camera_path(&id));
    if !camera.is_file() {
        return Err(Error::MalformedLayout(format!("{id}: missing camera.json")));
    }
    let intrinsics = read_camera(&camera)
        .and_then(|c| c.intrinsics())
        .map_err(|e| Error::MalformedLayout(format!("{id}: {e}")))?;
    let frames_dir = dir.join("frames");
    let entries = fs::read_dir(&frames_dir).map_err(|_| Error::MalformedLayout(format!("{id}: missing frames/")))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&frames_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedLayout(format!("{id}: frame name {} is not an index", path.display())))?;
        frames.push(index);
    }
    frames.sort_unstable();
    Ok(Sequence { id, intrinsics, frames })
}

fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MalformedLayout(format!("{} is not a directory", root.display())));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn estimate_pair(root: &Path, seq: &Sequence, pair: FramePair, cfg: &ManifestConfig) -> Result<FramePairRecord> {
    let image_i = frame_path(&seq.id, pair.frame_i);
    let image_j = frame_path(&seq.id, pair.frame_j);
    for rel in [&image_i, &image_j] {
        let p = root.join(rel);
        if !p.is_file() {
            return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
        }
    }
    let depth_rel = depth_path(&seq.id, pair.frame_i);
    let depth = read_depth(&root.join(&depth_rel))?;
    let matches = matches_with_depth(&depth, &read_matches(&root.join(matches_path(&seq.id, pair)))?, &seq.intrinsics);
    let corr = depth_to_correspondences(&depth, &matches, &seq.intrinsics)?;
    let seed = pair_seed(sequence_seed(cfg.sampling.seed, &seq.id), pair);
    let est = pnp_ransac(&corr, &seq.intrinsics, cfg.inlier_threshold, cfg.ransac_confidence, seed)?;
    Ok(FramePairRecord {
        sequence_id: seq.id.clone(),
        frame_i: pair.frame_i,
        frame_j: pair.frame_j,
        interval: pair.interval(),
        image_i,
        image_j,
        depth_i: depth_rel,
        camera: camera_path(&seq.id),
        mean_confidence: depth.mean_confidence(),
        pose: PoseJson::from_pose(&est.pose),
        inliers: est.inliers.len(),
        reprojection_rmse: est.reprojection_rmse,
    })
}

enum PairOutcome {
    Record(FramePairRecord),
    Failed(PairFailure),
}

/// Builds a manifest for every sequence under `root`.
///
/// Pairs present in `previous` are reused without re-estimating their pose,
/// so an interrupted or repeated run only processes new pairs. Per-pair
/// errors exclude the pair; layout errors abort.
pub fn build_manifest(root: &Path, cfg: &ManifestConfig, previous: Option<&Manifest>) -> Result<BuildOutcome> {
    cfg.sampling.validate()?;
    if !(0.0..=1.0).contains(&cfg.conf_threshold) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold {} outside [0, 1]",
            cfg.conf_threshold
        )));
    }
    let sequences = list_sequences(root)?
        .iter()
        .map(|d| scan_sequence(root, d))
        .collect::<Result<Vec<_>>>()?;

    let reuse: BTreeMap<(String, usize, usize), &FramePairRecord> = previous
        .map(|m| {
            m.records
                .iter()
                .map(|r| ((r.sequence_id.clone(), r.frame_i, r.frame_j), r))
                .collect()
        })
        .unwrap_or_default();

    let mut stats = ManifestStats {
        sequences: sequences.len(),
        ..Default::default()
    };
    let mut jobs = Vec::new();
    for seq in &sequences {
        let sampling = PairSampling {
            seed: sequence_seed(cfg.sampling.seed, &seq.id),
            ..cfg.sampling
        };
        match sample_pairs(&seq.frames, &sampling) {
            Ok(pairs) => jobs.extend(pairs.into_iter().map(|p| (seq, p))),
            Err(Error::SequenceTooShort { .. }) => stats.sequences_too_short += 1,
            Err(e) => return Err(e),
        }
    }
    stats.sampled = jobs.len();

    let outcomes: Vec<PairOutcome> = jobs
        .par_iter()
        .map(|&(seq, pair)| {
            if let Some(r) = reuse.get(&(seq.id.clone(), pair.frame_i, pair.frame_j)) {
                return PairOutcome::Record((*r).clone());
            }
            match estimate_pair(root, seq, pair, cfg) {
                Ok(r) => PairOutcome::Record(r),
                Err(e) => PairOutcome::Failed(PairFailure {
                    sequence_id: seq.id.clone(),
                    pair,
                    reason: e.to_string(),
                }),
            }
        })
        .collect();

    let mut scored = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            PairOutcome::Record(r) if r.mean_confidence.is_some() => scored.push(r),
            PairOutcome::Record(r) => failures.push(PairFailure {
                sequence_id: r.sequence_id.clone(),
                pair: FramePair {
                    frame_i: r.frame_i,
                    frame_j: r.frame_j,
                },
                reason: Error::MissingConfidence(r.frame_i).to_string(),
            }),
            PairOutcome::Failed(f) => failures.push(f),
        }
    }
    let (mut kept, excluded) = confidence_filter(scored, cfg.conf_threshold)?;
    kept.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut seen = HashSet::new();
    kept.retain(|r| seen.insert((r.sequence_id.clone(), r.frame_i, r.frame_j)));

    stats.kept = kept.len();
    stats.excluded_low_confidence = excluded.len();
    stats.excluded_errors = failures.len();
    failures.sort_by(|a, b| (&a.sequence_id, a.pair).cmp(&(&b.sequence_id, b.pair)));
    Ok(BuildOutcome {
        manifest: Manifest {
            dataset_tag: cfg.dataset_tag.clone(),
            stats,
            records: kept,
        },
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seq: &str, i: usize, j: usize, conf: Option<f64>) -> FramePairRecord {
        FramePairRecord {
            sequence_id: seq.into(),
            frame_i: i,
            frame_j: j,
            interval: j - i,
            image_i: frame_path(seq, i),
            image_j: frame_path(seq, j),
            depth_i: depth_path(seq, i),
            camera: camera_path(seq),
            mean_confidence: conf,
            pose: PoseJson::from_pose(&Default::default()),
            inliers: 10,
            reprojection_rmse: 0.1,
        }
    }

    #[test]
    fn intervals_in_range_and_deterministic() {
        let frames: Vec<usize> = (0..200).collect();
        let cfg = PairSampling {
            stride: 50,
            seed: 7,
            ..Default::default()
        };
        let pairs = sample_pairs(&frames, &cfg).unwrap();
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|p| (30..=120).contains(&p.interval()) && p.frame_j < 200));
        assert_eq!(pairs, sample_pairs(&frames, &cfg).unwrap());
    }

    #[test]
    fn short_sequence() {
        let frames: Vec<usize> = (0..25).collect();
        assert!(matches!(
            sample_pairs(&frames, &PairSampling::default()),
            Err(Error::SequenceTooShort { len: 25, min_interval: 30 })
        ));
    }

    #[test]
    fn several_partners_are_distinct() {
        let frames: Vec<usize> = (0..400).collect();
        let cfg = PairSampling {
            partners: 3,
            stride: 40,
            ..Default::default()
        };
        let pairs = sample_pairs(&frames, &cfg).unwrap();
        let unique: HashSet<_> = pairs.iter().collect();
        assert_eq!(unique.len(), pairs.len());
        assert_eq!(pairs.iter().filter(|p| p.frame_i == 0).count(), 3);
        assert!(sample_pairs(&frames, &PairSampling { partners: 0, ..cfg }).is_err());
    }

    #[test]
    fn filter_thresholds() {
        let rs = vec![
            record("a", 0, 40, Some(0.2)),
            record("a", 10, 50, Some(1.0)),
            record("a", 20, 60, Some(0.6)),
            record("a", 30, 90, Some(0.59)),
        ];
        let (k, e) = confidence_filter(rs.clone(), 0.0).unwrap();
        assert_eq!((k.len(), e.len()), (4, 0));
        let (k, e) = confidence_filter(rs.clone(), 1.0).unwrap();
        assert_eq!((k.len(), e.len()), (1, 3));
        let (k, e) = confidence_filter(rs.clone(), 0.6).unwrap();
        let expect: Vec<_> = rs.iter().filter(|r| r.mean_confidence.unwrap() >= 0.6).cloned().collect();
        assert_eq!(k, expect);
        assert_eq!(k.len() + e.len(), rs.len());
        let mut missing = rs;
        missing[2].mean_confidence = None;
        assert!(matches!(confidence_filter(missing, 0.5), Err(Error::MissingConfidence(2))));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let mut m = Manifest::empty("t");
        m.records = vec![record("a", 0, 40, Some(0.7)), record("b", 0, 35, Some(0.9))];
        m.stats = ManifestStats {
            sequences: 2,
            sampled: 3,
            kept: 2,
            excluded_errors: 1,
            ..Default::default()
        };
        m.validate(30, 120).unwrap();
        let back = Manifest::from_jsonl(&m.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, m);

        let mut bad = m.clone();
        bad.records.swap(0, 1);
        assert!(bad.validate(30, 120).is_err());
        let mut bad = m.clone();
        bad.records[0] = record("a", 0, 20, Some(0.7));
        assert!(bad.validate(30, 120).is_err());
        let mut bad = m;
        bad.stats.sampled = 4;
        assert!(bad.validate(30, 120).is_err());
    }

    #[test]
    fn empty_root() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_manifest(dir.path(), &ManifestConfig::default(), None).unwrap();
        assert!(out.manifest.records.is_empty());
        assert_eq!(out.manifest.stats, ManifestStats::default());
    }

    #[test]
    fn malformed_layout_aborts() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("seq/frames")).unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &ManifestConfig::default(), None),
            Err(Error::MalformedLayout(_))
        ));
        assert!(matches!(
            build_manifest(&dir.path().join("nope"), &ManifestConfig::default(), None),
            Err(Error::MalformedLayout(_))
        ));
    }

    proptest! {
        #[test]
        fn sampled_pairs_respect_bounds(
            len in 31usize..400,
            min in 1usize..30,
            extra in 0usize..90,
            stride in 1usize..60,
            partners in 1usize..4,
            seed in any::<u64>(),
        ) {
            let frames: Vec<usize> = (0..len).collect();
            let cfg = PairSampling { min_interval: min, max_interval: min + extra + partners, stride, partners, seed };
            let pairs = sample_pairs(&frames, &cfg).unwrap();
            for p in &pairs {
                prop_assert!(p.frame_i < p.frame_j && p.frame_j < len);
                prop_assert!((cfg.min_interval..=cfg.max_interval).contains(&p.interval()));
                prop_assert_eq!(p.frame_i % stride, 0);
            }
        }
    }
}
