//! Command-line front end. `run` parses arguments, merges an optional JSON
//! config file and dispatches to a subcommand.
//!
//! Exit codes: 0 success, 1 runtime error, 2 invalid arguments.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::colormap::colorize;
use crate::coordembed::{ablation_condition, ConditionInputs, ConditionKind};
use crate::datapipe::{build_manifest, Manifest, ManifestConfig, PairSampling};
use crate::error::Error;
use crate::grid::FeatureGrid;
use crate::io;
use crate::posealign::{depth_to_correspondences, matches_with_depth, pnp_ransac_with, RansacOptions};
use crate::selftest::{run_all, two_plane_attention};
use crate::synthoracle::fixture::{write_fixture_dataset, write_two_plane};
use crate::synthoracle::TwoPlaneConfig;
use crate::warpcore::{filter_occlusion_mask, warp, WarpMode};

/// Numeric defaults shared by every subcommand.
pub mod defaults {
    pub use crate::coordembed::{DEFAULT_BANDS as BANDS, LATENT_DOWNSCALE};
    pub use crate::datapipe::{
        DEFAULT_CONF_THRESHOLD as CONF_THRESHOLD, DEFAULT_MAX_INTERVAL as MAX_INTERVAL,
        DEFAULT_MIN_INTERVAL as MIN_INTERVAL, DEFAULT_PARTNERS as PARTNERS, DEFAULT_STRIDE as STRIDE,
    };
    pub use crate::posealign::{DEFAULT_CONFIDENCE as RANSAC_CONFIDENCE, DEFAULT_INLIER_THRESHOLD as INLIER_THRESHOLD};
    pub use crate::warpcore::DEFAULT_MIN_OCCLUSION_SIZE as MIN_OCCLUSION_SIZE;

    /// Metres per unit of a 16-bit PNG depth map.
    pub const DEPTH_PNG_SCALE: f64 = 0.001;
    pub const SEED: u64 = 0;
    pub const DATASET_TAG: &str = "warpkit";
    pub const DEMO_WIDTH: usize = 48;
    pub const DEMO_HEIGHT: usize = 32;
    pub const DEMO_FOCAL: f64 = 40.0;
}

const FORMATS: &str = "\
File formats:
  images   8-bit PNG (RGB or gray), values mapped to [0, 1]
  masks    8-bit gray PNG, 255 = hole, 0 = filled
  depth    DPT1: 16-byte header (\"DPT1\", width, height, planes as u32 LE) then
           row-major f32 LE planes; plane 0 is z-depth, optional plane 1 is
           confidence in [0, 1]. A .png path is read as 16-bit depth times
           --depth-scale. Zero or non-finite depth is invalid.
  camera   JSON {fx, fy, cx, cy, width, height, pose?: {rotation: [9 floats,
           row-major], translation: [3 floats]}}; the pose maps source-camera
           coordinates to target-camera coordinates.";

const MATCH_FORMAT: &str = "
  matches  MCH1: 8-byte header (\"MCH1\", count as u32 LE) then count records of
           (u_i, v_i, u_j, v_j, weight) as f32 LE, pixel centers at +0.5.";

const EMBED_FORMAT: &str = "
  output   DPT1 with one plane per channel (4 x bands channels for
           warped-coords: sin/cos per band for x, then for y).";

const PREPARE_FORMAT: &str = "
Dataset layout: <root>/<sequence>/camera.json, frames/%06d.png,
depth/%06d.dpt, matches/<i>_<j>.mch.
Manifest: JSON Lines; line 1 is {dataset_tag, stats}, then one record per kept
pair with paths relative to the root. An existing --out file is reused unless
--fresh is given.";

#[derive(Debug, Parser)]
#[command(name = "warpkit", version, about = "Depth-based view warping and pair preparation tools")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// JSON object whose keys are long flag names of the subcommand; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warp an image into the view given by a camera pose
    #[command(after_help = FORMATS)]
    Warp(WarpArgs),
    /// Compute a conditioning signal (warped coordinate embedding by default)
    #[command(after_help = const_format(&[FORMATS, EMBED_FORMAT]))]
    Embed(EmbedArgs),
    /// Expand small holes in an occlusion mask to a minimum size
    #[command(name = "mask-filter", after_help = FORMATS)]
    MaskFilter(MaskFilterArgs),
    /// Run augmented attention on the two-plane scene and write heatmaps
    #[command(name = "attention-demo", after_help = FORMATS)]
    AttentionDemo(AttentionDemoArgs),
    /// Estimate a relative pose from matches and source depth with PnP-RANSAC
    #[command(after_help = const_format(&[FORMATS, MATCH_FORMAT]))]
    Align(AlignArgs),
    /// Build a training-pair manifest from a dataset directory
    #[command(after_help = const_format(&[FORMATS, MATCH_FORMAT, PREPARE_FORMAT]))]
    Prepare(PrepareArgs),
    /// Write synthetic fixtures
    #[command(after_help = const_format(&[FORMATS, MATCH_FORMAT, PREPARE_FORMAT]))]
    Synth(SynthArgs),
    /// Run the acceptance checks and print a pass/fail table
    #[command(after_help = PREPARE_FORMAT)]
    Selftest(SelftestArgs),
}

fn const_format(parts: &[&str]) -> String {
    parts.concat()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Forward,
    Inverse,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    /// Source image (PNG)
    #[arg(long, value_name = "PNG")]
    pub image: PathBuf,
    /// Source depth (DPT1, or 16-bit PNG)
    #[arg(long, value_name = "FILE")]
    pub depth: PathBuf,
    /// Camera JSON with intrinsics and the source-to-target pose
    #[arg(long, value_name = "JSON")]
    pub camera: PathBuf,
    /// Splatting (forward) or gathering through an inverted flow (inverse)
    #[arg(long, value_enum, default_value = "forward")]
    pub mode: ModeArg,
    /// Output image (PNG)
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// Optional output occlusion mask (PNG)
    #[arg(long, value_name = "PNG")]
    pub mask: Option<PathBuf>,
    /// Expand mask holes to at least this size before writing the mask
    #[arg(long, value_name = "PX")]
    pub min_occlusion_size: Option<usize>,
    /// Depth units per 16-bit PNG step
    #[arg(long, default_value_t = defaults::DEPTH_PNG_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    WarpedCoords,
    WarpedDepth,
    WarpedImage,
    Plucker,
}

impl From<KindArg> for ConditionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::WarpedCoords => ConditionKind::WarpedCoords,
            KindArg::WarpedDepth => ConditionKind::WarpedDepth,
            KindArg::WarpedImage => ConditionKind::WarpedImage,
            KindArg::Plucker => ConditionKind::Plucker,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Camera JSON with intrinsics and the source-to-target pose
    #[arg(long, value_name = "JSON")]
    pub camera: PathBuf,
    /// Source depth (DPT1, or 16-bit PNG); not needed for plucker
    #[arg(long, value_name = "FILE")]
    pub depth: Option<PathBuf>,
    /// Source image (PNG), needed for warped-image
    #[arg(long, value_name = "PNG")]
    pub image: Option<PathBuf>,
    /// Conditioning signal to compute
    #[arg(long, value_enum, default_value = "warped-coords")]
    pub kind: KindArg,
    /// Fourier frequency bands (warped-coords)
    #[arg(long, default_value_t = defaults::BANDS)]
    pub bands: usize,
    /// Integer factor between image and output resolution (1 = image resolution)
    #[arg(long, default_value_t = defaults::LATENT_DOWNSCALE)]
    pub downscale: usize,
    /// Output embedding (DPT1 multi-plane)
    #[arg(long, value_name = "DPT")]
    pub out: PathBuf,
    /// Also write one grayscale PNG per channel into this directory
    #[arg(long, value_name = "DIR")]
    pub png_dir: Option<PathBuf>,
    /// Depth units per 16-bit PNG step
    #[arg(long, default_value_t = defaults::DEPTH_PNG_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct MaskFilterArgs {
    /// Input mask (PNG, 255 = hole)
    #[arg(long, value_name = "PNG")]
    pub mask: PathBuf,
    /// Minimum hole side in pixels
    #[arg(long, default_value_t = defaults::MIN_OCCLUSION_SIZE)]
    pub min_size: usize,
    /// Output mask (default: <input stem>_filtered.png next to the input)
    #[arg(long, value_name = "PNG")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttentionDemoArgs {
    /// Directory for a_cross.png, a_self.png, mask.png and summary.json
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Query pixel as COL,ROW (default: the hole pixel nearest the image center)
    #[arg(long, value_name = "COL,ROW")]
    pub query: Option<String>,
    /// Scene width in pixels
    #[arg(long, default_value_t = defaults::DEMO_WIDTH)]
    pub width: usize,
    /// Scene height in pixels
    #[arg(long, default_value_t = defaults::DEMO_HEIGHT)]
    pub height: usize,
    /// Focal length in pixels
    #[arg(long, default_value_t = defaults::DEMO_FOCAL)]
    pub focal: f64,
    /// Fourier frequency bands
    #[arg(long, default_value_t = defaults::BANDS)]
    pub bands: usize,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Matches from the source to the target frame (MCH1)
    #[arg(long, value_name = "MCH")]
    pub matches: PathBuf,
    /// Source depth (DPT1, or 16-bit PNG)
    #[arg(long, value_name = "FILE")]
    pub depth: PathBuf,
    /// Camera JSON with the shared intrinsics (pose ignored)
    #[arg(long, value_name = "JSON")]
    pub camera: PathBuf,
    /// Inlier reprojection threshold in pixels
    #[arg(long, default_value_t = defaults::INLIER_THRESHOLD)]
    pub threshold: f64,
    /// RANSAC success probability used for the adaptive iteration count
    #[arg(long, default_value_t = defaults::RANSAC_CONFIDENCE)]
    pub confidence: f64,
    /// RANSAC seed
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    /// Output camera JSON with the estimated pose, or - for standard output
    #[arg(long, value_name = "JSON")]
    pub out: String,
    /// Inlier sidecar JSON {inliers, reprojection_rmse} (default: <out stem>_inliers.json)
    #[arg(long, value_name = "JSON")]
    pub inliers: Option<PathBuf>,
    /// Depth units per 16-bit PNG step
    #[arg(long, default_value_t = defaults::DEPTH_PNG_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset root directory
    #[arg(long, value_name = "DIR")]
    pub root: PathBuf,
    /// Smallest frame interval of a pair
    #[arg(long, default_value_t = defaults::MIN_INTERVAL)]
    pub min_interval: usize,
    /// Largest frame interval of a pair
    #[arg(long, default_value_t = defaults::MAX_INTERVAL)]
    pub max_interval: usize,
    /// Distance between anchor frames
    #[arg(long, default_value_t = defaults::STRIDE)]
    pub stride: usize,
    /// Partners sampled per anchor frame
    #[arg(long, default_value_t = defaults::PARTNERS)]
    pub partners: usize,
    /// Minimum mean depth confidence of frame i
    #[arg(long, default_value_t = defaults::CONF_THRESHOLD)]
    pub conf_threshold: f64,
    /// PnP-RANSAC inlier threshold in pixels
    #[arg(long, default_value_t = defaults::INLIER_THRESHOLD)]
    pub inlier_threshold: f64,
    /// Sampling and RANSAC seed
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    /// Tag written to the manifest header
    #[arg(long, default_value = defaults::DATASET_TAG)]
    pub dataset_tag: String,
    /// Output manifest (JSON Lines), or - for standard output
    #[arg(long, value_name = "JSONL")]
    pub out: String,
    /// Ignore an existing manifest at --out instead of reusing its records
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneArg {
    /// Two views of a square in front of a backdrop (PNG, DPT1, camera JSON, exact mask)
    TwoPlane,
    /// The two-sequence dataset used by the manifest golden test
    Dataset,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Which fixture to write
    #[arg(long, value_enum)]
    pub scene: SceneArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Dataset for the manifest check (default: bundled fixture, regenerated if absent)
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    let outcome = (|| {
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(usage("--threads must be at least 1"));
            }
            // a pool may already exist when called in-process; keep it then
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        match &cli.command {
            Command::Warp(a) => cmd_warp(a),
            Command::Embed(a) => cmd_embed(a),
            Command::MaskFilter(a) => cmd_mask_filter(a),
            Command::AttentionDemo(a) => cmd_attention_demo(a),
            Command::Align(a) => cmd_align(a),
            Command::Prepare(a) => cmd_prepare(a),
            Command::Synth(a) => cmd_synth(a),
            Command::Selftest(a) => cmd_selftest(a),
        }
    })();
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

/// Parses the command line, then re-parses with flags from `--config` that
/// were not given explicitly.
fn parse(argv: &[OsString]) -> Result<Cli, i32> {
    let clap_fail = |e: clap::Error| {
        let _ = e.print();
        e.exit_code()
    };
    let matches = Cli::command().try_get_matches_from(argv).map_err(clap_fail)?;
    let cli = Cli::from_arg_matches(&matches).map_err(clap_fail)?;
    let Some(config) = &cli.config else {
        return Ok(cli);
    };
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let extra = match config_flags(config, sub_name, sub_matches) {
        Ok(extra) => extra,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            return Err(2);
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            return Err(1);
        }
    };
    let mut full = argv.to_vec();
    full.extend(extra);
    let matches = Cli::command().try_get_matches_from(full).map_err(clap_fail)?;
    Cli::from_arg_matches(&matches).map_err(clap_fail)
}

fn config_flags(path: &Path, sub_name: &str, sub_matches: &clap::ArgMatches) -> Result<Vec<OsString>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(usage(format!("{}: expected a JSON object", path.display())));
    };
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(sub_name).expect("parsed subcommand exists");
    let mut out = Vec::new();
    for (key, v) in map {
        let id = key.replace('-', "_");
        if id == "config" {
            return Err(usage("config files cannot name another config file"));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_id().as_str() == id)
            .ok_or_else(|| usage(format!("{}: unknown key {key:?} for {sub_name}", path.display())))?;
        if sub_matches.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().expect("all flags are long"));
        match v {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) => {}
            Value::Number(n) => {
                out.push(flag.into());
                out.push(n.to_string().into());
            }
            Value::String(s) => {
                out.push(flag.into());
                out.push(s.into());
            }
            other => return Err(usage(format!("{}: unsupported value {other} for {key:?}", path.display()))),
        }
    }
    Ok(out)
}

fn require(cond: bool, msg: &str) -> CmdResult {
    if cond {
        Ok(())
    } else {
        Err(usage(msg))
    }
}

fn cmd_warp(a: &WarpArgs) -> CmdResult {
    require(a.depth_scale.is_finite() && a.depth_scale > 0.0, "--depth-scale must be positive")?;
    require(a.min_occlusion_size != Some(0), "--min-occlusion-size must be at least 1")?;
    let image = io::read_image(&a.image)?;
    let depth = io::load_depth(&a.depth, a.depth_scale)?;
    let cam = io::read_camera(&a.camera)?;
    let k = cam.intrinsics()?;
    let pose = cam
        .pose()?
        .ok_or_else(|| Failure::Runtime(format!("{}: camera file has no pose", a.camera.display())))?;
    let mode = match a.mode {
        ModeArg::Forward => WarpMode::Forward,
        ModeArg::Inverse => WarpMode::Inverse,
    };
    let (out, mut mask) = warp(mode, &image, &depth, &pose, &k)?;
    if let Some(n) = a.min_occlusion_size {
        mask = filter_occlusion_mask(&mask, n)?;
    }
    io::write_image(&a.out, &out)?;
    if let Some(p) = &a.mask {
        io::write_mask(p, &mask)?;
    }
    eprintln!("warped {}x{}, {} hole pixels", k.width, k.height, mask.hole_count());
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> CmdResult {
    require(a.bands >= 1, "--bands must be at least 1")?;
    require(a.downscale >= 1, "--downscale must be at least 1")?;
    require(a.depth_scale.is_finite() && a.depth_scale > 0.0, "--depth-scale must be positive")?;
    let kind = ConditionKind::from(a.kind);
    require(
        kind == ConditionKind::Plucker || a.depth.is_some(),
        "--depth is required for this --kind",
    )?;
    require(
        kind != ConditionKind::WarpedImage || a.image.is_some(),
        "--image is required for --kind warped-image",
    )?;
    let cam = io::read_camera(&a.camera)?;
    let pose = cam
        .pose()?
        .ok_or_else(|| Failure::Runtime(format!("{}: camera file has no pose", a.camera.display())))?;
    let k = cam.intrinsics()?.downscaled(a.downscale)?;
    let depth = match &a.depth {
        Some(p) => Some(io::load_depth(p, a.depth_scale)?.downscaled(a.downscale)?),
        None => None,
    };
    let image = match &a.image {
        Some(p) => Some(io::read_image(p)?.downscaled(a.downscale)?),
        None => None,
    };
    let grid = ablation_condition(
        kind,
        &ConditionInputs {
            depth: depth.as_ref(),
            pose: Some(&pose),
            intrinsics: Some(&k),
            image: image.as_ref(),
            bands: Some(a.bands),
        },
    )?;
    io::write_embedding(&a.out, &grid)?;
    if let Some(dir) = &a.png_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for ch in 0..grid.channels() {
            let plane = FeatureGrid::from_fn(grid.width(), grid.height(), 1, |c, r, px| px[0] = grid.pixel(c, r)[ch]);
            let lo = plane.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let scaled = FeatureGrid::from_fn(grid.width(), grid.height(), 1, |c, r, px| {
                px[0] = (plane.pixel(c, r)[0] - lo) / span
            });
            io::write_image(&dir.join(format!("channel_{ch:02}.png")), &scaled)?;
        }
    }
    eprintln!("wrote {}x{}x{} embedding", grid.width(), grid.height(), grid.channels());
    Ok(())
}

/// `<stem>_filtered.png` next to the input.
pub fn default_filtered_path(mask: &Path) -> PathBuf {
    let stem = mask.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
    mask.with_file_name(format!("{stem}_filtered.png"))
}

fn cmd_mask_filter(a: &MaskFilterArgs) -> CmdResult {
    require(a.min_size >= 1, "--min-size must be at least 1")?;
    let mask = io::read_mask(&a.mask)?;
    let out = filter_occlusion_mask(&mask, a.min_size)?;
    let path = a.out.clone().unwrap_or_else(|| default_filtered_path(&a.mask));
    io::write_mask(&path, &out)?;
    eprintln!("{} -> {} hole pixels, wrote {}", mask.hole_count(), out.hole_count(), path.display());
    Ok(())
}

fn parse_query(s: &str) -> Result<(usize, usize), Failure> {
    let (c, r) = s.split_once(',').ok_or_else(|| usage("--query must be COL,ROW"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| usage("--query must be COL,ROW"));
    Ok((parse(c)?, parse(r)?))
}

fn cmd_attention_demo(a: &AttentionDemoArgs) -> CmdResult {
    require(a.width >= 2 && a.height >= 2, "--width and --height must be at least 2")?;
    require(a.focal.is_finite() && a.focal > 0.0, "--focal must be positive")?;
    require(a.bands >= 1, "--bands must be at least 1")?;
    let query = a.query.as_deref().map(parse_query).transpose()?;
    if let Some((c, r)) = query {
        require(c < a.width && r < a.height, "--query lies outside the image")?;
    }
    let cfg = TwoPlaneConfig {
        width: a.width,
        height: a.height,
        focal: a.focal,
        ..Default::default()
    };
    let (res, mask) = two_plane_attention(&cfg, a.bands)?;
    let (w, h) = (a.width, a.height);
    let (qc, qr) = match query {
        Some(q) => q,
        None => {
            let center = |i: usize| {
                let (c, r) = ((i % w) as f64 - w as f64 / 2.0, (i / w) as f64 - h as f64 / 2.0);
                c * c + r * r
            };
            let i = (0..w * h)
                .filter(|&i| mask.holes()[i])
                .min_by(|&x, &y| center(x).total_cmp(&center(y)))
                .unwrap_or(w * h / 2);
            (i % w, i / w)
        }
    };
    let q = qr * w + qc;
    let (cross, selfmap) = crate::attention::attention_heatmaps(&res, q, (h, w))?;
    let hi = cross.data().iter().chain(selfmap.data()).copied().fold(0.0, f64::max);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (name, grid) in [("a_cross.png", &cross), ("a_self.png", &selfmap)] {
        let p = a.out_dir.join(name);
        colorize(grid, 0.0, hi).save(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    io::write_mask(&a.out_dir.join("mask.png"), &mask)?;
    let (mut hole, mut filled) = ((0.0, 0usize), (0.0, 0usize));
    for (i, is_hole) in mask.holes().iter().enumerate() {
        let acc = if *is_hole { &mut hole } else { &mut filled };
        acc.0 += res.self_mass(i);
        acc.1 += 1;
    }
    let summary = serde_json::json!({
        "query": {"col": qc, "row": qr, "is_hole": mask.holes()[q]},
        "query_self_mass": res.self_mass(q),
        "query_cross_mass": res.cross_mass(q),
        "mean_self_mass_holes": hole.0 / hole.1.max(1) as f64,
        "mean_self_mass_warped": filled.0 / filled.1.max(1) as f64,
        "hole_pixels": hole.1,
        "warped_pixels": filled.1,
    });
    io::write_json(&a.out_dir.join("summary.json"), &summary)?;
    eprintln!(
        "query ({qc}, {qr}): self mass {:.4}; mean self mass holes {:.4}, warped {:.4}",
        res.self_mass(q),
        hole.0 / hole.1.max(1) as f64,
        filled.0 / filled.1.max(1) as f64
    );
    Ok(())
}

fn write_text(out: &str, text: &str) -> CmdResult {
    if out == "-" {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string()))
    } else {
        std::fs::write(out, text).map_err(|e| Error::io(out, e).into())
    }
}

fn cmd_align(a: &AlignArgs) -> CmdResult {
    require(a.threshold.is_finite() && a.threshold > 0.0, "--threshold must be positive")?;
    require((0.0..1.0).contains(&a.confidence), "--confidence must be in [0, 1)")?;
    require(a.depth_scale.is_finite() && a.depth_scale > 0.0, "--depth-scale must be positive")?;
    let cam = io::read_camera(&a.camera)?;
    let k = cam.intrinsics()?;
    let depth = io::load_depth(&a.depth, a.depth_scale)?;
    let all = io::read_matches(&a.matches)?;
    let usable = matches_with_depth(&depth, &all, &k);
    if usable.len() < all.len() {
        eprintln!("dropped {} matches without valid depth", all.len() - usable.len());
    }
    let corr = depth_to_correspondences(&depth, &usable, &k)?;
    let est = pnp_ransac_with(
        &corr,
        &k,
        &RansacOptions {
            inlier_threshold: a.threshold,
            confidence: a.confidence,
            seed: a.seed,
            ..Default::default()
        },
    )?;
    let mut text = serde_json::to_string_pretty(&io::CameraJson::new(&k, Some(&est.pose))).map_err(Error::from)?;
    text.push('\n');
    write_text(&a.out, &text)?;
    let sidecar = match (&a.inliers, a.out.as_str()) {
        (Some(p), _) => Some(p.clone()),
        (None, "-") => None,
        (None, out) => {
            let out = Path::new(out);
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pose");
            Some(out.with_file_name(format!("{stem}_inliers.json")))
        }
    };
    if let Some(p) = sidecar {
        io::write_json(
            &p,
            &io::InlierSidecar {
                inliers: est.inliers.clone(),
                reprojection_rmse: est.reprojection_rmse,
            },
        )?;
    }
    eprintln!(
        "{} of {} correspondences are inliers, rmse {:.4} px",
        est.inliers.len(),
        corr.len(),
        est.reprojection_rmse
    );
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> CmdResult {
    let cfg = ManifestConfig {
        sampling: PairSampling {
            min_interval: a.min_interval,
            max_interval: a.max_interval,
            stride: a.stride,
            partners: a.partners,
            seed: a.seed,
        },
        conf_threshold: a.conf_threshold,
        inlier_threshold: a.inlier_threshold,
        dataset_tag: a.dataset_tag.clone(),
        ..Default::default()
    };
    cfg.sampling.validate().map_err(|e| usage(e.to_string()))?;
    require((0.0..=1.0).contains(&a.conf_threshold), "--conf-threshold must be in [0, 1]")?;
    require(
        a.inlier_threshold.is_finite() && a.inlier_threshold > 0.0,
        "--inlier-threshold must be positive",
    )?;
    let previous = if a.out != "-" && !a.fresh && Path::new(&a.out).is_file() {
        Some(Manifest::read(Path::new(&a.out))?)
    } else {
        None
    };
    let outcome = build_manifest(&a.root, &cfg, previous.as_ref())?;
    for f in &outcome.failures {
        eprintln!(
            "skipped {} {}->{}: {}",
            f.sequence_id, f.pair.frame_i, f.pair.frame_j, f.reason
        );
    }
    let m = &outcome.manifest;
    if a.out == "-" {
        write_text("-", &m.to_jsonl()?)?;
    } else {
        m.write(Path::new(&a.out))?;
    }
    let s = m.stats;
    eprintln!(
        "{} sequences, {} pairs sampled: {} kept, {} low confidence, {} errors",
        s.sequences, s.sampled, s.kept, s.excluded_low_confidence, s.excluded_errors
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    match a.scene {
        SceneArg::TwoPlane => write_two_plane(&a.out, &TwoPlaneConfig::default())?,
        SceneArg::Dataset => write_fixture_dataset(&a.out)?,
    }
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> CmdResult {
    let reports = run_all(a.dataset.as_deref());
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} criteria failed", reports.len())));
    }
    println!("all {} criteria passed", reports.len());
    Ok(())
}
