//! The `smoj` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 parse, 3 validation, 4 runtime.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use smoj_core::animation::emotion_preset;
use smoj_core::fit::{fit_with, FitConfig, FitError, FitRecord, FitView};
use smoj_core::loss::LossWeights;
use smoj_core::render::{turntable_cameras, Turntable};
use smoj_core::{
    blend, component_deltas, render_with, validate_asset, AvatarAsset, BlendWeights, Camera,
    Gaussian, GaussianSet, RenderConfig, RenderOutput,
};

use crate::asset_io::{load_asset, read_asset, save_asset, AssetIoError};
use crate::bench::{self, BenchConfig};
use crate::cameras::{read_cameras, write_cameras, CameraFileError};
use crate::config::{ConfigError, Mode, Overrides, Settings};
use crate::image::{write_png, Image8};
use crate::smim::{read_smim, write_smim, RawImage, SmimError};
use crate::stylizer::{self, MockConfig, MockMode, StylizeError, StylizeParams, StylizeRequest};
use crate::timeline::{read_timeline, TimelineFileError};
use crate::{serve, synth, RayonExecutor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Parse = 2,
    Validation = 3,
    Runtime = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn new(code: ExitCode, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn usage(m: impl std::fmt::Display) -> Self {
        Self::new(ExitCode::Usage, m)
    }

    fn runtime(m: impl std::fmt::Display) -> Self {
        Self::new(ExitCode::Runtime, m)
    }
}

impl From<AssetIoError> for CliError {
    fn from(e: AssetIoError) -> Self {
        let code = match &e {
            AssetIoError::Parse { .. } => ExitCode::Parse,
            AssetIoError::Invalid { .. } => ExitCode::Validation,
            AssetIoError::Io { .. } | AssetIoError::Encode { .. } => ExitCode::Runtime,
        };
        let mut message = e.to_string();
        if let AssetIoError::Invalid { report, .. } = &e {
            for v in report {
                write!(message, "\n  {v}").unwrap();
            }
        }
        Self::new(code, message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Read { .. } => ExitCode::Runtime,
            ConfigError::Parse { .. } => ExitCode::Parse,
            ConfigError::Env { .. } => ExitCode::Usage,
        };
        Self::new(code, e)
    }
}

impl From<CameraFileError> for CliError {
    fn from(e: CameraFileError) -> Self {
        let code = match e {
            CameraFileError::Io(_) => ExitCode::Runtime,
            _ => ExitCode::Parse,
        };
        Self::new(code, format!("camera file: {e}"))
    }
}

impl From<TimelineFileError> for CliError {
    fn from(e: TimelineFileError) -> Self {
        let code = match e {
            TimelineFileError::Io(_) => ExitCode::Runtime,
            TimelineFileError::Channels { .. } | TimelineFileError::Timeline(_) => {
                ExitCode::Validation
            }
            _ => ExitCode::Parse,
        };
        Self::new(code, format!("timeline: {e}"))
    }
}

impl From<SmimError> for CliError {
    fn from(e: SmimError) -> Self {
        let code = match e {
            SmimError::Io(_) => ExitCode::Runtime,
            _ => ExitCode::Parse,
        };
        Self::new(code, e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "smoj", version, about = "Gaussian-splat avatar toolkit")]
pub struct Cli {
    /// TOML file with default settings (width, height, mode, fps,
    /// iterations, seed, port, endpoint, threads).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SettingFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// Layered settings; `SMOJ_<NAME>` environment variables override these.
#[derive(Debug, Default, Args)]
pub struct SettingFlags {
    #[arg(long, global = true)]
    pub width: Option<u32>,
    #[arg(long, global = true)]
    pub height: Option<u32>,
    /// 3dgs or 2dgs.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Stylization service base URL.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl SettingFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            width: self.width,
            height: self.height,
            mode: self.mode,
            fps: self.fps,
            iterations: self.iterations,
            seed: self.seed,
            port: self.port,
            endpoint: self.endpoint.clone(),
            threads: self.threads,
        }
    }
}

/// Camera placement shared by the rendering commands.
#[derive(Debug, Args)]
pub struct ViewArgs {
    /// Camera distance from the rest-pose centroid.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    pub fov: f64,
}

/// Pose selection: explicit weights or a named preset.
#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Space-separated blend weights, one per channel.
    #[arg(long, conflicts_with = "preset", allow_hyphen_values = true)]
    pub weights: Option<String>,
    /// Emotion preset (neutrality, happiness, frustration, playfulness,
    /// anger, surprise).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print an asset summary and validation report.
    Inspect {
        #[arg(long)]
        asset: PathBuf,
    },
    /// Render views to PNG plus raw color, alpha, depth (and normal) buffers.
    Render {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of views on a sphere around the avatar; 1 is frontal.
        #[arg(long, default_value_t = 1)]
        turntable: usize,
        #[command(flatten)]
        view: ViewArgs,
        #[command(flatten)]
        pose: PoseArgs,
    },
    /// Render a blendshape timeline frame by frame with timing statistics.
    Animate {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        timeline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Fit an asset's rest pose to rendered target views.
    Fit {
        /// Directory written by `render` (cameras.txt and view buffers).
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Standard deviation of noise added to initial positions.
        #[arg(long, default_value_t = 0.0)]
        perturb_position: f64,
        /// Standard deviation of noise added to initial colors.
        #[arg(long, default_value_t = 0.0)]
        perturb_color: f64,
        #[arg(long)]
        lambda_normal: Option<f64>,
        #[arg(long)]
        lambda_dist: Option<f64>,
        /// Views per step; all views by default.
        #[arg(long)]
        views_per_step: Option<usize>,
        /// Print one loss line every this many iterations.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Measure blend + render throughput over resolutions and splat counts.
    Bench {
        /// Asset to resample; a synthetic head otherwise.
        #[arg(long)]
        asset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [256u32, 512])]
        resolutions: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 10_000, 50_000])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 4 if the gated cell misses the FPS floor.
        #[arg(long)]
        enforce_floor: bool,
    },
    /// Send a frontal render (or a PNG) to the stylization service.
    Stylize {
        #[arg(long, required_unless_present = "image")]
        asset: Option<PathBuf>,
        #[arg(long, conflicts_with = "asset")]
        image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0.5)]
        strength: f64,
        #[arg(long, default_value_t = 0.5)]
        edge: f64,
        #[arg(long, default_value_t = 0.5)]
        identity: f64,
        /// Seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        #[command(flatten)]
        view: ViewArgs,
        #[command(flatten)]
        pose: PoseArgs,
    },
    /// Serve the viewer, the asset and the live-drive sockets.
    Serve {
        #[arg(long)]
        asset: PathBuf,
        /// Static viewer bundle directory.
        #[arg(long)]
        viewer: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
    /// Run the deterministic stylization mock.
    MockStylizer {
        #[arg(long, default_value = "echo")]
        mock_mode: MockMode,
        /// Delay of the slow mode, in milliseconds.
        #[arg(long, default_value_t = 5000)]
        delay_ms: u64,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
    /// Write a seeded synthetic asset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        splats: usize,
        /// `head` (expressive) or `random` (unstructured rest pose).
        #[arg(long, default_value = "head")]
        kind: String,
    },
    /// Write blend fixtures for viewer parity tests: weight vectors and
    /// the blended positions they produce.
    Fixtures {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

struct Ctx<'a> {
    settings: Settings,
    out: &'a mut dyn std::io::Write,
}

impl Ctx<'_> {
    fn executor(&self) -> Result<RayonExecutor, CliError> {
        match self.settings.threads {
            0 => Ok(RayonExecutor::global()),
            n => RayonExecutor::with_threads(n).map_err(CliError::runtime),
        }
    }

    fn render_config(&self) -> RenderConfig {
        RenderConfig {
            mode: self.settings.mode.into(),
            ..RenderConfig::default()
        }
    }

    fn say(&mut self, line: impl std::fmt::Display) -> Result<(), CliError> {
        writeln!(self.out, "{line}").map_err(CliError::runtime)
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Parses argv and env and runs the command, writing reports to `out`.
pub fn run<I, T>(
    args: I,
    env: Vec<(String, String)>,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            write!(out, "{e}").map_err(CliError::runtime)?;
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::usage(
                text.trim_start_matches("error: ").trim_end(),
            ));
        }
    };
    let file = match &cli.config {
        Some(p) => Overrides::from_file(p)?,
        None => Overrides::default(),
    };
    let env = Overrides::from_env(env)?;
    let settings = Settings::resolve(env, cli.settings.overrides(), file);
    let mut ctx = Ctx { settings, out };
    match cli.command {
        Command::Inspect { asset } => inspect(&mut ctx, &asset),
        Command::Render {
            asset,
            out,
            turntable,
            view,
            pose,
        } => render_cmd(&mut ctx, &asset, &out, turntable, &view, &pose),
        Command::Animate {
            asset,
            timeline,
            out,
            view,
        } => animate(&mut ctx, &asset, &timeline, &out, &view),
        Command::Fit {
            targets,
            init,
            out,
            perturb_position,
            perturb_color,
            lambda_normal,
            lambda_dist,
            views_per_step,
            log_every,
        } => fit_cmd(
            &mut ctx,
            FitArgs {
                targets,
                init,
                out,
                perturb: (perturb_position, perturb_color),
                lambda_normal,
                lambda_dist,
                views_per_step,
                log_every,
            },
        ),
        Command::Bench {
            asset,
            resolutions,
            counts,
            frames,
            out,
            enforce_floor,
        } => bench_cmd(
            &mut ctx,
            asset.as_deref(),
            resolutions,
            counts,
            frames,
            out.as_deref(),
            enforce_floor,
        ),
        Command::Stylize {
            asset,
            image,
            out,
            prompt,
            strength,
            edge,
            identity,
            timeout,
            view,
            pose,
        } => {
            let params = StylizeParams {
                prompt,
                strength,
                edge,
                identity,
            };
            stylize_cmd(
                &mut ctx,
                asset.as_deref(),
                image.as_deref(),
                &out,
                params,
                timeout,
                &view,
                &pose,
            )
        }
        Command::Serve {
            asset,
            viewer,
            bind,
        } => serve_cmd(&mut ctx, &asset, viewer, bind),
        Command::MockStylizer {
            mock_mode,
            delay_ms,
            bind,
        } => mock_cmd(&mut ctx, mock_mode, Duration::from_millis(delay_ms), bind),
        Command::Generate { out, splats, kind } => generate(&mut ctx, &out, splats, &kind),
        Command::Fixtures { asset, out, count } => fixtures(&mut ctx, &asset, &out, count),
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with<I, T>(args: I, env: Vec<(String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, env, &mut lock) {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {}", e.message);
            e.code as i32
        }
    }
}

fn inspect(ctx: &mut Ctx, path: &Path) -> Result<(), CliError> {
    let size = std::fs::metadata(path)
        .map_err(|e| io_error(path, e))?
        .len();
    let asset = read_asset(path)?;
    let mut report = String::new();
    writeln!(report, "file: {}", path.display()).unwrap();
    writeln!(report, "size: {size} bytes").unwrap();
    writeln!(report, "splats (M): {}", asset.splat_count()).unwrap();
    writeln!(report, "channels (K): {}", asset.channel_count()).unwrap();
    writeln!(
        report,
        "channel deltas (max |Δ| position/scale/orientation/color/opacity, unchanged splats):"
    )
    .unwrap();
    for d in component_deltas(&asset) {
        writeln!(
            report,
            "  {:<18} {:.4e} {:.4e} {:.4e} {:.4e} {:.4e} {}",
            d.channel,
            d.position.max_abs,
            d.scale.max_abs,
            d.orientation.max_abs,
            d.color.max_abs,
            d.opacity.max_abs,
            d.unchanged_splats
        )
        .unwrap();
    }
    let violations = validate_asset(&asset);
    if violations.is_empty() {
        writeln!(report, "validation: ok").unwrap();
    } else {
        writeln!(report, "validation: {} violation(s)", violations.len()).unwrap();
        for v in violations.iter().take(50) {
            writeln!(report, "  {v}").unwrap();
        }
        if violations.len() > 50 {
            writeln!(report, "  ... {} more", violations.len() - 50).unwrap();
        }
    }
    write!(ctx.out, "{report}").map_err(CliError::runtime)?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            ExitCode::Validation,
            "asset fails validation",
        ))
    }
}

fn pose_weights(asset: &AvatarAsset, pose: &PoseArgs) -> Result<BlendWeights, CliError> {
    let k = asset.channel_count();
    if let Some(text) = &pose.weights {
        let w = serve::parse_drive_frame(text, k)
            .map_err(|e| CliError::usage(format!("--weights: {e}")))?;
        return Ok(w);
    }
    if let Some(name) = &pose.preset {
        let w = emotion_preset(name).map_err(CliError::usage)?;
        if w.len() != k {
            return Err(CliError::new(
                ExitCode::Validation,
                format!(
                    "presets need the {}-channel profile, asset has {k}",
                    w.len()
                ),
            ));
        }
        return Ok(w);
    }
    Ok(BlendWeights::zeros(k))
}

fn view_cameras(
    ctx: &Ctx,
    rest: &GaussianSet,
    n: usize,
    view: &ViewArgs,
) -> Result<Vec<Camera>, CliError> {
    let tt = Turntable {
        n_views: n,
        radius: view.radius,
        width: ctx.settings.width,
        height: ctx.settings.height,
        fov_y_degrees: view.fov,
    };
    turntable_cameras(rest.centroid().unwrap_or([0.0; 3]), &tt).map_err(CliError::usage)
}

fn preview(out: &RenderOutput) -> Result<Image8, CliError> {
    Image8::from_unit_floats(out.width as u32, out.height as u32, 3, &out.rgb)
        .map_err(CliError::runtime)
}

/// Writes `<stem>.png` and the raw buffers of one view.
fn write_view(dir: &Path, stem: &str, out: &RenderOutput, normals: bool) -> Result<(), CliError> {
    let (h, w) = (out.height, out.width);
    let png = dir.join(format!("{stem}.png"));
    write_png(&png, &preview(out)?).map_err(|e| io_error(&png, e))?;
    let mut buffers = vec![
        ("rgb", 3, &out.rgb),
        ("alpha", 1, &out.alpha),
        ("depth", 1, &out.depth),
    ];
    if normals {
        buffers.push(("normal", 3, &out.normal));
    }
    for (name, c, data) in buffers {
        let img = RawImage::new(h, w, c, data.clone())?;
        write_smim(dir.join(format!("{stem}.{name}.smim")), &img)?;
    }
    Ok(())
}

fn render_cmd(
    ctx: &mut Ctx,
    asset_path: &Path,
    out: &Path,
    n: usize,
    view: &ViewArgs,
    pose: &PoseArgs,
) -> Result<(), CliError> {
    let asset = load_asset(asset_path)?;
    let weights = pose_weights(&asset, pose)?;
    let set = blend(&asset, &weights).map_err(CliError::runtime)?;
    let cams = view_cameras(ctx, &asset.rest, n, view)?;
    let cfg = ctx.render_config();
    let exec = ctx.executor()?;
    create_dir(out)?;
    for (k, cam) in cams.iter().enumerate() {
        let img = render_with(&exec, &set, cam, &cfg).map_err(CliError::runtime)?;
        write_view(
            out,
            &format!("view_{k:03}"),
            &img,
            ctx.settings.mode == Mode::Surfel,
        )?;
    }
    write_cameras(out.join("cameras.txt"), &cams)?;
    ctx.say(format!(
        "rendered {} view(s) at {}x{} to {}",
        cams.len(),
        ctx.settings.width,
        ctx.settings.height,
        out.display()
    ))
}

fn summary(name: &str, mut ms: Vec<f64>) -> String {
    ms.sort_by(f64::total_cmp);
    format!(
        "{name}_ms p50={:.3} p90={:.3} p99={:.3}",
        bench::percentile(&ms, 50.0),
        bench::percentile(&ms, 90.0),
        bench::percentile(&ms, 99.0)
    )
}

fn animate(
    ctx: &mut Ctx,
    asset_path: &Path,
    timeline: &Path,
    out: &Path,
    view: &ViewArgs,
) -> Result<(), CliError> {
    let asset = load_asset(asset_path)?;
    let tl = read_timeline(timeline)?;
    tl.check_channels(&asset.channel_names)?;
    let fps = ctx.settings.fps;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(CliError::usage(format!(
            "--fps must be positive, got {fps}"
        )));
    }
    let frames = tl
        .timeline
        .resample(fps)
        .map_err(|e| CliError::new(ExitCode::Validation, e))?;
    let cam = view_cameras(ctx, &asset.rest, 1, view)?[0];
    let cfg = ctx.render_config();
    let exec = ctx.executor()?;
    create_dir(out)?;
    let mut csv = String::from("frame,time,blend_ms,render_ms\n");
    let (mut blend_ms, mut render_ms) = (Vec::new(), Vec::new());
    for (i, (t, w)) in frames.iter().enumerate() {
        let t0 = Instant::now();
        let set = blend(&asset, w).map_err(CliError::runtime)?;
        let t1 = Instant::now();
        let img = render_with(&exec, &set, &cam, &cfg).map_err(CliError::runtime)?;
        let t2 = Instant::now();
        let png = out.join(format!("frame_{i:05}.png"));
        write_png(&png, &preview(&img)?).map_err(|e| io_error(&png, e))?;
        let (b, r) = ((t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3);
        writeln!(csv, "{i},{t},{b:.4},{r:.4}").unwrap();
        blend_ms.push(b);
        render_ms.push(r);
    }
    let timing = out.join("timing.csv");
    std::fs::write(&timing, csv).map_err(|e| io_error(&timing, e))?;
    ctx.say(format!("frames: {} at {fps} fps", frames.len()))?;
    ctx.say(summary("blend", blend_ms))?;
    ctx.say(summary("render", render_ms))
}

struct FitArgs {
    targets: PathBuf,
    init: PathBuf,
    out: PathBuf,
    perturb: (f64, f64),
    lambda_normal: Option<f64>,
    lambda_dist: Option<f64>,
    views_per_step: Option<usize>,
    log_every: usize,
}

/// Loads the views written by `render` from `dir`.
pub fn load_targets(dir: &Path) -> Result<Vec<FitView>, CliError> {
    let cams = read_cameras(dir.join("cameras.txt"))?;
    cams.into_iter()
        .enumerate()
        .map(|(k, camera)| {
            let rgb = read_smim(dir.join(format!("view_{k:03}.rgb.smim")))?;
            let alpha = read_smim(dir.join(format!("view_{k:03}.alpha.smim")))?;
            let size = (camera.height as usize, camera.width as usize);
            if (rgb.height, rgb.width, rgb.channels) != (size.0, size.1, 3)
                || (alpha.height, alpha.width, alpha.channels) != (size.0, size.1, 1)
            {
                return Err(CliError::new(
                    ExitCode::Validation,
                    format!(
                        "view {k}: buffer sizes do not match camera {}x{}",
                        size.1, size.0
                    ),
                ));
            }
            Ok(FitView {
                camera,
                rgb: rgb.data,
                mask: alpha.data,
            })
        })
        .collect()
}

/// Moves every expression component along with the fitted rest pose:
/// `θ_i' = θ_rest' + (θ_i − θ_rest)`, then restores the value ranges.
pub fn carry_components(init: &AvatarAsset, fitted: GaussianSet) -> AvatarAsset {
    let moved = |comp: &GaussianSet| {
        GaussianSet::new(
            comp.gaussians
                .iter()
                .zip(&init.rest.gaussians)
                .zip(&fitted.gaussians)
                .map(|((c, r), f)| {
                    let (c, r, f) = (c.to_array(), r.to_array(), f.to_array());
                    let mut a = [0f32; 14];
                    for i in 0..14 {
                        a[i] = (f64::from(f[i]) + f64::from(c[i]) - f64::from(r[i])) as f32;
                    }
                    let g = Gaussian::from_array(&a);
                    Gaussian::new(
                        g.position,
                        g.scale.map(|s| s.max(1e-6)),
                        if g.orientation_norm() > 1e-6 {
                            g.orientation
                        } else {
                            [1.0, 0.0, 0.0, 0.0]
                        },
                        g.color.map(|v| v.clamp(0.0, 1.0)),
                        g.opacity.clamp(0.0, 1.0),
                    )
                })
                .collect(),
        )
    };
    AvatarAsset {
        components: init.components.iter().map(moved).collect(),
        rest: fitted,
        channel_names: init.channel_names.clone(),
        metadata: init.metadata.clone(),
    }
}

fn history_csv(history: &[FitRecord]) -> String {
    let mut s = String::from("iter,total,render,normal,dist\n");
    for r in history {
        writeln!(s, "{r}").unwrap();
    }
    s
}

fn fit_cmd(ctx: &mut Ctx, a: FitArgs) -> Result<(), CliError> {
    let init = load_asset(&a.init)?;
    let views = load_targets(&a.targets)?;
    if ctx.settings.iterations == 0 {
        save_asset(&init, &a.out)?;
        return ctx.say("iterations = 0: wrote the initial asset unchanged");
    }
    let start = synth::perturb(&init.rest, a.perturb.0, a.perturb.1, ctx.settings.seed);
    let defaults = LossWeights::default();
    let cfg = FitConfig {
        iterations: ctx.settings.iterations,
        seed: ctx.settings.seed,
        views_per_step: a.views_per_step,
        render: ctx.render_config(),
        weights: LossWeights {
            normal: a.lambda_normal.unwrap_or(defaults.normal),
            dist: a.lambda_dist.unwrap_or(defaults.dist),
            ..defaults
        },
        ..FitConfig::default()
    };
    let exec = ctx.executor()?;
    let history_path = PathBuf::from(format!("{}.history.csv", a.out.display()));
    let write_history = |h: &[FitRecord]| {
        std::fs::write(&history_path, history_csv(h)).map_err(|e| io_error(&history_path, e))
    };
    let result = match fit_with(&exec, &views, &start, &cfg) {
        Ok(r) => r,
        Err(FitError::Diverged { iteration, history }) => {
            write_history(&history)?;
            return Err(CliError::runtime(format!(
                "fit diverged at iteration {iteration}"
            )));
        }
        Err(e @ (FitError::Config(_) | FitError::NoViews)) => return Err(CliError::usage(e)),
        Err(e @ (FitError::InvalidInit(_) | FitError::View { .. })) => {
            return Err(CliError::new(ExitCode::Validation, e))
        }
        Err(e) => return Err(CliError::runtime(e)),
    };
    ctx.say("iter,total,render,normal,dist")?;
    let every = a.log_every.max(1);
    for r in &result.history {
        if r.iteration % every == 0 || r.iteration + 1 == result.history.len() {
            ctx.say(r)?;
        }
    }
    write_history(&result.history)?;
    ctx.say("view,psnr_db")?;
    for (k, p) in result.final_psnr.iter().enumerate() {
        ctx.say(format!("{k},{p:.3}"))?;
    }
    let min = result
        .final_psnr
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    ctx.say(format!("min_psnr_db {min:.3}"))?;
    save_asset(&carry_components(&init, result.set), &a.out)?;
    Ok(())
}

fn bench_cmd(
    ctx: &mut Ctx,
    asset: Option<&Path>,
    resolutions: Vec<u32>,
    counts: Vec<usize>,
    frames: usize,
    out: Option<&Path>,
    enforce: bool,
) -> Result<(), CliError> {
    let base = asset.map(load_asset).transpose()?;
    let cfg = BenchConfig {
        resolutions,
        counts,
        frames,
        seed: ctx.settings.seed,
        render: ctx.render_config(),
        ..BenchConfig::default()
    };
    let exec = ctx.executor()?;
    let report = bench::run_bench(&exec, base.as_ref(), &cfg).map_err(CliError::runtime)?;
    let csv = report.to_csv();
    write!(ctx.out, "{csv}").map_err(CliError::runtime)?;
    if let Some(p) = out {
        std::fs::write(p, &csv).map_err(|e| io_error(p, e))?;
    }
    for r in report.rows.iter().filter(|r| !r.monotonic) {
        eprintln!(
            "warning: {}x{} with {} splats was faster than a smaller resolution",
            r.width, r.height, r.splats
        );
    }
    match report.floor_met() {
        Some(false) => {
            let msg = format!("gated cell is below {} FPS", bench::FPS_FLOOR);
            if enforce {
                return Err(CliError::runtime(msg));
            }
            eprintln!("note: {msg}");
        }
        Some(true) => eprintln!("note: gated cell meets {} FPS", bench::FPS_FLOOR),
        None => {}
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)
}

#[allow(clippy::too_many_arguments)]
fn stylize_cmd(
    ctx: &mut Ctx,
    asset: Option<&Path>,
    image: Option<&Path>,
    out: &Path,
    params: StylizeParams,
    timeout: f64,
    view: &ViewArgs,
    pose: &PoseArgs,
) -> Result<(), CliError> {
    params.validate().map_err(CliError::usage)?;
    let timeout = Duration::try_from_secs_f64(timeout)
        .ok()
        .filter(|t| !t.is_zero())
        .ok_or_else(|| CliError::usage("--timeout must be positive"))?;
    let png = match (asset, image) {
        (_, Some(p)) => std::fs::read(p).map_err(|e| io_error(p, e))?,
        (Some(p), None) => {
            let asset = load_asset(p)?;
            let set = blend(&asset, &pose_weights(&asset, pose)?).map_err(CliError::runtime)?;
            let cam = view_cameras(ctx, &asset.rest, 1, view)?[0];
            let img = render_with(&ctx.executor()?, &set, &cam, &ctx.render_config())
                .map_err(CliError::runtime)?;
            preview(&img)?.encode_png().map_err(CliError::runtime)?
        }
        (None, None) => return Err(CliError::usage("need --asset or --image")),
    };
    let req = StylizeRequest {
        image: png,
        params,
        timeout,
    };
    let endpoint = ctx.settings.endpoint.clone();
    let resp = runtime()?
        .block_on(stylizer::stylize(&req, &endpoint))
        .map_err(|e| {
            let code = match e {
                StylizeError::InvalidRequest(_) => ExitCode::Usage,
                StylizeError::Malformed(_) | StylizeError::Dimension { .. } => ExitCode::Parse,
                _ => ExitCode::Runtime,
            };
            CliError::new(code, e)
        })?;
    std::fs::write(out, &resp.image).map_err(|e| io_error(out, e))?;
    ctx.say(format!(
        "stylized {}x{} in {:.3} s (service {}, mode {})",
        resp.width,
        resp.height,
        resp.latency.as_secs_f64(),
        resp.service_latency
            .map_or("n/a".into(), |s| format!("{s:.3} s")),
        resp.mode.as_deref().unwrap_or("n/a")
    ))
}

fn serve_cmd(
    ctx: &mut Ctx,
    asset: &Path,
    viewer: Option<PathBuf>,
    bind: IpAddr,
) -> Result<(), CliError> {
    let parsed = load_asset(asset)?;
    let bytes = std::fs::read(asset).map_err(|e| io_error(asset, e))?;
    let cfg = serve::ServeConfig {
        asset: bytes.into(),
        channels: parsed.channel_count(),
        viewer_dir: viewer,
    };
    let addr = SocketAddr::new(bind, ctx.settings.port);
    let rt = runtime()?;
    let handle = rt
        .block_on(serve::run_server(addr, cfg))
        .map_err(|e| CliError::runtime(format!("cannot listen on {addr}: {e}")))?;
    ctx.say(format!("serving on http://{}", handle.addr))?;
    ctx.out.flush().map_err(CliError::runtime)?;
    rt.block_on(async {
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await
    })
    .map_err(CliError::runtime)
}

fn mock_cmd(ctx: &mut Ctx, mode: MockMode, delay: Duration, bind: IpAddr) -> Result<(), CliError> {
    let addr = SocketAddr::new(bind, ctx.settings.port);
    let rt = runtime()?;
    let handle = rt
        .block_on(stylizer::run_mock_server(addr, MockConfig { mode, delay }))
        .map_err(|e| CliError::runtime(format!("cannot listen on {addr}: {e}")))?;
    ctx.say(format!("mock stylizer ({mode}) on {}", handle.endpoint()))?;
    ctx.out.flush().map_err(CliError::runtime)?;
    rt.block_on(async {
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await
    })
    .map_err(CliError::runtime)
}

fn generate(ctx: &mut Ctx, out: &Path, splats: usize, kind: &str) -> Result<(), CliError> {
    let seed = ctx.settings.seed;
    let asset = match kind {
        "head" => synth::synthetic_head(splats, seed),
        "random" => AvatarAsset::from_rest(synth::random_scene(splats, seed)),
        other => {
            return Err(CliError::usage(format!(
                "unknown kind {other:?} (head or random)"
            )))
        }
    };
    let size = save_asset(&asset, out)?;
    ctx.say(format!(
        "wrote {} ({splats} splats, {size} bytes)",
        out.display()
    ))
}

/// Seeded weight vectors: the zero vector, every one-hot up to `count`,
/// then uniform random vectors.
pub fn fixture_weights(k: usize, count: usize, seed: u64) -> Vec<BlendWeights> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| match i {
            0 => BlendWeights::zeros(k),
            i if i <= k => BlendWeights::one_hot(k, i - 1),
            _ => BlendWeights((0..k).map(|_| rng.random_range(0.0f32..=1.0)).collect()),
        })
        .collect()
}

fn fixtures(ctx: &mut Ctx, asset_path: &Path, out: &Path, count: usize) -> Result<(), CliError> {
    let asset = load_asset(asset_path)?;
    create_dir(out)?;
    let mut manifest = format!(
        "splats {}\nchannels {}\nnames {}\n",
        asset.splat_count(),
        asset.channel_count(),
        asset.channel_names.join(",")
    );
    for (i, w) in fixture_weights(asset.channel_count(), count, ctx.settings.seed)
        .iter()
        .enumerate()
    {
        let set = blend(&asset, w).map_err(CliError::runtime)?;
        let name = format!("blend_{i:02}.txt");
        let mut text = String::from("weights");
        for v in &w.0 {
            write!(text, " {v:?}").unwrap();
        }
        text.push('\n');
        for g in &set.gaussians {
            let [x, y, z] = g.position;
            writeln!(text, "{x:?} {y:?} {z:?}").unwrap();
        }
        let path = out.join(&name);
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        writeln!(manifest, "fixture {name}").unwrap();
    }
    let path = out.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| io_error(&path, e))?;
    ctx.say(format!(
        "wrote {count} blend fixture(s) to {}",
        out.display()
    ))
}
