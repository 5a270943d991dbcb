//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ppln_core::analysis::{analyze, read_records, Grouping, Metric, MetricReport, PMethod};
use ppln_core::orchard::{encode_depth_png, encode_mask_png, encode_rgb_png, render_frame};
use ppln_core::perception::FileSegmenter;
use ppln_core::seed::derive_seed;
use ppln_core::{generate_scene, Mission, MissionReport, OrchardScene, ReviewDecision};
use serde::Serialize;

use crate::config::AppConfig;
use crate::views::{plan_targets, TargetsFile};
use crate::CliError;

pub const STATS_SCHEMA: &str = "stats/1";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(
    name = "ppln",
    version,
    about = "Robotic apple-pollination pipeline simulator"
)]
pub struct Cli {
    /// JSON config file; omitted fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic orchard scene.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene to depth, RGB, and ground-truth mask PNGs.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render, segment, estimate poses, and auto-filter targets.
    Perceive {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seed: u64,
        /// 16-bit label PNG to use instead of the ground-truth segmenter.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Order the non-rejected targets of a targets file.
    Plan {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full headless mission.
    Run {
        /// Scene file; generated from the config and seed when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// JSON array of review decisions applied before the mission starts.
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Transition trace, one JSON object per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Every mission event, one JSON object per line.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Summarize a mission report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Rank statistics on a fruit-quality CSV.
    Stats {
        #[arg(long)]
        csv: PathBuf,
        /// Column name, or `all`.
        #[arg(long)]
        metric: String,
        #[arg(long, value_enum, default_value_t = GroupingArg::Treatment)]
        grouping: GroupingArg,
        /// Keep only rows from this site.
        #[arg(long)]
        site: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "PPLN_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static console assets served under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Directory for session snapshots.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    Treatment,
    SiteTreatment,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::Treatment => Grouping::Treatment,
            GroupingArg::SiteTreatment => Grouping::SiteTreatment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Exact,
    Asymptotic,
}

impl From<MethodArg> for PMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => PMethod::Auto,
            MethodArg::Exact => PMethod::Exact,
            MethodArg::Asymptotic => PMethod::Asymptotic,
        }
    }
}

#[derive(Debug, Serialize)]
struct StatsOutput {
    schema: &'static str,
    records: usize,
    site: Option<String>,
    reports: Vec<MetricReport>,
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { seed, out } => {
            let scene = generate_scene(&config.scene, seed)?;
            write_output(out.as_deref(), &scene.to_json()?)
        }
        Command::Render {
            scene,
            seed,
            out_dir,
        } => render(&config, &read_scene(&scene)?, seed, &out_dir),
        Command::Perceive {
            scene,
            seed,
            masks,
            out,
        } => {
            let mut mission = Mission::new(read_scene(&scene)?, config.mission, seed)?;
            match masks {
                Some(mask_path) => mission.perceive_with(&FileSegmenter {
                    mask_path,
                    confidences: Default::default(),
                })?,
                None => mission.perceive()?,
            }
            let frame = mission.frame().expect("perceive renders a frame");
            let file = TargetsFile::new(frame.width(), frame.height(), mission.targets());
            write_output(out.as_deref(), &serde_json::to_string_pretty(&file)?)
        }
        Command::Plan { targets, seed, out } => {
            let file: TargetsFile = serde_json::from_str(&read_text(&targets)?)
                .map_err(|e| CliError::Domain(format!("{}: {e}", targets.display())))?;
            let plan = plan_targets(&file.targets, &config.mission, seed)?;
            write_output(out.as_deref(), &serde_json::to_string_pretty(&plan)?)
        }
        Command::Run {
            scene,
            seed,
            decisions,
            out,
            trace,
            events,
        } => {
            let scene = match scene {
                Some(path) => read_scene(&path)?,
                None => generate_scene(&config.scene, derive_seed(seed, "scene", 0))?,
            };
            let decisions: Vec<ReviewDecision> = match decisions {
                Some(path) => serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?,
                None => Vec::new(),
            };
            let mut mission = Mission::new(scene, config.mission, seed)?;
            mission.perceive()?;
            mission.review(&decisions)?;
            let report = mission.finish()?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                ppln_core::mission::write_trace(&mission.trace(), &mut buf)
                    .map_err(|e| CliError::io(&path, e))?;
                write_bytes(&path, &buf)?;
            }
            if let Some(path) = events {
                let mut buf = Vec::new();
                mission.write_events(&mut buf)?;
                write_bytes(&path, &buf)?;
            }
            write_output(out.as_deref(), &report.to_json()?)
        }
        Command::Report { report } => {
            let report = MissionReport::from_json(&read_text(&report)?)?;
            print!("{}", summarize_report(&report));
            Ok(())
        }
        Command::Stats {
            csv,
            metric,
            grouping,
            site,
            alpha,
            method,
            out,
        } => {
            let file = std::fs::File::open(&csv).map_err(|e| CliError::io(&csv, e))?;
            let mut records = read_records(file)?;
            if let Some(site) = &site {
                records.retain(|r| &r.site == site);
            }
            let metrics: Vec<Metric> = if metric == "all" {
                Metric::ALL.to_vec()
            } else {
                vec![metric.parse()?]
            };
            let alpha = alpha.unwrap_or(config.stats.alpha);
            let method = method.map(PMethod::from).unwrap_or(config.stats.method);
            let reports = metrics
                .into_iter()
                .map(|m| analyze(&records, m, grouping.into(), alpha, method))
                .collect::<Result<Vec<_>, _>>()?;
            let output = StatsOutput {
                schema: STATS_SCHEMA,
                records: records.len(),
                site,
                reports,
            };
            write_output(out.as_deref(), &serde_json::to_string_pretty(&output)?)
        }
        Command::Serve {
            port,
            host,
            ui_dir,
            snapshot_dir,
        } => {
            let options = crate::service::ServiceOptions {
                defaults: config,
                ui_dir,
                snapshot_dir,
            };
            crate::service::serve(&host, port, options)
        }
        Command::Config => write_output(None, &serde_json::to_string_pretty(&config)?),
    }
}

fn render(
    config: &AppConfig,
    scene: &OrchardScene,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let m = &config.mission;
    m.validate()?;
    let (frame, truth) = render_frame(
        scene,
        &m.camera,
        &m.camera_pose,
        &m.render,
        derive_seed(seed, "render", 0),
    );
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    write_bytes(&out_dir.join("depth.png"), &encode_depth_png(&frame)?)?;
    write_bytes(&out_dir.join("rgb.png"), &encode_rgb_png(&frame)?)?;
    write_bytes(&out_dir.join("masks.png"), &encode_mask_png(&truth)?)
}

/// Plain-text digest of a mission report.
pub fn summarize_report(report: &MissionReport) -> String {
    let mut s = String::new();
    let c = &report.counts;
    let _ = writeln!(
        s,
        "seed {}  scene {} clusters / {} flowers",
        report.seed, report.scene_clusters, report.scene_flowers
    );
    let _ = writeln!(
        s,
        "detected {}  sprayed {}  plan_failed {}  auto_rejected {}  operator_rejected {}",
        c.detected, c.sprayed, c.plan_failed, c.auto_rejected, c.operator_rejected
    );
    match (&report.cycle_time.stage_means, report.cycle_time.mean_total) {
        (Some(m), Some(total)) => {
            let _ = writeln!(
                s,
                "mean cycle {total:.3} s  (segmentation {:.3}, pose {:.3}, plan {:.3}, execute {:.3}, spray {:.3})",
                m.segmentation, m.pose_estimation, m.plan, m.execute, m.spray
            );
        }
        _ => {
            let _ = writeln!(s, "mean cycle n/a (nothing sprayed)");
        }
    }
    if let Some(f) = &report.fruit_set {
        let _ = writeln!(
            s,
            "fruit set {}/{} flowers ({:.1}%), {}/{} clusters ({:.1}%) at {} g/l",
            f.flowers_set,
            f.flowers_total,
            f.flower_pct,
            f.clusters_set,
            f.clusters_total,
            f.cluster_pct,
            report.pollen_concentration
        );
    }
    let _ = writeln!(s, "mission clock {:.3} s", report.clock);
    s
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_scene(path: &Path) -> Result<OrchardScene, CliError> {
    OrchardScene::from_json(&read_text(path)?)
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(path) => write_bytes(path, text.as_bytes()),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}
