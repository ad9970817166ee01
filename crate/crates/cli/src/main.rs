//! Dual-camera all-in-focus pipeline CLI.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aifield::Error;
use aifield_cli::{commands, config};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "aifield",
    about = "Dual-camera all-in-focus radiance fields: generate, align, train, render",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a single config key (repeatable), e.g. --set views=8.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> aifield::Result<RunConfig> {
        RunConfig::from_sources(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dual-camera dataset.
    Gen {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Master seed (shorthand for --set master_seed=N).
        #[arg(long)]
        seed: Option<u64>,
        /// View count (shorthand for --set views=N).
        #[arg(long)]
        views: Option<usize>,
        /// Resolution WxH (shorthand for --set width/height).
        #[arg(long)]
        res: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Align the ultra-wide view onto the main view.
    Align {
        /// Dataset directory (batch mode over all training views).
        #[arg(long, conflicts_with_all = ["main", "ultra"])]
        dataset: Option<PathBuf>,
        /// Main image (pair mode, with --ultra and --out).
        #[arg(long, requires = "ultra", requires = "out")]
        main: Option<PathBuf>,
        /// Ultra-wide image (pair mode).
        #[arg(long)]
        ultra: Option<PathBuf>,
        /// Output directory for pair-mode artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the fused scene (stages 1-3).
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        /// 1, 2, 3 or all.
        #[arg(long, default_value = "all")]
        stage: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render an all-in-focus novel view (PNG + disparity PFM).
    Render {
        #[arg(long)]
        bundle: PathBuf,
        /// Dataset view id.
        #[arg(long)]
        view: Option<usize>,
        /// Camera pose JSON file.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Output path prefix (.png / .pfm appended).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Refocus a trained scene onto a chosen focal disparity.
    Refocus {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        view: Option<usize>,
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Blur intensity A.
        #[arg(long)]
        aperture: f64,
        /// Focal disparity D_f.
        #[arg(long)]
        focus: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Split-diopter render: two in-focus disparity planes.
    Split {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        view: Option<usize>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        aperture: f64,
        /// Near focal disparity (the larger value).
        #[arg(long)]
        focus_near: f64,
        /// Far focal disparity.
        #[arg(long)]
        focus_far: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Bokeh-render a sharp image under a disparity map and (A, D_f).
    Bokeh {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        disparity: PathBuf,
        #[arg(long)]
        aperture: f64,
        #[arg(long)]
        focus: f64,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_defocus: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// PSNR/SSIM table between two directories of PNGs.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) => 2,
        Error::Shape(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::Numeric(_) | Error::Estimation(_) => 4,
    }
}

fn run() -> aifield::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen {
            out,
            seed,
            views,
            res,
            cfg,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(views) = views {
                cfg.views = views;
            }
            if let Some(res) = res {
                let (w, h) = res.split_once('x').ok_or_else(|| {
                    Error::Parameter(format!("--res expects WxH, got `{res}`"))
                })?;
                cfg.width = w
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad width `{w}`")))?;
                cfg.height = h
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad height `{h}`")))?;
            }
            commands::cmd_gen(&out, &cfg)
        }
        Command::Align {
            dataset,
            main,
            ultra,
            out,
            cfg,
        } => {
            let cfg = cfg.load()?;
            match (dataset, main, ultra, out) {
                (Some(ds), None, None, None) => commands::cmd_align_dataset(&ds, &cfg),
                (None, Some(m), Some(u), Some(o)) => commands::cmd_align_pair(&m, &u, &o, &cfg),
                _ => Err(Error::Parameter(
                    "align wants either --dataset or the --main/--ultra/--out triple".into(),
                )),
            }
        }
        Command::Train {
            dataset,
            bundle,
            stage,
            cfg,
        } => {
            let cfg = cfg.load()?;
            commands::cmd_train(&dataset, &bundle, &stage, &cfg)
        }
        Command::Render {
            bundle,
            view,
            pose,
            out,
            cfg: _,
        } => commands::cmd_render(&bundle, view, pose.as_deref(), &out),
        Command::Refocus {
            bundle,
            view,
            pose,
            aperture,
            focus,
            out,
            cfg,
        } => {
            let cfg = cfg.load()?;
            commands::cmd_refocus(&bundle, view, pose.as_deref(), aperture, focus, &out, &cfg)
        }
        Command::Split {
            bundle,
            view,
            pose,
            aperture,
            focus_near,
            focus_far,
            out,
            cfg,
        } => {
            let cfg = cfg.load()?;
            commands::cmd_split(
                &bundle,
                view,
                pose.as_deref(),
                aperture,
                focus_near,
                focus_far,
                &out,
                &cfg,
            )
        }
        Command::Bokeh {
            image,
            disparity,
            aperture,
            focus,
            out_image,
            out_defocus,
            cfg,
        } => {
            let cfg = cfg.load()?;
            commands::cmd_bokeh(
                &image,
                &disparity,
                aperture,
                focus,
                &out_image,
                &out_defocus,
                &cfg,
            )
        }
        Command::Eval { pred, gt, out } => commands::cmd_eval(&pred, &gt, out.as_deref()),
        Command::Config { cfg } => {
            let cfg = cfg.load()?;
            print!("{}", cfg.dump());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
