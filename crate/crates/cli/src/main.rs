use std::collections::BTreeSet;
use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use barlow_core::dataset::{load_bundle, GroupingKind};
use barlow_core::report;
use barlow_core::rules::AnalysisConfig;
use barlow_core::selection::DEFAULT_TOP_K;
use barlow_core::synth::{self, SyntheticSpec};
use barlow_core::viz::{self, DEFAULT_HEATMAP_SIZE};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "barlow",
    version,
    about = "Mine failure modes from robust feature representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one class grouping and write a report.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        grouping: Kind,
        #[arg(long = "class")]
        class_index: u32,
        #[command(flatten)]
        config: ConfigArgs,
        /// Report path; a `.txt` summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze every class and write per-class reports plus summaries.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        grouping: SweepKind,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a feature-map file as a normalized grayscale PGM heatmap.
    Heatmap {
        #[arg(long)]
        fmap: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HEATMAP_SIZE)]
        width: usize,
        #[arg(long, default_value_t = DEFAULT_HEATMAP_SIZE)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic bundle from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the analysis API (and optionally the explorer assets).
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = Ipv4Addr::LOCALHOST)]
        host: Ipv4Addr,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Comma-separated feature indices to exclude.
    #[arg(long, value_delimiter = ',')]
    disable: Vec<usize>,
}

impl ConfigArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            k: self.k,
            max_depth: self.depth,
            rho: self.rho,
            tau: self.tau,
            disabled: self.disable.iter().copied().collect::<BTreeSet<_>>(),
            ..AnalysisConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Label,
    Prediction,
}

impl From<Kind> for GroupingKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Label => GroupingKind::Label,
            Kind::Prediction => GroupingKind::Prediction,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Label,
    Prediction,
    Both,
}

impl SweepKind {
    fn kinds(self) -> Vec<GroupingKind> {
        match self {
            SweepKind::Label => vec![GroupingKind::Label],
            SweepKind::Prediction => vec![GroupingKind::Prediction],
            SweepKind::Both => GroupingKind::ALL.to_vec(),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            manifest,
            grouping,
            class_index,
            config,
            out,
        } => {
            let bundle = load_bundle(&manifest)?;
            let group = bundle.group(grouping.into(), class_index)?;
            let analysis = report::analyze(&bundle, &group, &config.config())?;
            report::write_report(&analysis, &out)?;
            print!("{}", analysis.summary_text());
        }
        Command::Sweep {
            manifest,
            grouping,
            config,
            out,
        } => {
            let bundle = load_bundle(&manifest)?;
            for s in report::run_sweep(&bundle, &grouping.kinds(), &config.config(), &out)? {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{}: {} classes analyzed, {} empty; mean gain {}, median gain {}, valid-leaf fraction {}",
                    s.kind,
                    s.rows.len(),
                    s.skipped_empty.len(),
                    fmt(s.mean_gain),
                    fmt(s.median_gain),
                    fmt(s.valid_leaf_fraction)
                );
            }
        }
        Command::Heatmap {
            fmap,
            width,
            height,
            out,
        } => {
            let map = viz::read_fmap(&fmap)?;
            viz::write_pgm(&viz::heatmap(&map, height, width)?, &out)?;
        }
        Command::Synth { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SyntheticSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let manifest = synth::generate(&spec)?.write_dir(&out)?;
            println!("{}", manifest.display());
        }
        Command::Serve {
            manifest,
            port,
            static_dir,
            host,
        } => {
            if let Some(dir) = &static_dir {
                if !dir.is_dir() {
                    bail!("static directory {} does not exist", dir.display());
                }
            }
            let bundle = Arc::new(load_bundle(&manifest)?);
            let addr = SocketAddr::from((host, port));
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("serving {} on http://{addr}", manifest.display());
            runtime.block_on(barlow_server::serve(bundle, addr, static_dir))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
