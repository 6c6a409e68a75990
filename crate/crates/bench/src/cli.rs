//! The `dmlfed` command line.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::federation::{accept_hub, run_site, Coordinator, SiteNode, TcpSiteLink};
use dmlfed_core::learners::LearnerConfig;
use dmlfed_core::numerics::{load_csv, CsvSchema, RngHandle};
use serde::de::DeserializeOwned;

use crate::experiments::lm::LmParams;
use crate::experiments::mixture::{self, MixtureParams};
use crate::experiments::run::RunSpec;
use crate::experiments::sites::{SitesParams, UnbalanceParams};
use crate::experiments::toy::ToyParams;
use crate::experiments::uci::UciParams;
use crate::experiments::{lm, run, sites, toy, uci};
use crate::report::{num, Report, Table};
use crate::theory::{self, TheoryCheck, TheoryParams};

#[derive(Debug, Parser)]
#[command(name = "dmlfed", version, about = "One-shot federated learning over distortion-minimizing site signatures")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compression ratio (rows per representative).
    #[arg(long, global = true)]
    pub ratio: Option<f64>,
    /// Repetitions.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Local transform.
    #[arg(long, global = true, value_parser = parse_kind)]
    pub transform: Option<DmlKind>,
    /// Learner with default settings.
    #[arg(long, global = true, value_parser = ["lm", "l1logit", "rf"])]
    pub learner: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    /// Parameter file, e.g. a `.config.toml` written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plot: bool,
    /// Exit 1 when a hard check fails.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file: federated against non-distributed fits.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
    },
    /// Serve one site: compress local data and join a coordinator.
    Site {
        /// Coordinator address, e.g. 127.0.0.1:7000.
        #[arg(long)]
        connect: String,
        /// Site id; also keys the site's random stream.
        #[arg(long)]
        id: String,
        /// Site data as CSV.
        #[arg(long)]
        data: PathBuf,
        /// CSV schema (TOML).
        #[arg(long)]
        schema: PathBuf,
        /// Seconds to wait on any single network step.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Run a coordinator for one round over TCP.
    Coordinate {
        /// Listen address; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Number of sites to wait for.
        #[arg(long)]
        sites: usize,
        /// Seconds to wait on any single network step.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Checks of the quantization and tree-shrinkage properties.
    Theory {
        /// distortion, leafwidth, concat or all.
        #[arg(long, default_value = "all")]
        check: String,
    },
    /// Toy line with three range-split sites.
    Toy,
    /// Linear-model coefficient table.
    TableLm {
        /// Feature correlations, comma separated.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
    /// Mixture classification with L1 logistic regression.
    FigLogit {
        /// Feature correlations, comma separated.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
    /// Mixture classification with random forests.
    FigRf {
        /// Feature correlations, comma separated.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
    /// Error against the number of sites.
    FigSites {
        /// Site counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        sites: Vec<usize>,
    },
    /// Error under round-robin class unbalance.
    FigUnbalance {
        /// Downsampling fractions, comma separated.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
    },
    /// UCI benchmarks from user-supplied files.
    TableUci {
        /// Directory holding `<name>.csv` and `<name>.toml`.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<DmlKind, String> {
    s.parse()
}

/// Parses arguments, runs and returns the exit code. Usage errors exit 2
/// through clap; failures print one `error: ...` line and exit 1.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load<P: DeserializeOwned + Default>(path: Option<&Path>) -> Result<P> {
    match path {
        None => Ok(P::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

fn learner_of(name: &str) -> LearnerConfig {
    LearnerConfig::from_name(name).expect("clap restricts learner names")
}

/// Rejects global flags that have no meaning for a subcommand.
fn reject(g: &Global, cmd: &str, ratio: bool, transform: bool, learner: bool, runs: bool) -> Result<()> {
    let bad = [
        (!ratio && g.ratio.is_some(), "--ratio"),
        (!transform && g.transform.is_some(), "--transform"),
        (!learner && g.learner.is_some(), "--learner"),
        (!runs && g.runs.is_some(), "--runs"),
    ];
    if let Some((_, flag)) = bad.iter().find(|(b, _)| *b) {
        bail!("{flag} does not apply to {cmd}");
    }
    Ok(())
}

fn emit(g: &Global, mut reports: Vec<Report>) -> Result<i32> {
    let mut ok = true;
    for rep in &mut reports {
        if g.no_plot {
            rep.plots.clear();
        }
        let files = rep.write(&g.out)?;
        println!("== {}", rep.name);
        print!("{}", rep.digest());
        for f in files {
            println!("wrote {}", f.display());
        }
        ok &= rep.passed();
    }
    Ok(if g.strict && !ok { 1 } else { 0 })
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    let cfg = g.config.as_deref();
    match &cli.command {
        Command::Run { scenario } => {
            reject(g, "run", true, true, true, true)?;
            if cfg.is_some() {
                bail!("--config does not apply to run; pass the scenario file instead");
            }
            let mut s = RunSpec::from_file(scenario)?;
            if let Some(v) = g.seed {
                s.seed = v;
            }
            if let Some(v) = g.runs {
                s.runs = v;
            }
            if let Some(v) = g.ratio {
                s.dml.ratio = v;
            }
            if let Some(v) = g.transform {
                s.dml.kind = v;
            }
            if let Some(v) = &g.learner {
                s.learner = learner_of(v);
            }
            emit(g, vec![run::run(&s)?])
        }
        Command::Site {
            connect,
            id,
            data,
            schema,
            timeout_secs,
        } => {
            reject(g, "site", true, true, false, false)?;
            let schema = CsvSchema::from_file(schema)?;
            let (data, _) = load_csv(data, &schema)?;
            let dml = DmlConfig::new(g.transform.unwrap_or(DmlKind::Kmeans), g.ratio.unwrap_or(DmlConfig::default().ratio));
            let rng = RngHandle::new(g.seed.unwrap_or(0)).fork_str(id);
            let node = SiteNode::new(id.clone(), data, dml, rng);
            let timeout = Duration::from_secs(*timeout_secs);
            let mut link = TcpSiteLink::connect(connect, timeout)?;
            let (model, stats) = run_site(&node, &mut link, timeout)?;
            std::fs::create_dir_all(&g.out)?;
            let path = g.out.join(format!("{id}_model.json"));
            std::fs::write(&path, model.to_json())?;
            println!(
                "site {id}: {} rows, {} reps, {} bytes sent, {} bytes received",
                stats.n, stats.reps, stats.bytes_sent, stats.bytes_received
            );
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Coordinate {
            listen,
            sites,
            timeout_secs,
        } => {
            reject(g, "coordinate", false, false, true, false)?;
            let learner = g.learner.as_deref().map(learner_of).unwrap_or(LearnerConfig::Lm);
            let timeout = Duration::from_secs(*timeout_secs);
            let listener = TcpListener::bind(listen).with_context(|| format!("cannot listen on {listen}"))?;
            println!("listening on {}", listener.local_addr()?);
            let mut hub = accept_hub(&listener, *sites, timeout)?;
            let coord = Coordinator::with_count(*sites, learner, RngHandle::new(g.seed.unwrap_or(0)), timeout)?;
            let out = coord.run(&mut hub)?;
            std::fs::create_dir_all(&g.out)?;
            let path = g.out.join("model.json");
            std::fs::write(&path, out.model.to_json())?;
            let mut t = Table::new(&["site", "reps", "weight", "bytes_in", "bytes_out"]);
            for (i, sig) in out.signatures.iter().enumerate() {
                t.push(vec![
                    sig.site_id.clone(),
                    sig.len().to_string(),
                    sig.total_weight().to_string(),
                    out.bytes_in[i].to_string(),
                    out.bytes_out[i].to_string(),
                ]);
            }
            let stats = g.out.join("coordinate.csv");
            t.write_csv(&stats)?;
            println!(
                "fitted {} on {} reps (total weight {}) in {}s",
                coord_learner_name(g),
                out.pooled.m(),
                num(out.pooled.total_weight()),
                num(out.fit_secs)
            );
            println!("wrote {}", path.display());
            println!("wrote {}", stats.display());
            Ok(0)
        }
        Command::Theory { check } => {
            reject(g, "theory", false, false, false, false)?;
            let mut p: TheoryParams = load(cfg)?;
            if let Some(v) = g.seed {
                p.seed = v;
            }
            let checks = if check == "all" {
                vec![TheoryCheck::Distortion, TheoryCheck::LeafWidth, TheoryCheck::Concat]
            } else {
                vec![check.parse::<TheoryCheck>().map_err(anyhow::Error::msg)?]
            };
            let reports = checks
                .into_iter()
                .map(|c| match c {
                    TheoryCheck::Distortion => theory::run_distortion(&p),
                    TheoryCheck::LeafWidth => theory::run_leafwidth(&p),
                    TheoryCheck::Concat => theory::run_concat(&p),
                })
                .collect::<Result<Vec<_>>>()?;
            emit(g, reports)
        }
        Command::Toy => {
            reject(g, "toy", true, true, false, true)?;
            let mut p: ToyParams = load(cfg)?;
            common(g, &mut p.seed, &mut p.runs);
            if let Some(v) = g.ratio {
                p.ratio = v;
            }
            if let Some(v) = g.transform {
                p.transforms = vec![v];
            }
            emit(g, vec![toy::run(&p)?])
        }
        Command::TableLm { rho } => {
            reject(g, "table-lm", true, true, false, true)?;
            let mut p: LmParams = load(cfg)?;
            common(g, &mut p.seed, &mut p.runs);
            if !rho.is_empty() {
                p.rhos = rho.clone();
            }
            if let Some(v) = g.ratio {
                p.ratio = v;
            }
            if let Some(v) = g.transform {
                p.transforms = vec![v];
            }
            emit(g, vec![lm::run(&p)?])
        }
        Command::FigLogit { rho } | Command::FigRf { rho } => {
            let rf = matches!(cli.command, Command::FigRf { .. });
            let name = if rf { "fig_rf" } else { "fig_logit" };
            reject(g, name, true, true, false, true)?;
            let mut p = match cfg {
                Some(_) => load(cfg)?,
                None if rf => MixtureParams::forest(),
                None => MixtureParams::logit(),
            };
            common(g, &mut p.seed, &mut p.runs);
            if !rho.is_empty() {
                p.rhos = rho.clone();
            }
            if let Some(v) = g.ratio {
                p.ratio = v;
            }
            if let Some(v) = g.transform {
                p.transforms = vec![v];
            }
            emit(g, vec![mixture::run(name, &p)?])
        }
        Command::FigSites { sites: counts } => {
            reject(g, "fig-sites", true, true, true, true)?;
            let mut p: SitesParams = load(cfg)?;
            common(g, &mut p.seed, &mut p.runs);
            if !counts.is_empty() {
                p.site_counts = counts.clone();
            }
            if let Some(v) = g.ratio {
                p.ratios = vec![v];
            }
            if let Some(v) = g.transform {
                p.transform = v;
            }
            if let Some(v) = &g.learner {
                p.learner = learner_of(v);
            }
            emit(g, vec![sites::run_sites(&p)?])
        }
        Command::FigUnbalance { gamma } => {
            reject(g, "fig-unbalance", true, true, true, true)?;
            let mut p: UnbalanceParams = load(cfg)?;
            common(g, &mut p.seed, &mut p.runs);
            if !gamma.is_empty() {
                p.gammas = gamma.clone();
            }
            if let Some(v) = g.ratio {
                p.ratios = vec![v];
            }
            if let Some(v) = g.transform {
                p.transform = v;
            }
            if let Some(v) = &g.learner {
                p.learner = learner_of(v);
            }
            emit(g, vec![sites::run_unbalance(&p)?])
        }
        Command::TableUci { data_dir } => {
            reject(g, "table-uci", true, true, true, true)?;
            let mut p: UciParams = load(cfg)?;
            common(g, &mut p.seed, &mut p.runs);
            if let Some(d) = data_dir {
                p.data_dir = d.clone();
            }
            if let Some(v) = g.ratio {
                p.ratio = v;
            }
            if let Some(v) = g.transform {
                p.transforms = vec![v];
            }
            if let Some(v) = &g.learner {
                p.learners = vec![learner_of(v)];
            }
            if p.available().is_empty() {
                bail!(
                    "no UCI files in {} (expected <name>.csv and <name>.toml for {})",
                    p.data_dir.display(),
                    p.datasets.join(", ")
                );
            }
            emit(g, vec![uci::run(&p)?])
        }
    }
}

fn common(g: &Global, seed: &mut u64, runs: &mut usize) {
    if let Some(v) = g.seed {
        *seed = v;
    }
    if let Some(v) = g.runs {
        *runs = v;
    }
}

fn coord_learner_name(g: &Global) -> &str {
    g.learner.as_deref().unwrap_or("lm")
}
