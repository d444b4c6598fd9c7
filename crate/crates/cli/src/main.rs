use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dneq::learners::Family;
use dneq::pipeline::{Pipeline, RunConfig, Study, OUTPUT_ROOT_ENV};
use dneq::simulator::TnStrength;
use log::info;

#[derive(Parser, Debug)]
#[command(name = "dneq", version, about = "Simulate distribution-feeder campaigns and train dynamic equivalents of their interface currents")]
struct Cli {
    /// Run configuration (JSON). Defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Start from the reduced preset (10 parameter sets, 4 load steps).
    #[arg(long, global = true)]
    reduced: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Tn {
    Strong,
    Weak,
}

impl From<Tn> for TnStrength {
    fn from(t: Tn) -> Self {
        match t {
            Tn::Strong => TnStrength::Strong,
            Tn::Weak => TnStrength::Weak,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Target {
    Ip,
    Iq,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyArg {
    Strong,
    Weak,
    McCompare,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective run configuration as JSON.
    Config,
    /// One parameter draw and one load-step run.
    Simulate {
        #[arg(long, allow_negative_numbers = true)]
        step_kw: f64,
        #[arg(long, value_enum, default_value = "strong")]
        tn: Tn,
        /// Seed of the parameter draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo campaign over parameter sets and load steps.
    Dataset {
        #[arg(long)]
        sets: Option<usize>,
        /// Comma-separated load steps, kW.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        steps_kw: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "strong")]
        tn: Tn,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit point models and quantile sets on the strong-grid training split.
    Train {
        /// Family name or `all`.
        #[arg(long, default_value = "all")]
        family: String,
        /// Targets whose one-step test scores are printed. Models always
        /// predict both currents, which closed-loop rollout needs.
        #[arg(long, value_enum, default_value = "both")]
        target: Target,
        /// Comma-separated confidences in percent; `none` trains point models only.
        #[arg(long)]
        quantiles: Option<String>,
    },
    /// Run a study and write its report.
    Evaluate {
        #[arg(long, value_enum)]
        study: StudyArg,
        /// Load step of the Monte Carlo comparison, kW.
        #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
        step_kw: f64,
    },
}

fn parse_families(s: &str) -> Result<Vec<Family>> {
    if s == "all" {
        return Ok(Family::ALL.to_vec());
    }
    s.split(',').map(|f| f.trim().parse::<Family>().map_err(Into::into)).collect()
}

fn parse_quantiles(s: &str) -> Result<Vec<f64>> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|q| {
            let v: f64 = q.trim().parse().with_context(|| format!("bad confidence '{q}'"))?;
            let c = if v > 1.0 { v / 100.0 } else { v };
            if !(0.0 < c && c < 1.0) {
                bail!("confidence {q} outside (0, 100) %");
            }
            Ok(c)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None if cli.reduced => RunConfig::reduced(),
        None => RunConfig::default(),
    };
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dneq-out"));

    match cli.command {
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&config)?);
        }
        Command::Simulate { step_kw, tn, seed, out } => {
            let p = Pipeline::new(&root, config)?;
            let rec = p.simulate(step_kw, tn.into(), seed, out.as_deref())?;
            println!(
                "wrote {} ({} samples), max |df| = {:.4} Hz",
                rec.file.display(),
                rec.samples,
                rec.max_frequency_deviation_hz
            );
        }
        Command::Dataset { sets, steps_kw, tn, seed } => {
            if let Some(n) = sets {
                config.campaign.n_sets = n;
            }
            if let Some(s) = steps_kw {
                config.campaign.steps_kw = s;
            }
            if let Some(s) = seed {
                config.campaign.master_seed = s;
            }
            let p = Pipeline::new(&root, config)?;
            let m = p.dataset(tn.into())?;
            println!(
                "dataset {} in {}: {} runs, {} failed",
                m.dataset_id,
                p.dataset_dir(tn.into()).display(),
                m.entries.len(),
                m.failures()
            );
        }
        Command::Train { family, target, quantiles } => {
            let families = parse_families(&family)?;
            let confidences = match quantiles {
                Some(q) => parse_quantiles(&q)?,
                None => config.confidences.clone(),
            };
            if !confidences.is_empty() {
                config.confidences = confidences.clone();
            }
            let p = Pipeline::new(&root, config)?;
            let summary = p.train(&families, &confidences)?;
            for m in &summary.models {
                let mut line = format!("{} {} ({} rows, {} features)", m.family, m.kind, m.rows, m.features);
                if let Some(s) = &m.open_loop_test {
                    if target != Target::Iq {
                        line += &format!(", one-step test R2 ip {}", fmt_opt(s.ip_r2));
                    }
                    if target != Target::Ip {
                        line += &format!(", iq {}", fmt_opt(s.iq_r2));
                    }
                }
                println!("{line}");
            }
            info!("models in {}", p.models_dir().display());
        }
        Command::Evaluate { study, step_kw } => {
            let p = Pipeline::new(&root, config)?;
            let study = match study {
                StudyArg::Strong => Study::Strong,
                StudyArg::Weak => Study::Weak,
                StudyArg::McCompare => Study::McCompare { step_kw },
            };
            let report = p.evaluate(study)?;
            for e in &report.point {
                println!(
                    "{} {}: full R2 ip {} iq {}, dyn R2 ip {} iq {}",
                    e.family,
                    e.split,
                    fmt_opt(e.full.ip.r2),
                    fmt_opt(e.full.iq.r2),
                    fmt_opt(e.dyn_window.ip.r2),
                    fmt_opt(e.dyn_window.iq.r2)
                );
            }
            for b in &report.bands {
                if b.scores.window == dneq::evaluate::Window::Full {
                    println!(
                        "{} Q={:.0}%: ip ACE {:+.1} pp AIS {:.2e}, iq ACE {:+.1} pp AIS {:.2e}",
                        b.family,
                        100.0 * b.scores.confidence,
                        b.scores.ip.ace,
                        b.scores.ip.ais,
                        b.scores.iq.ace,
                        b.scores.iq.ais
                    );
                }
            }
            if let Some(mc) = &report.mc {
                for c in &mc.coverage {
                    println!("{} Q={:.0}%: MC points inside ip {:.3} iq {:.3}", c.family, 100.0 * c.confidence, c.ip, c.iq);
                }
            }
            println!("report {}", p.reports_dir().join(format!("{}.json", report.study)).display());
        }
    }
    Ok(())
}
