use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fabsched::generate::{generate_minifab, GenConfig};
use fabsched::nes::{self, FitnessShaping, NesConfig};
use fabsched::objective::kpis;
use fabsched::sim::{self, SimOptions, TraceLevel};
use fabsched::ssl::{self, SslConfig};
use fabsched::{features, Error, Normalizer, ObjectiveConfig, PolicyParams, Scenario, MINUTES_PER_DAY};
use fabsched_cli::{build_dispatcher, read_report, render_table, run_benchmark, write_report, BenchmarkConfig, DispatcherSpec};

#[derive(Parser)]
#[command(name = "fabsched", version, about = "Wafer-fab simulation, dispatching and policy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; the bundled minifab when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "horizon-days", default_value_t = 182)]
    horizon_days: i64,
    /// Lots placed in the fab at time zero.
    #[arg(long, default_value_t = 0)]
    wip: usize,
    /// Structured output on stdout.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn scenario(&self) -> Result<Arc<Scenario>> {
        Ok(Arc::new(match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::minifab(),
        }))
    }

    fn opts(&self) -> SimOptions {
        SimOptions::new(self.horizon_days * MINUTES_PER_DAY).with_wip(self.wip)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceArg {
    Standard,
    Events,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapingArg {
    Raw,
    CenteredRank,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic reentrant scenario.
    Generate {
        #[arg(long, default_value_t = 4)]
        families: usize,
        #[arg(long = "groups-per-family", default_value_t = 3)]
        groups_per_family: usize,
        #[arg(long, default_value_t = 3)]
        products: usize,
        #[arg(long = "route-length", default_value_t = 50)]
        route_length: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file; exit status 2 when it violates constraints.
    Validate { path: PathBuf },
    /// Run one simulation and print its KPIs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fifo", value_parser = parse_spec)]
        dispatcher: DispatcherSpec,
        #[arg(long)]
        normalizer: Option<PathBuf>,
        /// Write the trace as JSON lines.
        #[arg(long = "trace-out")]
        trace_out: Option<PathBuf>,
        #[arg(long = "trace-level", value_enum, default_value = "standard")]
        trace_level: TraceArg,
    },
    /// Feature statistics from a heuristic rollout.
    FitNormalizer {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fifo", value_parser = parse_spec)]
        dispatcher: DispatcherSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the tool-family encoding.
    TrainSsl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        normalizer: PathBuf,
        #[arg(long, default_value = "fifo", value_parser = parse_spec)]
        dispatcher: DispatcherSpec,
        /// Seed of the network initialization.
        #[arg(long = "params-seed", default_value_t = 0)]
        params_seed: u64,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long = "cache-dir")]
        cache_dir: Option<PathBuf>,
        /// Policy parameters with the frozen encoding.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the policy with evolution strategies.
    TrainNes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        normalizer: PathBuf,
        #[arg(long = "ssl-params")]
        ssl_params: PathBuf,
        #[arg(long, default_value_t = 64)]
        population: usize,
        #[arg(long, default_value_t = 40)]
        iterations: usize,
        #[arg(long, default_value_t = 0.005)]
        sigma: f64,
        #[arg(long = "eta-max", default_value_t = 0.01)]
        eta_max: f64,
        #[arg(long, value_enum, default_value = "centered-rank")]
        shaping: ShapingArg,
        #[arg(long)]
        antithetic: bool,
        #[arg(long)]
        history: Option<PathBuf>,
        /// Directory receiving a parameter file after every iteration.
        #[arg(long = "checkpoint-dir")]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired multi-seed benchmark of several dispatchers.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "fifo,cr", value_parser = parse_spec)]
        dispatchers: Vec<DispatcherSpec>,
        #[arg(long)]
        normalizer: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-aggregate and print a report directory written by `evaluate`.
    Report {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_spec(s: &str) -> Result<DispatcherSpec, String> {
    s.parse()
}

fn load_normalizer(p: Option<&Path>) -> Result<Option<Normalizer>> {
    p.map(|p| Normalizer::load(p).with_context(|| format!("loading normalizer {}", p.display()))).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { families, groups_per_family, products, route_length, seed, out } => {
            let s = generate_minifab(&GenConfig { families, groups_per_family, products, route_length, seed })?;
            s.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Validate { path } => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Scenario::from_json(&text)?;
            println!("{}: ok", path.display());
        }
        Command::Simulate { common, dispatcher, normalizer, trace_out, trace_level } => {
            let sc = common.scenario()?;
            let norm = load_normalizer(normalizer.as_deref())?;
            let d = build_dispatcher(&dispatcher, norm.as_ref())?;
            let level = match (trace_out.is_some(), trace_level) {
                (false, _) => TraceLevel::Off,
                (true, TraceArg::Standard) => TraceLevel::Standard,
                (true, TraceArg::Events) => TraceLevel::Events,
            };
            let st = sim::run(sc.clone(), common.seed, d.as_ref(), common.opts().with_trace(level))?;
            if let Some(p) = trace_out {
                st.trace.write_jsonl(BufWriter::new(File::create(&p)?))?;
                eprintln!("wrote {} trace records to {}", st.trace.len(), p.display());
            }
            let report = kpis(&st, &ObjectiveConfig::from_scenario(&sc));
            if common.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_csv());
                println!(
                    "cost {:.4} (finished {:.4}, wip {:.4}); finished {} lots, wip {}, cqt violations {}",
                    report.cost.total, report.cost.finished, report.cost.wip, report.finished, report.wip, report.cqt_violations
                );
            }
        }
        Command::FitNormalizer { common, dispatcher, out } => {
            let d = build_dispatcher(&dispatcher, None)?;
            let n = features::fit_normalizer(common.scenario()?, d.as_ref(), common.opts(), common.seed)?;
            n.save(&out)?;
            if common.json {
                println!("{}", serde_json::to_string_pretty(&n)?);
            } else {
                eprintln!("{} samples, wrote {}", n.sample_count, out.display());
            }
        }
        Command::TrainSsl { common, normalizer, dispatcher, params_seed, lambda, lr, epochs, cache_dir, out } => {
            let sc = common.scenario()?;
            let norm = Normalizer::load(&normalizer)?;
            let d = build_dispatcher(&dispatcher, None)?;
            let data = match cache_dir {
                Some(dir) => ssl::collect_dataset_cached(dir, sc.clone(), d.as_ref(), &norm, common.opts(), common.seed)?.0,
                None => ssl::collect_dataset(sc.clone(), d.as_ref(), &norm, common.opts(), common.seed)?,
            };
            let cfg = SslConfig { lambda, learning_rate: lr, epochs, shuffle_seed: common.seed, ..SslConfig::default() };
            let init = PolicyParams::init(params_seed, sc.family_count());
            let outcome = ssl::train_pretext(&data, &init, &cfg)?;
            let acc = ssl::pretext_accuracy(&outcome.pretext, &data)?;
            outcome.policy.save(&out)?;
            if common.json {
                println!("{}", serde_json::json!({ "epochs": outcome.history, "train_accuracy": acc, "items": data.len() }));
            } else {
                for r in &outcome.history {
                    eprintln!("epoch {:>3} loss {:.6} |E| {:.4}", r.epoch, r.mean_loss, r.encoding_norm);
                }
                eprintln!("train accuracy {acc:.4}; wrote {}", out.display());
            }
        }
        Command::TrainNes {
            common,
            normalizer,
            ssl_params,
            population,
            iterations,
            sigma,
            eta_max,
            shaping,
            antithetic,
            history,
            checkpoint_dir,
            out,
        } => {
            let sc = common.scenario()?;
            let norm = Normalizer::load(&normalizer)?;
            let params = PolicyParams::load(&ssl_params)?;
            let cfg = NesConfig {
                population,
                i_max: iterations,
                sigma,
                eta_max,
                horizon: common.horizon_days * MINUTES_PER_DAY,
                initial_wip: common.wip,
                shaping: match shaping {
                    ShapingArg::Raw => FitnessShaping::Raw,
                    ShapingArg::CenteredRank => FitnessShaping::CenteredRank,
                },
                antithetic,
                master_seed: common.seed,
                ..NesConfig::default()
            };
            if let Some(dir) = &checkpoint_dir {
                std::fs::create_dir_all(dir)?;
            }
            let mut ckpt_err = None;
            let result = nes::train(sc, &params, &norm, &cfg, |rec, p| {
                if !common.json {
                    eprintln!("iter {:>3} sigma {:.6} eta {:.6} center cost {:.4} mean fitness {:.4}", rec.iteration, rec.sigma, rec.eta, rec.center_cost, rec.mean_fitness);
                }
                if let Some(dir) = &checkpoint_dir {
                    if let Err(e) = p.save(dir.join(format!("iter-{:03}.json", rec.iteration))) {
                        ckpt_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = ckpt_err {
                return Err(e.into());
            }
            result.params.save(&out)?;
            if let Some(h) = history {
                nes::write_history_csv(&result.history, &mut BufWriter::new(File::create(h)?))?;
            }
            if common.json {
                println!("{}", serde_json::json!({ "history": result.history, "final_center_cost": result.final_center_cost }));
            } else {
                eprintln!("final center cost {:.4}; wrote {}", result.final_center_cost, out.display());
            }
        }
        Command::Evaluate { common, dispatchers, normalizer, seeds, out } => {
            let mut cfg = BenchmarkConfig::new(common.scenario()?, dispatchers);
            cfg.normalizer = load_normalizer(normalizer.as_deref())?;
            cfg.seeds = seeds;
            cfg.base_seed = common.seed;
            cfg.horizon_days = common.horizon_days;
            cfg.initial_wip = common.wip;
            let report = run_benchmark(&cfg)?;
            if let Some(dir) = &out {
                write_report(&report, dir)?;
            }
            if common.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_table(&report));
            }
        }
        Command::Report { dir, json } => {
            let report = read_report(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_table(&report));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Error::Validation(vs)) = e.downcast_ref::<Error>() {
                for v in vs {
                    eprintln!("{}: {}", v.location, v.message);
                }
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
