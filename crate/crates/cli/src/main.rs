mod config;
mod data;
mod fail;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autostpp::baselines::McStppModel;
use autostpp::bench::{run_bench, write_csv, BenchConfig};
use autostpp::evaluate::{test_ll, time_avg_hellinger, truth_densities, DatasetMetrics, HellingerConfig, MetricsReport};
use autostpp::grid::SpatialGrid;
use autostpp::rng::stream;
use autostpp::simulate::{Dataset, Process, ProcessKind, SimulationHeader};
use autostpp::stpp::AutoStppModel;
use autostpp::train::fitcheck::{fit_prodsum, fit_triple, FitCheckConfig};
use autostpp::train::{empirical_rate, fit, fit_lr_grid, write_log_csv, FitOutcome, Trainable};
use clap::{Parser, Subcommand, ValueEnum};

use config::{ModelKind, RunConfig};
use data::{create, AnyModel, DataDir};
use fail::{CliError, CliResult, EXIT_USAGE};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (model format 1)");

#[derive(Parser, Debug)]
#[command(name = "autostpp", version = VERSION, about = "Spatiotemporal point processes with closed-form likelihoods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark process into a data directory.
    Simulate {
        #[arg(long)]
        process: ProcessKind,
        #[arg(long)]
        dataset: Dataset,
        /// Time horizon.
        #[arg(long = "T", default_value_t = 10_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0, env = "AUTOSTPP_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to the training windows of a data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON file of training options; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch log; defaults to the model path with a `.log.csv` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a model on the test windows of a data directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Header of the generating process; enables the Hellinger metric.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 50)]
        times_per_window: usize,
        #[arg(long, default_value_t = 50, env = "AUTOSTPP_WINDOWS")]
        windows: usize,
        #[arg(long, value_delimiter = ',', default_value = "40,5,5", env = "AUTOSTPP_SPLIT")]
        split: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the derivative pass against nested differentiation.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        layers: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 11)]
        repeats: usize,
        #[arg(long, default_value_t = 0, env = "AUTOSTPP_SEED")]
        seed: u64,
    },
    /// Fit sums of positive product networks to a fixed target.
    Fitcheck {
        /// Term counts, as `a..b` (inclusive) or a comma list.
        #[arg(long, default_value = "1..10", value_parser = parse_counts)]
        n_prodnets: Counts,
        #[arg(long, value_enum, default_value_t = Baseline::ConstrainedTriple)]
        baseline: Baseline,
        #[arg(long, default_value_t = FitCheckConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = FitCheckConfig::default().batch)]
        batch: usize,
        #[arg(long, default_value_t = FitCheckConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = 0, env = "AUTOSTPP_SEED")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the intensity on the evaluation grid at chosen times.
    IntensityGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    ConstrainedTriple,
    None,
}

#[derive(Clone, Debug, PartialEq)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> Result<Counts, String> {
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    let counts: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(format!("{s:?} must name one or more positive counts"));
    }
    Ok(Counts(counts))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate {
            process,
            dataset,
            horizon,
            seed,
            out,
        } => simulate(process, dataset, horizon, seed, &out),
        Command::Train { data, config, out, log } => {
            let cfg = RunConfig::load(config.as_deref(), std::env::vars())?;
            let log = log.unwrap_or_else(|| out.with_extension("log.csv"));
            train(&data, &cfg, &out, &log)
        }
        Command::Eval {
            model,
            data,
            truth,
            grid,
            times_per_window,
            windows,
            split,
            out,
        } => {
            let split: [usize; 3] = split
                .try_into()
                .map_err(|_| CliError::usage("--split takes three counts: train,val,test"))?;
            let hcfg = HellingerConfig {
                grid,
                times_per_window,
            };
            eval(&model, &data, truth.as_deref(), &hcfg, windows, split, &out)
        }
        Command::Bench {
            out,
            layers,
            orders,
            width,
            batch,
            repeats,
            seed,
        } => {
            let cfg = BenchConfig {
                layers,
                orders,
                widths: vec![width],
                repeats,
                batch,
                seed,
                ..BenchConfig::default()
            };
            bench(&cfg, &out)
        }
        Command::Fitcheck {
            n_prodnets,
            baseline,
            steps,
            batch,
            lr,
            seed,
            out,
        } => {
            let cfg = FitCheckConfig {
                steps,
                batch,
                lr,
                seed,
                ..FitCheckConfig::default()
            };
            fitcheck(&n_prodnets.0, baseline, &cfg, &out)
        }
        Command::IntensityGrid {
            model,
            data,
            times,
            grid,
            out,
        } => intensity_grid(&model, &data, &times, grid, &out),
    }
}

fn simulate(kind: ProcessKind, ds: Dataset, horizon: f64, seed: u64, out: &Path) -> CliResult<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CliError::usage(format!("--T must be positive, got {horizon}")));
    }
    let process = Process::preset(kind, ds);
    let seq = process.simulate(horizon, seed)?;
    DataDir::write(out, &SimulationHeader::new(process, seed, &seq), &seq)?;
    eprintln!("simulated {} events on [0, {horizon}] into {}", seq.len(), out.display());
    Ok(())
}

fn train_model<M: Trainable + serde::Serialize>(
    init: M,
    split: &autostpp::simulate::Split,
    cfg: &RunConfig,
    out: &Path,
    log: &Path,
) -> CliResult<()> {
    let outcome: FitOutcome<M> = match &cfg.lr_grid {
        Some(grid) => {
            let (outcome, scores) = fit_lr_grid(&init, &split.train, &split.val, &cfg.train(), grid)?;
            for (lr, score) in scores {
                eprintln!("lr {lr}: best validation NLL per event {score:.5}");
            }
            outcome
        }
        None => fit(&init, &split.train, &split.val, &cfg.train())?,
    };
    data::write_json(out, &outcome.model)?;
    let mut w = create(log)?;
    write_log_csv(&mut w, &outcome.log)?;
    w.flush()?;
    eprintln!(
        "trained {} epochs; best epoch {} with validation NLL per event {:.5}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_val_nll
    );
    match outcome.diverged {
        Some(why) => Err(CliError::numeric(format!("training diverged ({why}); kept the best earlier parameters"))),
        None => Ok(()),
    }
}

fn train(dir: &Path, cfg: &RunConfig, out: &Path, log: &Path) -> CliResult<()> {
    let data = DataDir::read(dir)?;
    let split = data.split(cfg.windows, cfg.split)?;
    let rate = empirical_rate(&split.train)?;
    let domain = data.seq.domain();
    let mut rng = stream(cfg.seed, "init");
    match cfg.model {
        ModelKind::Autostpp => train_model(AutoStppModel::init(&cfg.model(), domain, rate, &mut rng)?, &split, cfg, out, log),
        ModelKind::Mc => train_model(McStppModel::init(&cfg.mc(), domain, rate, &mut rng)?, &split, cfg, out, log),
    }
}

fn eval(
    model_path: &Path,
    dir: &Path,
    truth: Option<&Path>,
    hcfg: &HellingerConfig,
    windows: usize,
    split: [usize; 3],
    out: &Path,
) -> CliResult<()> {
    let model = AnyModel::read(model_path)?;
    let data = DataDir::read(dir)?;
    let test = data.split(windows, split)?.test;
    let ll = test_ll(model.scorer(), &test)?;
    let hellinger = match truth {
        Some(path) => {
            let header: SimulationHeader = data::read_json(path)?;
            let truth = truth_densities(&header.params, data.seq.events(), &test, hcfg)?;
            Some(time_avg_hellinger(model.spatial(), &truth, &test, hcfg)?)
        }
        None => None,
    };
    let name = dir.file_name().map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned());
    let report = MetricsReport::from_entries(BTreeMap::from([(name, DatasetMetrics::new(&ll, hellinger))]))?;
    data::write_json(out, &report)?;
    match hellinger {
        Some(h) => eprintln!("test LL {:.4} ± {:.4}, Hellinger {h:.4}", ll.mean, ll.std),
        None => eprintln!("test LL {:.4} ± {:.4}", ll.mean, ll.std),
    }
    Ok(())
}

fn bench(cfg: &BenchConfig, out: &Path) -> CliResult<()> {
    let rows = run_bench(cfg)?;
    let mut w = create(out)?;
    write_csv(&mut w, &rows)?;
    w.flush()?;
    for r in rows.iter().filter(|r| r.imp == autostpp::bench::Impl::Dp) {
        eprintln!(
            "layers {} order {} {:<10} dp {:.3} ms, speedup {:.2}{}",
            r.layers,
            r.order,
            r.kind.label(),
            r.median_ms,
            r.speedup,
            if r.stable { "" } else { " (noisy)" }
        );
    }
    Ok(())
}

fn fitcheck(counts: &[usize], baseline: Baseline, cfg: &FitCheckConfig, out: &Path) -> CliResult<()> {
    let mut w = create(out)?;
    writeln!(w, "model,n_prodnets,final_mse")?;
    for &n in counts {
        let (_, res) = fit_prodsum(n, cfg)?;
        eprintln!("N={n}: final MSE {:.5}", res.final_mse);
        writeln!(w, "prodsum,{n},{}", res.final_mse)?;
    }
    if baseline == Baseline::ConstrainedTriple {
        let (_, res) = fit_triple(cfg)?;
        eprintln!("constrained triple: final MSE {:.5}", res.final_mse);
        writeln!(w, "constrained_triple,,{}", res.final_mse)?;
    }
    w.flush()?;
    Ok(())
}

fn intensity_grid(model_path: &Path, dir: &Path, times: &[f64], k: usize, out: &Path) -> CliResult<()> {
    let model = AnyModel::read(model_path)?;
    let data = DataDir::read(dir)?;
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(CliError::usage(format!("times must be finite and nonnegative, got {t}")));
    }
    let grid = SpatialGrid::square(data.seq.domain(), k)?;
    let points = grid.points();
    let mut w = create(out)?;
    writeln!(w, "t,x,y,lambda")?;
    for &t in times {
        let lam = model.intensity_grid(t, &data.seq, &grid)?;
        for ((x, y), l) in points.iter().zip(lam) {
            writeln!(w, "{t},{x},{y},{l}")?;
        }
    }
    w.flush()?;
    Ok(())
}
