//! Command-line driver: run and resume races over the built-in testbed,
//! inject algorithms mid-race, race synthetic ground truths, export
//! posteriors, run selection queries, and emit plot-ready CSVs.

use anyrace::beliefs::{EliminationMode, ResolutionMode};
use anyrace::grid::TimeGrid;
use anyrace::inference::{InferenceConfig, Method};
use anyrace::io::{self, Manifest, ParetoFile, RaceFileConfig};
use anyrace::priors::ModelSpec;
use anyrace::race::{Race, RaceOutcome, RankingSource, RoundReport, SyntheticSource};
use anyrace::select::{
    portfolio_search, select, value_posterior, Criterion, PortfolioStrategy, PreferenceFunctional,
};
use anyrace::synth::{algorithm_by_name, sample_ground_truth, true_pareto_set, GroundTruthConfig};
use anyrace::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "anyrace",
    version,
    about = "Races anytime optimizers to their Pareto set over budgets, with Bayesian rating posteriors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory (env: ANYRACE_OUT).
    #[arg(long, env = "ANYRACE_OUT")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run a race from a config file (TOML or JSON) or a manifest.
    Race {
        #[arg(long, conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Replay a previous run exactly from its manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue a checkpointed race to completion.
    Resume {
        #[command(flatten)]
        out: OutArg,
    },
    /// Inject a built-in algorithm into a checkpointed race and continue.
    Add {
        #[command(flatten)]
        out: OutArg,
        /// Built-in algorithm name (e.g. random_search, one_plus_one_es).
        #[arg(long)]
        algorithm: String,
    },
    /// Refit and export the posterior of a checkpointed run.
    Posterior {
        #[command(flatten)]
        out: OutArg,
    },
    /// Rank algorithms (or portfolios) from a posterior export.
    Select {
        /// posterior.csv produced by race/synth/posterior.
        #[arg(long)]
        posterior: PathBuf,
        /// uniform | log_uniform | final | point:<t> | dist:<file> | weights:<file>
        #[arg(long, default_value = "uniform")]
        preference: String,
        /// expected | p2bb | quantile
        #[arg(long, default_value = "expected")]
        criterion: String,
        /// Quantile level for --criterion quantile.
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        /// Portfolio slots; 1 selects a single algorithm.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
    /// Race a synthetic ground truth and compare against the known answer.
    Synth {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        timepoints: usize,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prior model for inference (gp_exact, gp_hsgp, random_walk,
        /// bspline, independent_dirichlet, hierarchical_dirichlet).
        #[arg(long, default_value = "gp_hsgp")]
        model: String,
        /// laplace | hmc (default: the model's preferred method).
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 200)]
        max_rounds: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Emit plot-ready CSVs from a round log.
    Report {
        /// rounds.jsonl from a race output directory.
        #[arg(long)]
        rounds: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Race {
            config,
            manifest,
            out,
            seed,
        } => cmd_race(config, manifest, &out.out, seed),
        Command::Resume { out } => cmd_resume(&out.out, None),
        Command::Add { out, algorithm } => cmd_resume(&out.out, Some(algorithm)),
        Command::Posterior { out } => cmd_posterior(&out.out),
        Command::Select {
            posterior,
            preference,
            criterion,
            gamma,
            k,
            json,
        } => cmd_select(&posterior, &preference, &criterion, gamma, k, json),
        Command::Synth {
            n,
            timepoints,
            t_end,
            seed,
            model,
            method,
            alpha,
            epsilon,
            max_rounds,
            out,
        } => cmd_synth(
            n, timepoints, t_end, seed, &model, method, alpha, epsilon, max_rounds, &out.out,
        ),
        Command::Report { rounds, out } => cmd_report(&rounds, &out.out),
    }
}

fn load_file_config(
    config: Option<PathBuf>,
    manifest: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<RaceFileConfig> {
    let mut file = match (config, manifest) {
        (Some(path), None) => RaceFileConfig::load(&path)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path)?;
            let manifest: Manifest = serde_json::from_str(&text)?;
            manifest.config
        }
        _ => {
            return Err(Error::config(
                "config",
                "pass exactly one of --config or --manifest",
            ))
        }
    };
    if let Some(seed) = seed {
        file.seed = seed;
    }
    Ok(file)
}

fn write_common_outputs<S: RankingSource<f64>>(
    dir: &Path,
    race: &Race<f64, S>,
    outcome: &RaceOutcome<f64>,
    all_rounds: &[RoundReport],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let state = &race.state;
    let pareto = ParetoFile::from_state(state);
    std::fs::write(
        dir.join("pareto.json"),
        serde_json::to_string_pretty(&pareto)?,
    )?;
    io::write_round_log(&dir.join("rounds.jsonl"), all_rounds)?;
    io::write_state(&dir.join("state.json"), state)?;
    let times = race.config.grid.points();
    io::write_posterior_csv(
        &dir.join("posterior.csv"),
        &outcome.samples,
        &state.algorithm_ids,
        times,
    )?;
    io::write_diagnostics_sidecar(
        &dir.join("diagnostics.json"),
        &outcome.samples,
        &state.algorithm_ids,
    )?;
    let snapshot = io::resolution_snapshot(
        state.round,
        &state.resolution,
        &outcome.samples,
        &state.algorithm_ids,
        race.config.epsilon,
        times,
    )?;
    std::fs::write(
        dir.join("resolution.json"),
        serde_json::to_string_pretty(&snapshot)?,
    )?;
    Ok(())
}

fn exit_code_for(outcome: &RaceOutcome<f64>) -> ExitCode {
    if outcome.fully_resolved {
        ExitCode::from(0)
    } else {
        ExitCode::from(2)
    }
}

fn cmd_race(
    config: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: &Path,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let file = load_file_config(config, manifest, seed)?;
    let core = file.to_core()?;
    let source = file.build_source()?;
    let ids = source.algorithm_ids();
    let mut race = Race::new(core, ids, source)?;
    let outcome = race.run()?;

    std::fs::create_dir_all(out)?;
    let manifest = Manifest::new(&file)?;
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    io::write_archive(
        &out.join("archive.jsonl"),
        race.source().trajectories().cloned(),
    )?;
    write_common_outputs(out, &race, &outcome, &outcome.rounds)?;
    println!(
        "pareto set: {:?} ({} rounds, {} instances, fully resolved: {})",
        outcome.pareto,
        race.state.round,
        race.state.instance_log.len(),
        outcome.fully_resolved
    );
    Ok(exit_code_for(&outcome))
}

fn cmd_resume(out: &Path, add: Option<String>) -> Result<ExitCode> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json"))?)?;
    let mut file = manifest.config;
    let core = file.to_core()?;
    let mut source = file.build_source()?;
    let archive_path = out.join("archive.jsonl");
    if archive_path.exists() {
        for traj in io::read_archive(&archive_path)? {
            source.insert_trajectory(traj)?;
        }
    }
    let state = io::read_state(&out.join("state.json"))?;
    let mut prior_rounds = io::read_round_log(&out.join("rounds.jsonl"))?;
    let mut race = Race::from_state(core, state, source)?;

    if let Some(name) = add {
        let algorithm = algorithm_by_name(&name)?;
        let id = algorithm.id().to_string();
        race.source_mut().push_algorithm(algorithm);
        race.add_algorithm(id)?;
        file.algorithms.push(name);
        let manifest = Manifest::new(&file)?;
        std::fs::write(
            out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
    }

    let outcome = race.run()?;
    prior_rounds.extend(outcome.rounds.clone());
    io::write_archive(
        &out.join("archive.jsonl"),
        race.source().trajectories().cloned(),
    )?;
    write_common_outputs(out, &race, &outcome, &prior_rounds)?;
    println!(
        "pareto set: {:?} ({} rounds total, fully resolved: {})",
        outcome.pareto, race.state.round, outcome.fully_resolved
    );
    Ok(exit_code_for(&outcome))
}

fn cmd_posterior(out: &Path) -> Result<ExitCode> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json"))?)?;
    let file = manifest.config;
    let core = file.to_core()?;
    let mut source = file.build_source()?;
    for traj in io::read_archive(&out.join("archive.jsonl"))? {
        source.insert_trajectory(traj)?;
    }
    let state = io::read_state(&out.join("state.json"))?;
    let race = Race::from_state(core, state, source)?;
    let obs = race.observations()?;
    let samples = anyrace::inference::posterior_update(
        &obs,
        race.model(),
        &race.config.inference,
        anyrace::stats::derive_seed(race.config.seed, &[0x706f_u64, race.state.round as u64]),
    )?;
    io::write_posterior_csv(
        &out.join("posterior.csv"),
        &samples,
        &race.state.algorithm_ids,
        race.config.grid.points(),
    )?;
    io::write_diagnostics_sidecar(
        &out.join("diagnostics.json"),
        &samples,
        &race.state.algorithm_ids,
    )?;
    println!(
        "posterior over {} algorithms exported ({} draws)",
        race.state.algorithm_ids.len(),
        samples.draws()
    );
    Ok(ExitCode::from(0))
}

fn parse_weight_file(path: &str) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                what: format!("{path}:{}", i + 1),
                reason: "expected two comma-separated fields".into(),
            });
        }
        match (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
            (Ok(t), Ok(w)) => out.push((t, w)),
            _ if i == 0 => continue, // header row
            _ => {
                return Err(Error::Parse {
                    what: format!("{path}:{}", i + 1),
                    reason: "expected numeric t,w".into(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Parse {
            what: path.to_string(),
            reason: "no weight rows".into(),
        });
    }
    Ok(out)
}

fn interpolate_weights(grid: &TimeGrid<f64>, mut pairs: Vec<(f64, f64)>) -> Vec<f64> {
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    grid.points()
        .iter()
        .map(|&t| {
            if t <= pairs[0].0 {
                return pairs[0].1;
            }
            if t >= pairs[pairs.len() - 1].0 {
                return pairs[pairs.len() - 1].1;
            }
            let hi = pairs.iter().position(|&(x, _)| x >= t).unwrap();
            let (t0, w0) = pairs[hi - 1];
            let (t1, w1) = pairs[hi];
            w0 + (w1 - w0) * (t - t0) / (t1 - t0)
        })
        .collect()
}

fn build_preference(spec: &str, grid: &TimeGrid<f64>) -> Result<PreferenceFunctional<f64>> {
    if let Some(t) = spec.strip_prefix("point:") {
        let t: f64 = t.parse().map_err(|_| Error::Parse {
            what: format!("preference {spec:?}"),
            reason: "expected point:<t>".into(),
        })?;
        return Ok(PreferenceFunctional::point(grid, t));
    }
    if let Some(path) = spec.strip_prefix("dist:") {
        let pairs = parse_weight_file(path)?;
        return PreferenceFunctional::budget_distribution(grid, &pairs);
    }
    if let Some(path) = spec.strip_prefix("weights:") {
        let pairs = parse_weight_file(path)?;
        let at_points = interpolate_weights(grid, pairs);
        return PreferenceFunctional::tabulated(grid, &at_points);
    }
    match spec {
        "uniform" => Ok(PreferenceFunctional::uniform(grid)),
        "log_uniform" => PreferenceFunctional::log_uniform(grid),
        "final" => Ok(PreferenceFunctional::final_time(grid.len())),
        other => Err(Error::Parse {
            what: format!("preference {other:?}"),
            reason:
                "expected uniform, log_uniform, final, point:<t>, dist:<file>, or weights:<file>"
                    .into(),
        }),
    }
}

#[derive(serde::Serialize)]
struct SelectOutput {
    preference: String,
    criterion: String,
    gamma: Option<f64>,
    k: usize,
    ranking: Vec<RankedEntry>,
    portfolio: Option<PortfolioEntry>,
}

#[derive(serde::Serialize)]
struct RankedEntry {
    algorithm: String,
    score: f64,
    regret: f64,
}

#[derive(serde::Serialize)]
struct PortfolioEntry {
    members: Vec<String>,
    score: f64,
    strategy: String,
    linear_shortcut: bool,
}

fn cmd_select(
    posterior: &Path,
    preference: &str,
    criterion: &str,
    gamma: f64,
    k: usize,
    json: bool,
) -> Result<ExitCode> {
    let (samples, ids, grid) = io::read_posterior_csv(posterior)?;
    let pref = build_preference(preference, &grid)?;
    let crit = match criterion {
        "expected" => Criterion::Expected,
        "p2bb" => Criterion::P2bb,
        "quantile" => Criterion::Quantile(gamma),
        other => {
            return Err(Error::Parse {
                what: format!("criterion {other:?}"),
                reason: "expected expected, p2bb, or quantile".into(),
            })
        }
    };
    let all: Vec<usize> = (0..ids.len()).collect();
    let values = value_posterior(&samples, &pref, &all)?;
    let ranked = select(&values, crit)?;
    let ranking: Vec<RankedEntry> = ranked
        .iter()
        .map(|&(algo, score)| {
            Ok(RankedEntry {
                algorithm: ids[algo].clone(),
                score,
                regret: anyrace::select::regret(&values, algo)?,
            })
        })
        .collect::<Result<_>>()?;

    let portfolio = if k > 1 {
        let res = portfolio_search(&samples, &pref, &all, k, crit, PortfolioStrategy::Auto)?;
        Some(PortfolioEntry {
            members: res.members.iter().map(|&a| ids[a].clone()).collect(),
            score: res.score,
            strategy: res.strategy_used.to_string(),
            linear_shortcut: res.linear_shortcut,
        })
    } else {
        None
    };

    let output = SelectOutput {
        preference: pref.name().to_string(),
        criterion: criterion.to_string(),
        gamma: matches!(crit, Criterion::Quantile(_)).then_some(gamma),
        k,
        ranking,
        portfolio,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&output)?);
    } else {
        println!(
            "preference={} criterion={}{} k={}",
            output.preference,
            output.criterion,
            output
                .gamma
                .map(|g| format!(" gamma={g}"))
                .unwrap_or_default(),
            output.k
        );
        for (rank, entry) in output.ranking.iter().enumerate() {
            println!(
                "{:>2}. {:<24} score={:<12.6} regret={:.6}",
                rank + 1,
                entry.algorithm,
                entry.score,
                entry.regret
            );
        }
        if let Some(p) = &output.portfolio {
            println!(
                "portfolio (k={}): {:?} score={:.6} [{}{}]",
                k,
                p.members,
                p.score,
                p.strategy,
                if p.linear_shortcut {
                    ", linear shortcut"
                } else {
                    ""
                }
            );
        }
    }
    Ok(ExitCode::from(0))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    n: usize,
    timepoints: usize,
    t_end: f64,
    seed: u64,
    model: &str,
    method: Option<String>,
    alpha: f64,
    epsilon: f64,
    max_rounds: usize,
    out: &Path,
) -> Result<ExitCode> {
    let grid = TimeGrid::uniform(t_end / timepoints as f64, t_end, timepoints)?;
    let truth = sample_ground_truth(n, &grid, &GroundTruthConfig::default(), seed)?;
    let ids: Vec<String> = (0..n)
        .map(|i| format!("algo_{}", (b'a' + (i % 26) as u8) as char))
        .collect();

    let mut spec = ModelSpec::named(model);
    // Recovery protocol: deliberately tighter lengthscale hyperprior than
    // the generator to exercise robustness to misspecification.
    spec.ell_scale = 2.0;
    let mut config = anyrace::race::RaceConfig::new(grid.clone(), spec, seed);
    config.alpha = alpha;
    config.epsilon = epsilon;
    config.max_rounds = max_rounds;
    config.elimination = EliminationMode::Joint;
    config.resolution = ResolutionMode::Crossing;
    config.inference = InferenceConfig {
        method: match method.as_deref() {
            Some("laplace") => Some(Method::Laplace),
            Some("hmc") => Some(Method::Hmc),
            None => None,
            Some(other) => {
                return Err(Error::config("method", format!("unknown method {other:?}")))
            }
        },
        chains: 2,
        warmup: 400,
        draws: 1000,
        ..Default::default()
    };

    let source = SyntheticSource::new(truth, seed);
    let mut race = Race::new(config, ids.clone(), source)?;
    let outcome = race.run()?;

    std::fs::create_dir_all(out)?;
    io::write_ground_truth_csv(&out.join("ground_truth.csv"), race.source().truth(), &ids)?;
    let truth_pareto: Vec<String> = true_pareto_set(race.source().truth())
        .into_iter()
        .map(|i| ids[i].clone())
        .collect();
    std::fs::write(
        out.join("true_pareto.json"),
        serde_json::to_string_pretty(&truth_pareto)?,
    )?;
    write_common_outputs(out, &race, &outcome, &outcome.rounds)?;
    println!(
        "estimated pareto set: {:?}\ntrue pareto set:      {:?}",
        outcome.pareto, truth_pareto
    );
    Ok(exit_code_for(&outcome))
}

fn cmd_report(rounds: &Path, out: &Path) -> Result<ExitCode> {
    let log = io::read_round_log(rounds)?;
    io::write_report_csvs(&log, out)?;
    println!(
        "wrote rating_posterior.csv, dominance_evolution.csv, sample_counts.csv ({} rounds)",
        log.len()
    );
    Ok(ExitCode::from(0))
}
