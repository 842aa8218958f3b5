//! File formats: the run archive (JSON lines), posterior and ground-truth
//! exports (CSV with a JSON diagnostics sidecar), resolution snapshots,
//! race config files (TOML or JSON), checkpoints, manifests, and the tidy
//! CSVs behind the report command. Everything here is concrete `f64`.

use crate::beliefs::{p_dominates_anytime, p_dominates_pointwise, p_equivalent, ResolutionMatrix};
use crate::error::{Error, Result};
use crate::grid::{Spacing, TimeGrid};
use crate::inference::{Diagnostics, InferenceConfig, JointStructure, Method, RatingSamples};
use crate::priors::ModelSpec;
use crate::race::{RaceConfig, RaceState, RoundReport, RunRecord, TrajectorySource};
use crate::ranking::TiePolicy;
use crate::synth::GroundTruth;
use crate::trajectory::Trajectory;
use ndarray::Array3;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Run archive: one trajectory per line.
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct TrajectoryLine {
    algorithm: String,
    instance: String,
    seed: u64,
    horizon: f64,
    samples: Vec<[f64; 2]>,
}

pub fn write_archive(path: &Path, trajectories: impl Iterator<Item = Trajectory<f64>>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in trajectories {
        let line = TrajectoryLine {
            algorithm: t.algorithm_id,
            instance: t.instance_id,
            seed: t.seed,
            horizon: t.horizon,
            samples: t.samples.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<Trajectory<f64>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrajectoryLine = serde_json::from_str(&line)?;
        out.push(Trajectory::new(
            t.algorithm,
            t.instance,
            t.seed,
            t.samples.into_iter().map(|[a, b]| (a, b)).collect(),
            t.horizon,
        )?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Posterior export: draws as CSV plus a JSON diagnostics sidecar.
// ---------------------------------------------------------------------------

pub fn write_posterior_csv(
    path: &Path,
    samples: &RatingSamples<f64>,
    ids: &[String],
    times: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "sample,timepoint,algorithm,theta")?;
    for s in 0..samples.draws() {
        for ti in 0..samples.timepoints() {
            for (i, id) in ids.iter().enumerate() {
                writeln!(
                    w,
                    "{s},{},{},{}",
                    times[ti],
                    csv_field(id),
                    samples.theta(s, ti, i)
                )?;
            }
        }
    }
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct DiagnosticsSidecar {
    pub method: Method,
    pub joint: JointStructure,
    pub diagnostics: Diagnostics,
    pub draws: usize,
    pub algorithms: Vec<String>,
}

pub fn write_diagnostics_sidecar(
    path: &Path,
    samples: &RatingSamples<f64>,
    ids: &[String],
) -> Result<()> {
    let sidecar = DiagnosticsSidecar {
        method: samples.method,
        joint: samples.joint,
        diagnostics: samples.diagnostics.clone(),
        draws: samples.draws(),
        algorithms: ids.to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => {
                fields.push(std::mem::take(&mut cur));
            }
            c => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Parse a posterior export back into draws. Returns the samples, the
/// algorithm ids in column order, and the grid (explicit spacing).
pub fn read_posterior_csv(path: &Path) -> Result<(RatingSamples<f64>, Vec<String>, TimeGrid<f64>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows: Vec<(usize, f64, String, f64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        if fields.len() != 4 {
            return Err(Error::Parse {
                what: format!("posterior csv line {}", lineno + 1),
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            what: format!("posterior csv line {}", lineno + 1),
            reason: format!("bad {what}"),
        };
        rows.push((
            fields[0].parse().map_err(|_| bad("sample index"))?,
            fields[1].parse().map_err(|_| bad("timepoint"))?,
            fields[2].clone(),
            fields[3].parse().map_err(|_| bad("theta"))?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            what: "posterior csv".into(),
            reason: "no data rows".into(),
        });
    }
    let mut ids: Vec<String> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for (_, t, id, _) in &rows {
        if !ids.contains(id) {
            ids.push(id.clone());
        }
        if !times.iter().any(|x| x == t) {
            times.push(*t);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let draws = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let mut arr = Array3::<f64>::zeros((draws, times.len(), ids.len()));
    for (s, t, id, theta) in rows {
        let ti = times.iter().position(|x| *x == t).unwrap();
        let i = ids.iter().position(|x| *x == id).unwrap();
        arr[(s, ti, i)] = theta;
    }
    let samples = RatingSamples::new(
        arr,
        Method::Laplace,
        JointStructure::Joint,
        Diagnostics {
            converged: true,
            ..Default::default()
        },
    )?;
    let grid = TimeGrid::new(times, Spacing::Explicit)?;
    Ok((samples, ids, grid))
}

// ---------------------------------------------------------------------------
// Ground-truth export.
// ---------------------------------------------------------------------------

pub fn write_ground_truth_csv(path: &Path, truth: &GroundTruth<f64>, ids: &[String]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "timepoint,algorithm,theta")?;
    for ti in 0..truth.timepoints() {
        for (i, id) in ids.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                truth.times[ti],
                csv_field(id),
                truth.theta_star[(ti, i)]
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Resolution snapshot.
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
pub struct ResolutionEntrySnapshot {
    pub t: f64,
    pub resolved: bool,
    pub label: Option<crate::beliefs::Relation>,
    pub p_dominates_ij: f64,
    pub p_dominates_ji: f64,
    pub p_equivalent: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct PairSnapshot {
    pub first: String,
    pub second: String,
    pub p_anytime_ij: f64,
    pub p_anytime_ji: f64,
    pub entries: Vec<ResolutionEntrySnapshot>,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct ResolutionSnapshot {
    pub round: usize,
    /// Whether joint probabilities come from a model with a true joint
    /// posterior or a product of per-timepoint marginals.
    pub joint: JointStructure,
    pub pairs: Vec<PairSnapshot>,
}

pub fn resolution_snapshot(
    round: usize,
    matrix: &ResolutionMatrix,
    samples: &RatingSamples<f64>,
    ids: &[String],
    epsilon: f64,
    times: &[f64],
) -> Result<ResolutionSnapshot> {
    let n = ids.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut entries = Vec::new();
            for t in 0..matrix.timepoints() {
                entries.push(ResolutionEntrySnapshot {
                    t: times[t],
                    resolved: matrix.is_resolved(i, j, t),
                    label: matrix.label(i, j, t),
                    p_dominates_ij: p_dominates_pointwise(samples, i, j, t),
                    p_dominates_ji: p_dominates_pointwise(samples, j, i, t),
                    p_equivalent: p_equivalent(samples, i, j, t, epsilon)?,
                });
            }
            pairs.push(PairSnapshot {
                first: ids[i].clone(),
                second: ids[j].clone(),
                p_anytime_ij: p_dominates_anytime(samples, i, j),
                p_anytime_ji: p_dominates_anytime(samples, j, i),
                entries,
            });
        }
    }
    Ok(ResolutionSnapshot {
        round,
        joint: samples.joint,
        pairs,
    })
}

// ---------------------------------------------------------------------------
// Race config file.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GridSpec {
    Uniform { start: f64, end: f64, len: usize },
    Logarithmic { start: f64, end: f64, len: usize },
    Explicit { points: Vec<f64> },
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid<f64>> {
        match self {
            GridSpec::Uniform { start, end, len } => TimeGrid::uniform(*start, *end, *len),
            GridSpec::Logarithmic { start, end, len } => TimeGrid::logarithmic(*start, *end, *len),
            GridSpec::Explicit { points } => TimeGrid::new(points.clone(), Spacing::Explicit),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default)]
pub struct TieSpec {
    pub tolerance: f64,
    pub max_expand: usize,
    pub subsample: usize,
}

impl Default for TieSpec {
    fn default() -> Self {
        let p: TiePolicy<f64> = TiePolicy::default();
        Self {
            tolerance: p.tolerance,
            max_expand: p.max_expand,
            subsample: p.subsample,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct InstanceSpec {
    pub generator: String,
    pub dim: usize,
}

/// The on-disk mirror of a race setup. `algorithms` names built-in
/// optimizers; embedding tools construct races in code instead.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct RaceFileConfig {
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_elimination")]
    pub elimination: crate::beliefs::EliminationMode,
    #[serde(default = "default_resolution")]
    pub resolution: crate::beliefs::ResolutionMode,
    #[serde(default = "default_batch_init")]
    pub batch_init: usize,
    #[serde(default = "default_batch_init")]
    pub batch_min: usize,
    #[serde(default = "default_batch_max")]
    pub batch_max: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    pub grid: GridSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub ties: TieSpec,
    pub instances: InstanceSpec,
    pub algorithms: Vec<String>,
}

fn default_alpha() -> f64 {
    0.99
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_elimination() -> crate::beliefs::EliminationMode {
    crate::beliefs::EliminationMode::Joint
}
fn default_resolution() -> crate::beliefs::ResolutionMode {
    crate::beliefs::ResolutionMode::Crossing
}
fn default_batch_init() -> usize {
    8
}
fn default_batch_max() -> usize {
    64
}
fn default_max_rounds() -> usize {
    200
}

impl RaceFileConfig {
    /// Parse TOML or JSON depending on the file extension (.json is JSON,
    /// anything else is treated as TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                what: format!("{}", path.display()),
                reason: e.to_string(),
            })
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                what: format!("{}", path.display()),
                reason: e.to_string(),
            })
        }
    }

    pub fn to_core(&self) -> Result<RaceConfig<f64>> {
        let grid = self.grid.build()?;
        let mut config = RaceConfig::new(grid, self.model.clone(), self.seed);
        config.alpha = self.alpha;
        config.epsilon = self.epsilon;
        config.elimination = self.elimination;
        config.resolution = self.resolution;
        config.batch_init = self.batch_init;
        config.batch_min = self.batch_min;
        config.batch_max = self.batch_max;
        config.max_rounds = self.max_rounds;
        config.inference = self.inference.clone();
        config.ties = TiePolicy {
            tolerance: self.ties.tolerance,
            max_expand: self.ties.max_expand,
            subsample: self.ties.subsample,
        };
        config.validate()?;
        Ok(config)
    }

    /// Instantiate the built-in optimizers and instance generator.
    pub fn build_source(&self) -> Result<TrajectorySource<f64>> {
        if self.algorithms.len() < 2 {
            return Err(Error::config("algorithms", "need at least 2 algorithm names"));
        }
        let algorithms = self
            .algorithms
            .iter()
            .map(|name| crate::synth::algorithm_by_name(name))
            .collect::<Result<Vec<_>>>()?;
        let provider = crate::synth::provider_by_name(&self.instances.generator, self.instances.dim)?;
        Ok(TrajectorySource::new(algorithms, provider, self.seed))
    }
}

// ---------------------------------------------------------------------------
// Manifest: everything needed for an exact replay.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: RaceFileConfig,
}

impl Manifest {
    pub fn new(config: &RaceFileConfig) -> Result<Self> {
        let canonical = serde_json::to_string(config)?;
        Ok(Self {
            tool: "anyrace".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_digest: format!("{:016x}", fnv1a(canonical.as_bytes())),
            config: config.clone(),
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Checkpoint.
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
pub struct StateCheckpoint {
    pub algorithm_ids: Vec<String>,
    pub candidates: Vec<usize>,
    pub eliminated: Vec<(usize, usize, usize)>, // (victim, round, dominator)
    pub resolution: ResolutionMatrix,
    pub round: usize,
    pub batch_size: usize,
    pub instance_log: Vec<u64>,
    pub runs: Vec<(u64, usize, f64)>,
    pub total_cost: f64,
    pub partially_resolved: bool,
}

impl StateCheckpoint {
    pub fn from_state(state: &RaceState<f64>) -> Self {
        Self {
            algorithm_ids: state.algorithm_ids.clone(),
            candidates: state.candidates.clone(),
            eliminated: state
                .eliminated
                .iter()
                .map(|(&v, &(r, d))| (v, r, d))
                .collect(),
            resolution: state.resolution.clone(),
            round: state.round,
            batch_size: state.batch_size,
            instance_log: state.instance_log.clone(),
            runs: state
                .runs
                .iter()
                .map(|r| (r.instance, r.algo, r.horizon))
                .collect(),
            total_cost: state.total_cost,
            partially_resolved: state.partially_resolved,
        }
    }

    pub fn into_state(self) -> RaceState<f64> {
        RaceState {
            algorithm_ids: self.algorithm_ids,
            candidates: self.candidates,
            eliminated: self
                .eliminated
                .into_iter()
                .map(|(v, r, d)| (v, (r, d)))
                .collect(),
            resolution: self.resolution,
            round: self.round,
            batch_size: self.batch_size,
            instance_log: self.instance_log,
            runs: self
                .runs
                .into_iter()
                .map(|(instance, algo, horizon)| RunRecord {
                    instance,
                    algo,
                    horizon,
                })
                .collect(),
            total_cost: self.total_cost,
            partially_resolved: self.partially_resolved,
        }
    }
}

pub fn write_state(path: &Path, state: &RaceState<f64>) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&StateCheckpoint::from_state(state))?,
    )?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<RaceState<f64>> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: StateCheckpoint = serde_json::from_str(&text)?;
    Ok(ckpt.into_state())
}

// ---------------------------------------------------------------------------
// Final Pareto set file.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EliminationEntry {
    pub algorithm: String,
    pub round: usize,
    pub dominator: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ParetoFile {
    pub pareto: Vec<String>,
    pub fully_resolved: bool,
    pub eliminated: Vec<EliminationEntry>,
}

impl ParetoFile {
    pub fn from_state(state: &RaceState<f64>) -> Self {
        let mut eliminated: Vec<EliminationEntry> = state
            .eliminated
            .iter()
            .map(|(&victim, &(round, dominator))| EliminationEntry {
                algorithm: state.algorithm_ids[victim].clone(),
                round,
                dominator: state.algorithm_ids[dominator].clone(),
            })
            .collect();
        eliminated.sort_by(|a, b| (a.round, &a.algorithm).cmp(&(b.round, &b.algorithm)));
        Self {
            pareto: state
                .candidates
                .iter()
                .map(|&a| state.algorithm_ids[a].clone())
                .collect(),
            fully_resolved: state.is_complete(),
            eliminated,
        }
    }
}

// ---------------------------------------------------------------------------
// Round log and report CSVs.
// ---------------------------------------------------------------------------

pub fn write_round_log(path: &Path, rounds: &[RoundReport]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in rounds {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_round_log(path: &Path) -> Result<Vec<RoundReport>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Tidy CSVs for plotting: the final rating posterior, the dominance
/// evolution over rounds, and the per-algorithm sample allocation.
pub fn write_report_csvs(rounds: &[RoundReport], dir: &Path) -> Result<()> {
    if rounds.is_empty() {
        return Err(Error::invalid("round log is empty"));
    }
    std::fs::create_dir_all(dir)?;

    let last = rounds.last().unwrap();
    let mut w = BufWriter::new(std::fs::File::create(dir.join("rating_posterior.csv"))?);
    writeln!(w, "t,algorithm,mean,q025,q975")?;
    for row in &last.rating_summary {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.t,
            csv_field(&row.algorithm),
            row.mean,
            row.q025,
            row.q975
        )?;
    }
    drop(w);

    let mut w = BufWriter::new(std::fs::File::create(dir.join("dominance_evolution.csv"))?);
    writeln!(w, "round,algorithm,max_dominance,instances")?;
    for r in rounds {
        for (algo, p) in &r.max_dominance {
            writeln!(
                w,
                "{},{},{},{}",
                r.round,
                csv_field(algo),
                p,
                r.cumulative_instances
            )?;
        }
    }
    drop(w);

    let mut counts: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for r in rounds {
        for (algo, horizon, count) in &r.runs_this_round {
            *counts
                .entry((algo.clone(), horizon.to_bits()))
                .or_insert(0) += count;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(dir.join("sample_counts.csv"))?);
    writeln!(w, "algorithm,horizon,instances")?;
    for ((algo, hbits), count) in counts {
        writeln!(
            w,
            "{},{},{}",
            csv_field(&algo),
            f64::from_bits(hbits),
            count
        )?;
    }
    Ok(())
}
