//! Experiment runner: configuration file, the policy × skewness matrix on a
//! shared evaluation instance, result and training-curve CSV files, and the
//! two comparison tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{train, AgentConfig, AgentError, CurvePoint, EvalInstance, GreedyAgentPolicy, TrainOutcome, TrainSetup};
use crate::demand::{generate_orders, DemandConfig, DemandError, Order};
use crate::layout::{Layout, LayoutConfig, LayoutError};
use crate::nn::{Network, NnError};
use crate::policies::{ClassBasedPolicy, RandomPolicy, ShortestLegPolicy, TurnoverTable};
use crate::rollout::RolloutPolicy;
use crate::sim::{run_episode, SimConfig, SimError, StoragePolicy};

/// Seed of the shared evaluation instance (demand stream and simulator).
/// Training episodes never use it.
pub const EVAL_SEED: u64 = 20_231_117;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("baseline travel time must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("missing agent weights {0}")]
    MissingWeights(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Toml(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Network(#[from] NnError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Percentage decrease of `t_policy` relative to `t_random`.
pub fn compute_gain(t_policy: f64, t_random: f64) -> Result<f64, BenchError> {
    if t_random.is_nan() || t_random <= 0.0 {
        return Err(BenchError::NonPositiveBaseline(t_random));
    }
    Ok(100.0 * (t_random - t_policy) / t_random)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasePolicy {
    Random,
    Class,
    ShortestLeg,
    Agent,
}

impl BasePolicy {
    fn as_str(self) -> &'static str {
        match self {
            BasePolicy::Random => "random",
            BasePolicy::Class => "class",
            BasePolicy::ShortestLeg => "sl",
            BasePolicy::Agent => "agent",
        }
    }
}

/// A policy name: `random | class | sl | agent`, optionally followed by
/// `+rollout:h=H` for the last two. `+rollout` without a horizon expands
/// over the configured horizon list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicySpec {
    pub base: BasePolicy,
    pub rollout: Option<RolloutHorizon>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RolloutHorizon {
    Fixed(usize),
    Sweep,
}

impl PolicySpec {
    pub fn horizon(&self) -> Option<usize> {
        match self.rollout {
            Some(RolloutHorizon::Fixed(h)) => Some(h),
            _ => None,
        }
    }

    fn expand(self, horizons: &[usize]) -> Vec<PolicySpec> {
        match self.rollout {
            Some(RolloutHorizon::Sweep) => horizons
                .iter()
                .map(|&h| PolicySpec { base: self.base, rollout: Some(RolloutHorizon::Fixed(h)) })
                .collect(),
            _ => vec![self],
        }
    }
}

impl FromStr for PolicySpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || BenchError::UnknownPolicy(s.to_string());
        let (base, suffix) = match s.split_once('+') {
            Some((b, rest)) => (b, Some(rest)),
            None => (s, None),
        };
        let base = match base.trim() {
            "random" => BasePolicy::Random,
            "class" => BasePolicy::Class,
            "sl" => BasePolicy::ShortestLeg,
            "agent" => BasePolicy::Agent,
            _ => return Err(unknown()),
        };
        let rollout = match suffix.map(str::trim) {
            None => None,
            Some("rollout") => Some(RolloutHorizon::Sweep),
            Some(rest) => {
                let h = rest.strip_prefix("rollout:h=").ok_or_else(unknown)?;
                Some(RolloutHorizon::Fixed(h.parse().map_err(|_| unknown())?))
            }
        };
        if rollout.is_some() && !matches!(base, BasePolicy::ShortestLeg | BasePolicy::Agent) {
            return Err(unknown());
        }
        Ok(PolicySpec { base, rollout })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.as_str())?;
        match self.rollout {
            Some(RolloutHorizon::Fixed(h)) => write!(f, "+rollout:h={h}"),
            Some(RolloutHorizon::Sweep) => f.write_str("+rollout"),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Skewness values swept.
    pub skewness: Vec<f64>,
    pub policies: Vec<String>,
    /// Horizons used by policies written as `base+rollout`.
    pub horizons: Vec<usize>,
    pub eval_seed: u64,
    /// Seed of the agent training run for every skewness value.
    pub training_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            skewness: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            policies: ["random", "class", "sl", "agent"].map(String::from).to_vec(),
            horizons: vec![5, 10, 20, 30, 40],
            eval_seed: EVAL_SEED,
            training_seed: 1,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.into()));
        if self.skewness.is_empty() {
            return bad("skewness list is empty");
        }
        if self.skewness.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return bad("skewness values must lie in (0, 1]");
        }
        if self.policies.is_empty() {
            return bad("policy list is empty");
        }
        if self.horizons.is_empty() {
            return bad("horizon list is empty");
        }
        self.policy_specs().map(|_| ())
    }

    /// Parsed and expanded policies, Random first, without duplicates.
    pub fn policy_specs(&self) -> Result<Vec<PolicySpec>, BenchError> {
        let mut specs = vec![PolicySpec { base: BasePolicy::Random, rollout: None }];
        for name in &self.policies {
            for spec in name.parse::<PolicySpec>()?.expand(&self.horizons) {
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
        Ok(specs)
    }

    pub fn weights_path(&self, s: f64) -> PathBuf {
        self.out_dir.join(format!("agent_s{s}.weights"))
    }

    pub fn curve_path(&self, s: f64) -> PathBuf {
        self.out_dir.join(format!("curve_s{s}.csv"))
    }

    pub fn results_path(&self) -> PathBuf {
        self.out_dir.join("results.csv")
    }
}

/// Full configuration file: `[layout]`, `[sim]`, `[demand]`, `[agent]` and
/// `[experiment]` sections, each optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub layout: LayoutConfig,
    pub sim: SimConfig,
    pub demand: DemandConfig,
    pub agent: AgentConfig,
    pub experiment: ExperimentConfig,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Toml(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, BenchError> {
        toml::to_string(self).map_err(|e| BenchError::Toml(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        Self::from_toml_str(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Keeps the per-minute order rate and shortens the horizon so that an
    /// episode carries `orders` expected requests.
    pub fn with_total_orders(mut self, orders: f64) -> Self {
        self.demand = self.demand.with_total_orders(orders);
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        Layout::from_config(&self.layout)?;
        self.demand.validate()?;
        self.agent.validate()?;
        if self.sim.shelves != self.demand.items {
            return Err(BenchError::InvalidConfig("sim.shelves must equal demand.items".into()));
        }
        self.experiment.validate()
    }

    pub fn layout(&self) -> Result<Arc<Layout>, BenchError> {
        Ok(Arc::new(Layout::from_config(&self.layout)?))
    }

    pub fn demand_for(&self, s: f64, seed: u64) -> DemandConfig {
        DemandConfig { skewness: s, seed, ..self.demand.clone() }
    }

    pub fn turnover(&self, s: f64) -> TurnoverTable {
        TurnoverTable::from_rates(self.demand_for(s, 0).rates())
    }

    /// The shared evaluation instance for skewness `s`.
    pub fn eval_orders(&self, s: f64) -> Result<Arc<[Order]>, BenchError> {
        Ok(generate_orders(&self.demand_for(s, self.experiment.eval_seed))?.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub s: f64,
    pub h: Option<usize>,
    pub t_seconds: f64,
    pub gain_percent: f64,
    pub seed: u64,
}

/// Builds the storage policy named by `spec`. Random and Class-based draw
/// from `seed`; agent policies need `agent`.
pub fn policy_from_spec(
    spec: &PolicySpec,
    layout: &Layout,
    turnover: &TurnoverTable,
    seed: u64,
    agent: Option<&Arc<Network>>,
) -> Result<Box<dyn StoragePolicy>, BenchError> {
    let greedy = || -> Result<GreedyAgentPolicy, BenchError> {
        let net = agent.ok_or_else(|| BenchError::InvalidConfig(format!("policy `{spec}` needs agent weights")))?;
        Ok(GreedyAgentPolicy::new(net.clone(), turnover.clone()))
    };
    let rollout_horizon = match spec.rollout {
        Some(RolloutHorizon::Sweep) => {
            return Err(BenchError::InvalidConfig(format!("policy `{spec}` needs an explicit horizon")))
        }
        _ => spec.horizon(),
    };
    Ok(match (spec.base, rollout_horizon) {
        (BasePolicy::Random, _) => Box::new(RandomPolicy::new(seed)),
        (BasePolicy::Class, _) => Box::new(ClassBasedPolicy::new(layout, turnover, seed)),
        (BasePolicy::ShortestLeg, None) => Box::new(ShortestLegPolicy),
        (BasePolicy::ShortestLeg, Some(h)) => Box::new(RolloutPolicy::new(ShortestLegPolicy, h)),
        (BasePolicy::Agent, None) => Box::new(greedy()?),
        (BasePolicy::Agent, Some(h)) => Box::new(RolloutPolicy::new(greedy()?, h)),
    })
}

/// Loads agent weights for every `s` the policies need. A missing file is an
/// error.
fn load_agents(cfg: &BenchConfig, specs: &[PolicySpec]) -> Result<BTreeMap<usize, Arc<Network>>, BenchError> {
    let mut nets = BTreeMap::new();
    if !specs.iter().any(|p| p.base == BasePolicy::Agent) {
        return Ok(nets);
    }
    for (i, &s) in cfg.experiment.skewness.iter().enumerate() {
        let path = cfg.experiment.weights_path(s);
        if !path.is_file() {
            return Err(BenchError::MissingWeights(path));
        }
        nets.insert(i, Arc::new(Network::load(&path)?));
    }
    Ok(nets)
}

/// Evaluates every policy on the shared instance of every `s`. Cells run in
/// parallel; rows come back sorted by `s`, then policy order, then horizon.
pub fn run_matrix(cfg: &BenchConfig) -> Result<Vec<ResultRow>, BenchError> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let specs = cfg.experiment.policy_specs()?;
    let agents = load_agents(cfg, &specs)?;
    let seed = cfg.experiment.eval_seed;
    let instances = cfg
        .experiment
        .skewness
        .iter()
        .map(|&s| cfg.eval_orders(s))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(usize, &PolicySpec)> =
        (0..instances.len()).flat_map(|i| specs.iter().map(move |p| (i, p))).collect();
    let mut travel = cells
        .par_iter()
        .map(|&(i, spec)| {
            let s = cfg.experiment.skewness[i];
            let mut policy = policy_from_spec(spec, &layout, &cfg.turnover(s), seed, agents.get(&i))?;
            log::info!("evaluating {spec} at s={s}");
            let m = run_episode(layout.clone(), instances[i].clone(), policy.as_mut(), &cfg.sim, seed)?;
            Ok((i, *spec, m.avg_travel_time))
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    travel.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rows = Vec::with_capacity(travel.len());
    for (i, spec, t) in &travel {
        let random = travel
            .iter()
            .find(|(j, p, _)| j == i && p.base == BasePolicy::Random)
            .map(|c| c.2)
            .expect("random is always evaluated");
        rows.push(ResultRow {
            policy: spec.to_string(),
            s: cfg.experiment.skewness[*i],
            h: spec.horizon(),
            t_seconds: *t,
            gain_percent: compute_gain(*t, random)?,
            seed,
        });
    }
    Ok(rows)
}

pub fn write_results_csv<W: io::Write>(rows: &[ResultRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_results_csv<R: io::Read>(input: R) -> Result<Vec<ResultRow>, BenchError> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

pub fn save_results(rows: &[ResultRow], path: &Path) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_results_csv(rows, fs::File::create(path).map_err(io_err(path))?)
}

/// A training curve and the baseline gains drawn as horizontal lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
    /// `(policy, gain_percent)` on the evaluation instance.
    pub references: Vec<(String, f64)>,
}

/// CSV with columns `episode,gain_percent` followed by one constant column
/// per reference line.
pub fn emit_training_curve<W: io::Write>(curve: &TrainingCurve, out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["episode".to_string(), "gain_percent".to_string()];
    header.extend(curve.references.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for p in &curve.points {
        let mut record = vec![p.episode.to_string(), p.gain_percent.to_string()];
        record.extend(curve.references.iter().map(|(_, g)| g.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses a file written by [`emit_training_curve`].
pub fn read_training_curve<R: io::Read>(input: R) -> Result<TrainingCurve, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let names: Vec<String> = r.headers()?.iter().skip(2).map(String::from).collect();
    let mut points = Vec::new();
    let mut refs: Vec<f64> = Vec::new();
    let parse = |field: Option<&str>| -> Result<f64, BenchError> {
        field
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| BenchError::InvalidConfig("malformed training curve".into()))
    };
    for record in r.records() {
        let record = record?;
        points.push(CurvePoint { episode: parse(record.get(0))? as usize, gain_percent: parse(record.get(1))? });
        refs = (0..names.len()).map(|k| parse(record.get(k + 2))).collect::<Result<_, _>>()?;
    }
    let references = if refs.is_empty() { names.into_iter().map(|n| (n, f64::NAN)).collect() } else { names.into_iter().zip(refs).collect() };
    Ok(TrainingCurve { points, references })
}

/// Gains of Random, Class-based and SL on the shared instance of `s`.
pub fn baseline_gains(cfg: &BenchConfig, s: f64) -> Result<Vec<(String, f64)>, BenchError> {
    let mut sub = cfg.clone();
    sub.experiment.skewness = vec![s];
    sub.experiment.policies = ["random", "class", "sl"].map(String::from).to_vec();
    Ok(run_matrix(&sub)?.into_iter().map(|r| (r.policy, r.gain_percent)).collect())
}

/// Trains the agent for skewness `s` with the configured training seed and
/// tests it on the shared instance every `eval_every` episodes.
pub fn train_agent(
    cfg: &BenchConfig,
    s: f64,
    progress: &mut dyn FnMut(&CurvePoint),
) -> Result<TrainOutcome, BenchError> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let eval = EvalInstance::new(&layout, cfg.eval_orders(s)?, &cfg.sim, cfg.experiment.eval_seed)?;
    let setup = TrainSetup {
        layout,
        demand: cfg.demand_for(s, cfg.experiment.training_seed),
        sim: cfg.sim.clone(),
        agent: cfg.agent.clone(),
        seed: cfg.experiment.training_seed,
        eval: Some(eval),
    };
    Ok(train(&setup, progress)?)
}

/// Trains, then writes `agent_s{s}.weights` and `curve_s{s}.csv` into the
/// output directory.
pub fn train_and_save(
    cfg: &BenchConfig,
    s: f64,
    progress: &mut dyn FnMut(&CurvePoint),
) -> Result<TrainOutcome, BenchError> {
    let outcome = train_agent(cfg, s, progress)?;
    let dir = &cfg.experiment.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    outcome.network.save(cfg.experiment.weights_path(s))?;
    let curve = TrainingCurve { points: outcome.curve.clone(), references: baseline_gains(cfg, s)? };
    let path = cfg.experiment.curve_path(s);
    emit_training_curve(&curve, fs::File::create(&path).map_err(io_err(&path))?)?;
    Ok(outcome)
}

fn find<'a>(rows: &'a [ResultRow], policy: &str, s: f64) -> Option<&'a ResultRow> {
    rows.iter().find(|r| r.policy == policy && r.s == s)
}

/// Average travel time and gain per policy (columns) and skewness (rows).
pub fn format_table1(rows: &[ResultRow]) -> String {
    let mut policies: Vec<&str> = Vec::new();
    let mut svals: Vec<f64> = Vec::new();
    for r in rows.iter().filter(|r| r.h.is_none()) {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
        if !svals.contains(&r.s) {
            svals.push(r.s);
        }
    }
    let mut out = String::from("s    ");
    for p in &policies {
        out.push_str(&format!(" | {:>8} t {:>7} g", p, ""));
    }
    out.push('\n');
    for s in svals {
        out.push_str(&format!("{s:<5}"));
        for p in &policies {
            match find(rows, p, s) {
                Some(r) => out.push_str(&format!(" | {:>10.2} {:>8.2}%", r.t_seconds, r.gain_percent)),
                None => out.push_str(&format!(" | {:>20}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// Rollout gains per base policy and horizon (columns) and skewness (rows).
pub fn format_table2(rows: &[ResultRow]) -> String {
    let mut columns: Vec<(&str, usize)> = Vec::new();
    let mut svals: Vec<f64> = Vec::new();
    for r in rows {
        if let Some(h) = r.h {
            let base = r.policy.split('+').next().unwrap_or_default();
            if !columns.contains(&(base, h)) {
                columns.push((base, h));
            }
            if !svals.contains(&r.s) {
                svals.push(r.s);
            }
        }
    }
    let mut out = String::from("s    ");
    for (base, h) in &columns {
        out.push_str(&format!(" | {:>11}", format!("{base} h={h}")));
    }
    out.push('\n');
    for s in svals {
        out.push_str(&format!("{s:<5}"));
        for (base, h) in &columns {
            match find(rows, &format!("{base}+rollout:h={h}"), s) {
                Some(r) => out.push_str(&format!(" | {:>10.2}%", r.gain_percent)),
                None => out.push_str(&format!(" | {:>11}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> BenchConfig {
        let mut cfg = BenchConfig::default().with_total_orders(600.0);
        cfg.experiment.skewness = vec![0.5, 1.0];
        cfg.experiment.policies = vec!["class".into(), "sl".into()];
        cfg.experiment.out_dir = dir.to_path_buf();
        cfg.sim.warmup_cycles = 10;
        cfg
    }

    #[test]
    fn gain_matches_reference_values() {
        assert_eq!(compute_gain(12.0, 12.0).unwrap(), 0.0);
        assert!((compute_gain(34.79, 38.69).unwrap() - 10.08).abs() < 0.01);
        assert!((compute_gain(32.19, 37.97).unwrap() - 15.22).abs() < 0.01);
    }

    #[test]
    fn gain_rejects_nonpositive_baseline() {
        assert!(matches!(compute_gain(1.0, 0.0), Err(BenchError::NonPositiveBaseline(_))));
        assert!(matches!(compute_gain(1.0, -3.0), Err(BenchError::NonPositiveBaseline(_))));
        assert!(compute_gain(1.0, f64::NAN).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for name in ["random", "class", "sl", "agent", "sl+rollout:h=20", "agent+rollout:h=0", "sl+rollout"] {
            assert_eq!(name.parse::<PolicySpec>().unwrap().to_string(), name);
        }
        for bad in ["greedy", "random+rollout:h=5", "class+rollout", "sl+rollout:h=x", "sl+lookahead"] {
            assert!(bad.parse::<PolicySpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_expands_over_horizons_and_random_leads() {
        let exp = ExperimentConfig {
            policies: vec!["sl+rollout".into(), "sl".into(), "random".into()],
            horizons: vec![5, 10],
            ..Default::default()
        };
        let names: Vec<String> = exp.policy_specs().unwrap().iter().map(ToString::to_string).collect();
        assert_eq!(names, ["random", "sl+rollout:h=5", "sl+rollout:h=10", "sl"]);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let mut c = BenchConfig::default();
        c.experiment.skewness = vec![];
        assert!(c.validate().is_err());
        c.experiment.skewness = vec![1.5];
        assert!(c.validate().is_err());
        c = BenchConfig::default();
        c.experiment.horizons.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip_and_partial_sections() {
        let cfg = BenchConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(BenchConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = BenchConfig::from_toml_str("[experiment]\nskewness = [0.6]\n[agent]\nepisodes = 50\n").unwrap();
        assert_eq!(partial.experiment.skewness, vec![0.6]);
        assert_eq!(partial.agent.episodes, 50);
        assert_eq!(partial.agent.lr, AgentConfig::default().lr);
        assert!(BenchConfig::from_toml_str("[experiment]\nbogus = 1\n").is_err());
    }

    #[test]
    fn shipped_desk_config_parses() {
        let cfg = BenchConfig::from_toml_str(include_str!("../../../configs/desk.toml")).unwrap();
        cfg.validate().unwrap();
        let rate = |d: &DemandConfig| d.orders / d.horizon;
        assert!((rate(&cfg.demand) - rate(&DemandConfig::default())).abs() < 1e-12);
        assert_eq!(cfg.experiment.policy_specs().unwrap().len(), 4 + 3 + 3);
    }

    #[test]
    fn random_only_matrix_has_zero_gains() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.experiment.policies = vec!["random".into()];
        let rows = run_matrix(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.gain_percent == 0.0 && r.seed == EVAL_SEED));
    }

    #[test]
    fn matrix_is_deterministic_and_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let a = run_matrix(&cfg).unwrap();
        let b = run_matrix(&cfg).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.iter().map(|r| r.policy.as_str()).collect();
        assert_eq!(names, ["random", "class", "sl", "random", "class", "sl"]);
        for r in a.iter().filter(|r| r.policy == "random") {
            assert_eq!(r.gain_percent, 0.0);
        }
        let mut buf = Vec::new();
        write_results_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("policy,s,h,t_seconds,gain_percent,seed\n"));
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn agent_rows_need_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.experiment.policies = vec!["agent".into()];
        assert!(matches!(run_matrix(&cfg), Err(BenchError::MissingWeights(_))));
    }

    #[test]
    fn empty_curve_writes_header_only() {
        let curve = TrainingCurve { points: vec![], references: vec![("random".into(), 0.0), ("sl".into(), 10.0)] };
        let mut buf = Vec::new();
        emit_training_curve(&curve, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "episode,gain_percent,random,sl\n");
    }

    #[test]
    fn curve_round_trips() {
        let points: Vec<CurvePoint> =
            (1..=100).map(|k| CurvePoint { episode: 100 * k, gain_percent: k as f64 * 0.1 }).collect();
        let curve = TrainingCurve { points, references: vec![("class".into(), 4.25), ("sl".into(), 10.5)] };
        let mut buf = Vec::new();
        emit_training_curve(&curve, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 101);
        assert_eq!(read_training_curve(buf.as_slice()).unwrap(), curve);
    }

    #[test]
    fn tables_list_every_cell() {
        let row = |policy: &str, s: f64, h: Option<usize>, g: f64| ResultRow {
            policy: policy.into(),
            s,
            h,
            t_seconds: 30.0,
            gain_percent: g,
            seed: 1,
        };
        let rows = vec![
            row("random", 0.6, None, 0.0),
            row("sl", 0.6, None, 10.0),
            row("sl+rollout:h=5", 0.6, Some(5), 14.0),
            row("sl+rollout:h=20", 0.6, Some(20), 16.0),
        ];
        let t1 = format_table1(&rows);
        assert!(t1.contains("random") && t1.contains("10.00%") && !t1.contains("rollout"));
        let t2 = format_table2(&rows);
        assert!(t2.contains("sl h=5") && t2.contains("sl h=20") && t2.contains("16.00%"));
    }
}
