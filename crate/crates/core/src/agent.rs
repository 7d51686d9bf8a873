//! Differential double deep Q-learning storage agent.
//!
//! Values are costs: each output estimates the cumulative cycle travel from
//! a state onwards relative to the average cycle travel `avg_reward`, so
//! greedy choices take the argmin. The learner itself only sees feature
//! vectors and feasibility masks; [`extract_features`] and [`train`] bind it
//! to the warehouse simulation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{generate_orders, DemandConfig, DemandError, Order};
use crate::layout::Layout;
use crate::nn::{train_batch, Adam, AdamConfig, Network, NnError, TargetRow};
use crate::policies::{RandomPolicy, TurnoverTable};
use crate::sim::{run_episode, Decision, Placement, SimConfig, SimError, Simulation, StoragePolicy, StorageRequest};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no feasible action")]
    NoFeasibleAction,
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged after {steps} steps: {reason}")]
    Diverged { steps: u64, reason: String },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub epsilon: f64,
    pub lr: f64,
    /// Step size of the average-reward estimate.
    pub avg_reward_step: f64,
    pub replay_capacity: usize,
    /// Decisions between training rounds.
    pub train_every: usize,
    /// Experiences drawn (with replacement) per training round.
    pub sample_size: usize,
    pub minibatch: usize,
    /// Steps between target-network syncs.
    pub target_sync: u64,
    pub episodes: usize,
    /// Episodes between greedy evaluations.
    pub eval_every: usize,
    pub hidden: Vec<usize>,
    /// Abort once |avg_reward| exceeds this.
    pub divergence_limit: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            lr: 0.00025,
            avg_reward_step: 0.0001,
            replay_capacity: 1000,
            train_every: 100,
            sample_size: 256,
            minibatch: 64,
            target_sync: 500,
            episodes: 10_000,
            eval_every: 100,
            hidden: vec![32, 32, 32],
            divergence_limit: 1e6,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.avg_reward_step >= 0.0) {
            return bad("step sizes must be positive");
        }
        if self.replay_capacity == 0 || self.train_every == 0 || self.minibatch == 0 || self.target_sync == 0 {
            return bad("capacity, periods and batch sizes must be positive");
        }
        if self.sample_size == 0 || self.sample_size > self.replay_capacity {
            return bad("sample size must lie in 1..=replay capacity");
        }
        if self.eval_every == 0 {
            return bad("evaluation period must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        Ok(())
    }
}

/// Action taken at a decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Zone(usize),
    /// No choice was available: the robot re-queued with its shelf.
    Opportunistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Action,
    /// Cycle travel seconds incurred by the action.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_feasible: Vec<bool>,
    pub next_opportunistic: bool,
}

/// Fixed-capacity ring of experiences; the oldest entry is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity), head: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, slot: usize) -> &Experience {
        &self.items[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_slots(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// Feasible index with the smallest value, lowest index on ties.
pub fn masked_argmin(values: &[f64], feasible: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(feasible).enumerate() {
        if ok && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// The learning core: online and target networks, replay memory and the
/// average-reward estimate.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    cfg: AgentConfig,
    online: Network,
    target: Network,
    adam: Adam,
    replay: ReplayBuffer,
    avg_reward: f64,
    steps: u64,
    rng: ChaCha8Rng,
    last_loss: Option<f64>,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, inputs: usize, actions: usize, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let mut sizes = vec![inputs];
        sizes.extend(&cfg.hidden);
        sizes.push(actions);
        let online = Network::new(&sizes, seed)?;
        Ok(Self::with_network(cfg, online, seed))
    }

    pub fn with_network(cfg: AgentConfig, online: Network, seed: u64) -> Self {
        let adam = Adam::new(&online, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Self {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            target: online.clone(),
            online,
            adam,
            avg_reward: 0.0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B),
            last_loss: None,
            cfg,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Network {
        &mut self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut Network {
        &mut self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn avg_reward(&self) -> f64 {
        self.avg_reward
    }

    pub fn set_avg_reward(&mut self, value: f64) {
        self.avg_reward = value;
    }

    /// Experiences observed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn into_network(self) -> Network {
        self.online
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.online.forward(state)?)
    }

    pub fn greedy_action(&self, state: &[f64], feasible: &[bool]) -> Result<usize, AgentError> {
        masked_argmin(&self.q_values(state)?, feasible).ok_or(AgentError::NoFeasibleAction)
    }

    /// Epsilon-greedy over feasible actions. Returns the action and whether it
    /// was the greedy one.
    pub fn select_action(&mut self, state: &[f64], feasible: &[bool], explore: bool) -> Result<(usize, bool), AgentError> {
        let greedy = self.greedy_action(state, feasible)?;
        if explore && self.rng.random_bool(self.cfg.epsilon) {
            let options: Vec<usize> = (0..feasible.len()).filter(|&a| feasible[a]).collect();
            let a = options[self.rng.random_range(0..options.len())];
            return Ok((a, a == greedy));
        }
        Ok((greedy, true))
    }

    /// Value the online network assigns to the experience's action.
    /// Opportunistic states share one value, the mean over outputs.
    fn online_value(&self, state: &[f64], action: Action) -> Result<f64, AgentError> {
        let q = self.online.forward(state)?;
        Ok(match action {
            Action::Zone(a) => q[a],
            Action::Opportunistic => q.iter().sum::<f64>() / q.len() as f64,
        })
    }

    /// Differential double-Q target: the online network picks the next
    /// action, the target network evaluates it.
    pub fn compute_target(&self, e: &Experience) -> Result<f64, AgentError> {
        let next_value = if e.next_opportunistic {
            let q = self.target.forward(&e.next_state)?;
            q.iter().sum::<f64>() / q.len() as f64
        } else {
            let a = self.greedy_action(&e.next_state, &e.next_feasible)?;
            self.target.forward(&e.next_state)?[a]
        };
        Ok(e.reward - self.avg_reward + next_value)
    }

    pub fn update_avg_reward(&mut self, e: &Experience, target: f64) -> Result<(), AgentError> {
        let q = self.online_value(&e.state, e.action)?;
        self.avg_reward += self.cfg.avg_reward_step * (target - q);
        Ok(())
    }

    /// Records one transition. The average reward moves only after greedy
    /// actions. Trains every `train_every` steps and syncs the target network
    /// every `target_sync` steps.
    pub fn observe(&mut self, e: Experience, greedy: bool) -> Result<(), AgentError> {
        if greedy {
            let y = self.compute_target(&e)?;
            self.update_avg_reward(&e, y)?;
        }
        if !self.avg_reward.is_finite() || self.avg_reward.abs() > self.cfg.divergence_limit {
            return Err(AgentError::Diverged { steps: self.steps, reason: format!("average reward {}", self.avg_reward) });
        }
        self.replay.push(e);
        self.steps += 1;
        if self.steps.is_multiple_of(self.cfg.train_every as u64) {
            self.train_round()?;
        }
        if self.steps.is_multiple_of(self.cfg.target_sync) {
            self.target.copy_weights_from(&self.online)?;
        }
        Ok(())
    }

    /// An opportunistic state offers no choice; every output is trained
    /// towards the same target.
    pub fn observe_opportunistic(
        &mut self,
        state: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        next_feasible: Vec<bool>,
        next_opportunistic: bool,
    ) -> Result<(), AgentError> {
        let e = Experience { state, action: Action::Opportunistic, reward, next_state, next_feasible, next_opportunistic };
        self.observe(e, true)
    }

    fn train_round(&mut self) -> Result<(), AgentError> {
        let slots = self.replay.sample_slots(&mut self.rng, self.cfg.sample_size);
        let width = self.online.output_size();
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in slots.chunks(self.cfg.minibatch) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &slot in chunk {
                let e = self.replay.get(slot);
                let y = self.compute_target(e)?;
                inputs.push(e.state.clone());
                targets.push(match e.action {
                    Action::Zone(a) => TargetRow::single(width, a, y),
                    Action::Opportunistic => TargetRow::all(width, y),
                });
            }
            let loss = train_batch(&mut self.online, &mut self.adam, &inputs, &targets).map_err(|err| match err {
                NnError::NonFiniteLoss(l) => AgentError::Diverged { steps: self.steps, reason: format!("loss {l}") },
                other => other.into(),
            })?;
            total += loss;
            batches += 1;
        }
        self.last_loss = Some(total / batches as f64);
        Ok(())
    }
}

/// What the robot does after the decision being featurized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextTask {
    /// Retrieval in the given zone, `None` when no order is waiting.
    Retrieval(Option<usize>),
    Opportunistic,
}

/// `3n + 3` features for `n` zones: shelf turnover rate and rank, one-hot
/// zone of the next retrieval, per-zone occupation, per-zone robots inbound
/// for a retrieval (over the fleet size) and the opportunistic flag.
pub fn extract_features(sim: &Simulation, shelf: usize, next: NextTask, turnover: &TurnoverTable) -> Vec<f64> {
    let zones = sim.layout().zones();
    let n = zones.len();
    let mut f = vec![0.0; 3 * n + 3];
    f[0] = turnover.rate(shelf);
    f[1] = turnover.rank(shelf);
    match next {
        NextTask::Retrieval(Some(z)) => f[2 + z] = 1.0,
        NextTask::Retrieval(None) => {}
        NextTask::Opportunistic => f[2 + 3 * n] = 1.0,
    }
    let robots = sim.robots().len() as f64;
    for z in zones {
        f[2 + n + z.id] = (z.capacity - sim.zone_free()[z.id]) as f64 / z.capacity as f64;
        f[2 + 2 * n + z.id] = sim.inbound_per_zone()[z.id] as f64 / robots;
    }
    f
}

/// Features of the decision the simulation is waiting on.
pub fn decision_features(sim: &Simulation, decision: &Decision, turnover: &TurnoverTable) -> Vec<f64> {
    match decision {
        Decision::Storage(req) => {
            extract_features(sim, req.shelf, NextTask::Retrieval(req.next_retrieval.map(|r| r.zone)), turnover)
        }
        Decision::Opportunistic(t) => extract_features(sim, t.shelf, NextTask::Opportunistic, turnover),
    }
}

/// Inference-only storage policy: greedy masked argmin of a trained network.
#[derive(Debug, Clone)]
pub struct GreedyAgentPolicy {
    net: Arc<Network>,
    turnover: TurnoverTable,
}

impl GreedyAgentPolicy {
    pub fn new(net: Arc<Network>, turnover: TurnoverTable) -> Self {
        Self { net, turnover }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn turnover(&self) -> &TurnoverTable {
        &self.turnover
    }

    pub fn features(&self, sim: &Simulation, request: &StorageRequest) -> Vec<f64> {
        extract_features(sim, request.shelf, NextTask::Retrieval(request.next_retrieval.map(|r| r.zone)), &self.turnover)
    }

    pub fn q_values(&self, sim: &Simulation, request: &StorageRequest) -> Vec<f64> {
        self.net.forward(&self.features(sim, request)).expect("network input matches the feature width")
    }

    pub fn choose(&self, sim: &Simulation, request: &StorageRequest) -> Placement {
        let q = self.q_values(sim, request);
        Placement::zone(masked_argmin(&q, &request.feasible).expect("a storage request has a feasible zone"))
    }
}

impl StoragePolicy for GreedyAgentPolicy {
    fn name(&self) -> String {
        "agent".into()
    }

    fn select(&mut self, sim: &Simulation, request: &StorageRequest) -> Placement {
        self.choose(sim, request)
    }
}

/// Transition waiting for its successor state.
#[derive(Debug, Clone)]
struct Pending {
    state: Vec<f64>,
    action: Action,
    reward: f64,
    greedy: bool,
}

/// Drives a simulation episode with exploration and learning. Transitions
/// chain across episodes through `pending`.
fn learn_episode(
    agent: &mut DqnAgent,
    sim: &mut Simulation,
    turnover: &TurnoverTable,
    pending: &mut Option<Pending>,
) -> Result<(), AgentError> {
    while let Some(decision) = sim.next_decision()? {
        let state = decision_features(sim, &decision, turnover);
        let opportunistic = matches!(decision, Decision::Opportunistic(_));
        let feasible = match &decision {
            Decision::Storage(req) => req.feasible.clone(),
            Decision::Opportunistic(_) => vec![true; sim.layout().zone_count()],
        };
        if let Some(p) = pending.take() {
            let e = Experience {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state: state.clone(),
                next_feasible: feasible.clone(),
                next_opportunistic: opportunistic,
            };
            agent.observe(e, p.greedy)?;
        }
        let (action, greedy, reward) = if opportunistic {
            let out = sim.apply_opportunistic()?;
            (Action::Opportunistic, true, out.travel)
        } else {
            let (a, greedy) = agent.select_action(&state, &feasible, true)?;
            let out = sim.apply_storage(Placement::zone(a))?;
            (Action::Zone(a), greedy, out.travel)
        };
        *pending = Some(Pending { state, action, reward, greedy });
    }
    Ok(())
}

/// Held-out instance on which training progress is measured.
#[derive(Debug, Clone)]
pub struct EvalInstance {
    pub orders: Arc<[Order]>,
    pub sim_seed: u64,
    /// Random-policy average travel on this instance.
    pub random_travel: f64,
}

impl EvalInstance {
    pub fn new(layout: &Arc<Layout>, orders: Arc<[Order]>, sim: &SimConfig, sim_seed: u64) -> Result<Self, AgentError> {
        let mut random = RandomPolicy::new(sim_seed);
        let m = run_episode(layout.clone(), orders.clone(), &mut random, sim, sim_seed)?;
        Ok(Self { orders, sim_seed, random_travel: m.avg_travel_time })
    }

    pub fn gain_of(&self, travel: f64) -> f64 {
        100.0 * (self.random_travel - travel) / self.random_travel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub gain_percent: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub layout: Arc<Layout>,
    /// Demand of every training episode; the seed is replaced per episode.
    pub demand: DemandConfig,
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub seed: u64,
    pub eval: Option<EvalInstance>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub curve: Vec<CurvePoint>,
    pub avg_reward: f64,
    pub steps: u64,
}

/// Seed of the `episode`-th training instance.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_add((episode as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn evaluate_greedy(
    layout: &Arc<Layout>,
    net: &Network,
    turnover: &TurnoverTable,
    eval: &EvalInstance,
    sim: &SimConfig,
) -> Result<f64, AgentError> {
    let mut policy = GreedyAgentPolicy::new(Arc::new(net.clone()), turnover.clone());
    let m = run_episode(layout.clone(), eval.orders.clone(), &mut policy, sim, eval.sim_seed)?;
    Ok(m.avg_travel_time)
}

/// Trains on a fresh demand instance per episode and, every `eval_every`
/// episodes, scores the greedy policy on the held-out instance.
pub fn train(setup: &TrainSetup, progress: &mut dyn FnMut(&CurvePoint)) -> Result<TrainOutcome, AgentError> {
    setup.agent.validate()?;
    setup.demand.validate()?;
    let turnover = TurnoverTable::from_rates(setup.demand.rates());
    let zones = setup.layout.zone_count();
    let mut agent = DqnAgent::new(setup.agent.clone(), 3 * zones + 3, zones, setup.seed)?;
    let mut pending = None;
    let mut curve = Vec::new();
    for episode in 0..setup.agent.episodes {
        let seed = episode_seed(setup.seed, episode);
        let demand = DemandConfig { seed, ..setup.demand.clone() };
        let orders: Arc<[Order]> = generate_orders(&demand)?.into();
        let mut sim = Simulation::new(setup.layout.clone(), orders, setup.sim.clone(), seed)?;
        learn_episode(&mut agent, &mut sim, &turnover, &mut pending)?;
        let done = episode + 1;
        if let Some(eval) = &setup.eval {
            if done % setup.agent.eval_every == 0 {
                let travel = evaluate_greedy(&setup.layout, agent.online(), &turnover, eval, &setup.sim)?;
                let point = CurvePoint { episode: done, gain_percent: eval.gain_of(travel) };
                log::info!(
                    "episode {done}: gain {:.2}% avg_reward {:.3} loss {:?}",
                    point.gain_percent,
                    agent.avg_reward(),
                    agent.last_loss()
                );
                progress(&point);
                curve.push(point);
            }
        }
    }
    Ok(TrainOutcome { avg_reward: agent.avg_reward(), steps: agent.steps(), network: agent.into_network(), curve })
}
