//! Property checks shared by the `properties` and `acceptance` tests. Each
//! returns a short summary on success and a description of the first
//! violation otherwise.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmfs_core::agent::{Action, AgentConfig, DqnAgent, Experience, ReplayBuffer};
use rmfs_core::demand::{generate_orders, DemandConfig, Order};
use rmfs_core::layout::{build_default_layout, CellKind, GridPosition};
use rmfs_core::nn::{Network, TargetRow};
use rmfs_core::policies::{RandomPolicy, ShortestLegPolicy};
use rmfs_core::rollout::{rollout_decide, RolloutConfig, TerminalMode};
use rmfs_core::sim::{Decision, SimConfig, Simulation, StoragePolicy};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Loaded distances against Floyd-Warshall restricted to aisle and station
/// intermediates, for every ordered pair of non-blocked cells.
pub fn loaded_distance_oracle() -> Check {
    let layout = build_default_layout();
    let (w, h) = (layout.width(), layout.height());
    let n = w * h;
    let pos = |i: usize| GridPosition { col: i % w, row: i / w };
    let kind: Vec<CellKind> = (0..n).map(|i| layout.cell_kind(pos(i)).unwrap()).collect();
    const INF: u32 = u32::MAX / 4;
    let mut d = vec![INF; n * n];
    for i in 0..n {
        if kind[i] == CellKind::Blocked {
            continue;
        }
        d[i * n + i] = 0;
        for j in 0..n {
            let adjacent = pos(i).manhattan(pos(j)) == 1;
            if adjacent && kind[j] != CellKind::Blocked {
                d[i * n + j] = 1;
            }
        }
    }
    for k in (0..n).filter(|&k| kind[k].is_traversable_loaded()) {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    let mut pairs = 0;
    for i in (0..n).filter(|&i| kind[i] != CellKind::Blocked) {
        for j in (0..n).filter(|&j| kind[j] != CellKind::Blocked) {
            let got = layout.loaded_distance(pos(i), pos(j));
            let want = d[i * n + j];
            match got {
                Ok(v) if want < INF && v == want as f64 => {}
                Err(_) if want >= INF => {}
                other => return Err(format!("{:?} -> {:?}: got {other:?}, oracle {want}", pos(i), pos(j))),
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs"))
}

/// Finite-difference check of the masked MSE gradient on a 21-32-32-32-6
/// network.
pub fn gradient_check() -> Check {
    let mut net = Network::new(&[21, 32, 32, 32, 6], 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..21).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<TargetRow> = (0..4)
        .map(|k| if k % 2 == 0 { TargetRow::single(6, k, rng.random_range(-2.0..2.0)) } else { TargetRow::all(6, 0.5) })
        .collect();
    let (_, grad) = net.loss_and_gradient(&inputs, &targets).map_err(|e| e.to_string())?;
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let count = net.params().len();
    for p in (0..count).step_by(7) {
        let orig = net.params()[p];
        net.params_mut()[p] = orig + eps;
        let up = net.loss(&inputs, &targets).map_err(|e| e.to_string())?;
        net.params_mut()[p] = orig - eps;
        let down = net.loss(&inputs, &targets).map_err(|e| e.to_string())?;
        net.params_mut()[p] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = numeric.abs().max(grad[p].abs());
        if scale > 1e-7 {
            worst = worst.max((numeric - grad[p]).abs() / scale);
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn experience(tag: f64) -> Experience {
    Experience {
        state: vec![tag],
        action: Action::Zone(0),
        reward: 0.0,
        next_state: vec![0.0],
        next_feasible: vec![true],
        next_opportunistic: false,
    }
}

/// Ring overwrite keeps the newest items; slot sampling passes a chi-square
/// test at the 0.1% level.
pub fn replay_statistics() -> Check {
    let mut r = ReplayBuffer::new(100);
    for i in 0..250 {
        r.push(experience(i as f64));
    }
    let mut kept: Vec<f64> = r.iter().map(|e| e.state[0]).collect();
    kept.sort_by(f64::total_cmp);
    ensure(kept == (150..250).map(f64::from).collect::<Vec<_>>(), || "ring kept the wrong items".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 100_000;
    let mut hits = vec![0usize; 100];
    for s in r.sample_slots(&mut rng, n) {
        hits[s] += 1;
    }
    let expected = n as f64 / 100.0;
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 99 degrees of freedom.
    ensure(chi2 < 148.2, || format!("chi-square {chi2:.1}"))?;
    Ok(format!("chi-square {chi2:.1} (99 dof)"))
}

fn constant_agent(outputs: &[f64], seed: u64) -> DqnAgent {
    let cfg = AgentConfig { hidden: vec![], ..AgentConfig::default() };
    let mut agent = DqnAgent::new(cfg, 1, outputs.len(), seed).unwrap();
    let (w, b) = agent.online().layer_range(0);
    agent.online_mut().params_mut()[w].fill(0.0);
    agent.online_mut().params_mut()[b].copy_from_slice(outputs);
    agent
}

/// Exploration picks a non-greedy feasible action at rate 0.1 * (k-1)/k.
pub fn epsilon_frequency() -> Check {
    let mut agent = constant_agent(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2);
    let mask = [true, true, false, true, true, false];
    let n = 100_000;
    let mut explored = 0usize;
    for _ in 0..n {
        let (a, _) = agent.select_action(&[0.0], &mask, true).map_err(|e| e.to_string())?;
        explored += usize::from(a != 0);
    }
    let p = 0.1 * 3.0 / 4.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (explored as f64 - n as f64 * p) / sd;
    ensure(z.abs() < 3.0, || format!("z = {z:.2}"))?;
    Ok(format!("epsilon estimate {:.4}, z = {z:.2}", explored as f64 / n as f64 * 4.0 / 3.0))
}

/// Random outputs and masks, with and without exploration: the chosen action
/// is always feasible.
pub fn mask_safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = AgentConfig { hidden: vec![8], ..AgentConfig::default() };
    let mut agent = DqnAgent::new(cfg, 4, 6, 1).unwrap();
    for t in 0..100_000 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut mask: Vec<bool> = (0..6).map(|_| rng.random_bool(0.4)).collect();
        if !mask.contains(&true) {
            mask[rng.random_range(0..6)] = true;
        }
        let (a, _) = agent.select_action(&x, &mask, t % 2 == 0).map_err(|e| e.to_string())?;
        ensure(mask[a], || format!("trial {t}: infeasible action {a}"))?;
    }
    Ok("100000 trials".into())
}

fn desk_orders(orders: f64, s: f64, seed: u64) -> (DemandConfig, Arc<[Order]>) {
    let demand = DemandConfig { skewness: s, seed, ..DemandConfig::default() }.with_total_orders(orders);
    let list = generate_orders(&demand).unwrap().into();
    (demand, list)
}

/// A full episode under Random with every invariant re-checked after each
/// event.
pub fn episode_invariants() -> Check {
    let (_, orders) = desk_orders(5000.0, 0.6, 31);
    let cfg = SimConfig { check_invariants: true, ..SimConfig::default() };
    let mut sim = Simulation::new(Arc::new(build_default_layout()), orders.clone(), cfg, 31).map_err(|e| e.to_string())?;
    let mut policy = RandomPolicy::new(31);
    while let Some(d) = sim.next_decision().map_err(|e| e.to_string())? {
        match d {
            Decision::Storage(req) => {
                let p = policy.select(&sim, &req);
                sim.apply_storage(p).map_err(|e| e.to_string())?;
            }
            Decision::Opportunistic(_) => {
                sim.apply_opportunistic().map_err(|e| e.to_string())?;
            }
        }
        sim.check_invariants().map_err(|e| e.to_string())?;
    }
    let m = sim.metrics();
    ensure(m.fulfilled_orders == orders.len(), || format!("{} of {} orders fulfilled", m.fulfilled_orders, orders.len()))?;
    Ok(format!("{} orders, {} station visits", orders.len(), m.total_cycles))
}

fn advance(sim: &mut Simulation, decisions: usize) {
    for _ in 0..decisions {
        match sim.next_decision().unwrap() {
            Some(Decision::Storage(req)) => {
                let p = ShortestLegPolicy.choose(sim, &req);
                sim.apply_storage(p).unwrap();
            }
            Some(Decision::Opportunistic(_)) => {
                sim.apply_opportunistic().unwrap();
            }
            None => return,
        }
    }
}

/// Mid-episode state: the next pending decision is a storage decision.
fn mid_episode(seed: u64) -> Simulation {
    let (_, orders) = desk_orders(2000.0, 0.6, seed);
    let mut sim = Simulation::new(Arc::new(build_default_layout()), orders, SimConfig::default(), seed).unwrap();
    advance(&mut sim, 200);
    while !matches!(sim.next_decision().unwrap(), Some(Decision::Storage(_))) {
        sim.apply_opportunistic().unwrap();
    }
    sim
}

/// Running a snapshot forward leaves the original untouched.
pub fn snapshot_isolation() -> Check {
    let sim = mid_episode(12);
    let before = sim.clone();
    let mut copy = sim.snapshot();
    copy.freeze_arrivals();
    // The pending storage decision is already set, so answer it first.
    if let Some(Decision::Storage(req)) = copy.pending_decision().cloned() {
        let p = ShortestLegPolicy.choose(&copy, &req);
        copy.apply_storage(p).map_err(|e| e.to_string())?;
    }
    advance(&mut copy, 50);
    ensure(copy != before, || "the copy did not move".into())?;
    ensure(sim == before, || "the original changed".into())?;
    Ok("original unchanged after 50 decisions on the copy".into())
}

/// Repeated rollout decisions on one state agree, and the state is left
/// intact.
pub fn rollout_determinism() -> Check {
    let sim = mid_episode(13);
    let before = sim.clone();
    let cfg = RolloutConfig { horizon: 10, mode: TerminalMode::AverageCycle };
    let first = rollout_decide(&sim, &ShortestLegPolicy, &cfg).map_err(|e| e.to_string())?;
    for _ in 0..5 {
        let again = rollout_decide(&sim, &ShortestLegPolicy, &cfg).map_err(|e| e.to_string())?;
        ensure(again == first, || "rollout decisions differ".into())?;
    }
    ensure(sim == before, || "rollout mutated the live state".into())?;
    Ok(format!("zone {} on 6 repeats", first.zone))
}

/// (state, action) -> (cost, next state) of a two-state toy problem.
const TOY: [[(f64, usize); 2]; 2] = [[(3.0, 0), (2.0, 1)], [(4.0, 1), (1.0, 0)]];

/// Optimal average cost by relative value iteration on the aperiodic
/// transform of the toy problem.
pub fn toy_oracle() -> f64 {
    let tau = 0.5;
    let mut h = [0.0f64; 2];
    let mut gain = 0.0;
    for _ in 0..10_000 {
        let t: Vec<f64> = (0..2)
            .map(|s| TOY[s].iter().map(|&(c, n)| tau * c + (1.0 - tau) * h[s] + tau * h[n]).fold(f64::INFINITY, f64::min))
            .collect();
        gain = (t[0] - h[0]) / tau;
        h = [0.0, t[1] - t[0]];
    }
    gain
}

/// Differential Q-learning on the toy problem reaches the oracle average
/// cost within 1% after 10^5 steps.
pub fn toy_convergence() -> Check {
    let oracle = toy_oracle();
    let cfg = AgentConfig {
        hidden: vec![],
        lr: 0.01,
        avg_reward_step: 0.01,
        train_every: 10,
        sample_size: 32,
        minibatch: 32,
        replay_capacity: 1000,
        target_sync: 100,
        ..AgentConfig::default()
    };
    let mut agent = DqnAgent::new(cfg, 2, 2, 29).map_err(|e| e.to_string())?;
    let one_hot = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let mut s = 0;
    for _ in 0..100_000 {
        let (a, greedy) = agent.select_action(&one_hot(s), &[true, true], true).map_err(|e| e.to_string())?;
        let (cost, next) = TOY[s][a];
        let e = Experience {
            state: one_hot(s),
            action: Action::Zone(a),
            reward: cost,
            next_state: one_hot(next),
            next_feasible: vec![true, true],
            next_opportunistic: false,
        };
        agent.observe(e, greedy).map_err(|e| e.to_string())?;
        s = next;
    }
    let err = (agent.avg_reward() - oracle).abs() / oracle;
    ensure(err < 0.01, || format!("average cost {:.4} vs oracle {oracle}", agent.avg_reward()))?;
    Ok(format!("average cost {:.4} vs oracle {oracle:.4}", agent.avg_reward()))
}

/// Expected-total, rate-sum and deadline-window checks over 20 full-scale
/// seeds.
pub fn demand_statistics() -> Check {
    let base = DemandConfig::default();
    let mut totals = Vec::new();
    for seed in 0..20 {
        let cfg = DemandConfig { seed, ..base.clone() };
        let rate_sum: f64 = cfg.rates().iter().sum();
        let want = cfg.orders / cfg.periods as f64;
        ensure((rate_sum - want).abs() < 1e-9, || format!("seed {seed}: rate sum {rate_sum} vs {want}"))?;
        let orders = generate_orders(&cfg).map_err(|e| e.to_string())?;
        let max_allowance = cfg.tightness * cfg.horizon;
        for o in &orders {
            let allowance = o.deadline - o.arrival;
            ensure((1.0..=max_allowance).contains(&allowance) && o.arrival < cfg.horizon, || {
                format!("seed {seed}: order {} has arrival {} and deadline {}", o.id, o.arrival, o.deadline)
            })?;
        }
        totals.push(orders.iter().map(|o| f64::from(o.group_size)).sum::<f64>());
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let tol = 3.0 * base.orders.sqrt();
    ensure((mean - base.orders).abs() <= tol, || format!("mean total {mean:.1} outside {} +- {tol:.1}", base.orders))?;
    Ok(format!("mean total {mean:.1} (target {} +- {tol:.1})", base.orders))
}

pub type NamedCheck = (&'static str, fn() -> Check);

pub const PROPERTY_SUITE: [NamedCheck; 9] = [
    ("loaded distance vs oracle", loaded_distance_oracle),
    ("gradient check", gradient_check),
    ("replay statistics", replay_statistics),
    ("epsilon frequency", epsilon_frequency),
    ("action mask safety", mask_safety),
    ("episode invariants", episode_invariants),
    ("snapshot isolation", snapshot_isolation),
    ("rollout determinism", rollout_determinism),
    ("toy average-cost convergence", toy_convergence),
];
