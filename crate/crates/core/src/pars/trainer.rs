//! Parallel augmented random search over (weights, latent context).

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::policy::{Policy, DEFAULT_OBS_EPS};
use super::stats::RunningStats;
use crate::dynamics::RelayMode;
use crate::env::{CaseLibrary, EnvSpec, GridEnv, Scenario, TaskResult};
use crate::error::{Error, Result};
use crate::pool::WorkerPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParsConfig {
    /// Perturbation directions per iteration.
    pub n_directions: usize,
    /// Directions retained for the update.
    pub top_b: usize,
    pub step_size: f64,
    pub perturb_std: f64,
    pub z_dim: usize,
    /// Tasks per minibatch.
    pub minibatch: usize,
    /// Minibatches each direction is evaluated on per iteration.
    pub rollouts_per_direction: usize,
    /// Iterations between evaluations of the unperturbed policy; 0 disables.
    pub eval_every: usize,
    /// Candidate latent contexts tried by `meta_adapt`, the current one included.
    pub meta_budget: usize,
    pub meta_std: f64,
    pub obs_eps: f64,
}

impl Default for ParsConfig {
    fn default() -> Self {
        ParsConfig {
            n_directions: 32,
            top_b: 16,
            step_size: 0.02,
            perturb_std: 0.02,
            z_dim: 4,
            minibatch: 20,
            rollouts_per_direction: 1,
            eval_every: 10,
            meta_budget: 8,
            meta_std: 0.5,
            obs_eps: DEFAULT_OBS_EPS,
        }
    }
}

impl ParsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: format!("pars.{key}"),
                reason: reason.into(),
            })
        };
        if self.n_directions == 0 {
            return bad("n_directions", "must be positive");
        }
        if self.top_b == 0 || self.top_b > self.n_directions {
            return bad("top_b", "must be in 1..=n_directions");
        }
        if !(self.step_size > 0.0) || !(self.perturb_std > 0.0) {
            return bad("step_size", "step size and perturbation std must be positive");
        }
        if self.minibatch == 0 || self.rollouts_per_direction == 0 {
            return bad("minibatch", "must be positive");
        }
        if !(self.meta_std >= 0.0) || !(self.obs_eps >= 0.0) {
            return bad("meta_std", "must be non-negative");
        }
        Ok(())
    }

    pub fn new_policy(&self, obs_dim: usize, act_dim: usize) -> Policy {
        let mut p = Policy::new(obs_dim, act_dim, self.z_dim);
        p.eps = self.obs_eps;
        p
    }
}

/// Return of one episode plus the observations the policy acted on.
#[derive(Debug, Clone)]
pub struct Episode {
    pub reward: f64,
    pub obs: RunningStats,
}

/// Something a policy can be rolled out on. Must be a pure function of
/// (policy, task).
pub trait Rollout: Sync {
    type Task: Sync;
    fn run(&self, policy: &Policy, task: &Self::Task) -> Episode;
}

/// Draws the tasks of one minibatch.
pub trait TaskSampler<T> {
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Vec<T>;
}

/// Uniform sampling without replacement within a minibatch.
#[derive(Debug, Clone)]
pub struct UniformSampler<T> {
    pub tasks: Vec<T>,
    pub size: usize,
}

impl<T: Clone> TaskSampler<T> for UniformSampler<T> {
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let n = self.size.min(self.tasks.len());
        let mut idx = sample(rng, self.tasks.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| self.tasks[k].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub sigma_r: f64,
    pub updated: bool,
    pub episodes: usize,
}

/// Top-`b` update. Returns the new parameters and sigma_R, or `None` when
/// the retained returns have no spread.
pub fn ars_update(
    theta: &[f64],
    deltas: &[Vec<f64>],
    r_plus: &[f64],
    r_minus: &[f64],
    top_b: usize,
    step_size: f64,
) -> (Option<Vec<f64>>, f64) {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    let score = |k: usize| r_plus[k].max(r_minus[k]);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut top = order[..top_b.min(order.len())].to_vec();
    top.sort_unstable();

    let kept: Vec<f64> = top.iter().flat_map(|&k| [r_plus[k], r_minus[k]]).collect();
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let sigma = (kept.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / kept.len() as f64).sqrt();
    let scale = kept.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    if !(sigma > 1e-12 * scale) {
        return (None, sigma);
    }
    let coef = step_size / (top.len() as f64 * sigma);
    let mut out = theta.to_vec();
    for &k in &top {
        let c = coef * (r_plus[k] - r_minus[k]);
        for (o, d) in out.iter_mut().zip(&deltas[k]) {
            *o += c * d;
        }
    }
    (Some(out), sigma)
}

/// One synchronous iteration: perturb, roll out, rank, update, refresh
/// the observation statistics.
pub fn pars_iteration<E: Rollout>(
    policy: &Policy,
    cfg: &ParsConfig,
    sampler: &mut dyn TaskSampler<E::Task>,
    env: &E,
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> (Policy, IterationStats) {
    let theta = policy.params();
    let deltas: Vec<Vec<f64>> = (0..cfg.n_directions)
        .map(|_| (0..theta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut tasks = Vec::new();
    for _ in 0..cfg.rollouts_per_direction {
        tasks.extend(sampler.sample(rng));
    }

    let perturbed: Vec<Policy> = deltas
        .iter()
        .flat_map(|d| {
            [1.0, -1.0].map(|s| {
                let p: Vec<f64> = theta.iter().zip(d).map(|(t, d)| t + s * cfg.perturb_std * d).collect();
                policy.with_params(&p)
            })
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..perturbed.len())
        .flat_map(|p| (0..tasks.len()).map(move |t| (p, t)))
        .collect();
    let episodes = pool.map(&jobs, |&(p, t)| env.run(&perturbed[p], &tasks[t]));

    let n_tasks = tasks.len().max(1) as f64;
    let mut returns = vec![0.0; perturbed.len()];
    let mut batch = RunningStats::new(policy.obs_dim);
    for (&(p, _), ep) in jobs.iter().zip(&episodes) {
        returns[p] += ep.reward / n_tasks;
        batch.merge(&ep.obs);
    }
    let r_plus: Vec<f64> = returns.iter().step_by(2).copied().collect();
    let r_minus: Vec<f64> = returns.iter().skip(1).step_by(2).copied().collect();

    let (update, sigma_r) = ars_update(&theta, &deltas, &r_plus, &r_minus, cfg.top_b, cfg.step_size);
    let mut next = policy.clone();
    if let Some(p) = &update {
        next.set_params(p);
    } else {
        log::warn!("iteration {}: retained returns have no spread, update skipped", policy.version);
    }
    next.stats.merge(&batch);
    next.version += 1;

    let stats = IterationStats {
        iteration: next.version,
        mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
        max_return: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        sigma_r,
        updated: update.is_some(),
        episodes: episodes.len(),
    };
    (next, stats)
}

/// One line of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub sigma_r: f64,
    pub updated: bool,
    pub eval_mean_reward: Option<f64>,
    pub wall_clock_s: f64,
}

pub fn write_curve(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean reward of the unperturbed policy on `tasks`.
pub fn mean_reward<E: Rollout>(policy: &Policy, tasks: &[E::Task], env: &E, pool: &WorkerPool) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    let r = pool.map(tasks, |t| env.run(policy, t).reward);
    r.iter().sum::<f64>() / r.len() as f64
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub last: Policy,
    /// Best evaluated policy, or the last one when nothing was evaluated.
    pub best: Policy,
    pub best_eval: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Runs `iterations` PARS iterations, evaluating every `cfg.eval_every`
/// iterations and after the last one when `eval_tasks` is non-empty.
#[allow(clippy::too_many_arguments)]
pub fn train<E: Rollout>(
    policy: Policy,
    cfg: &ParsConfig,
    iterations: usize,
    sampler: &mut dyn TaskSampler<E::Task>,
    env: &E,
    eval_tasks: &[E::Task],
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> TrainResult {
    let start = Instant::now();
    let mut policy = policy;
    let mut curve = Vec::with_capacity(iterations);
    let mut best: Option<(f64, Policy)> = None;
    for it in 0..iterations {
        let (next, st) = pars_iteration(&policy, cfg, sampler, env, pool, rng);
        policy = next;
        let due = cfg.eval_every > 0 && ((it + 1) % cfg.eval_every == 0 || it + 1 == iterations);
        let eval = (due && !eval_tasks.is_empty()).then(|| mean_reward(&policy, eval_tasks, env, pool));
        if let Some(e) = eval {
            if best.as_ref().map_or(true, |(b, _)| e > *b) {
                best = Some((e, policy.clone()));
            }
        }
        log::info!(
            "iteration {}: mean {:.2} max {:.2} sigma {:.3}{}",
            st.iteration,
            st.mean_return,
            st.max_return,
            st.sigma_r,
            eval.map(|e| format!(" eval {e:.2}")).unwrap_or_default()
        );
        curve.push(CurvePoint {
            iteration: st.iteration,
            mean_return: st.mean_return,
            max_return: st.max_return,
            sigma_r: st.sigma_r,
            updated: st.updated,
            eval_mean_reward: eval,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    let (best_eval, best) = match best {
        Some((e, p)) => (Some(e), p),
        None => (None, policy.clone()),
    };
    TrainResult {
        last: policy,
        best,
        best_eval,
        curve,
    }
}

/// Test-time search over the latent context with the weights frozen.
/// Candidate 0 is the current context; ties keep the earlier candidate.
pub fn meta_adapt<E: Rollout>(
    policy: &Policy,
    probe: &[E::Task],
    env: &E,
    pool: &WorkerPool,
    budget: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> (Policy, Option<f64>) {
    if budget == 0 || probe.is_empty() || policy.z.is_empty() {
        return (policy.clone(), None);
    }
    let mut best = (mean_reward(policy, probe, env, pool), policy.clone());
    for _ in 1..budget {
        let mut cand = policy.clone();
        for z in &mut cand.z {
            *z += std * rng.sample::<f64, _>(StandardNormal);
        }
        let r = mean_reward(&cand, probe, env, pool);
        if r > best.0 {
            best = (r, cand);
        }
    }
    (best.1, Some(best.0))
}

/// Episodes on the grid environment.
#[derive(Debug, Clone)]
pub struct GridRollout {
    pub lib: Arc<CaseLibrary>,
    pub spec: Arc<EnvSpec>,
    pub relay: Option<RelayMode>,
}

impl GridRollout {
    pub fn new(lib: Arc<CaseLibrary>, spec: Arc<EnvSpec>, relay: Option<RelayMode>) -> Self {
        GridRollout { lib, spec, relay }
    }

    pub fn task_result(&self, policy: &Policy, scenario: &Scenario) -> TaskResult {
        let mut stats = RunningStats::new(self.spec.obs_dim);
        self.observed(policy, scenario, &mut stats)
    }

    fn observed(&self, policy: &Policy, scenario: &Scenario, stats: &mut RunningStats) -> TaskResult {
        let r_fail = self.lib.config().reward.r_fail;
        if policy.obs_dim != self.spec.obs_dim || policy.act_dim != self.spec.act_dim {
            let err = Error::Dimension {
                expected: self.spec.obs_dim,
                got: policy.obs_dim,
            };
            return TaskResult::errored(&scenario.scenario_id, r_fail, &err);
        }
        let mut env = GridEnv::new(self.lib.clone(), self.spec.clone(), self.relay);
        let act_dim = self.spec.act_dim;
        let res = env.rollout_observed(
            scenario,
            |o| policy.act(o).unwrap_or_else(|_| vec![0.0; act_dim]),
            |o| stats.push(o),
        );
        res.unwrap_or_else(|e| {
            log::warn!("scenario {} errored: {e}", scenario.scenario_id);
            TaskResult::errored(&scenario.scenario_id, r_fail, &e)
        })
    }
}

impl Rollout for GridRollout {
    type Task = Scenario;

    fn run(&self, policy: &Policy, task: &Scenario) -> Episode {
        let mut obs = RunningStats::new(self.spec.obs_dim);
        let res = self.observed(policy, task, &mut obs);
        Episode {
            reward: res.total_reward,
            obs,
        }
    }
}

/// Per-scenario results ordered by scenario id; a scenario that errors is
/// reported with the failure penalty instead of aborting the batch.
pub fn evaluate(policy: &Policy, scenarios: &[Scenario], env: &GridRollout, pool: &WorkerPool) -> Vec<TaskResult> {
    let mut sorted: Vec<&Scenario> = scenarios.iter().collect();
    sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    pool.map(&sorted, |s| env.task_result(policy, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn symmetric_returns_do_not_move() {
        let deltas = vec![vec![1.0, -2.0], vec![0.5, 0.5], vec![-1.0, 3.0]];
        let r = vec![3.0, -1.0, 7.0];
        let r2 = vec![-4.0, 2.0, 7.5];
        let (p, _) = ars_update(&[0.1, 0.2], &deltas, &r, &r, 3, 0.02);
        assert_eq!(p.unwrap(), vec![0.1, 0.2]);
        // spread exists, and a genuinely asymmetric set does move
        let (q, _) = ars_update(&[0.1, 0.2], &deltas, &r, &r2, 3, 0.02);
        assert_ne!(q.unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn single_direction_step() {
        let delta = vec![vec![0.3, -0.7, 2.0]];
        let (p, sigma) = ars_update(&[0.0; 3], &delta, &[1.0], &[0.0], 1, 0.02);
        assert_eq!(sigma, 0.5);
        let p = p.unwrap();
        for (a, d) in p.iter().zip(&delta[0]) {
            assert!((a - 2.0 * 0.02 * d).abs() < 1e-15);
        }
    }

    #[test]
    fn no_spread_skips() {
        let deltas = vec![vec![1.0], vec![2.0]];
        let (p, sigma) = ars_update(&[0.5], &deltas, &[-3.0, -3.0], &[-3.0, -3.0], 2, 0.02);
        assert!(p.is_none());
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn ranking_uses_best_of_pair() {
        // direction 1 has the best single return, so it alone is kept
        let deltas = vec![vec![1.0], vec![10.0], vec![100.0]];
        let (p, _) = ars_update(&[0.0], &deltas, &[1.0, -5.0, 0.0], &[0.0, 2.0, 0.5], 1, 1.0);
        let sigma = 3.5;
        assert!((p.unwrap()[0] - (-7.0 / sigma) * 10.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_return_shift_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let deltas: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rp: Vec<f64> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let rm: Vec<f64> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let theta = [0.1, -0.2, 0.3, 0.0];
        let (base, _) = ars_update(&theta, &deltas, &rp, &rm, 3, 0.05);
        let shift = |r: &[f64]| r.iter().map(|x| 3.0 * x - 17.0).collect::<Vec<_>>();
        let (moved, _) = ars_update(&theta, &deltas, &shift(&rp), &shift(&rm), 3, 0.05);
        for (a, b) in base.unwrap().iter().zip(moved.unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Single-step environment with reward -|a - a*|^2.
    struct Quadratic {
        target: Vec<f64>,
        obs: Vec<f64>,
    }

    impl Rollout for Quadratic {
        type Task = ();
        fn run(&self, policy: &Policy, _: &()) -> Episode {
            let a = policy.act(&self.obs).unwrap();
            let mut obs = RunningStats::new(self.obs.len());
            obs.push(&self.obs);
            Episode {
                reward: -a.iter().zip(&self.target).map(|(a, t)| (a - t).powi(2)).sum::<f64>(),
                obs,
            }
        }
    }

    fn solve_quadratic(workers: usize) -> Policy {
        let env = Quadratic {
            target: vec![0.8, -0.5],
            obs: vec![1.0, 0.3, -0.2],
        };
        let cfg = ParsConfig {
            minibatch: 1,
            ..ParsConfig::default()
        };
        let pool = WorkerPool::new(workers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sampler = UniformSampler { tasks: vec![()], size: 1 };
        let mut p = cfg.new_policy(3, 2);
        for _ in 0..200 {
            p = pars_iteration(&p, &cfg, &mut sampler, &env, &pool, &mut rng).0;
        }
        p
    }

    #[test]
    fn quadratic_toy_converges() {
        let p = solve_quadratic(1);
        let a = p.act(&[1.0, 0.3, -0.2]).unwrap();
        let err = ((a[0] - 0.8).powi(2) + (a[1] + 0.5).powi(2)).sqrt();
        let norm = (0.8f64.powi(2) + 0.5f64.powi(2)).sqrt();
        assert!(err <= 0.05 * norm, "action {a:?}");
        assert_eq!(p.version, 200);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        assert_eq!(solve_quadratic(1), solve_quadratic(3));
    }
}
