use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::projection::project_row;
use super::sampling::{sample_candidates, sample_neighbors, Candidate, RealizableSet, Strategy};
use super::ActiveError;
use crate::efficacy::{EfficacyModel, TraitEfficacyMap};
use crate::gp::{ucb_from_moments, GaussianProcess, GpParams};
use crate::model::{aggregated_traits, Allocation, Matrix, TeamTraitMatrix};

/// How neighbour scores collapse into one candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Max,
    Mean,
}

/// Learner settings. Scales given as fractions are relative to `‖q̄‖∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    pub n_candidates: usize,
    pub n_neighbors: usize,
    pub initial_radius_fraction: f64,
    pub shrink: f64,
    pub beta: f64,
    pub length_scale_fraction: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub aggregation: Aggregation,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            strategy: Strategy::Box,
            budget: 60,
            seed: 0,
            n_candidates: 50,
            n_neighbors: 10,
            initial_radius_fraction: 0.25,
            shrink: 0.8,
            beta: 4.0,
            length_scale_fraction: 0.2,
            signal_variance: 1.0,
            noise_variance: 1e-4,
            aggregation: Aggregation::Max,
        }
    }
}

impl LearnerConfig {
    fn check(&self) -> Result<(), ActiveError> {
        let fail = |m: &str| Err(ActiveError::InvalidConfig(m.into()));
        if self.n_candidates == 0 || self.n_neighbors == 0 {
            return fail("n_candidates and n_neighbors must be at least 1");
        }
        if !(self.initial_radius_fraction > 0.0) {
            return fail("initial_radius_fraction must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return fail("shrink must lie in (0, 1]");
        }
        if !(self.beta >= 0.0) {
            return fail("beta must be non-negative");
        }
        if !(self.length_scale_fraction > 0.0) {
            return fail("length_scale_fraction must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("evaluation failed: {0}")]
pub struct EvaluationError(pub String);

/// Labels a queried allocation with one score per task.
pub trait Evaluator {
    fn evaluate(&mut self, allocation: &Allocation) -> Result<Vec<f64>, EvaluationError>;
}

/// Scores queries with known maps, optionally adding Gaussian noise. Labels
/// are clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    ground_truth: EfficacyModel,
    traits: TeamTraitMatrix,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl SyntheticEvaluator {
    pub fn new(ground_truth: EfficacyModel, traits: TeamTraitMatrix) -> Self {
        SyntheticEvaluator { ground_truth, traits, noise: None }
    }

    pub fn with_noise(mut self, std_dev: f64, seed: u64) -> Self {
        self.noise = (std_dev > 0.0).then(|| {
            (Normal::new(0.0, std_dev).expect("positive std"), ChaCha8Rng::seed_from_u64(seed))
        });
        self
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&mut self, allocation: &Allocation) -> Result<Vec<f64>, EvaluationError> {
        let y = aggregated_traits(allocation, &self.traits).map_err(|e| EvaluationError(e.to_string()))?;
        let mut labels = self.ground_truth.per_task(&y).map_err(|e| EvaluationError(e.to_string()))?;
        if let Some((dist, rng)) = &mut self.noise {
            for v in &mut labels {
                *v = (*v + dist.sample(rng)).clamp(0.0, 1.0);
            }
        }
        Ok(labels)
    }
}

/// Best achievable total efficacy under known maps. Rows are independent, so
/// the optimum takes each task's best coalition.
#[derive(Debug, Clone)]
pub struct RegretOracle {
    ground_truth: EfficacyModel,
    traits: TeamTraitMatrix,
    best: Vec<u64>,
    optimum: f64,
}

impl RegretOracle {
    pub fn new(ground_truth: EfficacyModel, traits: TeamTraitMatrix) -> Result<Self, ActiveError> {
        let vertices = RealizableSet::new(traits.clone()).vertices()?;
        let mut best = Vec::with_capacity(ground_truth.len());
        let mut optimum = 0.0;
        for map in ground_truth.maps() {
            let scores: Vec<f64> = vertices.par_iter().map(|(_, y)| map.evaluate(y)).collect::<Result<_, _>>()?;
            let (i, v) = scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.push(vertices[i].0);
            optimum += v;
        }
        Ok(RegretOracle { ground_truth, traits, best, optimum })
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    pub fn best_allocation(&self) -> Allocation {
        Allocation::from_masks(self.traits.robots(), self.best.clone()).expect("masks fit the team")
    }

    pub fn efficacy(&self, allocation: &Allocation) -> Result<f64, ActiveError> {
        Ok(self.ground_truth.total(allocation, &self.traits)?)
    }

    /// `Π(A*) − Π(A)` under the ground truth.
    pub fn regret(&self, allocation: &Allocation) -> Result<f64, ActiveError> {
        Ok(self.optimum - self.efficacy(allocation)?)
    }
}

/// One labelled query: a realizable allocation and its traits `A·Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub allocation: Allocation,
    pub traits: Matrix,
    pub labels: Vec<f64>,
    /// Some row came from approximate projection.
    pub approximate: bool,
}

/// One line of the metrics CSV. Regret columns are empty without an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub instantaneous_regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub best_uncovered_reward: f64,
    pub step_seconds: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    config: LearnerConfig,
    set: RealizableSet,
    initial_radius: f64,
    models: Vec<GaussianProcess>,
    pools: Vec<Vec<Candidate>>,
    /// Coalition masks and traits, exact strategy only.
    vertices: Vec<(u64, Vec<f64>)>,
    history: Vec<Query>,
    rng: ChaCha8Rng,
}

impl LearnerState {
    pub fn new(traits: TeamTraitMatrix, tasks: usize, config: LearnerConfig) -> Result<Self, ActiveError> {
        config.check()?;
        let set = RealizableSet::new(traits);
        let scale = set.max_total().max(f64::MIN_POSITIVE);
        let params = GpParams {
            length_scale: config.length_scale_fraction * scale,
            signal_variance: config.signal_variance,
            noise_variance: config.noise_variance,
        };
        let models = (0..tasks).map(|_| GaussianProcess::new(params, set.dim())).collect::<Result<_, _>>()?;
        let initial_radius = config.initial_radius_fraction * scale;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (pools, vertices) = if config.strategy == Strategy::Exact {
            (vec![Vec::new(); tasks], set.vertices()?)
        } else {
            let pools = (0..tasks)
                .map(|_| sample_candidates(config.strategy, &set, config.n_candidates, initial_radius, &mut rng))
                .collect::<Result<_, _>>()?;
            (pools, Vec::new())
        };
        Ok(LearnerState { config, set, initial_radius, models, pools, vertices, history: Vec::new(), rng })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn realizable_set(&self) -> &RealizableSet {
        &self.set
    }

    pub fn models(&self) -> &[GaussianProcess] {
        &self.models
    }

    pub fn pools(&self) -> &[Vec<Candidate>] {
        &self.pools
    }

    pub fn history(&self) -> &[Query] {
        &self.history
    }

    pub fn initial_radius(&self) -> f64 {
        self.initial_radius
    }

    pub fn budget_left(&self) -> usize {
        self.config.budget.saturating_sub(self.history.len())
    }

    fn ucb(&self, task: usize, y: &[f64]) -> f64 {
        let (mean, var) = self.models[task].predict_unchecked(y);
        ucb_from_moments(mean, var, self.config.beta)
    }

    fn select_vertex(&self, task: usize) -> u64 {
        let scores: Vec<f64> = self.vertices.par_iter().map(|(_, y)| self.ucb(task, y)).collect();
        let best = first_argmax(&scores);
        self.vertices[best].0
    }

    /// Zooming step for one task: returns the best-scoring neighbour of the
    /// best candidate and shrinks that candidate.
    fn select_point(&mut self, task: usize) -> Vec<f64> {
        let strategy = self.config.strategy;
        let k = self.config.n_neighbors;
        let neighbours: Vec<Vec<Vec<f64>>> = self.pools[task]
            .iter()
            .map(|c| sample_neighbors(strategy, &self.set, c, k, &mut self.rng))
            .collect();
        let aggregation = self.config.aggregation;
        let scored: Vec<(f64, usize)> = neighbours
            .par_iter()
            .map(|points| {
                let scores: Vec<f64> = points.iter().map(|y| self.ucb(task, y)).collect();
                let top = first_argmax(&scores);
                let agg = match aggregation {
                    Aggregation::Max => scores[top],
                    Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
                };
                (agg, top)
            })
            .collect();
        let aggregates: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let chosen = first_argmax(&aggregates);
        self.pools[task][chosen].select(self.initial_radius, self.config.shrink);
        neighbours[chosen][scored[chosen].1].clone()
    }

    /// Picks the next realizable query: one coalition per task.
    pub fn select_query(&mut self) -> Result<(Allocation, Matrix, bool), ActiveError> {
        let tasks = self.models.len();
        let mut masks = Vec::with_capacity(tasks);
        let mut approximate = false;
        for task in 0..tasks {
            if self.config.strategy == Strategy::Exact {
                masks.push(self.select_vertex(task));
            } else {
                let target = self.select_point(task);
                let p = project_row(&target, self.set.traits())?;
                approximate |= p.approximate;
                masks.push(p.mask);
            }
        }
        let allocation = Allocation::from_masks(self.set.robots(), masks).expect("masks fit the team");
        let y = aggregated_traits(&allocation, self.set.traits()).expect("shapes agree");
        Ok((allocation, y, approximate))
    }

    /// Adds a labelled query and updates every task's GP with its own row.
    pub fn record(&mut self, query: Query) -> Result<(), ActiveError> {
        for (task, model) in self.models.iter_mut().enumerate() {
            model.add_observation(query.traits.row(task).to_vec(), query.labels[task])?;
        }
        self.history.push(query);
        Ok(())
    }

    /// Posterior means as `gp-learned` maps.
    pub fn learned_model(&self) -> EfficacyModel {
        EfficacyModel::new(self.models.iter().cloned().map(TraitEfficacyMap::GpLearned).collect())
            .expect("all maps share one kind")
    }
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub state: LearnerState,
    pub metrics: Vec<MetricsRow>,
    /// Set when the evaluator failed; metrics cover the completed iterations.
    pub failure: Option<EvaluationError>,
}

/// Runs `config.budget` query iterations. Step time covers selection,
/// projection and the model update, not the evaluator.
pub fn learn(
    traits: &TeamTraitMatrix,
    tasks: usize,
    evaluator: &mut dyn Evaluator,
    config: &LearnerConfig,
    oracle: Option<&RegretOracle>,
) -> Result<LearnOutcome, ActiveError> {
    let mut state = LearnerState::new(traits.clone(), tasks, config.clone())?;
    let mut metrics = Vec::with_capacity(config.budget);
    let mut cumulative = 0.0;
    let mut best_reward = f64::NEG_INFINITY;
    for iteration in 1..=config.budget {
        let started = Instant::now();
        let (allocation, y, approximate) = state.select_query()?;
        let mut elapsed = started.elapsed().as_secs_f64();
        let labels = match evaluator.evaluate(&allocation) {
            Ok(l) if l.len() == tasks => l,
            Ok(l) => {
                let e = EvaluationError(format!("evaluator returned {} labels for {tasks} tasks", l.len()));
                return Ok(LearnOutcome { state, metrics, failure: Some(e) });
            }
            Err(e) => return Ok(LearnOutcome { state, metrics, failure: Some(e) }),
        };
        best_reward = best_reward.max(labels.iter().sum());
        let regret = oracle.map(|o| o.regret(&allocation)).transpose()?;
        let updated = Instant::now();
        state.record(Query { allocation, traits: y, labels, approximate })?;
        elapsed += updated.elapsed().as_secs_f64();
        if let Some(r) = regret {
            cumulative += r;
        }
        metrics.push(MetricsRow {
            iteration,
            instantaneous_regret: regret,
            cumulative_regret: regret.map(|_| cumulative),
            best_uncovered_reward: best_reward,
            step_seconds: elapsed,
            strategy: config.strategy,
            seed: config.seed,
        });
    }
    Ok(LearnOutcome { state, metrics, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficacy::{sample_ground_truth, GroundTruthOptions, LinearSaturating, MapKind};

    struct Constant(usize);

    impl Evaluator for Constant {
        fn evaluate(&mut self, _: &Allocation) -> Result<Vec<f64>, EvaluationError> {
            Ok(vec![0.5; self.0])
        }
    }

    struct FailsAfter(usize);

    impl Evaluator for FailsAfter {
        fn evaluate(&mut self, _: &Allocation) -> Result<Vec<f64>, EvaluationError> {
            if self.0 == 0 {
                return Err(EvaluationError("simulator offline".into()));
            }
            self.0 -= 1;
            Ok(vec![0.1, 0.2])
        }
    }

    fn team() -> TeamTraitMatrix {
        TeamTraitMatrix::new(vec![vec![1.0, 0.5], vec![0.2, 2.0], vec![1.5, 1.0], vec![0.7, 0.3]]).unwrap()
    }

    fn config(strategy: Strategy, budget: usize) -> LearnerConfig {
        LearnerConfig { strategy, budget, seed: 7, ..LearnerConfig::default() }
    }

    #[test]
    fn zero_budget_leaves_prior_models() {
        let out = learn(&team(), 2, &mut Constant(2), &config(Strategy::Box, 0), None).unwrap();
        assert!(out.metrics.is_empty());
        assert!(out.state.history().is_empty());
        assert!(out.state.models().iter().all(GaussianProcess::is_empty));
    }

    #[test]
    fn constant_evaluator_gives_constant_reward() {
        let out = learn(&team(), 3, &mut Constant(3), &config(Strategy::ConvexHull, 5), None).unwrap();
        assert!(out.metrics.iter().all(|m| m.best_uncovered_reward == 1.5));
        assert!(out.metrics.iter().all(|m| m.instantaneous_regret.is_none()));
    }

    #[test]
    fn every_query_is_realizable() {
        let q = team();
        for strategy in Strategy::ALL {
            let out = learn(&q, 2, &mut Constant(2), &config(strategy, 6), None).unwrap();
            for query in out.state.history() {
                assert_eq!(query.traits, aggregated_traits(&query.allocation, &q).unwrap());
            }
        }
    }

    #[test]
    fn radii_follow_selection_counts() {
        let out = learn(&team(), 2, &mut Constant(2), &config(Strategy::Box, 12), None).unwrap();
        let r0 = out.state.initial_radius();
        let mut total = 0;
        for pool in out.state.pools() {
            for c in pool {
                assert!((c.radius - r0 * 0.8f64.powi(c.selection_count as i32)).abs() < 1e-12);
                total += c.selection_count;
            }
        }
        assert_eq!(total, 24);
    }

    #[test]
    fn single_candidate_is_selected() {
        let cfg = LearnerConfig { n_candidates: 1, ..config(Strategy::Box, 3) };
        let out = learn(&team(), 1, &mut Constant(1), &cfg, None).unwrap();
        assert_eq!(out.state.pools()[0][0].selection_count, 3);
    }

    #[test]
    fn evaluator_failure_keeps_partial_metrics() {
        let out = learn(&team(), 2, &mut FailsAfter(3), &config(Strategy::Box, 10), None).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert_eq!(out.failure.unwrap().0, "simulator offline");
    }

    #[test]
    fn regret_is_non_negative_and_cumulative() {
        let q = team();
        let maps = (0..2)
            .map(|m| sample_ground_truth(m, MapKind::GpSampled, &q.totals(), GroundTruthOptions::default()))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        let truth = EfficacyModel::new(maps).unwrap();
        let oracle = RegretOracle::new(truth.clone(), q.clone()).unwrap();
        let mut eval = SyntheticEvaluator::new(truth, q.clone());
        let out = learn(&q, 2, &mut eval, &config(Strategy::Exact, 8), Some(&oracle)).unwrap();
        let mut sum = 0.0;
        for m in &out.metrics {
            let r = m.instantaneous_regret.unwrap();
            assert!(r >= 0.0);
            sum += r;
            assert_eq!(m.cumulative_regret, Some(sum));
        }
    }

    #[test]
    fn synthetic_evaluator_labels() {
        let q = team();
        let map = TraitEfficacyMap::LinearSaturating(LinearSaturating::new(vec![1.0, 0.0], 2.0).unwrap());
        let truth = EfficacyModel::new(vec![map.clone(), map]).unwrap();
        let mut eval = SyntheticEvaluator::new(truth, q.clone());
        assert_eq!(eval.evaluate(&Allocation::null(2, 4)).unwrap(), vec![0.0, 0.0]);
        let a = Allocation::from_rows(&[vec![1, 0, 0, 0], vec![1, 1, 1, 1]]).unwrap();
        assert_eq!(eval.evaluate(&a).unwrap(), eval.evaluate(&a).unwrap());
        assert_eq!(eval.evaluate(&a).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn noisy_labels_stay_in_unit_interval() {
        let q = team();
        let map = TraitEfficacyMap::LinearSaturating(LinearSaturating::new(vec![1.0, 1.0], 1.0).unwrap());
        let mut eval = SyntheticEvaluator::new(EfficacyModel::new(vec![map]).unwrap(), q).with_noise(0.5, 3);
        for _ in 0..50 {
            let v = eval.evaluate(&Allocation::root(1, 4)).unwrap()[0];
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn learned_model_round_trips() {
        let out = learn(&team(), 2, &mut Constant(2), &config(Strategy::Box, 4), None).unwrap();
        let model = out.state.learned_model();
        assert_eq!(model.kind(), Some(MapKind::GpLearned));
        let back = EfficacyModel::load(&model.save(), &team()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = learn(&team(), 2, &mut Constant(2), &config(Strategy::ConvexHull, 6), None).unwrap();
        let b = learn(&team(), 2, &mut Constant(2), &config(Strategy::ConvexHull, 6), None).unwrap();
        assert_eq!(a.state.history(), b.state.history());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = LearnerConfig { shrink: 1.5, ..LearnerConfig::default() };
        assert!(matches!(LearnerState::new(team(), 1, cfg), Err(ActiveError::InvalidConfig(_))));
        let parsed: Result<LearnerConfig, _> = serde_json::from_str(r#"{"strategy": "exact", "bogus": 1}"#);
        assert!(parsed.is_err());
        let parsed: LearnerConfig = serde_json::from_str(r#"{"strategy": "convex-hull", "budget": 5}"#).unwrap();
        assert_eq!(parsed.n_candidates, 50);
    }
}
