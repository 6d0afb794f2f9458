//! Trait-efficacy maps and total allocation efficacy.
//!
//! A map scores the traits a coalition brings to one task on `[0, 1]`. Three
//! kinds exist:
//!
//! * `linear-saturating`: `min(wᵀy / c, 1)` with non-negative weights, so
//!   adding a robot never lowers the score.
//! * `gp-sampled`: one fixed draw from a GP prior on a regular lattice over
//!   `[0, q̄]`, multilinearly interpolated and clamped. Used as synthetic
//!   ground truth; not monotone in general.
//! * `gp-learned`: the posterior mean of a fitted GP, clamped.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::GaussianProcess;
use crate::model::{aggregated_traits, Allocation, Matrix, ModelError, TeamTraitMatrix};

/// Lattice size target for sampled maps: `density^U` stays near this.
const LATTICE_POINTS: f64 = 625.0;
/// Sampled maps are drawn around 0.5 with this standard deviation, then clamped.
const SAMPLED_MEAN: f64 = 0.5;
const SAMPLED_STD: f64 = 0.25;
pub const DEFAULT_SAMPLED_LENGTH_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EfficacyError {
    #[error("trait vector has {got} entries, map expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trait {index} is {value}; traits must be non-negative")]
    NegativeTrait { index: usize, value: f64 },
    #[error("ground truth of kind `{0}` cannot be sampled")]
    UnsupportedKind(MapKind),
    #[error("all maps of a model must share one kind")]
    MixedKinds,
    #[error("invalid map parameters: {0}")]
    InvalidParameters(String),
    #[error("model has {maps} maps but the allocation has {tasks} tasks")]
    TaskCountMismatch { maps: usize, tasks: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    LinearSaturating,
    GpSampled,
    GpLearned,
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapKind::LinearSaturating => "linear-saturating",
            MapKind::GpSampled => "gp-sampled",
            MapKind::GpLearned => "gp-learned",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSaturating {
    weights: Vec<f64>,
    normalizer: f64,
}

impl LinearSaturating {
    pub fn new(weights: Vec<f64>, normalizer: f64) -> Result<Self, EfficacyError> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(EfficacyError::InvalidParameters("weights must be finite and non-negative".into()));
        }
        if !(normalizer > 0.0 && normalizer.is_finite()) {
            return Err(EfficacyError::InvalidParameters("normalizer must be positive".into()));
        }
        Ok(LinearSaturating { weights, normalizer })
    }

    /// Normalizer `wᵀq̄`: the whole team scores exactly 1.
    pub fn normalized_to_team(weights: Vec<f64>, team_totals: &[f64]) -> Result<Self, EfficacyError> {
        let c: f64 = weights.iter().zip(team_totals).map(|(w, q)| w * q).sum();
        Self::new(weights, if c > 0.0 { c } else { 1.0 })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v).sum();
        (s / self.normalizer).min(1.0)
    }
}

/// Fixed GP draw on a `density^U` lattice spanning `[0, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMap {
    seed: u64,
    density: usize,
    length_scale: f64,
    upper: Vec<f64>,
    values: Vec<f64>,
}

pub fn default_density(dim: usize) -> usize {
    let per_axis = LATTICE_POINTS.powf(1.0 / dim.max(1) as f64) + 1e-9;
    (per_axis.floor() as usize).clamp(2, 17)
}

impl LatticeMap {
    /// Draws the lattice values. Deterministic in all arguments.
    pub fn sample(seed: u64, upper: Vec<f64>, density: usize, length_scale: f64) -> Result<Self, EfficacyError> {
        let dim = upper.len();
        if dim == 0 || density < 2 || !(length_scale > 0.0) {
            return Err(EfficacyError::InvalidParameters(
                "lattice needs >= 1 dimension, density >= 2 and a positive length scale".into(),
            ));
        }
        if upper.iter().any(|u| !(*u >= 0.0 && u.is_finite())) {
            return Err(EfficacyError::InvalidParameters("lattice extent must be finite and non-negative".into()));
        }
        let points = density.checked_pow(dim as u32).filter(|&p| p <= 20_000).ok_or_else(|| {
            EfficacyError::InvalidParameters(format!("lattice {density}^{dim} is too large"))
        })?;

        let coords: Vec<Vec<f64>> = (0..points).map(|p| lattice_coords(p, density, dim)).collect();
        let inv = 1.0 / (2.0 * length_scale * length_scale);
        let gram = DMatrix::from_fn(points, points, |i, j| {
            let sq: f64 = coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sq * inv).exp()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_iterator(points, (0..points).map(|_| StandardNormal.sample(&mut rng)));

        let mut jitter = 1e-8;
        let chol = loop {
            let mut k = gram.clone();
            for i in 0..points {
                k[(i, i)] += jitter;
            }
            if let Some(c) = k.cholesky() {
                break c;
            }
            jitter *= 10.0;
            if jitter > 1e-1 {
                return Err(EfficacyError::InvalidParameters("lattice covariance is not factorizable".into()));
            }
        };
        let draw = chol.l() * z;
        let values = draw.iter().map(|f| SAMPLED_MEAN + SAMPLED_STD * f).collect();
        Ok(LatticeMap { seed, density, length_scale, upper, values })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn density(&self) -> usize {
        self.density
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Raw lattice values (before clamping).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let dim = self.upper.len();
        let last = (self.density - 1) as f64;
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for d in 0..dim {
            let t = if self.upper[d] > 0.0 { (y[d] / self.upper[d]).clamp(0.0, 1.0) } else { 0.0 };
            let pos = t * last;
            let i0 = (pos.floor() as usize).min(self.density - 2);
            base[d] = i0;
            frac[d] = pos - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut index = 0;
            let mut stride = 1;
            for d in 0..dim {
                let up = corner >> d & 1;
                weight *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                index += (base[d] + up) * stride;
                stride *= self.density;
            }
            if weight != 0.0 {
                acc += weight * self.values[index];
            }
        }
        acc.clamp(0.0, 1.0)
    }
}

/// Unit-cube coordinates of lattice point `p`; axis 0 varies fastest.
fn lattice_coords(mut p: usize, density: usize, dim: usize) -> Vec<f64> {
    let last = (density - 1) as f64;
    (0..dim)
        .map(|_| {
            let i = p % density;
            p /= density;
            i as f64 / last
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraitEfficacyMap {
    LinearSaturating(LinearSaturating),
    GpSampled(LatticeMap),
    GpLearned(GaussianProcess),
}

impl TraitEfficacyMap {
    pub fn kind(&self) -> MapKind {
        match self {
            TraitEfficacyMap::LinearSaturating(_) => MapKind::LinearSaturating,
            TraitEfficacyMap::GpSampled(_) => MapKind::GpSampled,
            TraitEfficacyMap::GpLearned(_) => MapKind::GpLearned,
        }
    }

    /// Number of traits the map takes.
    pub fn dim(&self) -> usize {
        match self {
            TraitEfficacyMap::LinearSaturating(l) => l.weights.len(),
            TraitEfficacyMap::GpSampled(s) => s.upper.len(),
            TraitEfficacyMap::GpLearned(g) => g.dim(),
        }
    }

    /// Only linear-saturating maps are guaranteed monotone.
    pub fn is_monotone(&self) -> bool {
        matches!(self, TraitEfficacyMap::LinearSaturating(_))
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<f64, EfficacyError> {
        if y.len() != self.dim() {
            return Err(EfficacyError::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(EfficacyError::NegativeTrait { index, value });
        }
        Ok(self.evaluate_unchecked(y))
    }

    pub(crate) fn evaluate_unchecked(&self, y: &[f64]) -> f64 {
        let raw = match self {
            TraitEfficacyMap::LinearSaturating(l) => l.eval(y),
            TraitEfficacyMap::GpSampled(s) => s.eval(y),
            TraitEfficacyMap::GpLearned(g) => g.predict_unchecked(y).0,
        };
        raw.clamp(0.0, 1.0)
    }
}

/// Score of one coalition's traits on one task.
pub fn task_efficacy(map: &TraitEfficacyMap, y: &[f64]) -> Result<f64, EfficacyError> {
    map.evaluate(y)
}

/// One map per task.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficacyModel {
    maps: Vec<TraitEfficacyMap>,
}

impl EfficacyModel {
    pub fn new(maps: Vec<TraitEfficacyMap>) -> Result<Self, EfficacyError> {
        if let Some(first) = maps.first() {
            if maps.iter().any(|m| m.kind() != first.kind()) {
                return Err(EfficacyError::MixedKinds);
            }
        }
        Ok(EfficacyModel { maps })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[TraitEfficacyMap] {
        &self.maps
    }

    pub fn map(&self, task: usize) -> &TraitEfficacyMap {
        &self.maps[task]
    }

    pub fn kind(&self) -> Option<MapKind> {
        self.maps.first().map(TraitEfficacyMap::kind)
    }

    pub fn is_monotone(&self) -> bool {
        self.maps.iter().all(TraitEfficacyMap::is_monotone)
    }

    /// Per-task scores for aggregated traits `y` (one row per task).
    pub fn per_task(&self, y: &Matrix) -> Result<Vec<f64>, EfficacyError> {
        if y.rows() != self.maps.len() {
            return Err(EfficacyError::TaskCountMismatch { maps: self.maps.len(), tasks: y.rows() });
        }
        self.maps.iter().zip(y.iter_rows()).map(|(map, row)| map.evaluate(row)).collect()
    }

    /// Π(A) = Σ_m π_m(y_m).
    pub fn total(&self, allocation: &Allocation, traits: &TeamTraitMatrix) -> Result<f64, EfficacyError> {
        let y = aggregated_traits(allocation, traits)?;
        Ok(self.per_task(&y)?.into_iter().sum())
    }

    pub fn from_document(doc: EfficacyDocument, traits: &TeamTraitMatrix) -> Result<Self, (String, String)> {
        let totals = traits.totals();
        let mut maps = Vec::with_capacity(doc.per_task.len());
        for (i, value) in doc.per_task.into_iter().enumerate() {
            let at = |inner: &str| format!(".per_task[{i}]{inner}");
            let map = match doc.kind {
                MapKind::LinearSaturating => {
                    let p: LinearDocument = parse_entry(value).map_err(|(p, m)| (at(&p), m))?;
                    let built = match p.normalizer {
                        Some(c) => LinearSaturating::new(p.weights, c),
                        None => LinearSaturating::normalized_to_team(p.weights, &totals),
                    };
                    TraitEfficacyMap::LinearSaturating(built.map_err(|e| (at(""), e.to_string()))?)
                }
                MapKind::GpSampled => {
                    let p: SampledDocument = parse_entry(value).map_err(|(p, m)| (at(&p), m))?;
                    let upper = p.upper.unwrap_or_else(|| totals.clone());
                    let density = p.density.unwrap_or_else(|| default_density(upper.len()));
                    let ell = p.length_scale.unwrap_or(DEFAULT_SAMPLED_LENGTH_SCALE);
                    let built = LatticeMap::sample(p.seed, upper, density, ell);
                    TraitEfficacyMap::GpSampled(built.map_err(|e| (at(""), e.to_string()))?)
                }
                MapKind::GpLearned => {
                    let gp: GaussianProcess = parse_entry(value).map_err(|(p, m)| (at(&p), m))?;
                    TraitEfficacyMap::GpLearned(gp)
                }
            };
            maps.push(map);
        }
        Ok(EfficacyModel { maps })
    }

    pub fn to_document(&self) -> EfficacyDocument {
        let per_task = self
            .maps
            .iter()
            .map(|map| match map {
                TraitEfficacyMap::LinearSaturating(l) => serde_json::to_value(LinearDocument {
                    weights: l.weights.clone(),
                    normalizer: Some(l.normalizer),
                }),
                TraitEfficacyMap::GpSampled(s) => serde_json::to_value(SampledDocument {
                    seed: s.seed,
                    density: Some(s.density),
                    length_scale: Some(s.length_scale),
                    upper: Some(s.upper.clone()),
                }),
                TraitEfficacyMap::GpLearned(g) => serde_json::to_value(g),
            })
            .collect::<Result<Vec<_>, _>>()
            .expect("efficacy parameters always serialize");
        EfficacyDocument { kind: self.kind().unwrap_or(MapKind::LinearSaturating), per_task }
    }

    /// Parses a standalone efficacy-model document (e.g. learned models).
    pub fn load(text: &str, traits: &TeamTraitMatrix) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: EfficacyDocument = serde_path_to_error::deserialize(de)
            .map_err(|e| {
                let path = e.path().to_string();
                let path = if path == "." || path == "?" { String::new() } else { path };
                ModelError::Schema { path, message: e.inner().to_string() }
            })?;
        Self::from_document(doc, traits).map_err(|(path, message)| ModelError::Schema { path, message })
    }

    pub fn save(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("efficacy documents always serialize")
    }
}

/// Π(A) for a model, allocation and team.
pub fn total_efficacy(
    model: &EfficacyModel,
    allocation: &Allocation,
    traits: &TeamTraitMatrix,
) -> Result<f64, EfficacyError> {
    model.total(allocation, traits)
}

/// JSON form of an efficacy model: `{"kind": ..., "per_task": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyDocument {
    pub kind: MapKind,
    pub per_task: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct LinearDocument {
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalizer: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SampledDocument {
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

fn parse_entry<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, (String, String)> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        (if path == "." || path == "?" { String::new() } else { format!(".{path}") }, e.inner().to_string())
    })
}

/// Options for [`sample_ground_truth`].
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthOptions {
    pub density: Option<usize>,
    pub length_scale: f64,
}

impl Default for GroundTruthOptions {
    fn default() -> Self {
        GroundTruthOptions { density: None, length_scale: DEFAULT_SAMPLED_LENGTH_SCALE }
    }
}

/// Synthetic ground-truth map over a team whose trait totals are `team_totals`
/// (the trait count U is `team_totals.len()`).
pub fn sample_ground_truth(
    seed: u64,
    kind: MapKind,
    team_totals: &[f64],
    options: GroundTruthOptions,
) -> Result<TraitEfficacyMap, EfficacyError> {
    match kind {
        MapKind::LinearSaturating => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let unit = Uniform::new(0.0, 1.0);
            let weights = (0..team_totals.len()).map(|_| unit.sample(&mut rng)).collect();
            Ok(TraitEfficacyMap::LinearSaturating(LinearSaturating::normalized_to_team(weights, team_totals)?))
        }
        MapKind::GpSampled => {
            let density = options.density.unwrap_or_else(|| default_density(team_totals.len()));
            Ok(TraitEfficacyMap::GpSampled(LatticeMap::sample(
                seed,
                team_totals.to_vec(),
                density,
                options.length_scale,
            )?))
        }
        MapKind::GpLearned => Err(EfficacyError::UnsupportedKind(kind)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn lin(w: Vec<f64>, c: f64) -> TraitEfficacyMap {
        TraitEfficacyMap::LinearSaturating(LinearSaturating::new(w, c).unwrap())
    }

    #[test]
    fn linear_saturating_examples() {
        let map = lin(vec![0.1], 1.0);
        assert!((task_efficacy(&map, &[5.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(task_efficacy(&map, &[20.0]).unwrap(), 1.0);
        assert_eq!(task_efficacy(&map, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn evaluation_errors() {
        let map = lin(vec![0.1, 0.2], 1.0);
        assert_eq!(map.evaluate(&[1.0]), Err(EfficacyError::DimensionMismatch { expected: 2, got: 1 }));
        assert_eq!(map.evaluate(&[1.0, -2.0]), Err(EfficacyError::NegativeTrait { index: 1, value: -2.0 }));
    }

    #[test]
    fn total_efficacy_examples() {
        let model = EfficacyModel::new(vec![lin(vec![0.1], 1.0), lin(vec![0.1], 1.0)]).unwrap();
        let q = TeamTraitMatrix::new(vec![vec![5.0], vec![15.0]]).unwrap();
        assert_eq!(total_efficacy(&model, &Allocation::null(2, 2), &q).unwrap(), 0.0);
        // rows [5] and [20]
        let a = Allocation::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        assert!((total_efficacy(&model, &a, &q).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn total_is_sum_of_task_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = TeamTraitMatrix::new((0..4).map(|_| (0..2).map(|_| rng.gen_range(0.0..2.0)).collect()).collect())
            .unwrap();
        let totals = q.totals();
        let maps = (0..3)
            .map(|s| sample_ground_truth(s, MapKind::GpSampled, &totals, GroundTruthOptions::default()).unwrap())
            .collect();
        let model = EfficacyModel::new(maps).unwrap();
        for _ in 0..20 {
            let a = Allocation::from_masks(4, (0..3).map(|_| rng.gen_range(0..16)).collect()).unwrap();
            let y = aggregated_traits(&a, &q).unwrap();
            let by_hand: f64 = (0..3).map(|m| task_efficacy(model.map(m), y.row(m)).unwrap()).sum();
            assert_eq!(total_efficacy(&model, &a, &q).unwrap(), by_hand);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let totals = [2.0, 3.0];
        for kind in [MapKind::LinearSaturating, MapKind::GpSampled] {
            let a = sample_ground_truth(11, kind, &totals, GroundTruthOptions::default()).unwrap();
            let b = sample_ground_truth(11, kind, &totals, GroundTruthOptions::default()).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(
            sample_ground_truth(1, MapKind::GpLearned, &totals, GroundTruthOptions::default()),
            Err(EfficacyError::UnsupportedKind(MapKind::GpLearned))
        );
    }

    #[test]
    fn sampled_linear_weights_are_non_negative_and_root_scores_one() {
        let totals = [2.0, 0.5, 1.0];
        for seed in 0..10 {
            let TraitEfficacyMap::LinearSaturating(l) =
                sample_ground_truth(seed, MapKind::LinearSaturating, &totals, GroundTruthOptions::default()).unwrap()
            else {
                unreachable!()
            };
            assert!(l.weights().iter().all(|w| *w >= 0.0));
            assert!((l.eval(&totals) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_map_is_clamped_everywhere() {
        let totals = [1.5, 2.0, 0.7, 1.1];
        let map = sample_ground_truth(5, MapKind::GpSampled, &totals, GroundTruthOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let y: Vec<f64> = totals.iter().map(|t| rng.gen_range(0.0..(2.0 * t))).collect();
            let v = map.evaluate(&y).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn lattice_interpolates_its_support_points() {
        let map = LatticeMap::sample(4, vec![2.0, 1.0], 5, 0.3).unwrap();
        for p in 0..25 {
            let c = lattice_coords(p, 5, 2);
            let y = [c[0] * 2.0, c[1] * 1.0];
            assert!((map.eval(&y) - map.values[p].clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let sampled = sample_ground_truth(1, MapKind::GpSampled, &[1.0], GroundTruthOptions::default()).unwrap();
        assert_eq!(EfficacyModel::new(vec![lin(vec![1.0], 1.0), sampled]), Err(EfficacyError::MixedKinds));
    }

    #[test]
    fn document_round_trip() {
        let q = TeamTraitMatrix::new(vec![vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let totals = q.totals();
        let maps = (0..2)
            .map(|s| sample_ground_truth(s, MapKind::GpSampled, &totals, GroundTruthOptions::default()).unwrap())
            .collect();
        let model = EfficacyModel::new(maps).unwrap();
        assert_eq!(EfficacyModel::load(&model.save(), &q).unwrap(), model);
    }
}
