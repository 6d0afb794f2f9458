//! Candidate regions for the four sampling strategies and neighbourhood
//! draws used by zooming.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::projection::ENUMERATION_CAP;
use super::ActiveError;
use crate::model::TeamTraitMatrix;

/// Where candidate aggregated traits are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Uniform in `[0, 2·max q̄]^U`, then projected.
    Unconstrained,
    /// Uniform in `∏ [0, q̄_u]`, then projected.
    Box,
    /// `s·Q` with `s` uniform in `[0, 1]^N`, then projected.
    ConvexHull,
    /// Every realizable coalition, scored directly.
    Exact,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Unconstrained, Strategy::Box, Strategy::ConvexHull, Strategy::Exact];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unconstrained => "unconstrained",
            Strategy::Box => "box",
            Strategy::ConvexHull => "convex-hull",
            Strategy::Exact => "exact",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ActiveError;

    fn from_str(s: &str) -> Result<Self, ActiveError> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ActiveError::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// The team whose coalitions bound what a single task can receive.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizableSet {
    traits: TeamTraitMatrix,
    totals: Vec<f64>,
    frobenius: f64,
}

impl RealizableSet {
    pub fn new(traits: TeamTraitMatrix) -> Self {
        let totals = traits.totals();
        let frobenius = traits.matrix().as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        RealizableSet { traits, totals, frobenius }
    }

    pub fn traits(&self) -> &TeamTraitMatrix {
        &self.traits
    }

    pub fn robots(&self) -> usize {
        self.traits.robots()
    }

    pub fn dim(&self) -> usize {
        self.traits.traits()
    }

    /// `q̄ = 1ᵀQ`, the traits of the whole team.
    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    /// `‖q̄‖∞`.
    pub fn max_total(&self) -> f64 {
        self.totals.iter().copied().fold(0.0, f64::max)
    }

    /// Every coalition mask with its traits `Qᵀa`, masks ascending.
    pub fn vertices(&self) -> Result<Vec<(u64, Vec<f64>)>, ActiveError> {
        let n = self.robots();
        if n > ENUMERATION_CAP {
            return Err(ActiveError::EnumerationCap { robots: n, cap: ENUMERATION_CAP });
        }
        Ok((0..1u64 << n).map(|mask| (mask, self.traits.coalition_traits(mask))).collect())
    }

    /// `s·Q` for a relaxed coalition row `s ∈ [0, 1]^N`.
    pub fn relaxed_traits(&self, s: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (r, w) in s.iter().enumerate() {
            for (acc, q) in y.iter_mut().zip(self.traits.robot(r)) {
                *acc += w * q;
            }
        }
        y
    }

    fn upper(&self, strategy: Strategy) -> Vec<f64> {
        match strategy {
            Strategy::Unconstrained => vec![2.0 * self.max_total(); self.dim()],
            _ => self.totals.clone(),
        }
    }
}

/// A point whose neighbourhood shrinks each time it is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Aggregated traits of the centre.
    pub center: Vec<f64>,
    /// Zero for exact-strategy vertices, which have no neighbourhood.
    pub radius: f64,
    pub selection_count: u32,
    /// Relaxed coalition row generating `center` (convex-hull and exact).
    pub weights: Option<Vec<f64>>,
}

impl Candidate {
    /// Records one selection: the radius becomes `r₀·γ^count`.
    pub fn select(&mut self, initial_radius: f64, shrink: f64) {
        self.selection_count += 1;
        self.radius = initial_radius * shrink.powi(self.selection_count as i32);
    }
}

/// Draws `count` candidates for one task; the exact strategy ignores `count`
/// and returns every coalition.
pub fn sample_candidates(
    strategy: Strategy,
    set: &RealizableSet,
    count: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Candidate>, ActiveError> {
    if count == 0 {
        return Err(ActiveError::InvalidConfig("candidate count must be at least 1".into()));
    }
    let n = set.robots();
    Ok(match strategy {
        Strategy::Exact => set
            .vertices()?
            .into_iter()
            .map(|(mask, center)| Candidate {
                center,
                radius: 0.0,
                selection_count: 0,
                weights: Some((0..n).map(|r| (mask >> r & 1) as f64).collect()),
            })
            .collect(),
        Strategy::ConvexHull => (0..count)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                Candidate { center: set.relaxed_traits(&s), radius, selection_count: 0, weights: Some(s) }
            })
            .collect(),
        Strategy::Box | Strategy::Unconstrained => {
            let upper = set.upper(strategy);
            (0..count)
                .map(|_| Candidate {
                    center: upper.iter().map(|&u| rng.gen::<f64>() * u).collect(),
                    radius,
                    selection_count: 0,
                    weights: None,
                })
                .collect()
        }
    })
}

/// Uniform point in the `dim`-ball of `radius` around the origin.
fn ball_offset(dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || radius == 0.0 {
        return vec![0.0; dim];
    }
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|v| v / norm * r).collect()
}

/// Draws `count` points near `candidate`, kept inside the strategy region.
///
/// Convex-hull neighbours perturb the generating row `s` within a ball of
/// radius `r / ‖Q‖_F`, so they stay in the hull and within `r` of the centre.
pub fn sample_neighbors(
    strategy: Strategy,
    set: &RealizableSet,
    candidate: &Candidate,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    match (strategy, &candidate.weights) {
        (Strategy::Exact, _) => vec![candidate.center.clone(); count],
        (Strategy::ConvexHull, Some(s)) => {
            let scale = if set.frobenius > 0.0 { candidate.radius / set.frobenius } else { 0.0 };
            (0..count)
                .map(|_| {
                    let offset = ball_offset(s.len(), scale, rng);
                    let moved: Vec<f64> = s.iter().zip(offset).map(|(w, d)| (w + d).clamp(0.0, 1.0)).collect();
                    set.relaxed_traits(&moved)
                })
                .collect()
        }
        _ => {
            let upper = set.upper(strategy);
            (0..count)
                .map(|_| {
                    let offset = ball_offset(set.dim(), candidate.radius, rng);
                    candidate
                        .center
                        .iter()
                        .zip(offset)
                        .zip(&upper)
                        .map(|((c, d), &u)| (c + d).clamp(0.0, u))
                        .collect()
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> RealizableSet {
        RealizableSet::new(TeamTraitMatrix::new(vec![vec![1.0, 4.0], vec![2.0, 0.5], vec![0.0, 3.0]]).unwrap())
    }

    #[test]
    fn box_samples_stay_below_team_totals() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = sample_candidates(Strategy::Box, &s, 200, 1.0, &mut rng).unwrap();
        for c in &pool {
            assert!(c.center.iter().zip(s.totals()).all(|(v, q)| (0.0..=*q).contains(v)));
            for y in sample_neighbors(Strategy::Box, &s, c, 5, &mut rng) {
                assert!(y.iter().zip(s.totals()).all(|(v, q)| (0.0..=*q).contains(v)));
            }
        }
    }

    #[test]
    fn unconstrained_region_is_oversized() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pool = sample_candidates(Strategy::Unconstrained, &s, 500, 1.0, &mut rng).unwrap();
        let limit = 2.0 * s.max_total();
        assert!(pool.iter().all(|c| c.center.iter().all(|v| (0.0..=limit).contains(v))));
        assert!(pool.iter().any(|c| c.center[0] > s.totals()[0]));
    }

    #[test]
    fn convex_hull_neighbours_stay_within_radius() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in sample_candidates(Strategy::ConvexHull, &s, 50, 0.7, &mut rng).unwrap() {
            assert_eq!(c.center, s.relaxed_traits(c.weights.as_ref().unwrap()));
            for y in sample_neighbors(Strategy::ConvexHull, &s, &c, 10, &mut rng) {
                let d = y.iter().zip(&c.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                assert!(d <= 0.7 + 1e-12);
            }
        }
    }

    #[test]
    fn exact_candidates_are_all_vertices() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pool = sample_candidates(Strategy::Exact, &s, 1, 1.0, &mut rng).unwrap();
        assert_eq!(pool.len(), 8);
        assert_eq!(pool[5].center, vec![1.0, 7.0]);
        assert!(pool.iter().all(|c| c.radius == 0.0));
    }

    #[test]
    fn exact_is_refused_above_the_cap() {
        let big = RealizableSet::new(TeamTraitMatrix::new(vec![vec![1.0]; ENUMERATION_CAP + 1]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = sample_candidates(Strategy::Exact, &big, 1, 1.0, &mut rng).unwrap_err();
        assert!(err.to_string().contains("enumeration cap"));
    }

    #[test]
    fn zooming_shrinks_geometrically() {
        let mut c = Candidate { center: vec![0.0], radius: 2.0, selection_count: 0, weights: None };
        for k in 1..=4 {
            c.select(2.0, 0.8);
            assert!((c.radius - 2.0 * 0.8f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }
}
