//! Nearest realizable aggregated traits under squared Euclidean distance.
//!
//! Rows of `Y − AQ` depend only on their own coalition, so each task row is
//! projected independently. Up to [`ENUMERATION_CAP`] robots the search is
//! exhaustive; beyond that it falls back to bit-flip hill climbing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ActiveError;
use crate::model::{Allocation, Matrix, TeamTraitMatrix};

/// Largest team for which coalitions are enumerated exhaustively.
pub const ENUMERATION_CAP: usize = 20;
/// Random restarts of the hill climber used above the cap.
pub const HILL_CLIMB_RESTARTS: usize = 16;

/// Best coalition found for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowProjection {
    pub mask: u64,
    pub residual: f64,
    /// The row came from hill climbing and may not be the global optimum.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub allocation: Allocation,
    /// `allocation · Q`.
    pub traits: Matrix,
    /// Squared Frobenius distance to the target.
    pub residual: f64,
    pub approximate: bool,
}

/// Orders coalitions by residual, then cardinality, then the bitstring read
/// from robot 0.
fn better(residual: f64, mask: u64, than_residual: f64, than_mask: u64) -> bool {
    residual < than_residual
        || (residual == than_residual
            && (mask.count_ones(), mask.reverse_bits()) < (than_mask.count_ones(), than_mask.reverse_bits()))
}

fn squared_distance(target: &[f64], y: impl Iterator<Item = f64>) -> f64 {
    target.iter().zip(y).map(|(t, v)| (t - v) * (t - v)).sum()
}

/// Trait sums of every subset of `rows`, flattened `2^k × dim`.
fn subset_sums(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let count = 1usize << rows.len();
    let mut sums = vec![0.0; count * dim];
    for mask in 1..count {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        for u in 0..dim {
            sums[mask * dim + u] = sums[rest * dim + u] + rows[low][u];
        }
    }
    sums
}

fn exhaustive(target: &[f64], traits: &TeamTraitMatrix) -> RowProjection {
    let n = traits.robots();
    let dim = traits.traits();
    let split = n / 2;
    let robots: Vec<&[f64]> = (0..n).map(|r| traits.robot(r)).collect();
    let low = subset_sums(&robots[..split], dim);
    let high = subset_sums(&robots[split..], dim);
    let mut best = RowProjection { mask: 0, residual: f64::INFINITY, approximate: false };
    for hi in 0..1usize << (n - split) {
        let h = &high[hi * dim..(hi + 1) * dim];
        for lo in 0..1usize << split {
            let l = &low[lo * dim..(lo + 1) * dim];
            let residual = squared_distance(target, l.iter().zip(h).map(|(a, b)| a + b));
            let mask = (lo | hi << split) as u64;
            if better(residual, mask, best.residual, best.mask) {
                best = RowProjection { mask, residual, approximate: false };
            }
        }
    }
    best
}

fn hill_climb(target: &[f64], traits: &TeamTraitMatrix) -> RowProjection {
    let n = traits.robots();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ n as u64);
    let mut best = RowProjection { mask: 0, residual: f64::INFINITY, approximate: true };
    for restart in 0..HILL_CLIMB_RESTARTS {
        let mut mask = if restart == 0 { 0 } else { rng.gen::<u64>() & crate::model::full_mask(n) };
        let mut y = traits.coalition_traits(mask);
        let mut residual = squared_distance(target, y.iter().copied());
        loop {
            let mut step: Option<(f64, u64)> = None;
            for r in 0..n {
                let sign = if mask >> r & 1 == 1 { -1.0 } else { 1.0 };
                let q = traits.robot(r);
                let flipped = squared_distance(target, y.iter().zip(q).map(|(v, w)| v + sign * w));
                let candidate = mask ^ 1 << r;
                let (to_res, to_mask) = step.unwrap_or((residual, mask));
                if better(flipped, candidate, to_res, to_mask) && flipped < residual {
                    step = Some((flipped, candidate));
                }
            }
            let Some((_, next)) = step else { break };
            mask = next;
            y = traits.coalition_traits(mask);
            residual = squared_distance(target, y.iter().copied());
        }
        if better(residual, mask, best.residual, best.mask) {
            best = RowProjection { mask, residual, approximate: true };
        }
    }
    best
}

/// Projects one task row.
pub fn project_row(target: &[f64], traits: &TeamTraitMatrix) -> Result<RowProjection, ActiveError> {
    if target.len() != traits.traits() {
        return Err(ActiveError::DimensionMismatch { expected: traits.traits(), got: target.len() });
    }
    Ok(if traits.robots() <= ENUMERATION_CAP { exhaustive(target, traits) } else { hill_climb(target, traits) })
}

/// `argmin_A ‖Y − AQ‖²_F` over binary allocations, with `Y' = A'Q`.
pub fn project_to_realizable(target: &Matrix, traits: &TeamTraitMatrix) -> Result<Projection, ActiveError> {
    let mut masks = Vec::with_capacity(target.rows());
    let mut approximate = false;
    for row in target.iter_rows() {
        let p = project_row(row, traits)?;
        approximate |= p.approximate;
        masks.push(p.mask);
    }
    let allocation = Allocation::from_masks(traits.robots(), masks).expect("masks fit the team");
    let projected = crate::model::aggregated_traits(&allocation, traits).expect("shapes agree");
    let residual = target.distance_sq(&projected);
    Ok(Projection { allocation, traits: projected, residual, approximate })
}
