//! Brute-force grid maximizer of the objective, used to check where the
//! iterative solver converges.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::TdVector;
use crate::solver::objective_value;
use crate::spectrum::{Amplitudes, PairParams};

/// Largest number of free delays the oracle will search.
pub const MAX_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: TdVector,
    /// Coarse grid covers `center +- half_width` on every free axis.
    pub half_width: f64,
    pub coarse_step: f64,
    /// Each pass shrinks the step tenfold around the incumbent.
    pub refine_passes: usize,
    /// Cap on objective evaluations over all passes.
    pub budget: u64,
}

impl GridSpec {
    /// 4 samples either side, 0.05 coarse step, 4 refinements (final step 5e-6).
    pub fn around(center: TdVector) -> Self {
        Self {
            center,
            half_width: 4.0,
            coarse_step: 0.05,
            refine_passes: 4,
            budget: 1_000_000,
        }
    }

    pub fn final_step(&self) -> f64 {
        self.coarse_step / 10f64.powi(self.refine_passes as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub tau: TdVector,
    pub value: f64,
    pub evaluations: u64,
    /// Best value after the coarse pass and after each refinement.
    pub pass_values: Vec<f64>,
}

/// Exhaustive search on a coarse grid followed by tenfold refinements.
/// Ties go to the lexicographically smallest delay vector.
pub fn grid_search_max(pp: &PairParams, amps: &Amplitudes, spec: &GridSpec) -> Result<OracleResult> {
    let m = pp.num_channels();
    if spec.center.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "grid center has {} channels, objective has {m}",
            spec.center.len()
        )));
    }
    let dims = m - 1;
    if dims == 0 || dims > MAX_DIMS {
        return Err(Error::OracleTooExpensive { dims });
    }
    if !(spec.coarse_step > 0.0 && spec.half_width >= 0.0 && spec.half_width.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "grid needs a positive step and finite half width, got {} and {}",
            spec.coarse_step, spec.half_width
        )));
    }
    let coarse_n = (spec.half_width / spec.coarse_step).round() as u64;
    let per_axis = |n: u64| (2 * n + 1).pow(dims as u32);
    let evaluations = per_axis(coarse_n) + spec.refine_passes as u64 * per_axis(10);
    if evaluations > spec.budget {
        return Err(Error::OracleBudgetExceeded {
            evaluations,
            budget: spec.budget,
        });
    }

    let mut best = spec.center.free();
    let mut step = spec.coarse_step;
    let mut n = coarse_n as i64;
    let mut best_value = f64::NEG_INFINITY;
    let mut pass_values = Vec::with_capacity(spec.refine_passes + 1);
    for _ in 0..=spec.refine_passes {
        let (point, value) = search_pass(pp, amps, &spec.center, &best, step, n);
        best = point;
        best_value = value;
        pass_values.push(value);
        step /= 10.0;
        n = 10;
    }
    let mut tau = spec.center.clone();
    tau.set_free(&best);
    Ok(OracleResult {
        tau,
        value: best_value,
        evaluations,
        pass_values,
    })
}

fn search_pass(
    pp: &PairParams,
    amps: &Amplitudes,
    template: &TdVector,
    around: &[f64],
    step: f64,
    n: i64,
) -> (Vec<f64>, f64) {
    let dims = around.len();
    let side = (2 * n + 1) as u64;
    let total = side.pow(dims as u32);
    (0..total)
        .into_par_iter()
        .map_init(
            || template.clone(),
            |tau, idx| {
                let mut rest = idx;
                let point: Vec<f64> = around
                    .iter()
                    .map(|&c| {
                        let off = (rest % side) as i64 - n;
                        rest /= side;
                        c + off as f64 * step
                    })
                    .collect();
                tau.set_free(&point);
                (point, objective_value(pp, tau, amps))
            },
        )
        .reduce_with(better)
        .expect("grid has at least one point")
}

fn better(a: (Vec<f64>, f64), b: (Vec<f64>, f64)) -> (Vec<f64>, f64) {
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}
