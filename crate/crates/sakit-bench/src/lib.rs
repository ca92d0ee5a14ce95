//! Benchmark fixtures.
//!
//! Each fixture is built from a fixed master seed so that every benchmark run measures the
//! same problem instance.

use sakit::nalgebra::DVector;
use sakit::problems_em::{EmOracle, EmSampler, Gmm, GmmParams};
use sakit::problems_sgd::FiniteSumProblem;
use sakit::problems_td::TdProblem;
use sakit::{replicate_rng, ParamVec, Result};

/// A strongly convex finite sum with shared Hessian.
pub fn quadratic(n: usize, d: usize) -> Result<FiniteSumProblem> {
    FiniteSumProblem::random_shared(n, d, 0.1, 1.0, 1.0, &mut replicate_rng(1, 0))
}

/// A finite sum whose components have distinct Hessians, as SA-SPIDER needs.
pub fn distinct_quadratic(n: usize, d: usize) -> Result<FiniteSumProblem> {
    FiniteSumProblem::random_distinct(n, d, 0.1, 1.0, 1.0, &mut replicate_rng(2, 0))
}

/// The ten-state, three-feature TD(0) instance used by the `td_robust` preset.
pub fn td_instance() -> Result<TdProblem> {
    TdProblem::random(10, 3, 0.5, &mut replicate_rng(1, 0))
}

/// A two-component Gaussian mixture on `n` points and a starting statistic.
pub fn mixture(n: usize) -> Result<(Gmm, ParamVec)> {
    let model = Gmm::synthetic(n, &[0.4, 0.6], &[-1.5, 1.5], &mut replicate_rng(3, 0))?;
    let start = model
        .stat_of(&GmmParams { weights: DVector::from_vec(vec![0.5, 0.5]), means: DVector::from_vec(vec![-0.3, 0.4]) });
    Ok((model, start))
}

/// A mini-batch EM oracle of batch size `b` on `model`.
pub fn minibatch_em(model: &Gmm, b: usize) -> Result<EmOracle<'_, Gmm>> {
    EmOracle::new(model, EmSampler::Minibatch { b })
}
