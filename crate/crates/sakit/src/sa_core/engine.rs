use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{schedule_gamma, StepSchedule};
use crate::{Error, Result};

/// The SA iterate.
pub type ParamVec = DVector<f64>;

/// Random generator driving every oracle.
pub type SaRng = ChaCha8Rng;

/// Norm above which an iterate is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Generator for replicate `r` of an experiment: ChaCha8 keyed by the master seed, on stream
/// `r`. Streams are independent, so replicates can run in any order or in parallel.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> SaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeed {
    pub master: u64,
    pub replicate: u64,
}

impl RunSeed {
    pub fn new(master: u64, replicate: u64) -> Self {
        Self { master, replicate }
    }

    pub fn rng(&self) -> SaRng {
        replicate_rng(self.master, self.replicate)
    }
}

/// A random-field oracle `H(w, X)` with optional access to its mean field `h(w)`.
pub trait FieldOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// One draw of `H(w, X)`.
    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec;

    /// The exact mean field `h(w)`, when it is computable.
    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec>;

    /// A constant step the oracle was built for, if it only makes sense with one.
    fn required_step(&self) -> Option<f64> {
        None
    }
}

/// The Lyapunov pair `(V, W)` monitored along a run.
pub trait Lyapunov: Send + Sync {
    fn v(&self, w: &ParamVec) -> f64;
    fn w(&self, w: &ParamVec) -> f64;
}

/// Quantities logged at `w_k`, before the update that uses `γ_{k+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub k: usize,
    pub gamma: f64,
    pub lyap_w: f64,
    pub lyap_v: f64,
    /// `‖h(w_k)‖²`, NaN when the oracle has no exact mean field.
    pub normh2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub replicate: u64,
    pub records: Vec<Record>,
    /// `w_T`, the iterate after the last update.
    pub final_w: ParamVec,
    /// `w_0, …, w_{T−1}` when requested through [`RunOptions::store_iterates`].
    pub iterates: Option<Vec<ParamVec>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub store_iterates: bool,
}

pub(crate) fn check_finite(w: &ParamVec, k: usize) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) && w.norm() <= DIVERGENCE_NORM {
        Ok(())
    } else {
        Err(Error::Divergence { k })
    }
}

pub(crate) fn check_schedule_for(field: &dyn FieldOracle, schedule: &StepSchedule) -> Result<()> {
    schedule.validate()?;
    if let Some(expected) = field.required_step() {
        match *schedule {
            StepSchedule::Constant { gamma } if gamma == expected => {}
            other => {
                return Err(Error::NonconstantStep { expected, found: format!("{other:?}") });
            }
        }
    }
    Ok(())
}

/// Runs `T` SA steps from `w0` and logs one [`Record`] per step.
pub fn run_sa(
    field: &dyn FieldOracle,
    lyap: &dyn Lyapunov,
    schedule: &StepSchedule,
    horizon: usize,
    w0: &ParamVec,
    seed: RunSeed,
    opts: RunOptions,
) -> Result<TrajectoryLog> {
    if horizon == 0 {
        return Err(Error::InvalidSchedule("horizon T must be at least 1".into()));
    }
    if w0.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: w0.len() });
    }
    check_schedule_for(field, schedule)?;
    check_finite(w0, 0)?;

    let mut rng = seed.rng();
    let mut w = w0.clone();
    let mut records = Vec::with_capacity(horizon);
    let mut iterates = opts.store_iterates.then(|| Vec::with_capacity(horizon));
    for k in 0..horizon {
        let gamma = schedule_gamma(schedule, k)?;
        let normh2 = field.mean_field(&w).map_or(f64::NAN, |h| h.norm_squared());
        records.push(Record { k, gamma, lyap_w: lyap.w(&w), lyap_v: lyap.v(&w), normh2 });
        if let Some(it) = iterates.as_mut() {
            it.push(w.clone());
        }
        let h = field.sample(&w, &mut rng);
        if h.len() != w.len() {
            return Err(Error::DimensionMismatch { expected: w.len(), got: h.len() });
        }
        w.axpy(gamma, &h, 1.0);
        check_finite(&w, k + 1)?;
    }
    Ok(TrajectoryLog { replicate: seed.replicate, records, final_w: w, iterates })
}
