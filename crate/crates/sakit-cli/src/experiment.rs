//! Runs a parsed experiment and writes its CSV reports.
//!
//! Every horizon `T` of the sweep is run for each replicate. A run is summarised by one scalar
//! chosen by the stopping rule, and the mean of that scalar over replicates is compared with
//! the bound the configuration admits at `T`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sakit::compression::{
    propagate_constants, wrap_compressed_field, wrap_low_precision, wrap_perturbed_iterate, CompressionOp, Placement,
    PropagationExtras,
};
use sakit::diagnostics::{bound_curve, fit_rate, mean_se, BoundSpec};
use sakit::problems_em::{EmConstants, EmLyapunov, EmOracle, Gmm, GmmParams};
use sakit::problems_sgd::{FiniteSumProblem, MinibatchSpec, SgdLyapunov, SgdOracle, SgdRegime};
use sakit::problems_td::{TdLyapunov, TdOracle, TdProblem};
use sakit::sa_core::{omegas_for, StoppingRule};
use sakit::spider::{run_spider, spider_constant_bound, spider_step_tuned, SpiderConfig, SpiderConstants};
use sakit::{
    derive_constants, replicate_rng, run_sa, select_output, stopping_weights, DerivedConstants, Ext, FieldOracle,
    Lyapunov, ParamVec, RegimeConstants, RunOptions, RunSeed, StepSchedule, TrajectoryLog,
};

use crate::config::{ExperimentConfig, ProblemConfig, QuadraticInstance, ScheduleConfig, Stopping};
use crate::CliError;

pub const TRAJECTORY_HEADER: &str = "replicate,k,gamma,W,V,normh2";
pub const AGGREGATE_HEADER: &str = "k,mean_W,se_W,bound";
pub const BOUND_HEADER: &str = "k,bound";

/// Records kept per run when `log_every` is left at zero.
const AUTO_POINTS: usize = 200;

/// One logged step of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub gamma: f64,
    pub w: f64,
    pub v: f64,
    pub normh2: f64,
}

/// One replicate at one horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRun {
    pub rows: Vec<TrajectoryRow>,
    pub statistic: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateRow {
    pub horizon: usize,
    pub mean_w: f64,
    pub se_w: f64,
    /// `+∞` when the configuration admits no bound.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub rows: Vec<AggregateRow>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub bound_ok: Option<bool>,
    pub slope_ok: Option<bool>,
    pub line: String,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.bound_ok != Some(false) && self.slope_ok != Some(false)
    }
}

/// What a problem kind must provide to be swept.
trait Plan: Sync {
    fn run(&self, horizon: usize, replicate: u64, every: usize) -> Result<ReplicateRun, CliError>;
    fn bound(&self, horizon: usize) -> Result<Option<f64>, CliError>;
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

fn start_point(w0: &[f64], d: usize) -> Result<ParamVec, CliError> {
    match w0.len() {
        1 => Ok(ParamVec::from_element(d, w0[0])),
        len if len == d => Ok(ParamVec::from_column_slice(w0)),
        len => Err(config_error(format!("algorithm.w0 has {len} values, the problem has dimension {d}"))),
    }
}

fn quadratic_problem(q: &QuadraticInstance) -> Result<FiniteSumProblem, CliError> {
    let rng = &mut replicate_rng(q.seed, 0);
    Ok(if q.distinct_hessians {
        FiniteSumProblem::random_distinct(q.n, q.d, q.mu, q.l, q.spread, rng)?
    } else {
        FiniteSumProblem::random_shared(q.n, q.d, q.mu, q.l, q.spread, rng)?
    })
}

/// Applies the configured compressor to `inner` and transforms the constants accordingly.
fn compressed<'a, F: FieldOracle + 'a>(
    inner: F,
    cfg: &ExperimentConfig,
    rc: RegimeConstants,
    lip_h: Option<f64>,
) -> Result<(Box<dyn FieldOracle + 'a>, RegimeConstants), CliError> {
    let a = &cfg.algorithm;
    let (op, placement) = (a.compression, a.placement);
    if op == CompressionOp::Identity && placement == Placement::Field {
        return Ok((Box::new(inner), rc));
    }
    let gamma_bar = match a.schedule {
        ScheduleConfig::Constant { gamma } => Some(gamma),
        _ => None,
    };
    let extras = PropagationExtras { lip_h, lip_mean_h: lip_h, gamma_bar, ..PropagationExtras::default() };
    let profile = op.profile(inner.dim())?;
    let rc = propagate_constants(&profile, placement, &rc, &extras)?;
    let field: Box<dyn FieldOracle + 'a> = match placement {
        Placement::Field => Box::new(wrap_compressed_field(inner, op)?),
        Placement::Perturbed => Box::new(wrap_perturbed_iterate(inner, op)?),
        Placement::LowPrecision => {
            let g = gamma_bar.ok_or_else(|| config_error("the low-precision placement needs a constant step"))?;
            Box::new(wrap_low_precision(inner, op, g)?)
        }
    };
    Ok((field, rc))
}

/// The generic schedule of `cfg` at horizon `t`.
fn generic_schedule(
    s: ScheduleConfig,
    rc: &RegimeConstants,
    dc: &DerivedConstants,
    t: usize,
) -> Result<StepSchedule, CliError> {
    Ok(match s {
        ScheduleConfig::Constant { gamma } => StepSchedule::Constant { gamma },
        ScheduleConfig::Tuned => StepSchedule::HorizonTuned {
            v_bar: dc.v_bar,
            eta0: dc.eta0,
            l_v: rc.l_v,
            gamma_max: dc.gamma_max,
            horizon: t,
        },
        ScheduleConfig::Polynomial { gamma_tilde, t0, beta } => StepSchedule::Polynomial { gamma_tilde, t0, beta },
        ScheduleConfig::Fast { factor } => {
            let gamma_tilde = factor * 6.0 / dc.rho_minus_b1;
            let t0 = match dc.gamma_max {
                Ext::Finite(g) => (2.0 * gamma_tilde / g).ceil() as usize,
                Ext::Unbounded => 0,
            };
            StepSchedule::Polynomial { gamma_tilde, t0, beta: 1.0 }
        }
        ScheduleConfig::Robust => return Err(config_error("the robust schedule is specific to TD(0)")),
    })
}

/// The bound of the generic analysis matching the schedule and stopping rule, if any.
/// `w0` is `W(w_0)` when `V = W`, and `None` otherwise.
fn generic_bound(
    rc: &RegimeConstants,
    dc: &DerivedConstants,
    s: ScheduleConfig,
    stopping: Stopping,
    schedule: &StepSchedule,
    w0: Option<f64>,
    t: usize,
) -> Result<Option<f64>, CliError> {
    let v_bar = dc.v_bar;
    let spec = match (stopping, s, w0) {
        (Stopping::Random, ScheduleConfig::Tuned, _) => BoundSpec::TunedStepAverage { rc, v_bar },
        (Stopping::Random, ScheduleConfig::Constant { gamma }, _)
            if dc.gamma_max.half().finite().is_none_or(|g| gamma <= g) =>
        {
            BoundSpec::ConstantStepAverage { rc, v_bar, gamma }
        }
        (Stopping::Random, _, _) => BoundSpec::WeightedAverage { rc, v_bar, schedule },
        (Stopping::Last, ScheduleConfig::Fast { .. }, Some(w0)) => {
            BoundSpec::LastIterateDiminishing { rc, w0, schedule }
        }
        (Stopping::Last, _, Some(w0)) => BoundSpec::LastIterate { rc, w0, schedule },
        _ => return Ok(None),
    };
    Ok(bound_curve(&spec, t)?.last().copied())
}

fn thin(log: &TrajectoryLog, every: usize) -> Vec<TrajectoryRow> {
    log.records
        .iter()
        .filter(|r| r.k % every == 0)
        .map(|r| TrajectoryRow { k: r.k, gamma: r.gamma, w: r.lyap_w, v: r.lyap_v, normh2: r.normh2 })
        .collect()
}

/// The scalar a run reports under `stopping`.
fn statistic(
    log: &TrajectoryLog,
    stopping: Stopping,
    dc: &DerivedConstants,
    lyap: &dyn Lyapunov,
) -> Result<f64, CliError> {
    Ok(match stopping {
        Stopping::Last => lyap.w(&log.final_w),
        Stopping::Average => {
            // The averaging rule draws nothing, so any generator will do.
            let avg = select_output(log, StoppingRule::WeightedAverage, dc, &mut replicate_rng(0, 0))?;
            lyap.w(&avg)
        }
        Stopping::Random => {
            let gammas: Vec<f64> = log.records.iter().map(|r| r.gamma).collect();
            let p = stopping_weights(&gammas, &omegas_for(dc, &gammas))?;
            p.iter().zip(&log.records).map(|(p, r)| p * r.lyap_w).sum()
        }
    })
}

/// A plan for the generic SA engine: a field, a Lyapunov pair and their constants.
struct SaPlan<'a> {
    field: Box<dyn FieldOracle + 'a>,
    lyap: Box<dyn Lyapunov + 'a>,
    rc: RegimeConstants,
    dc: DerivedConstants,
    w0: ParamVec,
    master_seed: u64,
    schedule: ScheduleConfig,
    stopping: Stopping,
    /// `W(w_0)` when `V = W`.
    w0_lyap: Option<f64>,
    /// Problem-specific schedule and bound, tried before the generic ones.
    td: Option<&'a TdProblem>,
}

impl SaPlan<'_> {
    fn schedule_at(&self, t: usize) -> Result<StepSchedule, CliError> {
        match (self.td, self.schedule) {
            (Some(td), ScheduleConfig::Robust) => {
                Ok(StepSchedule::Constant { gamma: td.robust_step(self.dc.v_bar, t)? })
            }
            (Some(td), ScheduleConfig::Fast { factor }) => Ok(td.fast_schedule(factor)?),
            _ => generic_schedule(self.schedule, &self.rc, &self.dc, t),
        }
    }
}

impl Plan for SaPlan<'_> {
    fn run(&self, horizon: usize, replicate: u64, every: usize) -> Result<ReplicateRun, CliError> {
        let schedule = self.schedule_at(horizon)?;
        let opts = RunOptions { store_iterates: self.stopping == Stopping::Average };
        let seed = RunSeed::new(self.master_seed, replicate);
        let log = run_sa(self.field.as_ref(), self.lyap.as_ref(), &schedule, horizon, &self.w0, seed, opts)?;
        let statistic = statistic(&log, self.stopping, &self.dc, self.lyap.as_ref())?;
        Ok(ReplicateRun { rows: thin(&log, every), statistic })
    }

    fn bound(&self, horizon: usize) -> Result<Option<f64>, CliError> {
        let schedule = self.schedule_at(horizon)?;
        match (self.td, self.schedule, self.stopping) {
            (Some(td), ScheduleConfig::Robust, Stopping::Average) => {
                Ok(Some(bound_curve(&BoundSpec::TdAveraged { td, v_bar: self.dc.v_bar }, horizon)?[horizon - 1]))
            }
            (Some(td), ScheduleConfig::Fast { .. }, Stopping::Last) => {
                let spec = BoundSpec::TdLastIterate { td, schedule: &schedule, w0: &self.w0 };
                // The bound controls `‖w_T − w*‖²`, twice the reported `W = ½‖w_T − w*‖²`.
                Ok(Some(bound_curve(&spec, horizon)?[horizon - 1] / 2.0))
            }
            (Some(_), ScheduleConfig::Robust | ScheduleConfig::Fast { .. }, _) => Ok(None),
            _ => generic_bound(&self.rc, &self.dc, self.schedule, self.stopping, &schedule, self.w0_lyap, horizon),
        }
    }
}

fn derived(rc: &RegimeConstants, v_bar: f64) -> Result<DerivedConstants, CliError> {
    Ok(derive_constants(rc)?.with_v_bar(v_bar.max(0.0)))
}

struct SpiderPlan<'a> {
    problem: &'a FiniteSumProblem,
    lyap: SgdLyapunov<'a>,
    consts: SpiderConstants,
    k_in: usize,
    b_vr: usize,
    delta1: f64,
    w0: ParamVec,
    master_seed: u64,
    schedule: ScheduleConfig,
}

impl SpiderPlan<'_> {
    fn gamma(&self, t: usize) -> f64 {
        match self.schedule {
            ScheduleConfig::Constant { gamma } => gamma,
            _ => {
                let c = &self.consts;
                let gmax = c.gamma_max(self.k_in, self.b_vr);
                spider_step_tuned(self.delta1, c.delta2(self.k_in, self.b_vr), c.rho, t, c.c_h0, gmax)
            }
        }
    }
}

impl Plan for SpiderPlan<'_> {
    fn run(&self, horizon: usize, replicate: u64, every: usize) -> Result<ReplicateRun, CliError> {
        let config = SpiderConfig::constant(self.k_in, horizon / self.k_in, self.b_vr, self.gamma(horizon));
        let log = run_spider(self.problem, &self.lyap, &config, &self.w0, RunSeed::new(self.master_seed, replicate))?;
        let statistic = log.records.iter().map(|r| r.lyap_w + r.err2).sum::<f64>() / log.records.len() as f64;
        Ok(ReplicateRun { rows: thin(&log.to_trajectory(), every), statistic })
    }

    fn bound(&self, horizon: usize) -> Result<Option<f64>, CliError> {
        let g = self.gamma(horizon);
        Ok(Some(spider_constant_bound(&self.consts, g, self.k_in, self.b_vr, self.delta1, horizon)))
    }
}

fn fmt_real(x: f64) -> String {
    format!("{x:e}")
}

fn write_lines(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Trajectory file of horizon `t` inside `dir`.
pub fn trajectory_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("trajectory_T{t}.csv"))
}

fn sweep(cfg: &ExperimentConfig, plan: &dyn Plan, out_dir: &Path) -> Result<Summary, CliError> {
    let a = &cfg.algorithm;
    let mut rows = Vec::with_capacity(a.horizons.len());
    for &t in &a.horizons {
        let every = match cfg.output.log_every {
            0 => t.div_ceil(AUTO_POINTS).max(1),
            e => e,
        };
        let results: Vec<Result<ReplicateRun, CliError>> =
            (0..a.seeds as u64).into_par_iter().map(|r| plan.run(t, r, every)).collect();
        let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let lines = runs.iter().enumerate().flat_map(|(r, run)| {
            run.rows.iter().map(move |x| {
                format!("{r},{},{},{},{},{}", x.k, fmt_real(x.gamma), fmt_real(x.w), fmt_real(x.v), fmt_real(x.normh2))
            })
        });
        write_lines(&trajectory_path(out_dir, t), TRAJECTORY_HEADER, lines)?;
        let stats: Vec<f64> = runs.iter().map(|r| r.statistic).collect();
        let (mean_w, se_w) = mean_se(&stats);
        let bound = plan.bound(t)?.unwrap_or(f64::INFINITY);
        rows.push(AggregateRow { horizon: t, mean_w, se_w, bound });
    }
    let fmt_row =
        |r: &AggregateRow| format!("{},{},{},{}", r.horizon, fmt_real(r.mean_w), fmt_real(r.se_w), fmt_real(r.bound));
    write_lines(&out_dir.join("aggregate.csv"), AGGREGATE_HEADER, rows.iter().map(fmt_row))?;
    write_lines(
        &out_dir.join("bound.csv"),
        BOUND_HEADER,
        rows.iter().map(|r| format!("{},{}", r.horizon, fmt_real(r.bound))),
    )?;
    let summary = summarise(cfg, rows)?;
    fs::write(out_dir.join("summary.txt"), format!("{}\n", summary.line))?;
    Ok(summary)
}

fn wants_slope(cfg: &ExperimentConfig) -> bool {
    cfg.checks.slope_min.is_some() || cfg.checks.slope_max.is_some()
}

fn summarise(cfg: &ExperimentConfig, rows: Vec<AggregateRow>) -> Result<Summary, CliError> {
    let c = &cfg.checks;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.horizon as f64, r.mean_w)).collect();
    let fit = fit_rate(&points).ok();
    let (slope, r2) = (fit.as_ref().map(|f| f.slope), fit.as_ref().map(|f| f.r2));
    let bound_ok = c.bound.then(|| rows.iter().all(|r| r.mean_w <= r.bound + c.se_factor * r.se_w));
    let slope_ok = wants_slope(cfg)
        .then(|| slope.is_some_and(|s| c.slope_min.is_none_or(|lo| s >= lo) && c.slope_max.is_none_or(|hi| s <= hi)));
    let last = rows.last().expect("at least one horizon");
    let verdict = |x: Option<bool>| match x {
        None => "skipped",
        Some(true) => "pass",
        Some(false) => "fail",
    };
    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
    let mut summary = Summary { rows: Vec::new(), slope, r2, bound_ok, slope_ok, line: String::new() };
    summary.line = format!(
        "kind={} seeds={} T={} final_mean_W={} final_se_W={} final_bound={} slope={} r2={} bound_check={} slope_check={} status={}",
        cfg.problem.kind(),
        cfg.algorithm.seeds,
        last.horizon,
        fmt_real(last.mean_w),
        fmt_real(last.se_w),
        fmt_real(last.bound),
        opt(slope),
        opt(r2),
        verdict(bound_ok),
        verdict(slope_ok),
        if summary.passed() { "pass" } else { "fail" },
    );
    summary.rows = rows;
    Ok(summary)
}

/// Checks that need the whole configuration before anything runs.
fn precheck(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let h = &cfg.algorithm.horizons;
    if wants_slope(cfg) && (h.len() < 4 || (h[h.len() - 1] as f64) < 100.0 * h[0] as f64) {
        return Err(config_error("a slope check needs at least 4 horizons spanning two decades"));
    }
    Ok(())
}

/// Runs the experiment, writes its reports into `out_dir` and returns the summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary, CliError> {
    precheck(cfg)?;
    fs::create_dir_all(out_dir)?;
    let a = &cfg.algorithm;
    match &cfg.problem {
        ProblemConfig::Sgd { instance, regime, batch, replacement } => {
            let p = quadratic_problem(instance)?;
            let w0 = start_point(&a.w0, instance.d)?;
            let spec = MinibatchSpec::new(*batch, *replacement);
            let rc = sakit::problems_sgd::sgd_constants(&p, *regime, spec)?;
            let (field, rc) = compressed(SgdOracle::new(&p, spec)?, cfg, rc, Some(p.l_grad()))?;
            let lyap = SgdLyapunov::new(&p, *regime)?;
            let dc = derived(&rc, lyap.v(&w0) - rc.v_star)?;
            let w0_lyap = (*regime == SgdRegime::StronglyConvexVW).then(|| lyap.w(&w0));
            let plan = SaPlan {
                field,
                lyap: Box::new(lyap),
                rc,
                dc,
                w0,
                master_seed: a.master_seed,
                schedule: a.schedule,
                stopping: a.stopping,
                w0_lyap,
                td: None,
            };
            sweep(cfg, &plan, out_dir)
        }
        ProblemConfig::Em(g) => {
            let model = Gmm::synthetic(g.n, &g.weights, &g.means, &mut replicate_rng(g.seed, 0))?;
            let consts = EmConstants::estimate(&model, g.probes, g.restarts, &mut replicate_rng(g.seed, 1))?;
            let k = g.means.len();
            let theta = GmmParams {
                weights: ParamVec::from_element(k, 1.0 / k as f64),
                means: ParamVec::from_column_slice(&g.init_means),
            };
            let w0 = model.stat_of(&theta);
            let (field, rc) = compressed(EmOracle::new(&model, g.sampler)?, cfg, consts.regime(g.sampler), None)?;
            let lyap = EmLyapunov::new(&model);
            let dc = derived(&rc, lyap.v(&w0) - rc.v_star)?;
            let plan = SaPlan {
                field,
                lyap: Box::new(lyap),
                rc,
                dc,
                w0,
                master_seed: a.master_seed,
                schedule: a.schedule,
                stopping: a.stopping,
                w0_lyap: None,
                td: None,
            };
            sweep(cfg, &plan, out_dir)
        }
        ProblemConfig::Td(t) => {
            let td = TdProblem::random(t.states, t.features, t.lambda, &mut replicate_rng(t.seed, 0))?;
            let w0 = start_point(&a.w0, t.features)?;
            let fast = matches!(a.schedule, ScheduleConfig::Fast { .. });
            let (lyap, rc) = if fast {
                (TdLyapunov::w_equals_v(&td), td.td_constants_vw()?)
            } else {
                (TdLyapunov::new(&td), td.td_constants()?)
            };
            let specific = a.compression == CompressionOp::Identity && a.placement == Placement::Field;
            let (field, rc) = compressed(TdOracle::new(&td), cfg, rc, None)?;
            let dc = derived(&rc, td.v_error(&w0))?;
            let w0_lyap = fast.then(|| lyap.w(&w0));
            let plan = SaPlan {
                field,
                lyap: Box::new(lyap),
                rc,
                dc,
                w0,
                master_seed: a.master_seed,
                schedule: a.schedule,
                stopping: a.stopping,
                w0_lyap,
                td: specific.then_some(&td),
            };
            if !specific && matches!(a.schedule, ScheduleConfig::Robust | ScheduleConfig::Fast { .. }) {
                return Err(config_error("the robust and fast TD schedules are available without compression only"));
            }
            sweep(cfg, &plan, out_dir)
        }
        ProblemConfig::Spider { instance, k_in, b_vr } => {
            let p = quadratic_problem(instance)?;
            let w0 = start_point(&a.w0, instance.d)?;
            let lyap = SgdLyapunov::new(&p, SgdRegime::Nonconvex)?;
            let f_star = p.f_star().ok_or_else(|| config_error("the spider runner needs mu > 0"))?;
            let plan = SpiderPlan {
                problem: &p,
                lyap,
                consts: SpiderConstants::for_gradient(&p),
                k_in: *k_in,
                b_vr: *b_vr,
                delta1: p.objective(&w0) - f_star,
                w0,
                master_seed: a.master_seed,
                schedule: a.schedule,
            };
            sweep(cfg, &plan, out_dir)
        }
    }
}
