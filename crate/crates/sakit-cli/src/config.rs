//! Experiment files.
//!
//! The format is line oriented: `[section]` headers, `key = value` lines, `#` comments and
//! lists written as comma-separated values. Every key is validated before anything runs and
//! unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use sakit::compression::{CompressionOp, Placement};
use sakit::problems_em::EmSampler;
use sakit::problems_sgd::SgdRegime;
use sakit::sampling::Replacement;

/// The first problem found in an experiment file.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// One-based line number; zero for problems that concern the file as a whole.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    pub output: OutputConfig,
    pub checks: CheckConfig,
}

/// A random finite sum of quadratics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticInstance {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub l: f64,
    pub spread: f64,
    pub seed: u64,
    /// Each component draws its own Hessian instead of sharing one.
    pub distinct_hessians: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemConfig {
    Sgd { instance: QuadraticInstance, regime: SgdRegime, batch: usize, replacement: Replacement },
    Em(GmmInstance),
    Td(TdInstance),
    Spider { instance: QuadraticInstance, k_in: usize, b_vr: usize },
}

/// A one-dimensional Gaussian mixture with synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmInstance {
    pub n: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub seed: u64,
    pub sampler: EmSampler,
    /// Component means of the starting point; the weights start uniform.
    pub init_means: Vec<f64>,
    /// Probe points and EM restarts used to estimate the analysis constants.
    pub probes: usize,
    pub restarts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdInstance {
    pub states: usize,
    pub features: usize,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleConfig {
    Constant {
        gamma: f64,
    },
    /// The horizon-tuned step of each horizon.
    Tuned,
    Polynomial {
        gamma_tilde: f64,
        t0: usize,
        beta: f64,
    },
    /// `γ̃/(k + 1 + T0)` with `γ̃ = factor · 6/(ρ − b1)` and the smallest admissible `T0`.
    Fast {
        factor: f64,
    },
    /// The robust constant step of TD(0), one per horizon.
    Robust,
}

/// Which scalar summarises a run of horizon `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stopping {
    /// `W(w_T)`.
    Last,
    /// `W` at the weighted average of `w_0, …, w_{T−1}`.
    Average,
    /// `E W(w_R)` for the random stopping index, computed exactly from the logged `W`.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmConfig {
    pub schedule: ScheduleConfig,
    pub horizons: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    pub stopping: Stopping,
    pub compression: CompressionOp,
    pub placement: Placement,
    /// Starting point: one value repeated in every coordinate, or the full vector.
    pub w0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<String>,
    /// Write every `log_every`-th record to the trajectory files; zero picks about 200 per run.
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    /// Require the mean curve to stay below the bound plus `se_factor` standard errors.
    pub bound: bool,
    pub se_factor: f64,
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Sgd { .. } => "sgd",
            ProblemConfig::Em(_) => "em",
            ProblemConfig::Td(_) => "td",
            ProblemConfig::Spider { .. } => "spider",
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

/// The key-value pairs of one file, consumed as they are interpreted.
struct Fields {
    entries: BTreeMap<(String, String), Entry>,
    sections: BTreeMap<String, usize>,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

const SECTIONS: [&str; 4] = ["problem", "algorithm", "output", "checks"];

impl Fields {
    fn read(text: &str) -> Result<Self, ParseError> {
        let mut entries = BTreeMap::new();
        let mut sections = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("malformed section header '{content}'")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(line, format!("unknown section '[{name}]'")));
                }
                if sections.insert(name.to_string(), line).is_some() {
                    return Err(err(line, format!("section '[{name}]' appears twice")));
                }
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected 'key = value', found '{content}'")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err(line, "missing key before '='"));
            }
            let section =
                current.clone().ok_or_else(|| err(line, format!("key '{key}' appears before any section")))?;
            let entry = Entry { value: value.trim().to_string(), line };
            if entries.insert((section.clone(), key.to_string()), entry).is_some() {
                return Err(err(line, format!("key '{section}.{key}' is set twice")));
            }
        }
        Ok(Self { entries, sections })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn parsed<T: FromStr>(&mut self, section: &str, key: &str, what: &str) -> Result<Option<(T, usize)>, ParseError> {
        let Some(e) = self.take(section, key) else { return Ok(None) };
        let v = e
            .value
            .parse::<T>()
            .map_err(|_| err(e.line, format!("{section}.{key}: expected {what}, found '{}'", e.value)))?;
        Ok(Some((v, e.line)))
    }

    fn usize_or(&mut self, section: &str, key: &str, default: usize, min: usize) -> Result<usize, ParseError> {
        match self.parsed::<usize>(section, key, "a non-negative integer")? {
            None => Ok(default),
            Some((v, line)) if v < min => Err(err(line, format!("{section}.{key} must be at least {min}, found {v}"))),
            Some((v, _)) => Ok(v),
        }
    }

    fn u64_or(&mut self, section: &str, key: &str, default: u64) -> Result<u64, ParseError> {
        Ok(self.parsed::<u64>(section, key, "a non-negative integer")?.map_or(default, |(v, _)| v))
    }

    fn real(&mut self, section: &str, key: &str, check: Real) -> Result<Option<f64>, ParseError> {
        let Some((v, line)) = self.parsed::<f64>(section, key, "a number")? else { return Ok(None) };
        let ok = match check {
            Real::Finite => v.is_finite(),
            Real::Positive => v.is_finite() && v > 0.0,
            Real::NonNegative => v.is_finite() && v >= 0.0,
            Real::Unit => v > 0.0 && v < 1.0,
        };
        if ok {
            Ok(Some(v))
        } else {
            Err(err(line, format!("{section}.{key} must be {}, found {v}", check.describe())))
        }
    }

    fn real_or(&mut self, section: &str, key: &str, check: Real, default: f64) -> Result<f64, ParseError> {
        Ok(self.real(section, key, check)?.unwrap_or(default))
    }

    fn required_real(&mut self, section: &str, key: &str, check: Real, line: usize) -> Result<f64, ParseError> {
        self.real(section, key, check)?.ok_or_else(|| err(line, format!("{section}.{key} is required here")))
    }

    fn list<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<(Vec<T>, usize)>, ParseError> {
        let Some(e) = self.take(section, key) else { return Ok(None) };
        if e.value.is_empty() {
            return Err(err(e.line, format!("{section}.{key}: empty list")));
        }
        let items = e
            .value
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<T>().map_err(|_| err(e.line, format!("{section}.{key}: expected {what}, found '{t}'")))
            })
            .collect::<Result<Vec<T>, _>>()?;
        Ok(Some((items, e.line)))
    }

    fn word(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.take(section, key).map(|e| (e.value, e.line))
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).copied().unwrap_or(0)
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some(((s, k), e)) => Err(err(e.line, format!("unknown key '{s}.{k}'"))),
        }
    }
}

#[derive(Clone, Copy)]
enum Real {
    Finite,
    Positive,
    NonNegative,
    Unit,
}

impl Real {
    fn describe(self) -> &'static str {
        match self {
            Real::Finite => "finite",
            Real::Positive => "positive and finite",
            Real::NonNegative => "non-negative and finite",
            Real::Unit => "strictly between 0 and 1",
        }
    }
}

fn choice<T: Copy>(value: &str, line: usize, key: &str, options: &[(&str, T)]) -> Result<T, ParseError> {
    options.iter().find(|(name, _)| *name == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        err(line, format!("{key}: expected one of {}, found '{value}'", names.join(", ")))
    })
}

const REGIMES: [(&str, SgdRegime); 4] = [
    ("nonconvex", SgdRegime::Nonconvex),
    ("convex", SgdRegime::Convex),
    ("strongly_convex", SgdRegime::StronglyConvex),
    ("strongly_convex_vw", SgdRegime::StronglyConvexVW),
];
const REPLACEMENTS: [(&str, Replacement); 2] = [("with", Replacement::With), ("without", Replacement::Without)];
const HESSIANS: [(&str, bool); 2] = [("shared", false), ("distinct", true)];
const STOPPINGS: [(&str, Stopping); 3] =
    [("last", Stopping::Last), ("average", Stopping::Average), ("random", Stopping::Random)];
const PLACEMENTS: [(&str, Placement); 3] =
    [("field", Placement::Field), ("perturbed", Placement::Perturbed), ("low_precision", Placement::LowPrecision)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, x)| *x == v).map(|(n, _)| *n).expect("every variant is named")
}

fn quadratic(f: &mut Fields) -> Result<QuadraticInstance, ParseError> {
    let line = f.section_line("problem");
    let q = QuadraticInstance {
        n: f.usize_or("problem", "n", 50, 1)?,
        d: f.usize_or("problem", "d", 10, 1)?,
        mu: f.real_or("problem", "mu", Real::NonNegative, 0.1)?,
        l: f.real_or("problem", "l", Real::Positive, 1.0)?,
        spread: f.real_or("problem", "spread", Real::NonNegative, 1.0)?,
        seed: f.u64_or("problem", "seed", 1)?,
        distinct_hessians: match f.word("problem", "hessians") {
            Some((v, l)) => choice(&v, l, "problem.hessians", &HESSIANS)?,
            None => false,
        },
    };
    if q.mu > q.l {
        return Err(err(line, format!("problem.mu = {} exceeds problem.l = {}", q.mu, q.l)));
    }
    Ok(q)
}

fn problem(f: &mut Fields) -> Result<ProblemConfig, ParseError> {
    let (kind, line) =
        f.word("problem", "kind").ok_or_else(|| err(f.section_line("problem"), "problem.kind is required"))?;
    Ok(match kind.as_str() {
        "sgd" => {
            let instance = quadratic(f)?;
            let regime = match f.word("problem", "regime") {
                Some((v, l)) => choice(&v, l, "problem.regime", &REGIMES)?,
                None => SgdRegime::Nonconvex,
            };
            let batch = f.usize_or("problem", "batch", 1, 1)?;
            let replacement = match f.word("problem", "replacement") {
                Some((v, l)) => choice(&v, l, "problem.replacement", &REPLACEMENTS)?,
                None => Replacement::With,
            };
            if replacement == Replacement::Without && batch > instance.n {
                return Err(err(
                    line,
                    format!("problem.batch = {batch} exceeds n = {} without replacement", instance.n),
                ));
            }
            ProblemConfig::Sgd { instance, regime, batch, replacement }
        }
        "spider" => {
            let instance = quadratic(f)?;
            let root = (instance.n as f64).sqrt().ceil() as usize;
            let k_in = f.usize_or("problem", "k_in", root, 1)?;
            let b_vr = f.usize_or("problem", "b_vr", root, 1)?;
            if b_vr > instance.n {
                return Err(err(line, format!("problem.b_vr = {b_vr} exceeds n = {}", instance.n)));
            }
            ProblemConfig::Spider { instance, k_in, b_vr }
        }
        "em" => {
            let n = f.usize_or("problem", "n", 200, 1)?;
            let (weights, wl) = f.list::<f64>("problem", "weights", "a number")?.unwrap_or((vec![0.5, 0.5], line));
            let (means, ml) = f.list::<f64>("problem", "means", "a number")?.unwrap_or((vec![-2.0, 2.0], line));
            if weights.len() != means.len() || weights.len() < 2 {
                return Err(err(ml, "problem.weights and problem.means need the same length, at least 2"));
            }
            if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(err(wl, "problem.weights must be positive and sum to 1"));
            }
            let k = means.len();
            let init_means = match f.list::<f64>("problem", "init_means", "a number")? {
                Some((v, l)) if v.len() != k => return Err(err(l, format!("problem.init_means needs {k} values"))),
                Some((v, _)) => v,
                None => (0..k).map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64).collect(),
            };
            let seed = f.u64_or("problem", "seed", 1)?;
            let (sampler_name, sl) = f.word("problem", "sampler").unwrap_or(("minibatch".into(), line));
            let size = f.usize_or("problem", "size", 10, 1)?;
            let sampler = match sampler_name.as_str() {
                "full" => EmSampler::Full,
                "minibatch" if size > n => return Err(err(sl, format!("problem.size = {size} exceeds n = {n}"))),
                "minibatch" => EmSampler::Minibatch { b: size },
                "saem" => EmSampler::SaemExact { m: size },
                "saem_is" => EmSampler::SaemIs { m: size },
                other => {
                    return Err(err(
                        sl,
                        format!("problem.sampler: expected one of full, minibatch, saem, saem_is, found '{other}'"),
                    ))
                }
            };
            let probes = f.usize_or("problem", "probes", 200, 1)?;
            let restarts = f.usize_or("problem", "restarts", 5, 1)?;
            ProblemConfig::Em(GmmInstance { n, weights, means, seed, sampler, init_means, probes, restarts })
        }
        "td" => ProblemConfig::Td(TdInstance {
            states: f.usize_or("problem", "states", 10, 2)?,
            features: f.usize_or("problem", "features", 3, 1)?,
            lambda: f.real("problem", "lambda", Real::Unit)?.unwrap_or(0.5),
            seed: f.u64_or("problem", "seed", 1)?,
        }),
        other => return Err(err(line, format!("problem.kind: expected one of sgd, em, td, spider, found '{other}'"))),
    })
}

fn schedule(f: &mut Fields, kind: &str) -> Result<ScheduleConfig, ParseError> {
    let section_line = f.section_line("algorithm");
    let (name, line) = f.word("algorithm", "schedule").unwrap_or(("constant".into(), section_line));
    let s = match name.as_str() {
        "constant" => ScheduleConfig::Constant { gamma: f.required_real("algorithm", "gamma", Real::Positive, line)? },
        "tuned" => ScheduleConfig::Tuned,
        "polynomial" => {
            let gamma_tilde = f.required_real("algorithm", "gamma_tilde", Real::Positive, line)?;
            let t0 = f.usize_or("algorithm", "t0", 0, 0)?;
            let beta = f.real_or("algorithm", "beta", Real::Positive, 1.0)?;
            if beta > 1.0 {
                return Err(err(line, format!("algorithm.beta must lie in (0, 1], found {beta}")));
            }
            ScheduleConfig::Polynomial { gamma_tilde, t0, beta }
        }
        "fast" => {
            let factor = f.real_or("algorithm", "factor", Real::Positive, 1.0)?;
            if factor < 1.0 {
                return Err(err(line, format!("algorithm.factor must be at least 1, found {factor}")));
            }
            ScheduleConfig::Fast { factor }
        }
        "robust" => ScheduleConfig::Robust,
        other => {
            return Err(err(
                line,
                format!(
                    "algorithm.schedule: expected one of constant, tuned, polynomial, fast, robust, found '{other}'"
                ),
            ))
        }
    };
    let allowed = match kind {
        "td" => true,
        "spider" => matches!(s, ScheduleConfig::Constant { .. } | ScheduleConfig::Tuned),
        _ => !matches!(s, ScheduleConfig::Robust),
    };
    if !allowed {
        return Err(err(line, format!("schedule '{name}' is not available for problem kind '{kind}'")));
    }
    Ok(s)
}

fn algorithm(f: &mut Fields, problem: &ProblemConfig) -> Result<AlgorithmConfig, ParseError> {
    let kind = problem.kind();
    let section_line = f.section_line("algorithm");
    let schedule = schedule(f, kind)?;
    let (horizons, hl) = f
        .list::<usize>("algorithm", "T", "a positive integer")?
        .ok_or_else(|| err(section_line, "algorithm.T is required"))?;
    if horizons.contains(&0) || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(err(hl, "algorithm.T must be positive and strictly increasing"));
    }
    if let ProblemConfig::Spider { k_in, .. } = problem {
        if let Some(t) = horizons.iter().find(|&&t| t % k_in != 0) {
            return Err(err(hl, format!("algorithm.T = {t} is not a multiple of k_in = {k_in}")));
        }
    }
    let seeds = match f.list::<usize>("algorithm", "seeds", "a positive integer")? {
        None => 8,
        Some((v, l)) if v.len() != 1 || v[0] == 0 => {
            return Err(err(l, "algorithm.seeds must be a single positive replicate count"))
        }
        Some((v, _)) => v[0],
    };
    let master_seed = f.u64_or("algorithm", "master_seed", 0)?;
    let default_stopping =
        if kind == "td" && schedule == ScheduleConfig::Robust { Stopping::Average } else { Stopping::Random };
    let stopping = match f.word("algorithm", "stopping") {
        Some((v, l)) => choice(&v, l, "algorithm.stopping", &STOPPINGS)?,
        None => default_stopping,
    };
    if kind == "spider" && stopping != Stopping::Random {
        return Err(err(section_line, "the spider runner reports the random-stopping average only"));
    }
    let compression = match f.word("algorithm", "compression") {
        Some((v, l)) => v.parse::<CompressionOp>().map_err(|e| err(l, format!("algorithm.compression: {e}")))?,
        None => CompressionOp::Identity,
    };
    let placement = match f.word("algorithm", "placement") {
        Some((v, l)) => choice(&v, l, "algorithm.placement", &PLACEMENTS)?,
        None => Placement::Field,
    };
    if kind == "spider" && compression != CompressionOp::Identity {
        return Err(err(section_line, "compression is not available for the spider runner"));
    }
    if placement == Placement::LowPrecision && !matches!(schedule, ScheduleConfig::Constant { .. }) {
        return Err(err(section_line, "the low-precision placement needs a constant schedule"));
    }
    let w0 = match f.list::<f64>("algorithm", "w0", "a number")? {
        Some((_, l)) if kind == "em" => return Err(err(l, "the EM start is set with problem.init_means")),
        Some((v, l)) if v.iter().any(|x| !x.is_finite()) => return Err(err(l, "algorithm.w0 must be finite")),
        Some((v, _)) => v,
        None => vec![1.0],
    };
    Ok(AlgorithmConfig { schedule, horizons, seeds, master_seed, stopping, compression, placement, w0 })
}

/// Parses and validates an experiment file, reporting the first problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ParseError> {
    let mut f = Fields::read(text)?;
    for s in ["problem", "algorithm"] {
        if !f.sections.contains_key(s) {
            return Err(err(0, format!("section '[{s}]' is required")));
        }
    }
    let problem = problem(&mut f)?;
    let algorithm = algorithm(&mut f, &problem)?;
    let output = OutputConfig {
        dir: f.word("output", "dir").map(|(v, _)| v),
        log_every: f.usize_or("output", "log_every", 0, 0)?,
    };
    let checks = CheckConfig {
        bound: match f.word("checks", "bound") {
            Some((v, l)) => choice(&v, l, "checks.bound", &[("true", true), ("false", false)])?,
            None => true,
        },
        se_factor: f.real_or("checks", "se_factor", Real::NonNegative, 3.0)?,
        slope_min: f.real("checks", "slope_min", Real::Finite)?,
        slope_max: f.real("checks", "slope_max", Real::Finite)?,
    };
    if let (Some(lo), Some(hi)) = (checks.slope_min, checks.slope_max) {
        if lo > hi {
            return Err(err(
                f.section_line("checks"),
                format!("checks.slope_min = {lo} exceeds checks.slope_max = {hi}"),
            ));
        }
    }
    f.finish()?;
    Ok(ExperimentConfig { problem, algorithm, output, checks })
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn write_quadratic(out: &mut String, q: &QuadraticInstance) {
    let _ =
        writeln!(out, "n = {}\nd = {}\nmu = {}\nl = {}\nspread = {}\nseed = {}", q.n, q.d, q.mu, q.l, q.spread, q.seed);
    let _ = writeln!(out, "hessians = {}", name_of(&HESSIANS, q.distinct_hessians));
}

impl ExperimentConfig {
    /// Writes the configuration back in the file format, with every default made explicit.
    pub fn serialize(&self) -> String {
        let mut out = String::from("[problem]\n");
        let _ = writeln!(out, "kind = {}", self.problem.kind());
        match &self.problem {
            ProblemConfig::Sgd { instance, regime, batch, replacement } => {
                write_quadratic(&mut out, instance);
                let _ = writeln!(out, "regime = {}", name_of(&REGIMES, *regime));
                let _ = writeln!(out, "batch = {batch}\nreplacement = {}", name_of(&REPLACEMENTS, *replacement));
            }
            ProblemConfig::Spider { instance, k_in, b_vr } => {
                write_quadratic(&mut out, instance);
                let _ = writeln!(out, "k_in = {k_in}\nb_vr = {b_vr}");
            }
            ProblemConfig::Em(g) => {
                let (sampler, size) = match g.sampler {
                    EmSampler::Full => ("full", None),
                    EmSampler::Minibatch { b } => ("minibatch", Some(b)),
                    EmSampler::SaemExact { m } => ("saem", Some(m)),
                    EmSampler::SaemIs { m } => ("saem_is", Some(m)),
                };
                let _ = writeln!(out, "n = {}\nweights = {}\nmeans = {}", g.n, join(&g.weights), join(&g.means));
                let _ = writeln!(out, "init_means = {}\nseed = {}\nsampler = {sampler}", join(&g.init_means), g.seed);
                if let Some(s) = size {
                    let _ = writeln!(out, "size = {s}");
                }
                let _ = writeln!(out, "probes = {}\nrestarts = {}", g.probes, g.restarts);
            }
            ProblemConfig::Td(t) => {
                let _ = writeln!(
                    out,
                    "states = {}\nfeatures = {}\nlambda = {}\nseed = {}",
                    t.states, t.features, t.lambda, t.seed
                );
            }
        }
        let a = &self.algorithm;
        out.push_str("\n[algorithm]\n");
        match a.schedule {
            ScheduleConfig::Constant { gamma } => {
                let _ = writeln!(out, "schedule = constant\ngamma = {gamma}");
            }
            ScheduleConfig::Tuned => out.push_str("schedule = tuned\n"),
            ScheduleConfig::Polynomial { gamma_tilde, t0, beta } => {
                let _ = writeln!(out, "schedule = polynomial\ngamma_tilde = {gamma_tilde}\nt0 = {t0}\nbeta = {beta}");
            }
            ScheduleConfig::Fast { factor } => {
                let _ = writeln!(out, "schedule = fast\nfactor = {factor}");
            }
            ScheduleConfig::Robust => out.push_str("schedule = robust\n"),
        }
        let _ = writeln!(out, "T = {}\nseeds = {}\nmaster_seed = {}", join(&a.horizons), a.seeds, a.master_seed);
        let _ = writeln!(out, "stopping = {}", name_of(&STOPPINGS, a.stopping));
        if !matches!(self.problem, ProblemConfig::Spider { .. }) {
            let _ = writeln!(out, "compression = {}\nplacement = {}", a.compression, name_of(&PLACEMENTS, a.placement));
        }
        if !matches!(self.problem, ProblemConfig::Em(_)) {
            let _ = writeln!(out, "w0 = {}", join(&a.w0));
        }
        out.push_str("\n[output]\n");
        if let Some(dir) = &self.output.dir {
            let _ = writeln!(out, "dir = {dir}");
        }
        let _ = writeln!(out, "log_every = {}", self.output.log_every);
        let c = &self.checks;
        let _ = writeln!(out, "\n[checks]\nbound = {}\nse_factor = {}", c.bound, c.se_factor);
        if let Some(v) = c.slope_min {
            let _ = writeln!(out, "slope_min = {v}");
        }
        if let Some(v) = c.slope_max {
            let _ = writeln!(out, "slope_max = {v}");
        }
        out
    }
}
