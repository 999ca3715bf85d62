//! Tree-structured Parzen Estimator for sequential black-box minimization.
//!
//! The optimizer keeps a trial history, splits it at a loss quantile into
//! good and bad sets, models each set with per-dimension Parzen densities,
//! and proposes the candidate maximizing the good/bad density ratio (which
//! is monotone in expected improvement).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::CvReport;

const STREAM_TPE: u64 = 0x7470;

/// Distribution of a single search dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Uniform over a real interval.
    UniformReal { lo: f64, hi: f64 },
    /// Uniform in log space over a positive real interval.
    LogUniformReal { lo: f64, hi: f64 },
    /// Uniform over an inclusive integer range.
    UniformInt { lo: i64, hi: i64 },
    /// Uniform over a finite set of named choices.
    Categorical { choices: Vec<String> },
}

/// One named, bounded search dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn uniform(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::UniformReal { lo, hi },
        }
    }

    pub fn log_uniform(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::LogUniformReal { lo, hi },
        }
    }

    pub fn uniform_int(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::UniformInt { lo, hi },
        }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical {
                choices: choices.iter().map(|c| (*c).into()).collect(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let name = &self.name;
        match &self.kind {
            ParamKind::UniformReal { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Argument(format!(
                        "parameter {name:?}: bounds [{lo}, {hi}] must be finite with lo < hi"
                    )));
                }
            }
            ParamKind::LogUniformReal { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo < hi) {
                    return Err(Error::Argument(format!(
                        "parameter {name:?}: log-uniform bounds [{lo}, {hi}] must be finite, positive, and increasing"
                    )));
                }
            }
            ParamKind::UniformInt { lo, hi } => {
                if lo >= hi {
                    return Err(Error::Argument(format!(
                        "parameter {name:?}: integer bounds [{lo}, {hi}] must satisfy lo < hi"
                    )));
                }
            }
            ParamKind::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(Error::Argument(format!(
                        "parameter {name:?}: choice list is empty"
                    )));
                }
                let distinct: BTreeSet<&String> = choices.iter().collect();
                if distinct.len() != choices.len() {
                    return Err(Error::Argument(format!(
                        "parameter {name:?}: choices contain duplicates"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered collection of uniquely named dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    specs: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(specs: Vec<ParamSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Argument("search space has no parameters".into()));
        }
        let mut seen = BTreeSet::new();
        for spec in &specs {
            spec.validate()?;
            if !seen.insert(spec.name.clone()) {
                return Err(Error::Argument(format!(
                    "duplicate parameter name {:?}",
                    spec.name
                )));
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// A realized parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Self::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Self::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Self::Text(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Real(v) => write!(f, "{v}"),
            Self::Text(v) => write!(f, "{v}"),
        }
    }
}

/// Parameter assignment for one trial, keyed by dimension name.
pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One objective evaluation: the proposed point and its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: Params,
    pub status: TrialStatus,
    /// Finite loss when the trial succeeded, absent otherwise.
    pub loss: Option<f64>,
    /// Cross-validation detail attached by objectives that produce one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<CvReport>,
    /// Failure diagnostic for failed trials.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

impl Trial {
    pub fn succeeded(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

/// Complete optimization record with the winning trial marked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
    /// Index into `trials` of the lowest-loss successful trial.
    pub best: usize,
}

impl TrialHistory {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    /// Running minimum of successful losses, aligned with `trials`.
    /// Positions before the first success hold `INFINITY`.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                if let (TrialStatus::Ok, Some(loss)) = (t.status, t.loss) {
                    best = best.min(loss);
                }
                best
            })
            .collect()
    }
}

/// Optimizer settings; the defaults are conventional TPE choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpeConfig {
    /// Quantile separating good from bad trials.
    pub gamma: f64,
    /// Successful trials drawn from the prior before the estimator engages.
    pub n_startup: usize,
    /// Candidates scored per suggestion.
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 20,
            n_candidates: 24,
        }
    }
}

impl TpeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Argument(format!(
                "gamma = {} outside (0, 1)",
                self.gamma
            )));
        }
        if self.n_startup == 0 {
            return Err(Error::Argument("n_startup must be at least 1".into()));
        }
        if self.n_candidates == 0 {
            return Err(Error::Argument("n_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7; plenty for density ratios.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Bounds of the modeling space: log space for log-uniform dimensions,
/// the half-open integer embedding [lo-0.5, hi+0.5] for integer ones.
fn model_bounds(kind: &ParamKind) -> (f64, f64) {
    match kind {
        ParamKind::UniformReal { lo, hi } => (*lo, *hi),
        ParamKind::LogUniformReal { lo, hi } => (lo.ln(), hi.ln()),
        ParamKind::UniformInt { lo, hi } => (*lo as f64 - 0.5, *hi as f64 + 0.5),
        ParamKind::Categorical { .. } => unreachable!("categorical has no numeric model space"),
    }
}

fn to_model(name: &str, kind: &ParamKind, value: &ParamValue) -> Result<f64> {
    let out_of_bounds = |v: &dyn std::fmt::Display| {
        Error::Argument(format!("observation {v} of {name:?} is out of bounds"))
    };
    match kind {
        ParamKind::UniformReal { lo, hi } => {
            let v = value
                .as_real()
                .ok_or_else(|| Error::Argument(format!("{name:?} expects a real value")))?;
            if !(v.is_finite() && v >= *lo && v <= *hi) {
                return Err(out_of_bounds(&v));
            }
            Ok(v)
        }
        ParamKind::LogUniformReal { lo, hi } => {
            let v = value
                .as_real()
                .ok_or_else(|| Error::Argument(format!("{name:?} expects a real value")))?;
            if !(v.is_finite() && v >= *lo && v <= *hi) {
                return Err(out_of_bounds(&v));
            }
            Ok(v.ln())
        }
        ParamKind::UniformInt { lo, hi } => {
            let v = value
                .as_int()
                .ok_or_else(|| Error::Argument(format!("{name:?} expects an integer value")))?;
            if v < *lo || v > *hi {
                return Err(out_of_bounds(&v));
            }
            Ok(v as f64)
        }
        ParamKind::Categorical { .. } => Err(Error::Argument(format!(
            "{name:?} is categorical and has no numeric embedding"
        ))),
    }
}

fn from_model(kind: &ParamKind, z: f64) -> ParamValue {
    match kind {
        ParamKind::UniformReal { lo, hi } => ParamValue::Real(z.clamp(*lo, *hi)),
        ParamKind::LogUniformReal { lo, hi } => ParamValue::Real(z.exp().clamp(*lo, *hi)),
        ParamKind::UniformInt { lo, hi } => {
            ParamValue::Int((z.round() as i64).clamp(*lo, *hi))
        }
        ParamKind::Categorical { .. } => unreachable!("categorical has no numeric model space"),
    }
}

/// Parzen mixture over a numeric dimension: one truncated-normal kernel per
/// observation plus a uniform prior component, all weighted equally.
#[derive(Debug, Clone)]
pub struct NumericDensity {
    name: String,
    kind: ParamKind,
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl NumericDensity {
    fn pdf_model(&self, z: f64) -> f64 {
        let span = self.hi - self.lo;
        let mut total = 1.0 / span;
        for (&c, &w) in self.centers.iter().zip(&self.widths) {
            let mass = normal_cdf((self.hi - c) / w) - normal_cdf((self.lo - c) / w);
            total += normal_pdf((z - c) / w) / (w * mass);
        }
        total / (self.centers.len() as f64 + 1.0)
    }

    fn sample_model(&self, rng: &mut ChaCha8Rng) -> f64 {
        let component = rng.gen_range(0..=self.centers.len());
        if component == 0 {
            return rng.gen_range(self.lo..self.hi);
        }
        let (c, w) = (self.centers[component - 1], self.widths[component - 1]);
        // Rejection keeps the draw exactly truncated-normal; in-bounds centers
        // with width <= span make acceptance high, so the cap is theoretical.
        for _ in 0..1000 {
            let z = c + w * rng.sample::<f64, _>(StandardNormal);
            if z >= self.lo && z <= self.hi {
                return z;
            }
        }
        rng.gen_range(self.lo..self.hi)
    }
}

/// Smoothed frequency distribution over categorical choices.
#[derive(Debug, Clone)]
pub struct CategoricalDensity {
    name: String,
    choices: Vec<String>,
    probs: Vec<f64>,
}

impl CategoricalDensity {
    fn sample_idx(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// One-dimensional Parzen density over a single parameter's domain.
#[derive(Debug, Clone)]
pub enum ParzenDensity {
    Numeric(NumericDensity),
    Categorical(CategoricalDensity),
}

impl ParzenDensity {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match self {
            Self::Numeric(d) => from_model(&d.kind, d.sample_model(rng)),
            Self::Categorical(d) => ParamValue::Text(d.choices[d.sample_idx(rng)].clone()),
        }
    }

    pub fn ln_pdf(&self, value: &ParamValue) -> Result<f64> {
        match self {
            Self::Numeric(d) => {
                let z = to_model(&d.name, &d.kind, value)?;
                Ok(d.pdf_model(z).ln())
            }
            Self::Categorical(d) => {
                let text = value.as_text().ok_or_else(|| {
                    Error::Argument(format!("{:?} expects a categorical value", d.name))
                })?;
                let idx = d.choices.iter().position(|c| c == text).ok_or_else(|| {
                    Error::Argument(format!(
                        "observation {text:?} is not a declared choice of {:?}",
                        d.name
                    ))
                })?;
                Ok(d.probs[idx].ln())
            }
        }
    }
}

/// Good/bad density pair for one dimension.
#[derive(Debug, Clone)]
pub struct ParzenPair {
    pub good: ParzenDensity,
    pub bad: ParzenDensity,
    pub gamma: f64,
}

impl ParzenPair {
    /// ln l(x) - ln g(x); monotone in the expected-improvement score.
    pub fn ln_ratio(&self, value: &ParamValue) -> Result<f64> {
        Ok(self.good.ln_pdf(value)? - self.bad.ln_pdf(value)?)
    }
}

/// Draw each parameter independently from its declared distribution.
pub fn sample_prior(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Params {
    let mut params = Params::new();
    for spec in space.specs() {
        let value = match &spec.kind {
            ParamKind::UniformReal { lo, hi } => ParamValue::Real(rng.gen_range(*lo..*hi)),
            ParamKind::LogUniformReal { lo, hi } => {
                ParamValue::Real(rng.gen_range(lo.ln()..hi.ln()).exp())
            }
            ParamKind::UniformInt { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamKind::Categorical { choices } => {
                ParamValue::Text(choices[rng.gen_range(0..choices.len())].clone())
            }
        };
        params.insert(spec.name.clone(), value);
    }
    params
}

/// Partition successful trials at the loss quantile: the `max(1, floor(gamma*n))`
/// lowest-loss trials are good, the remainder bad. Failed trials are excluded.
pub fn split_trials(history: &[Trial], gamma: f64) -> Result<(Vec<&Trial>, Vec<&Trial>)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Argument(format!("gamma = {gamma} outside (0, 1)")));
    }
    let mut ok = Vec::new();
    for trial in history.iter().filter(|t| t.succeeded()) {
        match trial.loss {
            Some(loss) if loss.is_finite() => ok.push((loss, trial)),
            _ => {
                return Err(Error::State(format!(
                    "trial {} is marked ok but has no finite loss",
                    trial.id
                )))
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::State(
            "no successful trials to split into good and bad sets".into(),
        ));
    }
    ok.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let n_good = ((gamma * ok.len() as f64).floor() as usize).max(1);
    let bad = ok.split_off(n_good);
    Ok((
        ok.into_iter().map(|(_, t)| t).collect(),
        bad.into_iter().map(|(_, t)| t).collect(),
    ))
}

/// Fit a one-dimensional Parzen density to the observed values of one parameter.
///
/// Numeric kinds become a mixture of truncated-normal kernels (one per
/// observation, width `max(span/(n+1), nearest-neighbor spacing)`) plus a
/// uniform prior component, all weighted `1/(n+1)`; with no observations the
/// density is exactly the uniform prior. Log-uniform dimensions are modeled
/// in log space and integer dimensions on `[lo-0.5, hi+0.5]`. Categorical
/// kinds get add-one smoothed frequencies.
pub fn build_parzen(values: &[ParamValue], spec: &ParamSpec) -> Result<ParzenDensity> {
    spec.validate()?;
    match &spec.kind {
        ParamKind::Categorical { choices } => {
            let mut counts = vec![0usize; choices.len()];
            for value in values {
                let text = value.as_text().ok_or_else(|| {
                    Error::Argument(format!("{:?} expects a categorical value", spec.name))
                })?;
                let idx = choices.iter().position(|c| c == text).ok_or_else(|| {
                    Error::Argument(format!(
                        "observation {text:?} is not a declared choice of {:?}",
                        spec.name
                    ))
                })?;
                counts[idx] += 1;
            }
            let denom = (values.len() + choices.len()) as f64;
            let probs = counts.iter().map(|&c| (c + 1) as f64 / denom).collect();
            Ok(ParzenDensity::Categorical(CategoricalDensity {
                name: spec.name.clone(),
                choices: choices.clone(),
                probs,
            }))
        }
        kind => {
            let (lo, hi) = model_bounds(kind);
            let mut centers = Vec::with_capacity(values.len());
            for value in values {
                centers.push(to_model(&spec.name, kind, value)?);
            }
            let base = (hi - lo) / (centers.len() as f64 + 1.0);
            let widths = centers
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let nearest = centers
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, &o)| (o - c).abs())
                        .fold(f64::INFINITY, f64::min);
                    if nearest.is_finite() {
                        base.max(nearest)
                    } else {
                        base
                    }
                })
                .collect();
            Ok(ParzenDensity::Numeric(NumericDensity {
                name: spec.name.clone(),
                kind: kind.clone(),
                lo,
                hi,
                centers,
                widths,
            }))
        }
    }
}

/// Propose the next point: prior draws until `n_startup` successes exist,
/// then the best of `n_candidates` draws from the good density, scored by
/// the summed log density ratio.
pub fn suggest(
    history: &[Trial],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Params> {
    config.validate()?;
    let n_ok = history.iter().filter(|t| t.succeeded()).count();
    if n_ok < config.n_startup {
        return Ok(sample_prior(space, rng));
    }
    let (good, bad) = split_trials(history, config.gamma)?;
    let mut pairs = Vec::with_capacity(space.len());
    for spec in space.specs() {
        let observed = |set: &[&Trial]| -> Result<Vec<ParamValue>> {
            set.iter()
                .map(|t| {
                    t.params.get(&spec.name).cloned().ok_or_else(|| {
                        Error::State(format!(
                            "trial {} is missing parameter {:?}",
                            t.id, spec.name
                        ))
                    })
                })
                .collect()
        };
        pairs.push(ParzenPair {
            good: build_parzen(&observed(&good)?, spec)?,
            bad: build_parzen(&observed(&bad)?, spec)?,
            gamma: config.gamma,
        });
    }
    let mut best: Option<(f64, Params)> = None;
    for _ in 0..config.n_candidates {
        let mut candidate = Params::new();
        let mut score = 0.0;
        for (spec, pair) in space.specs().iter().zip(&pairs) {
            let value = pair.good.sample(rng);
            score += pair.ln_ratio(&value)?;
            candidate.insert(spec.name.clone(), value);
        }
        if !score.is_finite() {
            score = f64::NEG_INFINITY;
        }
        match &best {
            Some((top, _)) if score <= *top => {}
            _ => best = Some((score, candidate)),
        }
    }
    match best {
        Some((_, candidate)) => Ok(candidate),
        None => Ok(sample_prior(space, rng)),
    }
}

/// Run the sequential optimization loop for `n_iter` trials.
///
/// Failed objective evaluations (errors or non-finite losses) are recorded
/// with `Failed` status and excluded from density building. Identical
/// `(space, objective, n_iter, seed)` reproduce the history exactly.
pub fn optimize<F>(
    mut objective: F,
    space: &SearchSpace,
    config: &TpeConfig,
    n_iter: usize,
    seed: u64,
) -> Result<TrialHistory>
where
    F: FnMut(&Params) -> Result<(f64, Option<CvReport>)>,
{
    if n_iter == 0 {
        return Err(Error::Argument("n_iter must be at least 1".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TPE, 0));
    let mut trials: Vec<Trial> = Vec::with_capacity(n_iter);
    for id in 0..n_iter {
        let params = suggest(&trials, space, config, &mut rng)?;
        let trial = match objective(&params) {
            Ok((loss, report)) if loss.is_finite() => Trial {
                id,
                params,
                status: TrialStatus::Ok,
                loss: Some(loss),
                report,
                message: None,
            },
            Ok((loss, _)) => Trial {
                id,
                params,
                status: TrialStatus::Failed,
                loss: None,
                report: None,
                message: Some(format!("objective returned a non-finite loss ({loss})")),
            },
            Err(err) => Trial {
                id,
                params,
                status: TrialStatus::Failed,
                loss: None,
                report: None,
                message: Some(err.to_string()),
            },
        };
        trials.push(trial);
    }
    let best = trials
        .iter()
        .filter(|t| t.succeeded())
        .min_by(|a, b| {
            let la = a.loss.unwrap_or(f64::INFINITY);
            let lb = b.loss.unwrap_or(f64::INFINITY);
            la.total_cmp(&lb).then(a.id.cmp(&b.id))
        })
        .map(|t| t.id);
    match best {
        Some(best) => Ok(TrialHistory { trials, best }),
        None => Err(Error::Optimization(format!("all {n_iter} trials failed"))),
    }
}
