//! Monte Carlo estimators.
//!
//! Replica `i` of a run with master seed `s` uses the field keyed by
//! `derive_seed(s, i)`, so a result depends only on the configuration and
//! the seed, never on how replicas are scheduled across workers. Sample
//! sizes grow by doubling, and every doubling decision is taken on the
//! aggregated results of the replicas run so far.
//!
//! All "ever infected" and "survives" events are observed up to a finite
//! horizon. That truncation can only lower hitting probabilities and raise
//! survival probabilities.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{derive_seed, LazyField};
use crate::graph::{build_hat_graph, build_segment, build_tilde_graph, AugmentationSpec, AugmentedLayout, RootedGraph};
use crate::simulator::{simulate, Clamp, Configuration, ProcessSpec, RunOptions, WatchSet};
use crate::stats::{linear_fit, t_interval, wilson_interval};

/// Default distance kept between a queried tail position and the end of the
/// truncated tail.
pub const DEFAULT_MARGIN: usize = 20;

/// How many replicas to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    /// Fixed replica count. When absent, replicas double from
    /// `initial_n` until the interval is narrower than `target_ci_width`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub target_ci_width: Option<f64>,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default = "default_initial_n")]
    pub initial_n: usize,
    pub seed: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_max_n() -> usize {
    100_000
}
fn default_initial_n() -> usize {
    1000
}
fn default_confidence() -> f64 {
    0.95
}

impl SamplingPlan {
    pub fn fixed(n: usize, seed: u64) -> Self {
        SamplingPlan {
            n: Some(n),
            target_ci_width: None,
            max_n: n,
            initial_n: n,
            seed,
            confidence: default_confidence(),
            workers: None,
        }
    }

    pub fn adaptive(target_ci_width: f64, max_n: usize, seed: u64) -> Self {
        SamplingPlan {
            n: None,
            target_ci_width: Some(target_ci_width),
            max_n,
            initial_n: default_initial_n().min(max_n),
            seed,
            confidence: default_confidence(),
            workers: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingPlan { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.n == Some(0) || self.max_n == 0 || self.initial_n == 0 {
            return Err(Error::param("sampling plan has zero replicas"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("confidence must lie in (0,1)"));
        }
        if self.n.is_none() && self.target_ci_width.is_none() {
            return Err(Error::param("sampling plan needs n or target_ci_width"));
        }
        if self.workers == Some(0) {
            return Err(Error::param("workers must be >= 1"));
        }
        Ok(())
    }

    fn first_batch(&self) -> usize {
        self.n.unwrap_or(self.initial_n.min(self.max_n))
    }

    fn budget(&self) -> usize {
        self.n.unwrap_or(self.max_n)
    }
}

/// A point estimate with a confidence interval and enough provenance to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub seed: u64,
    pub metadata: Map<String, Value>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl EstimatorResult {
    fn proportion(estimator: &str, successes: usize, n: usize, plan: &SamplingPlan, metadata: Map<String, Value>) -> Self {
        let (lo, hi) = wilson_interval(successes, n, plan.confidence);
        let mut metadata = metadata;
        metadata.insert("successes".into(), json!(successes));
        metadata.insert("confidence".into(), json!(plan.confidence));
        EstimatorResult {
            estimator: estimator.to_string(),
            point: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            ci_low: lo,
            ci_high: hi,
            n,
            seed: plan.seed,
            metadata,
            flags: Vec::new(),
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    /// Short stable identifier of the estimated instance.
    pub fn instance_id(&self) -> String {
        let text = serde_json::to_string(&self.metadata).expect("metadata serializes");
        hex::encode(&Sha256::digest(format!("{}|{}", self.estimator, text).as_bytes())[..6])
    }

    pub const CSV_HEADER: &'static str = "estimator,instance_id,point,ci_low,ci_high,n,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.estimator,
            self.instance_id(),
            self.point,
            self.ci_low,
            self.ci_high,
            self.n,
            self.seed
        )
    }

    /// Intervals do not overlap and `self` lies below `other`.
    pub fn separated_below(&self, other: &EstimatorResult) -> bool {
        self.ci_high < other.ci_low
    }
}

/// Runs replicas `range` of `plan`, in order, in parallel.
pub(crate) fn replicate<T, F>(plan: &SamplingPlan, range: std::ops::Range<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let seed = plan.seed;
    let work = || {
        range
            .clone()
            .into_par_iter()
            .map(|i| f(derive_seed(seed, i as u64)))
            .collect::<Result<Vec<T>>>()
    };
    match plan.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Sequential proportion estimate: doubles the sample until the Wilson
/// interval is narrow enough (or a fixed `n` is reached).
fn sample_proportion<F>(plan: &SamplingPlan, trial: F) -> Result<(usize, usize)>
where
    F: Fn(u64) -> Result<bool> + Sync + Send,
{
    plan.validate()?;
    let mut outcomes: Vec<bool> = Vec::new();
    let mut target = plan.first_batch();
    loop {
        let more = replicate(plan, outcomes.len()..target, &trial)?;
        outcomes.extend(more);
        let k = outcomes.iter().filter(|&&b| b).count();
        let n = outcomes.len();
        let (lo, hi) = wilson_interval(k, n, plan.confidence);
        let done = match plan.target_ci_width {
            _ if plan.n.is_some() => true,
            Some(w) => hi - lo <= w,
            None => true,
        };
        if done || n >= plan.budget() {
            return Ok((k, n));
        }
        target = (2 * n).min(plan.budget());
    }
}

fn base_metadata(estimator: &str, graph: &RootedGraph, lambda: f64, horizon: f64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("definition".into(), json!(estimator));
    m.insert("graph_hash".into(), json!(graph.content_hash()));
    m.insert("lambda".into(), json!(lambda));
    m.insert("horizon".into(), json!(horizon));
    m
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::param(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Fraction of replicas still infected at the horizon.
pub fn estimate_survival(
    g: &RootedGraph,
    lambda: f64,
    initial: &Configuration,
    horizon: f64,
    plan: &SamplingPlan,
) -> Result<EstimatorResult> {
    check_horizon(horizon)?;
    let spec = ProcessSpec::new(lambda, initial.clone());
    let opts = RunOptions::default();
    let (k, n) = sample_proportion(plan, |seed| {
        let field = LazyField::new(g, lambda, horizon, seed)?;
        let tr = simulate(&field, std::slice::from_ref(&spec), &opts, None)?;
        Ok(tr[0].alive_at_horizon())
    })?;
    let mut meta = base_metadata("survival", g, lambda, horizon);
    meta.insert("initial".into(), json!(initial));
    let mut r = EstimatorResult::proportion("survival", k, n, plan, meta);
    r.flags.push("finite_horizon_overestimates_survival".into());
    Ok(r)
}

/// The initial configuration `V ∪ T_h` of a crossing experiment.
fn base_and_tree(layout: &AugmentedLayout) -> Configuration {
    (0..layout.tree_root + layout.tree_vertices).collect()
}

/// Probability that `v_ell` on the tail of `Ĝ` is ever infected, started
/// from every base and tree vertex.
pub fn estimate_crossing_p(
    base: &RootedGraph,
    spec: &AugmentationSpec,
    ell: usize,
    horizon: f64,
    plan: &SamplingPlan,
) -> Result<EstimatorResult> {
    estimate_crossing_p_with_margin(base, spec, ell, horizon, plan, DEFAULT_MARGIN)
}

pub fn estimate_crossing_p_with_margin(
    base: &RootedGraph,
    spec: &AugmentationSpec,
    ell: usize,
    horizon: f64,
    plan: &SamplingPlan,
    margin: usize,
) -> Result<EstimatorResult> {
    spec.validate()?;
    check_horizon(horizon)?;
    if ell + margin > spec.ell_max {
        return Err(Error::param(format!(
            "ell = {ell} is beyond the safe tail length {} - {margin}",
            spec.ell_max
        )));
    }
    let (hat, layout) = build_hat_graph(base, spec)?;
    let target = layout.path_vertex(ell);
    let proc_spec = ProcessSpec::new(spec.lambda, base_and_tree(&layout));
    let opts = RunOptions {
        stop_on_hit: Some(target),
        ..Default::default()
    };
    let (k, n) = sample_proportion(plan, |seed| {
        let field = LazyField::new(&hat, spec.lambda, horizon, seed)?;
        Ok(simulate(&field, std::slice::from_ref(&proc_spec), &opts, None)?[0].ever_hit(target))
    })?;
    let mut meta = base_metadata("crossing_P", &hat, spec.lambda, horizon);
    meta.insert("ell".into(), json!(ell));
    meta.insert("spec".into(), json!(spec));
    Ok(EstimatorResult::proportion("crossing_P", k, n, plan, meta))
}

/// Per replica, the furthest tail position reached in `Ĝ` (capped at `cap`),
/// or `None` if even `v_0` was never infected.
fn crossing_reach(
    hat: &RootedGraph,
    layout: &AugmentedLayout,
    lambda: f64,
    horizon: f64,
    cap: usize,
    seed: u64,
) -> Result<Option<usize>> {
    let field = LazyField::new(hat, lambda, horizon, seed)?;
    let spec = ProcessSpec::new(lambda, base_and_tree(layout));
    let opts = RunOptions {
        stop_on_hit: Some(layout.path_vertex(cap)),
        ..Default::default()
    };
    let tr = &simulate(&field, std::slice::from_ref(&spec), &opts, None)?[0];
    Ok((0..=cap).rev().find(|&j| tr.ever_hit(layout.path_vertex(j))))
}

/// One evaluated cell of the search for `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingProbe {
    pub ell: usize,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub decision: ProbeDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDecision {
    /// Upper bound below `1 - epsilon`.
    Below,
    /// Lower bound at or above `1 - epsilon`.
    Above,
    /// Interval straddles `1 - epsilon` with the budget spent.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindLOptions {
    #[serde(default = "default_margin")]
    pub margin: usize,
    /// Treat an unresolved cell (budget spent, interval straddling the
    /// threshold) as inconclusive instead of as "not below".
    #[serde(default)]
    pub strict: bool,
}

fn default_margin() -> usize {
    DEFAULT_MARGIN
}

impl Default for FindLOptions {
    fn default() -> Self {
        FindLOptions {
            margin: DEFAULT_MARGIN,
            strict: false,
        }
    }
}

/// Result of the search for the desert length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindLOutcome {
    /// `None` when inconclusive.
    pub l_hat: Option<usize>,
    pub inconclusive: Option<String>,
    pub diagnostics: Vec<CrossingProbe>,
    pub warnings: Vec<String>,
    pub n: usize,
    pub seed: u64,
    pub threshold: f64,
    pub horizon: f64,
}

enum Search {
    Done(FindLOutcomeParts),
    NeedMore,
}

struct FindLOutcomeParts {
    l_hat: Option<usize>,
    inconclusive: Option<String>,
    warnings: Vec<String>,
}

/// Smallest `ell` whose crossing-probability upper bound falls below
/// `1 - epsilon`: exponential search, then bisection, on one shared pool of
/// replicas so every cell is estimated from the same fields. A straddling
/// cell doubles the pool (up to `plan.max_n`) and restarts the search.
pub fn find_l(
    base: &RootedGraph,
    spec: &AugmentationSpec,
    horizon: f64,
    plan: &SamplingPlan,
    options: &FindLOptions,
) -> Result<FindLOutcome> {
    spec.validate()?;
    check_horizon(horizon)?;
    plan.validate()?;
    if spec.ell_max <= options.margin {
        return Err(Error::param(format!(
            "ell_max = {} leaves no room for the margin {}",
            spec.ell_max, options.margin
        )));
    }
    let cap = spec.ell_max - options.margin;
    let threshold = 1.0 - spec.epsilon;
    let (hat, layout) = build_hat_graph(base, spec)?;

    let mut reach: Vec<Option<usize>> = Vec::new();
    let mut target = plan.first_batch();
    loop {
        let more = replicate(plan, reach.len()..target, |seed| {
            crossing_reach(&hat, &layout, spec.lambda, horizon, cap, seed)
        })?;
        reach.extend(more);
        let can_grow = reach.len() < plan.budget();
        let mut diagnostics = Vec::new();
        match search_l(&reach, cap, threshold, plan.confidence, can_grow, options.strict, &mut diagnostics) {
            Search::NeedMore => {
                target = (2 * reach.len()).min(plan.budget());
            }
            Search::Done(parts) => {
                return Ok(FindLOutcome {
                    l_hat: parts.l_hat,
                    inconclusive: parts.inconclusive,
                    diagnostics,
                    warnings: parts.warnings,
                    n: reach.len(),
                    seed: plan.seed,
                    threshold,
                    horizon,
                });
            }
        }
    }
}

fn search_l(
    reach: &[Option<usize>],
    cap: usize,
    threshold: f64,
    confidence: f64,
    can_grow: bool,
    strict: bool,
    diagnostics: &mut Vec<CrossingProbe>,
) -> Search {
    let n = reach.len();
    let mut warnings = Vec::new();
    // Ok(true) = below, Ok(false) = not below, Err(()) = need more replicas,
    // Err inconclusive handled by caller through `unresolved_at`.
    let mut unresolved_at: Option<usize> = None;
    let mut classify = |ell: usize, diagnostics: &mut Vec<CrossingProbe>| -> Option<bool> {
        let k = reach.iter().filter(|r| r.is_some_and(|j| j >= ell)).count();
        let (lo, hi) = wilson_interval(k, n, confidence);
        let decision = if hi < threshold {
            ProbeDecision::Below
        } else if lo >= threshold {
            ProbeDecision::Above
        } else {
            ProbeDecision::Unresolved
        };
        if decision == ProbeDecision::Unresolved && can_grow {
            return None;
        }
        diagnostics.push(CrossingProbe {
            ell,
            point: k as f64 / n as f64,
            ci_low: lo,
            ci_high: hi,
            n,
            decision,
        });
        if decision == ProbeDecision::Unresolved && unresolved_at.is_none() {
            unresolved_at = Some(ell);
        }
        Some(decision == ProbeDecision::Below)
    };

    macro_rules! probe {
        ($ell:expr) => {
            match classify($ell, diagnostics) {
                None => return Search::NeedMore,
                Some(b) => b,
            }
        };
    }

    let result: std::result::Result<usize, String> = 'search: {
        if probe!(0) {
            warnings.push("L_hat = 0: the crossing probability is already below threshold at v_0".into());
            break 'search Ok(0);
        }
        let mut lo = 0usize;
        let mut hi = 1usize;
        loop {
            let ell = hi.min(cap);
            if probe!(ell) {
                hi = ell;
                break;
            }
            if ell == cap {
                break 'search Err(format!("no ell <= {cap} has an upper bound below {threshold}"));
            }
            lo = ell;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if probe!(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    };

    let (l_hat, inconclusive) = match result {
        Ok(l) => {
            if let Some(ell) = unresolved_at {
                if strict {
                    (None, Some(format!("inconclusive at ell={ell}: interval straddles the threshold with the budget spent")))
                } else {
                    warnings.push(format!("cell ell={ell} unresolved at budget; counted as not below"));
                    (Some(l), None)
                }
            } else {
                (Some(l), None)
            }
        }
        Err(msg) => (None, Some(msg)),
    };
    Search::Done(FindLOutcomeParts {
        l_hat,
        inconclusive,
        warnings,
    })
}

/// Probability that an infection started at one end of `𝕃_ell` ever
/// reaches the other end.
pub fn estimate_p_line(ell: usize, lambda: f64, horizon: f64, plan: &SamplingPlan) -> Result<EstimatorResult> {
    check_horizon(horizon)?;
    let g = build_segment(ell);
    let spec = ProcessSpec::new(lambda, Configuration::singleton(0));
    let opts = RunOptions {
        stop_on_hit: Some(ell),
        ..Default::default()
    };
    let (k, n) = sample_proportion(plan, |seed| {
        let field = LazyField::new(&g, lambda, horizon, seed)?;
        Ok(simulate(&field, std::slice::from_ref(&spec), &opts, None)?[0].ever_hit(ell))
    })?;
    let mut meta = base_metadata("p_line", &g, lambda, horizon);
    meta.insert("ell".into(), json!(ell));
    Ok(EstimatorResult::proportion("p_line", k, n, plan, meta))
}

/// Log-ratio of line crossing probabilities at two rates, estimated on
/// shared fields so the two rates see the same marks and arrows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRatioReport {
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub ells: Vec<usize>,
    pub low: Vec<EstimatorResult>,
    pub high: Vec<EstimatorResult>,
    /// `log(p_low(ell) / p_high(ell))`.
    pub log_ratio: Vec<f64>,
    /// Consecutive differences of `log_ratio` with delta-method standard
    /// errors; `significant` when the interval lies below zero.
    pub steps: Vec<RatioStep>,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStep {
    pub from_ell: usize,
    pub to_ell: usize,
    pub difference: f64,
    pub std_error: f64,
    pub upper: f64,
    pub significant: bool,
}

impl LineRatioReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.steps.iter().all(|s| s.significant)
    }
}

/// Paired estimate of `p_low(ell)` and `p_high(ell)` over `ells`. The
/// sample doubles until the rarest cell has `min_count` successes or the
/// budget is spent.
pub fn estimate_line_ratio(
    ells: &[usize],
    lambda_low: f64,
    lambda_high: f64,
    horizon: f64,
    plan: &SamplingPlan,
    min_count: usize,
) -> Result<LineRatioReport> {
    check_horizon(horizon)?;
    plan.validate()?;
    if ells.is_empty() || ells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("ells must be nonempty and strictly increasing"));
    }
    if !(lambda_low < lambda_high) {
        return Err(Error::param("lambda_low must be below lambda_high"));
    }
    let top = *ells.last().unwrap();
    let g = build_segment(top);
    let specs = [
        ProcessSpec::new(lambda_low, Configuration::singleton(0)),
        ProcessSpec::new(lambda_high, Configuration::singleton(0)),
    ];
    let opts = RunOptions {
        stop_on_hit: Some(top),
        ..Default::default()
    };
    let trial = |seed: u64| -> Result<(usize, usize)> {
        let field = LazyField::new(&g, lambda_high, horizon, seed)?;
        let trs = simulate(&field, &specs, &opts, None)?;
        let reach = |i: usize| (0..=top).rev().find(|&j| trs[i].ever_hit(j)).unwrap_or(0);
        Ok((reach(0), reach(1)))
    };
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut target = plan.first_batch();
    loop {
        pairs.extend(replicate(plan, pairs.len()..target, trial)?);
        let rare = pairs.iter().filter(|p| p.0 >= top).count();
        if plan.n.is_some() || rare >= min_count || pairs.len() >= plan.budget() {
            break;
        }
        target = (2 * pairs.len()).min(plan.budget());
    }
    let n = pairs.len();
    let z = crate::stats::z_value(plan.confidence);
    let count = |ell: usize, which: usize| {
        pairs
            .iter()
            .filter(|p| if which == 0 { p.0 >= ell } else { p.1 >= ell })
            .count()
    };
    let make = |ell: usize, lambda: f64, which: usize| {
        let mut meta = base_metadata("p_line", &build_segment(ell), lambda, horizon);
        meta.insert("ell".into(), json!(ell));
        meta.insert("paired".into(), json!(true));
        EstimatorResult::proportion("p_line", count(ell, which), n, plan, meta)
    };
    let low: Vec<_> = ells.iter().map(|&l| make(l, lambda_low, 0)).collect();
    let high: Vec<_> = ells.iter().map(|&l| make(l, lambda_high, 1)).collect();
    let log_ratio: Vec<f64> = low.iter().zip(&high).map(|(a, b)| (a.point / b.point).ln()).collect();

    // Delta method on the four indicator means (low a, low b, high a, high b).
    let mut steps = Vec::new();
    for w in ells.windows(2) {
        let (a, b) = (w[0], w[1]);
        let rows: Vec<[f64; 4]> = pairs
            .iter()
            .map(|p| {
                let f = |c: bool| if c { 1.0 } else { 0.0 };
                [f(p.0 >= a), f(p.0 >= b), f(p.1 >= a), f(p.1 >= b)]
            })
            .collect();
        let nf = n as f64;
        let mean: Vec<f64> = (0..4).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
        let grad = [-1.0 / mean[0], 1.0 / mean[1], 1.0 / mean[2], -1.0 / mean[3]];
        let mut var = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let cov = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (nf - 1.0).max(1.0);
                var += grad[i] * grad[j] * cov;
            }
        }
        let se = (var.max(0.0) / nf).sqrt();
        let diff = (mean[1] / mean[3]).ln() - (mean[0] / mean[2]).ln();
        let upper = diff + z * se;
        steps.push(RatioStep {
            from_ell: a,
            to_ell: b,
            difference: diff,
            std_error: se,
            upper,
            significant: upper.is_finite() && upper < 0.0,
        });
    }
    Ok(LineRatioReport {
        lambda_low,
        lambda_high,
        ells: ells.to_vec(),
        low,
        high,
        log_ratio,
        steps,
        n,
        seed: plan.seed,
    })
}

/// Mean extinction time. Replicas alive at the horizon count as the horizon,
/// which makes the estimate a lower bound (flagged).
pub fn estimate_extinction_mean(
    g: &RootedGraph,
    lambda: f64,
    initial: &Configuration,
    horizon: f64,
    plan: &SamplingPlan,
) -> Result<EstimatorResult> {
    check_horizon(horizon)?;
    plan.validate()?;
    let spec = ProcessSpec::new(lambda, initial.clone());
    let opts = RunOptions::default();
    let trial = |seed: u64| -> Result<(f64, bool)> {
        let field = LazyField::new(g, lambda, horizon, seed)?;
        let tr = &simulate(&field, std::slice::from_ref(&spec), &opts, None)?[0];
        Ok((tr.end_time(), tr.alive_at_horizon()))
    };
    let mut samples: Vec<(f64, bool)> = Vec::new();
    let mut target = plan.first_batch();
    let (mean, lo, hi) = loop {
        samples.extend(replicate(plan, samples.len()..target, trial)?);
        let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let (m, lo, hi) = t_interval(&times, plan.confidence);
        let done = plan.n.is_some() || plan.target_ci_width.is_some_and(|w| hi - lo <= w);
        if done || samples.len() >= plan.budget() {
            break (m, lo, hi);
        }
        target = (2 * samples.len()).min(plan.budget());
    };
    let censored = samples.iter().filter(|s| s.1).count();
    let mut meta = base_metadata("extinction_mean", g, lambda, horizon);
    meta.insert("initial".into(), json!(initial));
    meta.insert("censored".into(), json!(censored));
    let mut flags = Vec::new();
    if censored > 0 {
        flags.push("lower_bound: replicas alive at horizon".to_string());
    }
    Ok(EstimatorResult {
        estimator: "extinction_mean".into(),
        point: mean,
        ci_low: lo.min(mean),
        ci_high: hi.max(mean),
        n: samples.len(),
        seed: plan.seed,
        metadata: meta,
        flags,
    })
}

/// Survival probability at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub time: f64,
    pub survivors: usize,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Least-squares fit of `log P(xi_t != empty)` against `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub grid: Vec<DecayPoint>,
    /// Grid times dropped because no replica survived to them.
    pub dropped: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

pub fn fit_decay(
    g: &RootedGraph,
    lambda: f64,
    initial: &Configuration,
    time_grid: &[f64],
    plan: &SamplingPlan,
) -> Result<DecayFit> {
    plan.validate()?;
    if time_grid.is_empty() || time_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::param("time grid must be nonempty with positive times"));
    }
    let horizon = time_grid.iter().copied().fold(0.0, f64::max);
    let spec = ProcessSpec::new(lambda, initial.clone());
    let opts = RunOptions::default();
    let n = plan.budget();
    let ends = replicate(plan, 0..n, |seed| {
        let field = LazyField::new(g, lambda, horizon, seed)?;
        let tr = &simulate(&field, std::slice::from_ref(&spec), &opts, None)?[0];
        Ok(tr.extinction_time)
    })?;
    let mut grid = Vec::new();
    let mut dropped = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &t in time_grid {
        let k = ends.iter().filter(|e| e.is_none_or(|x| x > t)).count();
        let (lo, hi) = wilson_interval(k, n, plan.confidence);
        let p = k as f64 / n as f64;
        grid.push(DecayPoint {
            time: t,
            survivors: k,
            point: p,
            ci_low: lo,
            ci_high: hi,
        });
        if k == 0 {
            dropped.push(t);
        } else {
            xs.push(t);
            ys.push(p.ln());
        }
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::Inconclusive("fewer than two grid times with survivors".into()))?;
    Ok(DecayFit {
        slope,
        intercept,
        r_squared,
        grid,
        dropped,
        n,
        seed: plan.seed,
    })
}

/// Which base the ignition threshold uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdBase {
    /// `(m/2)^floor(h/2)`, the set's defining formula.
    #[default]
    HalfM,
    /// `m^floor(h/2)`, the verbal description.
    FullM,
}

/// Membership rule for "many infected vertices at tree height `floor(h/2)`".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AhThreshold {
    pub d: u32,
    pub h: u32,
    pub lambda: f64,
    pub level: u32,
    pub count_required: usize,
}

impl AhThreshold {
    pub fn new(spec: &AugmentationSpec, base: ThresholdBase) -> Self {
        let level = spec.h / 2;
        let m = spec.m();
        let b = match base {
            ThresholdBase::HalfM => m / 2.0,
            ThresholdBase::FullM => m,
        };
        let count_required = (b.powi(level as i32).ceil() as usize).max(1);
        AhThreshold {
            d: spec.d,
            h: spec.h,
            lambda: spec.lambda,
            level,
            count_required,
        }
    }

    /// Monotone in the infected set.
    pub fn contains(&self, layout: &AugmentedLayout, infected: &Configuration) -> bool {
        let level = layout.tree_level(self.level);
        infected.iter().filter(|v| level.contains(v)).count() >= self.count_required
    }

    fn watch(&self, layout: &AugmentedLayout, n: usize) -> WatchSet {
        let mut members = vec![false; n];
        for v in layout.tree_level(self.level) {
            members[v] = true;
        }
        WatchSet {
            members,
            threshold: self.count_required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgnitionOptions {
    #[serde(default)]
    pub threshold_base: ThresholdBase,
    /// Fewer accepted replicas than this is "conditioning too rare".
    #[serde(default = "default_min_accepted")]
    pub min_accepted: usize,
}

fn default_min_accepted() -> usize {
    30
}

impl Default for IgnitionOptions {
    fn default() -> Self {
        IgnitionOptions {
            threshold_base: ThresholdBase::default(),
            min_accepted: default_min_accepted(),
        }
    }
}

/// `P(xi^A on G̃ enters the ignition set | the process confined to the base
/// keeps the base root infected for longer than t_cond)`, by rejection on
/// shared fields. `n` in the result counts accepted replicas.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ignition(
    base: &RootedGraph,
    spec: &AugmentationSpec,
    desert_length: usize,
    initial: &Configuration,
    t_cond: f64,
    horizon: f64,
    plan: &SamplingPlan,
    options: &IgnitionOptions,
) -> Result<EstimatorResult> {
    spec.validate()?;
    check_horizon(horizon)?;
    plan.validate()?;
    if !(t_cond > 0.0) {
        return Err(Error::param("t_cond must be positive"));
    }
    if initial.max_vertex().is_some_and(|v| v >= base.vertex_count()) {
        return Err(Error::param("initial set must lie inside the base graph"));
    }
    let (tilde, layout) = build_tilde_graph(base, spec, desert_length)?;
    let o = layout.old_root;
    let n_vertices = tilde.vertex_count();
    let threshold = AhThreshold::new(spec, options.threshold_base);
    let mut mask = vec![false; n_vertices];
    mask[..base.vertex_count()].iter_mut().for_each(|b| *b = true);
    let specs = [
        ProcessSpec::new(spec.lambda, initial.clone()).confined(mask),
        ProcessSpec::new(spec.lambda, initial.clone()),
    ];
    let opts = RunOptions {
        watch: Some(threshold.watch(&layout, n_vertices)),
        stop_on_watch: true,
        ..Default::default()
    };
    let trial = |seed: u64| -> Result<Option<bool>> {
        let field = LazyField::new(&tilde, spec.lambda, horizon, seed)?;
        let trs = simulate(&field, &specs, &opts, None)?;
        Ok((trs[0].occupation[o] > t_cond).then(|| trs[1].watch_hit.is_some()))
    };
    let mut outcomes: Vec<Option<bool>> = Vec::new();
    let mut target = plan.first_batch();
    loop {
        outcomes.extend(replicate(plan, outcomes.len()..target, trial)?);
        let accepted: Vec<bool> = outcomes.iter().flatten().copied().collect();
        let k = accepted.iter().filter(|&&b| b).count();
        let (lo, hi) = wilson_interval(k, accepted.len(), plan.confidence);
        let done = plan.n.is_some() || plan.target_ci_width.is_some_and(|w| !accepted.is_empty() && hi - lo <= w);
        if done || outcomes.len() >= plan.budget() {
            break;
        }
        target = (2 * outcomes.len()).min(plan.budget());
    }
    let accepted: Vec<bool> = outcomes.iter().flatten().copied().collect();
    if accepted.len() < options.min_accepted {
        return Err(Error::ConditioningTooRare {
            accepted: accepted.len(),
            proposed: outcomes.len(),
        });
    }
    let k = accepted.iter().filter(|&&b| b).count();
    let mut meta = base_metadata("ignition", &tilde, spec.lambda, horizon);
    meta.insert("t_cond".into(), json!(t_cond));
    meta.insert("initial".into(), json!(initial));
    meta.insert("desert_length".into(), json!(desert_length));
    meta.insert("threshold".into(), json!(threshold));
    meta.insert("proposed".into(), json!(outcomes.len()));
    Ok(EstimatorResult::proportion("ignition", k, accepted.len(), plan, meta))
}

/// Both sides of the window inequality on `𝕃_ell`:
/// `P({0} x [0,t] ~> ell) <= e (t+1) P((0,0) ~> ell)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayBound {
    pub lhs: EstimatorResult,
    pub rhs: EstimatorResult,
    pub factor: f64,
    /// `lhs.ci_low <= factor * rhs.ci_high`.
    pub holds: bool,
}

pub fn estimate_bound_exp_decay(
    ell: usize,
    lambda: f64,
    t: f64,
    horizon: f64,
    plan: &SamplingPlan,
) -> Result<ExpDecayBound> {
    check_horizon(horizon)?;
    plan.validate()?;
    if !(t >= 0.0) || t > horizon {
        return Err(Error::param("window end t must lie in [0, horizon]"));
    }
    let g = build_segment(ell);
    let specs = [
        ProcessSpec::new(lambda, Configuration::singleton(0)).clamped(Clamp { vertex: 0, until: t }),
        ProcessSpec::new(lambda, Configuration::singleton(0)),
    ];
    let opts = RunOptions {
        stop_on_hit: Some(ell),
        ..Default::default()
    };
    let n = plan.budget();
    let hits = replicate(plan, 0..n, |seed| {
        let field = LazyField::new(&g, lambda, horizon, seed)?;
        let trs = simulate(&field, &specs, &opts, None)?;
        Ok((trs[0].ever_hit(ell), trs[1].ever_hit(ell)))
    })?;
    let kl = hits.iter().filter(|h| h.0).count();
    let kr = hits.iter().filter(|h| h.1).count();
    let mut meta = base_metadata("window_crossing", &g, lambda, horizon);
    meta.insert("ell".into(), json!(ell));
    meta.insert("t".into(), json!(t));
    let lhs = EstimatorResult::proportion("window_crossing", kl, n, plan, meta.clone());
    meta.insert("definition".into(), json!("point_crossing"));
    let rhs = EstimatorResult::proportion("point_crossing", kr, n, plan, meta);
    let factor = std::f64::consts::E * (t + 1.0);
    Ok(ExpDecayBound {
        holds: lhs.ci_low <= factor * rhs.ci_high,
        lhs,
        rhs,
        factor,
    })
}
