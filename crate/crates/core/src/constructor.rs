//! Iterated augmentation: starting from a single vertex, each level appends
//! an oasis tree and a desert path to the current root, with the desert
//! length chosen by [`find_l`].

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimators::{find_l, replicate, EstimatorResult, FindLOptions, FindLOutcome, SamplingPlan, DEFAULT_MARGIN};
use crate::field::{derive_seed, LazyField};
use crate::graph::{build_tilde_graph, layout_for, AugmentationSpec, RootedGraph};
use crate::simulator::{simulate, Configuration, ProcessSpec, RunOptions};
use crate::stats::wilson_interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionMode {
    /// `lambda_prime` increases towards the target from below.
    PartA,
    /// `lambda_prime` decreases towards the target from above.
    PartB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelParams {
    pub d: u32,
    pub h: u32,
    pub epsilon: f64,
    pub horizon: f64,
    pub ell_max: usize,
    pub lambda_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Initial replica count for the search.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    /// Replicas for the per-level gate; 0 skips the gate.
    #[serde(default = "default_verify_n")]
    pub verify_n: usize,
    #[serde(default = "default_t_cond")]
    pub t_cond: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_margin")]
    pub margin: usize,
    #[serde(default)]
    pub strict: bool,
}

fn default_n() -> usize {
    2000
}
fn default_max_n() -> usize {
    16_000
}
fn default_verify_n() -> usize {
    4000
}
fn default_t_cond() -> f64 {
    1.0
}
fn default_confidence() -> f64 {
    0.95
}
fn default_margin() -> usize {
    DEFAULT_MARGIN
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            n: default_n(),
            max_n: default_max_n(),
            verify_n: default_verify_n(),
            t_cond: default_t_cond(),
            confidence: default_confidence(),
            margin: default_margin(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionPlan {
    pub mode: ConstructionMode,
    pub lambda_target: f64,
    #[serde(default)]
    pub levels: Vec<LevelParams>,
    #[serde(default)]
    pub budgets: Budgets,
}

impl ConstructionPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_target > 0.0 && self.lambda_target.is_finite()) {
            return Err(Error::param("lambda_target must be positive"));
        }
        for (i, level) in self.levels.iter().enumerate() {
            let ok = match self.mode {
                ConstructionMode::PartA => level.lambda_prime < self.lambda_target,
                ConstructionMode::PartB => level.lambda_prime > self.lambda_target,
            };
            if !ok || !(level.lambda_prime > 0.0) {
                return Err(Error::param(format!(
                    "level {i}: lambda_prime {} is on the wrong side of lambda_target {}",
                    level.lambda_prime, self.lambda_target
                )));
            }
            if !(level.horizon > 0.0 && level.horizon.is_finite()) {
                return Err(Error::param(format!("level {i}: horizon must be positive")));
            }
            self.level_spec(level).validate()?;
        }
        for (i, w) in self.levels.windows(2).enumerate() {
            let ok = match self.mode {
                ConstructionMode::PartA => w[1].lambda_prime > w[0].lambda_prime,
                ConstructionMode::PartB => w[1].lambda_prime < w[0].lambda_prime,
            };
            if !ok {
                return Err(Error::param(format!("levels {i} and {}: lambda_prime not strictly monotone", i + 1)));
            }
        }
        if self.budgets.n == 0 || self.budgets.max_n < self.budgets.n {
            return Err(Error::param("budgets need 0 < n <= max_n"));
        }
        Ok(())
    }

    /// Rate at which the level's oasis must pass the infection on.
    pub fn high_rate(&self, level: &LevelParams) -> f64 {
        match self.mode {
            ConstructionMode::PartA => self.lambda_target,
            ConstructionMode::PartB => level.lambda_prime,
        }
    }

    /// Rate at which the level's desert must block it.
    pub fn low_rate(&self, level: &LevelParams) -> f64 {
        match self.mode {
            ConstructionMode::PartA => level.lambda_prime,
            ConstructionMode::PartB => self.lambda_target,
        }
    }

    fn level_spec(&self, level: &LevelParams) -> AugmentationSpec {
        AugmentationSpec {
            d: level.d,
            h: level.h,
            lambda: self.high_rate(level),
            epsilon: level.epsilon,
            ell_max: level.ell_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub diameter: Option<usize>,
    pub max_degree: usize,
}

impl GraphStats {
    pub fn of(g: &RootedGraph) -> Self {
        GraphStats {
            vertex_count: g.vertex_count(),
            edge_count: g.edge_count(),
            diameter: g.diameter(),
            max_degree: g.max_degree(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    pub level: usize,
    pub params: LevelParams,
    pub lambda_high: f64,
    pub lambda_low: f64,
    pub l_hat: Option<usize>,
    pub search: FindLOutcome,
    pub stats: Option<GraphStats>,
    pub gate: Option<VerifyReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLog {
    pub mode: ConstructionMode,
    pub lambda_target: f64,
    pub seed: u64,
    pub levels: Vec<LevelLog>,
    /// Set when a level's search was inconclusive; the graph is then the
    /// last completed level.
    pub aborted: Option<String>,
}

/// Runs the plan. An inconclusive level stops the construction and is
/// reported in `log.aborted` together with every level completed before it.
pub fn construct(plan: &ConstructionPlan, seed: u64) -> Result<(RootedGraph, ConstructionLog)> {
    construct_with_workers(plan, seed, None)
}

pub fn construct_with_workers(
    plan: &ConstructionPlan,
    seed: u64,
    workers: Option<usize>,
) -> Result<(RootedGraph, ConstructionLog)> {
    plan.validate()?;
    let mut graph = RootedGraph::single_vertex();
    let mut log = ConstructionLog {
        mode: plan.mode,
        lambda_target: plan.lambda_target,
        seed,
        levels: Vec::new(),
        aborted: None,
    };
    for (i, level) in plan.levels.iter().enumerate() {
        let spec = plan.level_spec(level);
        let mut warnings = Vec::new();
        if spec.m() <= 1.0 {
            warnings.push(format!("m = {:.4} <= 1: the oasis tree is not expected to persist", spec.m()));
            log::warn!("level {i}: {}", warnings[0]);
        }
        let search_plan = SamplingPlan {
            n: None,
            target_ci_width: Some(1.0),
            max_n: plan.budgets.max_n,
            initial_n: plan.budgets.n,
            seed: derive_seed(seed, 2 * i as u64),
            confidence: plan.budgets.confidence,
            workers,
        };
        let options = FindLOptions {
            margin: plan.budgets.margin,
            strict: plan.budgets.strict,
        };
        let search = find_l(&graph, &spec, level.horizon, &search_plan, &options)?;
        let (lambda_high, lambda_low) = (plan.high_rate(level), plan.low_rate(level));
        let mut entry = LevelLog {
            level: i,
            params: level.clone(),
            lambda_high,
            lambda_low,
            l_hat: search.l_hat,
            search: search.clone(),
            stats: None,
            gate: None,
            warnings,
        };
        let desert = match search.l_hat {
            None => {
                let reason = search.inconclusive.clone().unwrap_or_else(|| "inconclusive".into());
                log.aborted = Some(format!("level {i}: {reason}"));
                log.levels.push(entry);
                return Ok((graph, log));
            }
            // The augmentation needs a path of at least one edge.
            Some(0) => {
                entry.warnings.push("L_hat = 0 raised to 1".into());
                1
            }
            Some(l) => l,
        };
        let (next, _) = build_tilde_graph(&graph, &spec, desert)?;
        entry.stats = Some(GraphStats::of(&next));
        if plan.budgets.verify_n > 0 {
            let params = VerifyParams {
                lambda: lambda_high,
                lambda_prime: lambda_low,
                d: level.d,
                h: level.h,
                desert_length: desert,
                horizon: level.horizon,
                t_cond: plan.budgets.t_cond,
                occupation_threshold: None,
                n: plan.budgets.verify_n,
                confidence: plan.budgets.confidence,
                workers,
            };
            entry.gate = Some(verify_level(&graph, &next, &params, derive_seed(seed, 2 * i as u64 + 1))?);
        }
        log.levels.push(entry);
        graph = next;
    }
    Ok((graph, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    /// Rate at which the new root should be reached.
    pub lambda: f64,
    /// Rate at which it should not.
    pub lambda_prime: f64,
    pub d: u32,
    pub h: u32,
    pub desert_length: usize,
    pub horizon: f64,
    #[serde(default = "default_t_cond")]
    pub t_cond: f64,
    /// Occupation of the new root counted as a pass; defaults to `h`.
    #[serde(default)]
    pub occupation_threshold: Option<f64>,
    pub n: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Occupation of the new root above the threshold at `lambda`, given that
    /// the base-confined process keeps the old root infected past `t_cond`.
    pub pass_given_ignition: Option<EstimatorResult>,
    /// New root ever infected at `lambda_prime`, started from the whole base.
    pub crossing_lower: EstimatorResult,
    /// Same event at `lambda`, on the same fields.
    pub crossing_target: EstimatorResult,
    /// `crossing_lower` lies strictly below `crossing_target`.
    pub separated: bool,
    pub accepted: usize,
}

/// Gate for one augmentation `g_n -> g_n1`. All three estimates share one
/// field per replica.
pub fn verify_level(g_n: &RootedGraph, g_n1: &RootedGraph, params: &VerifyParams, seed: u64) -> Result<VerifyReport> {
    let old_root = g_n.root().ok_or(Error::MissingRoot)?;
    let layout = layout_for(g_n.vertex_count(), old_root, params.d, params.h, params.desert_length + 1);
    if layout.path_start + layout.path_vertices != g_n1.vertex_count() || g_n1.root() != Some(layout.path_end()) {
        return Err(Error::param("g_n1 is not an augmentation of g_n with the given d, h and desert length"));
    }
    if params.n == 0 {
        return Err(Error::param("verify_level needs n >= 1"));
    }
    if !(params.lambda > 0.0 && params.lambda_prime > 0.0) {
        return Err(Error::param("rates must be positive"));
    }
    let new_root = layout.path_end();
    let threshold = params.occupation_threshold.unwrap_or(params.h as f64);
    let base = Configuration::all(g_n.vertex_count());
    let mut mask = vec![false; g_n1.vertex_count()];
    mask[..g_n.vertex_count()].iter_mut().for_each(|b| *b = true);
    let specs = [
        ProcessSpec::new(params.lambda, base.clone()).confined(mask),
        ProcessSpec::new(params.lambda, base.clone()),
        ProcessSpec::new(params.lambda_prime, base.clone()),
    ];
    let lambda_max = params.lambda.max(params.lambda_prime);
    let opts = RunOptions::default();
    let plan = SamplingPlan {
        workers: params.workers,
        confidence: params.confidence,
        ..SamplingPlan::fixed(params.n, seed)
    };
    let rows = replicate(&plan, 0..params.n, |s| {
        let field = LazyField::new(g_n1, lambda_max, params.horizon, s)?;
        let trs = simulate(&field, &specs, &opts, None)?;
        Ok((
            trs[0].occupation[old_root] > params.t_cond,
            trs[1].occupation[new_root] > threshold,
            trs[1].ever_hit(new_root),
            trs[2].ever_hit(new_root),
        ))
    })?;
    let meta = |what: &str, lambda: f64| {
        let mut m = serde_json::Map::new();
        m.insert("definition".into(), json!(what));
        m.insert("graph_hash".into(), json!(g_n1.content_hash()));
        m.insert("lambda".into(), json!(lambda));
        m.insert("horizon".into(), json!(params.horizon));
        m.insert("desert_length".into(), json!(params.desert_length));
        m
    };
    let proportion = |name: &str, k: usize, n: usize, lambda: f64| {
        let (lo, hi) = wilson_interval(k, n, params.confidence);
        let mut metadata = meta(name, lambda);
        metadata.insert("successes".into(), json!(k));
        EstimatorResult {
            estimator: name.to_string(),
            point: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            ci_low: lo,
            ci_high: hi,
            n,
            seed,
            metadata,
            flags: Vec::new(),
        }
    };
    let accepted = rows.iter().filter(|r| r.0).count();
    let passes = rows.iter().filter(|r| r.0 && r.1).count();
    let pass_given_ignition = (accepted > 0).then(|| {
        let mut r = proportion("pass_given_ignition", passes, accepted, params.lambda);
        r.metadata.insert("t_cond".into(), json!(params.t_cond));
        r.metadata.insert("occupation_threshold".into(), json!(threshold));
        r
    });
    let crossing_target = proportion("new_root_hit", rows.iter().filter(|r| r.2).count(), params.n, params.lambda);
    let crossing_lower = proportion("new_root_hit", rows.iter().filter(|r| r.3).count(), params.n, params.lambda_prime);
    Ok(VerifyReport {
        pass_given_ignition,
        separated: crossing_lower.separated_below(&crossing_target),
        crossing_lower,
        crossing_target,
        accepted,
    })
}
