//! Exact analysis of the contact process on graphs small enough to
//! enumerate every configuration as a bitmask.
//!
//! Absorption quantities come from dense LU solves of the first-step
//! equations on the transient states; time-dependent probabilities come
//! from uniformization with a Poisson tail below `1e-10`. Hitting uses the
//! chain in which every configuration containing the target collapses into
//! one absorbing "hit" state.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::RootedGraph;
use crate::simulator::Configuration;

/// Truncation mass allowed in a uniformization sum.
pub const UNIFORMIZATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Largest graph handled with dense solves.
    pub cap: usize,
    /// Allow Gauss-Seidel iteration on graphs up to `sparse_cap` vertices.
    pub sparse: bool,
    pub sparse_cap: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cap: 12,
            sparse: false,
            sparse_cap: 20,
        }
    }
}

/// An exact value with a bound on its numerical error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleValue {
    pub quantity: String,
    pub value: f64,
    pub error_bound: f64,
}

/// The contact-process generator on `{0,1}^V`, states as bitmasks.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    n: usize,
    lambda: f64,
    neighbors: Vec<u32>,
    config: OracleConfig,
}

impl GeneratorModel {
    pub fn new(graph: &RootedGraph, lambda: f64) -> Result<Self> {
        Self::with_config(graph, lambda, OracleConfig::default())
    }

    pub fn with_config(graph: &RootedGraph, lambda: f64, config: OracleConfig) -> Result<Self> {
        let n = graph.vertex_count();
        let limit = if config.sparse { config.sparse_cap.max(config.cap) } else { config.cap };
        if n > limit || n > 24 {
            return Err(Error::OracleTooLarge {
                vertices: n,
                cap: limit,
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("rate must be finite and >= 0, got {lambda}")));
        }
        let neighbors = (0..n)
            .map(|v| graph.neighbors(v).iter().fold(0u32, |m, &w| m | 1 << w))
            .collect();
        Ok(GeneratorModel {
            n,
            lambda,
            neighbors,
            config,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state_count(&self) -> usize {
        1 << self.n
    }

    /// Outgoing `(next_state, rate)` pairs of `state`.
    pub fn transitions(&self, state: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        (0..self.n).filter_map(move |v| {
            let bit = 1u32 << v;
            if state & bit != 0 {
                Some((state & !bit, 1.0))
            } else {
                let k = (self.neighbors[v] & state).count_ones();
                (k > 0 && self.lambda > 0.0).then(|| (state | bit, self.lambda * f64::from(k)))
            }
        })
    }

    pub fn exit_rate(&self, state: u32) -> f64 {
        self.transitions(state).map(|(_, r)| r).sum()
    }

    /// Dense generator matrix; rows index the source state.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let s = self.state_count();
        let mut q = DMatrix::zeros(s, s);
        for state in 0..s as u32 {
            for (next, rate) in self.transitions(state) {
                q[(state as usize, next as usize)] += rate;
                q[(state as usize, state as usize)] -= rate;
            }
        }
        q
    }

    fn mask_of(&self, c: &Configuration) -> Result<u32> {
        c.iter().try_fold(0u32, |m, v| {
            if v >= self.n {
                Err(Error::param(format!("vertex {v} outside the model")))
            } else {
                Ok(m | 1 << v)
            }
        })
    }

    fn dense_allowed(&self) -> bool {
        self.n <= self.config.cap
    }
}

/// A finite chain over state indices with a few absorbing states.
struct Chain {
    rates: Vec<Vec<(usize, f64)>>,
}

impl Chain {
    fn full(model: &GeneratorModel) -> Chain {
        let rates = (0..model.state_count() as u32)
            .map(|s| model.transitions(s).map(|(t, r)| (t as usize, r)).collect())
            .collect();
        Chain { rates }
    }

    /// States without `target`, indexed by removing the target bit, plus a
    /// final absorbing "hit" state.
    fn hit_augmented(model: &GeneratorModel, target: usize) -> (Chain, usize) {
        let tbit = 1u32 << target;
        let compress = |s: u32| -> usize {
            let low = s & (tbit - 1);
            let high = (s >> 1) & !(tbit - 1);
            (low | high) as usize
        };
        let half = model.state_count() / 2;
        let hit = half;
        let mut rates = vec![Vec::new(); half + 1];
        for s in 0..model.state_count() as u32 {
            if s & tbit != 0 {
                continue;
            }
            let from = compress(s);
            rates[from] = model
                .transitions(s)
                .map(|(t, r)| (if t & tbit != 0 { hit } else { compress(t) }, r))
                .collect();
        }
        (Chain { rates }, hit)
    }

    fn len(&self) -> usize {
        self.rates.len()
    }

    fn exit(&self, s: usize) -> f64 {
        self.rates[s].iter().map(|&(_, r)| r).sum()
    }

    /// Solves `x(s) = sum_t r(s,t)/q(s) x(t) + cost(s)/q(s)` over `unknowns`,
    /// with `fixed` values for everything else.
    fn solve_first_step(
        &self,
        unknowns: &[usize],
        fixed: impl Fn(usize) -> f64,
        cost: impl Fn(usize) -> f64,
        dense: bool,
    ) -> Result<(Vec<f64>, f64)> {
        let mut index = vec![usize::MAX; self.len()];
        for (i, &s) in unknowns.iter().enumerate() {
            index[s] = i;
        }
        let m = unknowns.len();
        if dense {
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for (i, &s) in unknowns.iter().enumerate() {
                a[(i, i)] = self.exit(s);
                b[i] = cost(s);
                for &(t, r) in &self.rates[s] {
                    if index[t] != usize::MAX {
                        a[(i, index[t])] -= r;
                    } else {
                        b[i] += r * fixed(t);
                    }
                }
            }
            let x = a.clone().lu().solve(&b).ok_or(Error::SingularSystem)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularSystem);
            }
            let residual = (&a * &x - &b).amax();
            let scale = a.amax().max(1.0);
            Ok((x.iter().copied().collect(), residual / scale))
        } else {
            let mut x = vec![0.0; m];
            let mut change = f64::INFINITY;
            for _ in 0..1_000_000 {
                change = 0.0;
                for (i, &s) in unknowns.iter().enumerate() {
                    let q = self.exit(s);
                    let mut acc = cost(s);
                    for &(t, r) in &self.rates[s] {
                        acc += r * if index[t] != usize::MAX { x[index[t]] } else { fixed(t) };
                    }
                    let next = acc / q;
                    change = f64::max(change, (next - x[i]).abs() / next.abs().max(1.0));
                    x[i] = next;
                }
                if change < 1e-14 {
                    break;
                }
            }
            Ok((x, change))
        }
    }

    /// Distribution at time `t` from `start` by uniformization, returned
    /// with the truncated Poisson mass.
    fn transient(&self, start: usize, t: f64) -> (Vec<f64>, f64) {
        let mut p = vec![0.0; self.len()];
        p[start] = 1.0;
        let big = (0..self.len()).map(|s| self.exit(s)).fold(0.0, f64::max);
        if t == 0.0 || big == 0.0 {
            return (p, 0.0);
        }
        let mean = big * t;
        let mut result = vec![0.0; self.len()];
        let mut cumulative = 0.0;
        let mut ln_fact = 0.0;
        let mut next = vec![0.0; self.len()];
        let mut k: u64 = 0;
        loop {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            let w = (-mean + k as f64 * mean.ln() - ln_fact).exp();
            if w > 0.0 {
                for (r, &x) in result.iter_mut().zip(&p) {
                    *r += w * x;
                }
            }
            cumulative += w;
            if k as f64 > mean && 1.0 - cumulative < UNIFORMIZATION_TOLERANCE * 0.1 {
                break;
            }
            next.iter_mut().for_each(|x| *x = 0.0);
            for (s, &mass) in p.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let mut stay = mass;
                for &(to, r) in &self.rates[s] {
                    let flow = mass * r / big;
                    next[to] += flow;
                    stay -= flow;
                }
                next[s] += stay;
            }
            std::mem::swap(&mut p, &mut next);
            k += 1;
        }
        (result, (1.0 - cumulative).max(0.0) + 1e-14 * k as f64)
    }
}

/// Probability that `target` is ever infected, started from `initial`.
pub fn exact_hit_probability(
    model: &GeneratorModel,
    initial: &Configuration,
    target: usize,
) -> Result<OracleValue> {
    if target >= model.n {
        return Err(Error::param("target vertex outside the model"));
    }
    let quantity = format!("hit_probability(target={target})");
    let start = model.mask_of(initial)?;
    if start & 1 << target != 0 {
        return Ok(OracleValue {
            quantity,
            value: 1.0,
            error_bound: 0.0,
        });
    }
    if start == 0 {
        return Ok(OracleValue {
            quantity,
            value: 0.0,
            error_bound: 0.0,
        });
    }
    let (chain, hit) = Chain::hit_augmented(model, target);
    let unknowns: Vec<usize> = (1..hit).collect();
    let (x, err) = chain.solve_first_step(
        &unknowns,
        |s| if s == hit { 1.0 } else { 0.0 },
        |_| 0.0,
        model.dense_allowed(),
    )?;
    let tbit = 1u32 << target;
    let compressed = ((start & (tbit - 1)) | ((start >> 1) & !(tbit - 1))) as usize;
    Ok(OracleValue {
        quantity,
        value: x[compressed - 1],
        error_bound: err,
    })
}

/// Expected time to reach the empty configuration from `initial`.
pub fn exact_expected_extinction(model: &GeneratorModel, initial: &Configuration) -> Result<OracleValue> {
    let start = model.mask_of(initial)? as usize;
    let quantity = "expected_extinction_time".to_string();
    if start == 0 {
        return Ok(OracleValue {
            quantity,
            value: 0.0,
            error_bound: 0.0,
        });
    }
    let chain = Chain::full(model);
    let unknowns: Vec<usize> = (1..chain.len()).collect();
    let (x, err) = chain.solve_first_step(&unknowns, |_| 0.0, |_| 1.0, model.dense_allowed())?;
    let value = x[start - 1];
    Ok(OracleValue {
        quantity,
        value,
        error_bound: err * value.abs().max(1.0),
    })
}

/// `P(xi_t != empty)` from `initial`.
pub fn exact_survival_at(model: &GeneratorModel, initial: &Configuration, t: f64) -> Result<OracleValue> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param(format!("time must be finite and >= 0, got {t}")));
    }
    let start = model.mask_of(initial)? as usize;
    let chain = Chain::full(model);
    let (p, err) = chain.transient(start, t);
    Ok(OracleValue {
        quantity: format!("survival_at(t={t})"),
        value: (1.0 - p[0]).clamp(0.0, 1.0),
        error_bound: err,
    })
}

/// Probability that `target` is infected at some time in `[0, t]`.
pub fn exact_hit_by(model: &GeneratorModel, initial: &Configuration, target: usize, t: f64) -> Result<OracleValue> {
    if target >= model.n {
        return Err(Error::param("target vertex outside the model"));
    }
    let start = model.mask_of(initial)?;
    let quantity = format!("hit_by(target={target},t={t})");
    if start & 1 << target != 0 {
        return Ok(OracleValue {
            quantity,
            value: 1.0,
            error_bound: 0.0,
        });
    }
    let (chain, hit) = Chain::hit_augmented(model, target);
    let tbit = 1u32 << target;
    let compressed = ((start & (tbit - 1)) | ((start >> 1) & !(tbit - 1))) as usize;
    let (p, err) = chain.transient(compressed, t);
    Ok(OracleValue {
        quantity,
        value: p[hit].clamp(0.0, 1.0),
        error_bound: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_segment, connected_graphs};

    #[test]
    fn generator_rows_sum_to_zero() {
        for g in connected_graphs(4) {
            let m = GeneratorModel::new(&g, 1.3).unwrap();
            let q = m.generator_matrix();
            for r in 0..q.nrows() {
                let sum: f64 = q.row(r).iter().sum();
                assert!(sum.abs() < 1e-12);
                for c in 0..q.ncols() {
                    if r != c {
                        assert!(q[(r, c)] >= 0.0);
                    }
                }
            }
            assert!(q.row(0).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn trivial_values() {
        let edge = build_segment(1);
        let m = GeneratorModel::new(&edge, 1.0).unwrap();
        let both: Configuration = [0, 1].into_iter().collect();
        assert_eq!(exact_hit_probability(&m, &both, 1).unwrap().value, 1.0);
        assert_eq!(exact_expected_extinction(&m, &Configuration::empty()).unwrap().value, 0.0);
        assert_eq!(exact_survival_at(&m, &both, 0.0).unwrap().value, 1.0);

        let single = RootedGraph::single_vertex();
        let m = GeneratorModel::new(&single, 2.0).unwrap();
        let a = Configuration::singleton(0);
        assert!((exact_expected_extinction(&m, &a).unwrap().value - 1.0).abs() < 1e-12);
        for t in [0.3, 1.0, 4.0] {
            let s = exact_survival_at(&m, &a, t).unwrap();
            assert!((s.value - (-t as f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_edge_hit_is_lambda_over_one_plus_lambda() {
        let edge = build_segment(1);
        for lambda in [0.5, 1.0, 2.0, 3.7] {
            let m = GeneratorModel::new(&edge, lambda).unwrap();
            let p = exact_hit_probability(&m, &Configuration::singleton(0), 1).unwrap();
            assert!((p.value - lambda / (1.0 + lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_edge_extinction_by_hand() {
        // From {0,1}: m2 = (1 + 2 m1) / 2; from {0}: m1 = (1 + lambda m2) / (1 + lambda).
        // lambda = 1: m1 = (1 + m2)/2, m2 = 1/2 + m1  =>  m1 = 3/2, m2 = 2.
        let edge = build_segment(1);
        let m = GeneratorModel::new(&edge, 1.0).unwrap();
        let both: Configuration = [0, 1].into_iter().collect();
        let e = exact_expected_extinction(&m, &both).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12, "{}", e.value);
        let e1 = exact_expected_extinction(&m, &Configuration::singleton(0)).unwrap();
        assert!((e1.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sparse_iteration_matches_dense() {
        let seg = build_segment(4);
        let dense = GeneratorModel::new(&seg, 1.2).unwrap();
        let cfg = OracleConfig {
            cap: 3,
            sparse: true,
            sparse_cap: 20,
        };
        let sparse = GeneratorModel::with_config(&seg, 1.2, cfg).unwrap();
        let a = Configuration::singleton(0);
        let hd = exact_hit_probability(&dense, &a, 4).unwrap().value;
        let hs = exact_hit_probability(&sparse, &a, 4).unwrap().value;
        assert!((hd - hs).abs() < 1e-10);
        let ed = exact_expected_extinction(&dense, &a).unwrap().value;
        let es = exact_expected_extinction(&sparse, &a).unwrap().value;
        assert!((ed - es).abs() < 1e-9);
    }

    #[test]
    fn cap_enforced() {
        let seg = build_segment(12);
        assert!(matches!(GeneratorModel::new(&seg, 1.0), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn hit_probability_increases_with_lambda() {
        let seg = build_segment(3);
        let mut last = 0.0;
        for k in 1..=20 {
            let m = GeneratorModel::new(&seg, 0.25 * f64::from(k)).unwrap();
            let p = exact_hit_probability(&m, &Configuration::singleton(0), 3).unwrap().value;
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn hit_by_tends_to_hit_probability() {
        let seg = build_segment(2);
        let m = GeneratorModel::new(&seg, 1.0).unwrap();
        let a = Configuration::singleton(0);
        let total = exact_hit_probability(&m, &a, 2).unwrap().value;
        let by = exact_hit_by(&m, &a, 2, 80.0).unwrap().value;
        assert!((total - by).abs() < 1e-9);
        assert!(exact_hit_by(&m, &a, 2, 1.0).unwrap().value < total);
    }
}
