#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use oasis_core::{EventSource, GraphicalField, RootedGraph};
use rand::Rng;

/// Random connected graph: a random tree plus a few chords.
pub fn random_connected(rng: &mut impl Rng, max_n: usize) -> RootedGraph {
    let n = rng.random_range(1..=max_n);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    let chords = if n > 2 { rng.random_range(0..n) } else { 0 };
    for _ in 0..chords {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        let e = (u.min(v), u.max(v));
        if u != v && !edges.contains(&e) && !edges.contains(&(e.1, e.0)) {
            edges.push(e);
        }
    }
    RootedGraph::new(n, edges, Some(0), vec![oasis_core::VertexTag::Generic; n]).unwrap()
}

#[derive(PartialEq)]
struct Item(f64, usize, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1)).then(o.2.cmp(&self.2))
    }
}

/// Earliest-arrival search over space-time infection paths.
///
/// Each vertex's timeline is cut at its recovery marks into healthy-free
/// pieces. `arrival[v][k]` is the earliest time an infection path started
/// from `initial x {0}` enters piece `k` of `v`; `v` is infected at time `t`
/// exactly when the piece containing `t` was entered at or before `t`.
pub struct PathOracle {
    cuts: Vec<Vec<f64>>,
    arrival: Vec<Vec<f64>>,
}

impl PathOracle {
    pub fn new(field: &GraphicalField, lambda: f64, initial: &[usize]) -> Self {
        let n = field.vertex_count();
        let cuts: Vec<Vec<f64>> = (0..n).map(|v| field.recoveries(v).to_vec()).collect();
        let piece = |v: usize, t: f64| cuts[v].partition_point(|&r| r <= t);
        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (e, &(u, v)) in field.directed_edges().iter().enumerate() {
            for a in field.arrows(e) {
                if a.label <= lambda {
                    out[u].push((v, a.time));
                }
            }
        }
        let mut arrival: Vec<Vec<f64>> = cuts.iter().map(|c| vec![f64::INFINITY; c.len() + 1]).collect();
        let mut heap = BinaryHeap::new();
        for &x in initial {
            arrival[x][0] = 0.0;
            heap.push(Item(0.0, x, 0));
        }
        while let Some(Item(e, v, k)) = heap.pop() {
            if e > arrival[v][k] {
                continue;
            }
            let end = cuts[v].get(k).copied().unwrap_or(f64::INFINITY);
            for &(w, s) in &out[v] {
                if s >= e && s < end {
                    let kw = piece(w, s);
                    if s < arrival[w][kw] {
                        arrival[w][kw] = s;
                        heap.push(Item(s, w, kw));
                    }
                }
            }
        }
        PathOracle { cuts, arrival }
    }

    pub fn infected_at(&self, v: usize, t: f64) -> bool {
        let k = self.cuts[v].partition_point(|&r| r <= t);
        self.arrival[v][k] <= t
    }

    pub fn ever_infected(&self, v: usize) -> bool {
        self.arrival[v].iter().any(|a| a.is_finite())
    }
}
