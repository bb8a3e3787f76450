//! The contact process driven by a field.
//!
//! One engine evolves any number of processes (each with its own rate,
//! initial set, optional confinement mask and optional clamped source) on a
//! single pass over the field. Only the streams of vertices infected in at
//! least one process are pulled from the [`EventSource`]; the rest of the
//! field cannot change any state and is never generated.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::field::{Event, EventSource, GraphicalField, CELL_LENGTH};

/// A set of infected vertices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(BTreeSet<usize>);

impl Configuration {
    pub fn empty() -> Self {
        Configuration(BTreeSet::new())
    }

    pub fn all(n: usize) -> Self {
        (0..n).collect()
    }

    pub fn singleton(v: usize) -> Self {
        std::iter::once(v).collect()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &Configuration) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn union(&self, other: &Configuration) -> Configuration {
        self.0.union(&other.0).copied().collect()
    }

    pub fn intersects(&self, other: &Configuration) -> bool {
        self.0.intersection(&other.0).next().is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn max_vertex(&self) -> Option<usize> {
        self.0.last().copied()
    }

    fn from_flags(flags: &[bool]) -> Self {
        flags.iter().enumerate().filter(|(_, &b)| b).map(|(v, _)| v).collect()
    }
}

impl FromIterator<usize> for Configuration {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Configuration(iter.into_iter().collect())
    }
}

/// Keeps `vertex` infected through `[0, until]` by ignoring its recovery
/// marks there. Starting the process from `vertex` with this clamp gives the
/// set reachable from `{vertex} x [0, until]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp {
    pub vertex: usize,
    pub until: f64,
}

/// One process to evolve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub lambda: f64,
    pub initial: Configuration,
    /// Vertices the process is confined to; arrows touching the complement
    /// are ignored.
    pub mask: Option<Vec<bool>>,
    pub clamp: Option<Clamp>,
}

impl ProcessSpec {
    pub fn new(lambda: f64, initial: Configuration) -> Self {
        ProcessSpec {
            lambda,
            initial,
            mask: None,
            clamp: None,
        }
    }

    pub fn confined(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn clamped(mut self, clamp: Clamp) -> Self {
        self.clamp = Some(clamp);
        self
    }
}

/// Counts infected members of a vertex set and records when the count first
/// reaches `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct WatchSet {
    pub members: Vec<bool>,
    pub threshold: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Times at which to record the infected set.
    pub snapshots: Vec<f64>,
    /// Keep every infection and recovery as `(time, vertex, infected)`.
    pub record_log: bool,
    /// Stop a process as soon as this vertex is infected.
    pub stop_on_hit: Option<usize>,
    pub watch: Option<WatchSet>,
    /// Stop a process once its watch threshold is reached.
    pub stop_on_watch: bool,
    /// Also accumulate occupation restricted to `[s, horizon]`.
    pub occupation_after: Option<f64>,
}

/// The outcome of one process.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub lambda: f64,
    pub initial: Configuration,
    pub horizon: f64,
    /// Time the infected set became empty; `None` if alive at the horizon
    /// (or when stopped).
    pub extinction_time: Option<f64>,
    /// Time a stop rule froze the process.
    pub stopped_at: Option<f64>,
    /// Total infected time per vertex up to the end of the run.
    pub occupation: Vec<f64>,
    pub late_occupation: Option<Vec<f64>>,
    pub hit_times: Vec<Option<f64>>,
    pub snapshots: Vec<(f64, Configuration)>,
    pub final_infected: Configuration,
    pub watch_hit: Option<f64>,
    pub log: Option<Vec<(f64, usize, bool)>>,
}

impl Trajectory {
    pub fn alive_at_horizon(&self) -> bool {
        self.extinction_time.is_none() && self.stopped_at.is_none()
    }

    /// Infected at time `t`? Exact only when `t` is before the end of the run.
    pub fn survives_past(&self, t: f64) -> bool {
        match self.extinction_time {
            Some(e) => e > t,
            None => true,
        }
    }

    pub fn ever_hit(&self, v: usize) -> bool {
        self.hit_times[v].is_some()
    }

    /// Time the run ended: extinction, stop, or horizon.
    pub fn end_time(&self) -> f64 {
        self.extinction_time.or(self.stopped_at).unwrap_or(self.horizon)
    }

    pub fn to_json(&self) -> Value {
        let mut occupation = Map::new();
        for (v, &o) in self.occupation.iter().enumerate() {
            if o > 0.0 {
                occupation.insert(v.to_string(), json!(o));
            }
        }
        let mut hits = Map::new();
        for (v, h) in self.hit_times.iter().enumerate() {
            if let Some(t) = h {
                hits.insert(v.to_string(), json!(t));
            }
        }
        json!({
            "lambda": self.lambda,
            "extinction_time": self.extinction_time,
            "occupation": occupation,
            "hit_times": hits,
        })
    }
}

/// The dual configuration `{x : (x, s) ~> target x {t}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    pub window: (f64, f64),
    pub lambda: f64,
    pub target: Configuration,
    pub dual_config_at_s: Configuration,
}

struct Process<'a> {
    spec: &'a ProcessSpec,
    infected: Vec<bool>,
    count: usize,
    since: Vec<f64>,
    occupation: Vec<f64>,
    late: Option<Vec<f64>>,
    hit: Vec<Option<f64>>,
    extinct_at: Option<f64>,
    stopped_at: Option<f64>,
    watch_count: usize,
    watch_hit: Option<f64>,
    snapshots: Vec<(f64, Configuration)>,
    log: Option<Vec<(f64, usize, bool)>>,
}

impl Process<'_> {
    fn running(&self) -> bool {
        self.extinct_at.is_none() && self.stopped_at.is_none()
    }

    fn allowed(&self, v: usize) -> bool {
        self.spec.mask.as_ref().is_none_or(|m| m[v])
    }

    fn close_interval(&mut self, v: usize, end: f64, late_from: Option<f64>) {
        let start = self.since[v];
        self.occupation[v] += end - start;
        if let (Some(late), Some(s)) = (self.late.as_mut(), late_from) {
            if end > s {
                late[v] += end - start.max(s);
            }
        }
    }
}

struct HeapEvent(Event);

impl PartialEq for HeapEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEvent {}
impl PartialOrd for HeapEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// Called after every processed event with the infected flags of each
/// process.
pub type Observer<'o> = dyn FnMut(f64, &[&[bool]]) + 'o;

fn validate(source: &dyn EventSource, specs: &[ProcessSpec], options: &RunOptions) -> Result<()> {
    let n = source.vertex_count();
    for spec in specs {
        if spec.lambda > source.lambda_max() {
            return Err(Error::RateAboveFieldMax {
                lambda: spec.lambda,
                lambda_max: source.lambda_max(),
            });
        }
        if !(spec.lambda >= 0.0) {
            return Err(Error::param(format!("rate must be >= 0, got {}", spec.lambda)));
        }
        if spec.initial.max_vertex().is_some_and(|v| v >= n) {
            return Err(Error::param("initial configuration has a vertex outside the graph"));
        }
        if let Some(mask) = &spec.mask {
            if mask.len() != n {
                return Err(Error::param("mask length differs from vertex count"));
            }
            if spec.initial.iter().any(|v| !mask[v]) {
                return Err(Error::param("initial configuration is not inside the mask"));
            }
        }
        if let Some(c) = spec.clamp {
            if !spec.initial.contains(c.vertex) {
                return Err(Error::param("clamped vertex must be initially infected"));
            }
        }
    }
    if let Some(w) = &options.watch {
        if w.members.len() != n {
            return Err(Error::param("watch set length differs from vertex count"));
        }
    }
    if options.stop_on_hit.is_some_and(|v| v >= n) {
        return Err(Error::param("stop vertex outside the graph"));
    }
    Ok(())
}

/// Evolves every process in `specs` on one pass over `source`.
pub fn simulate(
    source: &dyn EventSource,
    specs: &[ProcessSpec],
    options: &RunOptions,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<Vec<Trajectory>> {
    validate(source, specs, options)?;
    let n = source.vertex_count();
    let horizon = source.horizon();
    let late_from = options.occupation_after;

    let mut snapshot_times = options.snapshots.clone();
    snapshot_times.sort_by(f64::total_cmp);
    snapshot_times.retain(|&t| (0.0..=horizon).contains(&t));
    let mut next_snapshot = 0usize;

    let mut procs: Vec<Process> = specs
        .iter()
        .map(|spec| {
            let mut infected = vec![false; n];
            let mut hit = vec![None; n];
            for v in spec.initial.iter() {
                infected[v] = true;
                hit[v] = Some(0.0);
            }
            let watch_count = options
                .watch
                .as_ref()
                .map_or(0, |w| spec.initial.iter().filter(|&v| w.members[v]).count());
            let reached = options.watch.as_ref().is_some_and(|w| watch_count >= w.threshold);
            let count = spec.initial.len();
            Process {
                spec,
                infected,
                count,
                since: vec![0.0; n],
                occupation: vec![0.0; n],
                late: late_from.map(|_| vec![0.0; n]),
                hit,
                extinct_at: (count == 0).then_some(0.0),
                stopped_at: None,
                watch_count,
                watch_hit: reached.then_some(0.0),
                snapshots: Vec::new(),
                log: options.record_log.then(Vec::new),
            }
        })
        .collect();
    for p in &mut procs {
        let stop_now = options.stop_on_hit.is_some_and(|v| p.infected[v])
            || (options.stop_on_watch && p.watch_hit.is_some());
        if p.running() && stop_now {
            p.stopped_at = Some(0.0);
        }
    }

    let mut active = vec![0u32; n];
    for p in procs.iter().filter(|p| p.running()) {
        for v in p.spec.initial.iter() {
            active[v] += 1;
        }
    }

    let mut heap: BinaryHeap<Reverse<HeapEvent>> = BinaryHeap::new();
    let mut loaded: Vec<Option<u64>> = vec![None; n];
    let mut buf = Vec::new();
    let last_cell = (horizon / CELL_LENGTH).floor() as u64;
    let mut cell = 0u64;

    let load = |v: usize,
                cell: u64,
                after: Option<&Event>,
                heap: &mut BinaryHeap<Reverse<HeapEvent>>,
                loaded: &mut Vec<Option<u64>>,
                buf: &mut Vec<Event>| {
        if loaded[v] == Some(cell) {
            return;
        }
        loaded[v] = Some(cell);
        buf.clear();
        source.load_cell(v, cell, buf);
        for e in buf.drain(..) {
            if after.is_none_or(|a| e.key_cmp(a).is_gt()) {
                heap.push(Reverse(HeapEvent(e)));
            }
        }
    };

    let any_running = |procs: &[Process]| procs.iter().any(Process::running);

    if any_running(&procs) {
        for v in 0..n {
            if active[v] > 0 {
                load(v, cell, None, &mut heap, &mut loaded, &mut buf);
            }
        }
    }

    let mut newly_active = Vec::new();
    'cells: while any_running(&procs) {
        let cell_end = (cell + 1) as f64 * CELL_LENGTH;
        while heap.peek().is_some_and(|Reverse(HeapEvent(e))| e.time < cell_end) {
            let Reverse(HeapEvent(ev)) = heap.pop().unwrap();
            while next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] < ev.time {
                let t = snapshot_times[next_snapshot];
                for p in &mut procs {
                    let c = Configuration::from_flags(&p.infected);
                    p.snapshots.push((t, c));
                }
                next_snapshot += 1;
            }
            let r = ev.time;
            if ev.is_recovery() {
                let v = ev.from as usize;
                for p in procs.iter_mut().filter(|p| p.running() && p.infected[v]) {
                    if p.spec.clamp.is_some_and(|c| c.vertex == v && r <= c.until) {
                        continue;
                    }
                    p.close_interval(v, r, late_from);
                    p.infected[v] = false;
                    p.count -= 1;
                    active[v] -= 1;
                    if let Some(log) = p.log.as_mut() {
                        log.push((r, v, false));
                    }
                    if let Some(w) = &options.watch {
                        if w.members[v] {
                            p.watch_count -= 1;
                        }
                    }
                    if p.count == 0 {
                        p.extinct_at = Some(r);
                    }
                }
            } else {
                let (u, v) = (ev.from as usize, ev.to as usize);
                for p in procs.iter_mut() {
                    if !(p.running()
                        && ev.label <= p.spec.lambda
                        && p.infected[u]
                        && !p.infected[v]
                        && p.allowed(u)
                        && p.allowed(v))
                    {
                        continue;
                    }
                    p.infected[v] = true;
                    p.since[v] = r;
                    p.count += 1;
                    p.hit[v].get_or_insert(r);
                    if active[v] == 0 {
                        newly_active.push(v);
                    }
                    active[v] += 1;
                    if let Some(log) = p.log.as_mut() {
                        log.push((r, v, true));
                    }
                    if let Some(w) = &options.watch {
                        if w.members[v] {
                            p.watch_count += 1;
                            if p.watch_count >= w.threshold && p.watch_hit.is_none() {
                                p.watch_hit = Some(r);
                            }
                        }
                    }
                    let stop = options.stop_on_hit == Some(v)
                        || (options.stop_on_watch && p.watch_hit.is_some());
                    if stop {
                        stop_process(p, r, &mut active, late_from);
                    }
                }
                for v in newly_active.drain(..) {
                    load(v, cell, Some(&ev), &mut heap, &mut loaded, &mut buf);
                }
            }
            if let Some(obs) = observer.as_deref_mut() {
                let views: Vec<&[bool]> = procs.iter().map(|p| p.infected.as_slice()).collect();
                obs(r, &views);
            }
            if !any_running(&procs) {
                break 'cells;
            }
        }
        if cell >= last_cell {
            break;
        }
        cell += 1;
        for v in 0..n {
            if active[v] > 0 {
                load(v, cell, None, &mut heap, &mut loaded, &mut buf);
            }
        }
    }

    for p in &mut procs {
        if p.running() {
            for v in 0..n {
                if p.infected[v] {
                    p.close_interval(v, horizon, late_from);
                }
            }
        }
    }
    while next_snapshot < snapshot_times.len() {
        let t = snapshot_times[next_snapshot];
        for p in &mut procs {
            let c = Configuration::from_flags(&p.infected);
            p.snapshots.push((t, c));
        }
        next_snapshot += 1;
    }

    Ok(procs
        .into_iter()
        .map(|p| Trajectory {
            lambda: p.spec.lambda,
            initial: p.spec.initial.clone(),
            horizon,
            extinction_time: p.extinct_at,
            stopped_at: p.stopped_at,
            final_infected: Configuration::from_flags(&p.infected),
            occupation: p.occupation,
            late_occupation: p.late,
            hit_times: p.hit,
            snapshots: p.snapshots,
            watch_hit: p.watch_hit,
            log: p.log,
        })
        .collect())
}

fn stop_process(p: &mut Process, r: f64, active: &mut [u32], late_from: Option<f64>) {
    p.stopped_at = Some(r);
    for v in 0..p.infected.len() {
        if p.infected[v] {
            p.close_interval(v, r, late_from);
            active[v] -= 1;
        }
    }
}

/// Runs a single process on a field.
pub fn run(
    source: &dyn EventSource,
    lambda: f64,
    initial: &Configuration,
    options: &RunOptions,
) -> Result<Trajectory> {
    let spec = ProcessSpec::new(lambda, initial.clone());
    Ok(simulate(source, std::slice::from_ref(&spec), options, None)?.pop().unwrap())
}

/// Runs one process per `(lambdas[i], initials[i])` on one pass over the
/// field.
pub fn run_coupled(
    source: &dyn EventSource,
    lambdas: &[f64],
    initials: &[Configuration],
    options: &RunOptions,
) -> Result<Vec<Trajectory>> {
    if lambdas.len() != initials.len() {
        return Err(Error::param(format!(
            "{} rates for {} initial configurations",
            lambdas.len(),
            initials.len()
        )));
    }
    let specs: Vec<ProcessSpec> = lambdas
        .iter()
        .zip(initials)
        .map(|(&l, a)| ProcessSpec::new(l, a.clone()))
        .collect();
    simulate(source, &specs, options, None)
}

/// The process confined to the vertices selected by `mask`.
pub fn confined_occupation(
    source: &dyn EventSource,
    lambda: f64,
    initial: &Configuration,
    mask: &[bool],
    options: &RunOptions,
) -> Result<Trajectory> {
    let spec = ProcessSpec::new(lambda, initial.clone()).confined(mask.to_vec());
    Ok(simulate(source, std::slice::from_ref(&spec), options, None)?.pop().unwrap())
}

/// Evolves the time dual backwards from `target` at time `t` down to `s` on
/// the field's own events with arrows read in reverse.
pub fn run_dual(
    field: &GraphicalField,
    lambda: f64,
    target: &Configuration,
    s: f64,
    t: f64,
) -> Result<DualTrajectory> {
    run_dual_on(&field.timeline(), field, lambda, target, s, t)
}

/// [`run_dual`] with a precomputed timeline, for many windows on one field.
pub fn run_dual_on(
    timeline: &[Event],
    field: &GraphicalField,
    lambda: f64,
    target: &Configuration,
    s: f64,
    t: f64,
) -> Result<DualTrajectory> {
    if s > t {
        return Err(Error::param(format!("dual window has s = {s} > t = {t}")));
    }
    if s < 0.0 || t > field.horizon() {
        return Err(Error::param("dual window outside [0, horizon]"));
    }
    if lambda > field.lambda_max() {
        return Err(Error::RateAboveFieldMax {
            lambda,
            lambda_max: field.lambda_max(),
        });
    }
    let n = field.vertex_count();
    if target.max_vertex().is_some_and(|v| v >= n) {
        return Err(Error::param("target has a vertex outside the graph"));
    }
    let mut dual = vec![false; n];
    let mut count = 0usize;
    for v in target.iter() {
        dual[v] = true;
        count += 1;
    }
    let end = timeline.partition_point(|e| e.time <= t);
    for e in timeline[..end].iter().rev() {
        if e.time < s || count == 0 {
            break;
        }
        if e.is_recovery() {
            let v = e.from as usize;
            if dual[v] {
                dual[v] = false;
                count -= 1;
            }
        } else if e.label <= lambda {
            let (u, v) = (e.from as usize, e.to as usize);
            if dual[v] && !dual[u] {
                dual[u] = true;
                count += 1;
            }
        }
    }
    Ok(DualTrajectory {
        window: (s, t),
        lambda,
        target: target.clone(),
        dual_config_at_s: Configuration::from_flags(&dual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::LazyField;
    use crate::graph::{build_segment, build_truncated_tree, RootedGraph};

    #[test]
    fn empty_initial_is_absorbing() {
        let g = build_segment(3);
        let f = GraphicalField::sample(&g, 1.0, 10.0, 1).unwrap();
        let tr = run(&f, 1.0, &Configuration::empty(), &RunOptions::default()).unwrap();
        assert_eq!(tr.extinction_time, Some(0.0));
        assert!(tr.occupation.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn isolated_vertex_dies_at_first_mark() {
        let g = RootedGraph::single_vertex();
        for seed in 0..20 {
            let f = GraphicalField::sample(&g, 1.0, 50.0, seed).unwrap();
            let tr = run(&f, 1.0, &Configuration::singleton(0), &RunOptions::default()).unwrap();
            match f.recoveries(0).first() {
                Some(&t) => {
                    assert_eq!(tr.extinction_time, Some(t));
                    assert_eq!(tr.occupation[0], t);
                }
                None => assert!(tr.alive_at_horizon()),
            }
        }
    }

    #[test]
    fn rate_above_field_rejected() {
        let g = build_segment(2);
        let f = GraphicalField::sample(&g, 1.0, 10.0, 1).unwrap();
        assert!(matches!(
            run(&f, 1.5, &Configuration::singleton(0), &RunOptions::default()),
            Err(Error::RateAboveFieldMax { .. })
        ));
        assert!(run_coupled(&f, &[0.5], &[], &RunOptions::default()).is_err());
    }

    #[test]
    fn lazy_and_materialized_agree() {
        let g = build_truncated_tree(3, 2).unwrap();
        let opts = RunOptions {
            snapshots: vec![0.5, 3.0, 7.25],
            occupation_after: Some(2.0),
            ..Default::default()
        };
        for seed in 0..30 {
            let eager = GraphicalField::sample(&g, 2.0, 12.0, seed).unwrap();
            let lazy = LazyField::new(&g, 2.0, 12.0, seed).unwrap();
            let a = run(&eager, 1.6, &Configuration::singleton(4), &opts).unwrap();
            let b = run(&lazy, 1.6, &Configuration::singleton(4), &opts).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicate_rates_give_identical_trajectories() {
        let g = build_segment(6);
        let f = GraphicalField::sample(&g, 2.0, 20.0, 3).unwrap();
        let a = Configuration::singleton(3);
        let trs = run_coupled(&f, &[1.0, 1.0], &[a.clone(), a.clone()], &RunOptions::default()).unwrap();
        assert_eq!(trs[0], trs[1]);
        let single = run(&f, 1.0, &a, &RunOptions::default()).unwrap();
        assert_eq!(trs[0], single);
    }

    #[test]
    fn confinement_to_everything_is_a_plain_run() {
        let g = build_truncated_tree(2, 2).unwrap();
        let f = GraphicalField::sample(&g, 1.5, 15.0, 9).unwrap();
        let a = Configuration::singleton(0);
        let plain = run(&f, 1.5, &a, &RunOptions::default()).unwrap();
        let conf = confined_occupation(&f, 1.5, &a, &vec![true; 7], &RunOptions::default()).unwrap();
        assert_eq!(plain, conf);
        let mut mask = vec![false; 7];
        mask[1] = true;
        assert!(confined_occupation(&f, 1.5, &a, &mask, &RunOptions::default()).is_err());
    }

    #[test]
    fn confined_single_vertex_is_isolated() {
        let g = build_segment(2);
        let f = GraphicalField::sample(&g, 3.0, 30.0, 4).unwrap();
        let mut mask = vec![false; 3];
        mask[1] = true;
        let tr = confined_occupation(&f, 3.0, &Configuration::singleton(1), &mask, &RunOptions::default()).unwrap();
        assert_eq!(tr.extinction_time, f.recoveries(1).first().copied());
        assert!(!tr.ever_hit(0) && !tr.ever_hit(2));
    }

    #[test]
    fn stop_on_hit_freezes_process() {
        let g = build_segment(3);
        let opts = RunOptions {
            stop_on_hit: Some(3),
            ..Default::default()
        };
        for seed in 0..50 {
            let f = GraphicalField::sample(&g, 3.0, 40.0, seed).unwrap();
            let full = run(&f, 3.0, &Configuration::singleton(0), &RunOptions::default()).unwrap();
            let tr = run(&f, 3.0, &Configuration::singleton(0), &opts).unwrap();
            assert_eq!(tr.hit_times[3], full.hit_times[3]);
            if let Some(t) = full.hit_times[3] {
                assert_eq!(tr.stopped_at, Some(t));
            }
        }
    }

    #[test]
    fn clamp_over_empty_window_changes_nothing() {
        let g = build_segment(4);
        let f = GraphicalField::sample(&g, 1.0, 20.0, 12).unwrap();
        let spec = ProcessSpec::new(1.0, Configuration::singleton(0));
        let clamped = spec.clone().clamped(Clamp { vertex: 0, until: 0.0 });
        let trs = simulate(&f, &[spec, clamped], &RunOptions::default(), None).unwrap();
        assert_eq!(trs[0], trs[1]);
    }

    #[test]
    fn dual_zero_window_is_target() {
        let g = build_segment(3);
        let f = GraphicalField::sample(&g, 1.0, 10.0, 1).unwrap();
        let target: Configuration = [1, 3].into_iter().collect();
        let d = run_dual(&f, 1.0, &target, 4.0, 4.0).unwrap();
        assert_eq!(d.dual_config_at_s, target);
        assert!(run_dual(&f, 1.0, &target, 5.0, 4.0).is_err());
    }

    #[test]
    fn trajectory_json_shape() {
        let g = build_segment(1);
        let f = GraphicalField::sample(&g, 1.0, 5.0, 2).unwrap();
        let tr = run(&f, 1.0, &Configuration::singleton(0), &RunOptions::default()).unwrap();
        let v = tr.to_json();
        assert_eq!(v["lambda"], json!(1.0));
        assert!(v["occupation"].is_object());
        assert_eq!(v["hit_times"]["0"], json!(0.0));
    }
}
