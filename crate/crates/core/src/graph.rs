//! Finite rooted graphs and the builders for segments, truncated trees and
//! the two augmented graphs (`Ĝ` with a long tail, `G̃` with a desert of
//! fixed length).
//!
//! Builders append new vertices after the base graph's vertices, so a base
//! graph keeps its indices inside every augmentation. The tree is numbered
//! in breadth-first order and the path from its attachment point outward;
//! [`AugmentedLayout`] recovers those positions without re-deriving
//! geometry.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest vertex count a builder will produce unless told otherwise.
pub const DEFAULT_VERTEX_CAP: usize = 1 << 22;

/// Construction provenance of a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VertexTag {
    #[default]
    Generic,
    /// Distance from the root of the tree copy it belongs to.
    TreeLevel(u32),
    /// Distance from the start of the path it belongs to.
    LinePosition(u32),
    /// Root of a base graph that has been augmented.
    OldRoot,
    /// Far endpoint of a desert path; the root of `G̃`.
    NewRoot,
}

impl fmt::Display for VertexTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexTag::Generic => f.write_str("generic"),
            VertexTag::TreeLevel(i) => write!(f, "tree_level({i})"),
            VertexTag::LinePosition(j) => write!(f, "line_position({j})"),
            VertexTag::OldRoot => f.write_str("old_root"),
            VertexTag::NewRoot => f.write_str("new_root"),
        }
    }
}

impl FromStr for VertexTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidGraph(format!("unknown vertex tag {s:?}"));
        let inner = |prefix: &str| -> Option<u32> {
            s.strip_prefix(prefix)?.strip_suffix(')')?.parse().ok()
        };
        match s {
            "generic" => Ok(VertexTag::Generic),
            "old_root" => Ok(VertexTag::OldRoot),
            "new_root" => Ok(VertexTag::NewRoot),
            _ if s.starts_with("tree_level(") => {
                inner("tree_level(").map(VertexTag::TreeLevel).ok_or_else(bad)
            }
            _ if s.starts_with("line_position(") => inner("line_position(")
                .map(VertexTag::LinePosition)
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// A finite simple graph on vertices `0..vertex_count` with an optional root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedGraph {
    vertex_count: usize,
    /// Normalized `(min, max)` pairs, sorted lexicographically.
    edges: Vec<(usize, usize)>,
    root: Option<usize>,
    tags: Vec<VertexTag>,
    adjacency: Vec<Vec<usize>>,
}

impl RootedGraph {
    /// Validates and assembles a graph. Edges may be given in any order and
    /// orientation; self-loops, duplicates and out-of-range endpoints are
    /// rejected.
    pub fn new(
        vertex_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        root: Option<usize>,
        tags: Vec<VertexTag>,
    ) -> Result<Self> {
        if tags.len() != vertex_count {
            return Err(Error::InvalidGraph(format!(
                "{} tags for {} vertices",
                tags.len(),
                vertex_count
            )));
        }
        if let Some(r) = root {
            if r >= vertex_count {
                return Err(Error::InvalidGraph(format!("root {r} out of range")));
            }
        }
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u >= vertex_count || v >= vertex_count {
                return Err(Error::InvalidGraph(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at {u}")));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!("duplicate edge {:?}", w[0])));
        }
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(u, v) in &normalized {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(RootedGraph {
            vertex_count,
            edges: normalized,
            root,
            tags,
            adjacency,
        })
    }

    /// The one-vertex graph rooted at its only vertex.
    pub fn single_vertex() -> Self {
        RootedGraph::new(1, [], Some(0), vec![VertexTag::Generic]).expect("valid")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn tags(&self) -> &[VertexTag] {
        &self.tags
    }

    pub fn tag(&self, v: usize) -> VertexTag {
        self.tags[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Both orientations of every edge, ordered by `(from, to)`.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&v| (u, v)))
    }

    /// Same graph with a different root.
    pub fn with_root(mut self, root: usize) -> Result<Self> {
        if root >= self.vertex_count {
            return Err(Error::InvalidGraph(format!("root {root} out of range")));
        }
        self.root = Some(root);
        Ok(self)
    }

    /// Breadth-first distances from `source`; `None` marks unreachable vertices.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.vertex_count];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.vertex_count == 0 || self.bfs_distances(0).iter().all(Option::is_some)
    }

    pub fn is_tree(&self) -> bool {
        self.vertex_count > 0 && self.edges.len() + 1 == self.vertex_count && self.is_connected()
    }

    /// Graph diameter; `None` if disconnected. Double sweep on trees,
    /// all-sources BFS otherwise.
    pub fn diameter(&self) -> Option<usize> {
        if self.vertex_count == 0 {
            return Some(0);
        }
        if self.is_tree() {
            let first = self.bfs_distances(0);
            let far = (0..self.vertex_count).max_by_key(|&v| first[v]).unwrap();
            return self.bfs_distances(far).into_iter().flatten().max();
        }
        let mut best = 0;
        for s in 0..self.vertex_count {
            for d in self.bfs_distances(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    /// Vertices carrying `tag`.
    pub fn vertices_tagged(&self, tag: VertexTag) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertex_count).filter(move |&v| self.tags[v] == tag)
    }

    /// Canonical JSON form: edges sorted, tags keyed by vertex in numeric
    /// order, generic tags omitted, trailing newline.
    pub fn to_json(&self) -> String {
        let file = GraphFileOut {
            vertex_count: self.vertex_count,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            root: self.root,
            tags: TagsOut(&self.tags),
        };
        let mut s = serde_json::to_string(&file).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFileIn = serde_json::from_str(text)?;
        let mut tags = vec![VertexTag::Generic; file.vertex_count];
        for (key, value) in file.tags {
            let v: usize = key
                .parse()
                .map_err(|_| Error::InvalidGraph(format!("bad tag key {key:?}")))?;
            if v >= file.vertex_count {
                return Err(Error::InvalidGraph(format!("tag for vertex {v} out of range")));
            }
            tags[v] = value.parse()?;
        }
        RootedGraph::new(
            file.vertex_count,
            file.edges.into_iter().map(|[u, v]| (u, v)),
            file.root,
            tags,
        )
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Serialize)]
struct GraphFileOut<'a> {
    vertex_count: usize,
    edges: Vec<[usize; 2]>,
    root: Option<usize>,
    tags: TagsOut<'a>,
}

struct TagsOut<'a>(&'a [VertexTag]);

impl Serialize for TagsOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let tagged: Vec<_> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, t)| **t != VertexTag::Generic)
            .collect();
        let mut map = serializer.serialize_map(Some(tagged.len()))?;
        for (v, tag) in tagged {
            map.serialize_entry(&v.to_string(), &tag.to_string())?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFileIn {
    vertex_count: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    root: Option<usize>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

/// Shortest-path length between `u` and `v`; `None` when unreachable.
pub fn graph_distance(g: &RootedGraph, u: usize, v: usize) -> Option<usize> {
    g.bfs_distances(u)[v]
}

/// Parameters of one desert-oasis augmentation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Offspring number of the oasis tree.
    pub d: u32,
    /// Truncation height of the oasis tree.
    pub h: u32,
    /// Target infection rate.
    pub lambda: f64,
    /// Crossing tolerance; `L` is the first length whose crossing
    /// probability falls below `1 - epsilon`.
    pub epsilon: f64,
    /// Length of the truncated tail in `Ĝ`.
    pub ell_max: usize,
}

impl AugmentationSpec {
    /// Mean number of level-by-level "good" children: `d (1 - e^-λ) e^-2`.
    pub fn m(&self) -> f64 {
        f64::from(self.d) * (1.0 - (-self.lambda).exp()) * (-2.0f64).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::param(format!("d must be >= 2, got {}", self.d)));
        }
        if self.h < 1 {
            return Err(Error::param("h must be >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if self.ell_max < 1 {
            return Err(Error::param("ell_max must be >= 1"));
        }
        if self.m() <= 1.0 {
            log::warn!(
                "m = {:.4} <= 1 for d={}, lambda={}; the oasis may fail to ignite",
                self.m(),
                self.d,
                self.lambda
            );
        }
        Ok(())
    }
}

/// Path graph `0 - 1 - ... - ell`, rooted at 0.
pub fn build_segment(ell: usize) -> RootedGraph {
    let tags = (0..=ell).map(|j| VertexTag::LinePosition(j as u32)).collect();
    RootedGraph::new(ell + 1, (0..ell).map(|j| (j, j + 1)), Some(0), tags).expect("path is simple")
}

fn tree_vertex_count(d: u32, h: u32) -> u128 {
    let d = u128::from(d);
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=h {
        total = total.saturating_add(level);
        level = level.saturating_mul(d);
    }
    total
}

/// The `d`-ary tree truncated at height `h`, in breadth-first order with the
/// root at index 0.
pub fn build_truncated_tree(d: u32, h: u32) -> Result<RootedGraph> {
    build_truncated_tree_capped(d, h, DEFAULT_VERTEX_CAP)
}

pub fn build_truncated_tree_capped(d: u32, h: u32, cap: usize) -> Result<RootedGraph> {
    if d < 1 {
        return Err(Error::param("tree offspring number must be >= 1"));
    }
    let count = tree_vertex_count(d, h);
    if count > cap as u128 {
        return Err(Error::GraphTooLarge { requested: count, cap });
    }
    let (tags, edges) = tree_parts(d, h, 0);
    RootedGraph::new(count as usize, edges, Some(0), tags)
}

/// Tags and edges of a BFS-ordered tree whose root sits at `offset`.
fn tree_parts(d: u32, h: u32, offset: usize) -> (Vec<VertexTag>, Vec<(usize, usize)>) {
    let d = d as usize;
    let mut tags = vec![VertexTag::TreeLevel(0)];
    let mut edges = Vec::new();
    let mut prev = 0..1usize;
    for level in 1..=h {
        let start = tags.len();
        for parent in prev.clone() {
            for _ in 0..d {
                edges.push((offset + parent, offset + tags.len()));
                tags.push(VertexTag::TreeLevel(level));
            }
        }
        prev = start..tags.len();
    }
    (tags, edges)
}

/// Where the pieces of an augmented graph live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedLayout {
    pub base_vertices: usize,
    pub old_root: usize,
    pub d: u32,
    pub h: u32,
    pub tree_root: usize,
    pub tree_vertices: usize,
    pub path_start: usize,
    /// Number of path vertices (`ell_max + 1` in `Ĝ`, `L + 1` in `G̃`).
    pub path_vertices: usize,
}

impl AugmentedLayout {
    /// `v_j`, the path vertex at distance `j` from the tree root's neighbour.
    pub fn path_vertex(&self, j: usize) -> usize {
        assert!(j < self.path_vertices, "path position {j} out of range");
        self.path_start + j
    }

    pub fn path_end(&self) -> usize {
        self.path_start + self.path_vertices - 1
    }

    pub fn tree_range(&self) -> Range<usize> {
        self.tree_root..self.tree_root + self.tree_vertices
    }

    /// Tree vertices at distance `level` from the tree root.
    pub fn tree_level(&self, level: u32) -> Range<usize> {
        assert!(level <= self.h);
        let d = self.d as usize;
        let mut start = 0usize;
        let mut width = 1usize;
        for _ in 0..level {
            start += width;
            width *= d;
        }
        self.tree_root + start..self.tree_root + start + width
    }

    pub fn base_range(&self) -> Range<usize> {
        0..self.base_vertices
    }
}

fn augment(
    base: &RootedGraph,
    d: u32,
    h: u32,
    path_vertices: usize,
    new_root_at_end: bool,
) -> Result<(RootedGraph, AugmentedLayout)> {
    let o = base.root().ok_or(Error::MissingRoot)?;
    if base.degree(o) > 1 {
        return Err(Error::InvalidGraph(format!(
            "base root {o} has degree {}, expected at most 1",
            base.degree(o)
        )));
    }
    if d < 1 {
        return Err(Error::param("tree offspring number must be >= 1"));
    }
    let tree_count = tree_vertex_count(d, h);
    let total = base.vertex_count() as u128 + tree_count + path_vertices as u128;
    if total > DEFAULT_VERTEX_CAP as u128 {
        return Err(Error::GraphTooLarge {
            requested: total,
            cap: DEFAULT_VERTEX_CAP,
        });
    }
    let nb = base.vertex_count();
    let tree_count = tree_count as usize;
    let (tree_tags, tree_edges) = tree_parts(d, h, nb);
    let path_start = nb + tree_count;

    let mut tags = base.tags().to_vec();
    tags[o] = VertexTag::OldRoot;
    tags.extend(tree_tags);
    tags.extend((0..path_vertices).map(|j| VertexTag::LinePosition(j as u32)));
    let mut edges = base.edges().to_vec();
    edges.extend(tree_edges);
    edges.extend((0..path_vertices.saturating_sub(1)).map(|j| (path_start + j, path_start + j + 1)));
    edges.push((o, nb));
    edges.push((nb, path_start));

    let root = if new_root_at_end {
        let end = path_start + path_vertices - 1;
        tags[end] = VertexTag::NewRoot;
        end
    } else {
        o
    };
    let g = RootedGraph::new(nb + tree_count + path_vertices, edges, Some(root), tags)?;
    let layout = AugmentedLayout {
        base_vertices: nb,
        old_root: o,
        d,
        h,
        tree_root: nb,
        tree_vertices: tree_count,
        path_start,
        path_vertices,
    };
    Ok((g, layout))
}

/// `Ĝ`: base, oasis tree and a tail of `ell_max + 1` vertices, rooted at the
/// base root.
pub fn build_hat_graph(base: &RootedGraph, spec: &AugmentationSpec) -> Result<(RootedGraph, AugmentedLayout)> {
    if spec.ell_max < 1 {
        return Err(Error::param("ell_max must be >= 1"));
    }
    augment(base, spec.d, spec.h, spec.ell_max + 1, false)
}

/// `G̃`: base, oasis tree and a desert of `L + 1` vertices, rooted at the far
/// end of the desert.
pub fn build_tilde_graph(
    base: &RootedGraph,
    spec: &AugmentationSpec,
    desert_length: usize,
) -> Result<(RootedGraph, AugmentedLayout)> {
    if desert_length < 1 {
        return Err(Error::param("desert length L must be >= 1"));
    }
    augment(base, spec.d, spec.h, desert_length + 1, true)
}

/// Layout of an augmentation of a base with `base_vertices` vertices rooted
/// at `old_root`, without building the graph.
pub fn layout_for(base_vertices: usize, old_root: usize, d: u32, h: u32, path_vertices: usize) -> AugmentedLayout {
    let tree_vertices = tree_vertex_count(d, h) as usize;
    AugmentedLayout {
        base_vertices,
        old_root,
        d,
        h,
        tree_root: base_vertices,
        tree_vertices,
        path_start: base_vertices + tree_vertices,
        path_vertices,
    }
}

/// One representative of every isomorphism class of connected simple graphs
/// on `n` vertices, rooted at vertex 0. Brute force; intended for `n <= 5`.
pub fn connected_graphs(n: usize) -> Vec<RootedGraph> {
    assert!(n <= 6, "enumeration is exponential in n^2");
    if n == 0 {
        return Vec::new();
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .collect();
    let perms = permutations(n);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << pairs.len()) {
        let canon = perms
            .iter()
            .map(|p| {
                pairs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, &(u, v))| {
                        let (a, b) = (p[u].min(p[v]), p[u].max(p[v]));
                        1u64 << pairs.iter().position(|&e| e == (a, b)).unwrap()
                    })
                    .sum::<u64>()
            })
            .min()
            .unwrap();
        if canon != mask || !seen.insert(canon) {
            continue;
        }
        let edges = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &e)| e);
        let g = RootedGraph::new(n, edges, Some(0), vec![VertexTag::Generic; n]).unwrap();
        if g.is_connected() {
            out.push(g);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
