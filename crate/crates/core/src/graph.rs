//! Undirected graphs with dense node ids, degree capping and node removal.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

pub type NodeId = usize;

/// Undirected edge stored with `u < v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    u: NodeId,
    v: NodeId,
}

impl Edge {
    /// Canonicalizes the pair. Returns `None` for a self-loop.
    pub fn new(a: NodeId, b: NodeId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Edge { u: a, v: b }),
            std::cmp::Ordering::Greater => Some(Edge { u: b, v: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn u(&self) -> NodeId {
        self.u
    }

    pub fn v(&self) -> NodeId {
        self.v
    }

    pub fn contains(&self, x: NodeId) -> bool {
        self.u == x || self.v == x
    }

    pub fn endpoints(&self) -> [NodeId; 2] {
        [self.u, self.v]
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.u, self.v)
    }
}

/// Row-major `rows x dim` matrix of node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::arg(format!(
                "feature buffer has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite feature at row {}, column {}",
                bad / dim.max(1),
                bad % dim.max(1)
            )));
        }
        Ok(Features { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Features {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        (i < self.rows).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Loads a CSV matrix. A first line that does not parse as numbers is taken as a header.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut data = Vec::new();
        let mut dim = None;
        let mut rows = 0;
        let mut first = true;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if first => {
                    first = false;
                    continue;
                }
                Err(e) => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: idx + 1,
                        message: format!("bad feature value: {e}"),
                    })
                }
            };
            first = false;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: idx + 1,
                        message: format!("expected {d} columns, found {}", values.len()),
                    })
                }
                _ => {}
            }
            if let Some(j) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: idx + 1,
                    message: format!("non-finite value in column {}", j + 1),
                });
            }
            data.extend(values);
            rows += 1;
        }
        Features::new(rows, dim.unwrap_or(0), data)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row = self.row(r).unwrap();
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Graph on node ids `0..n`. Removed nodes stay in the id space but are inactive.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    features: Option<Features>,
    active: Vec<bool>,
}

impl Graph {
    /// Builds a graph from raw pairs, canonicalizing and dropping duplicates.
    /// Edge order is the order of first appearance.
    pub fn from_pairs(n: usize, pairs: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::arg(format!("edge ({a},{b}) out of range for n={n}")));
            }
            let e = Edge::new(a, b).ok_or_else(|| Error::arg(format!("self-loop at node {a}")))?;
            if seen.insert(e) {
                edges.push(e);
            }
        }
        Ok(Graph {
            n,
            edges,
            features: None,
            active: vec![true; n],
        })
    }

    pub fn with_features(mut self, features: Features) -> Result<Self> {
        if features.rows() != self.n {
            return Err(Error::arg(format!(
                "feature matrix has {} rows but graph has {} nodes",
                features.rows(),
                self.n
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> Option<&Features> {
        self.features.as_ref()
    }

    pub fn is_active(&self, v: NodeId) -> bool {
        self.active.get(v).copied().unwrap_or(false)
    }

    /// Active node ids in ascending order.
    pub fn active_nodes(&self) -> Vec<NodeId> {
        (0..self.n).filter(|&v| self.active[v]).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.u] += 1;
            deg[e.v] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!("{}\t{}\n", e.u, e.v));
        }
        out
    }
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let mut it = line.split(['\t', ',', ' ']).map(str::trim).filter(|t| !t.is_empty());
    let a = it.next()?;
    let b = it.next()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads an edge list with integer node ids.
///
/// `n` is one more than the largest id, or `n_hint` if that is larger.
pub fn load_edge_list(path: &Path, n_hint: Option<usize>) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, path, n_hint)
}

pub fn parse_edge_list(text: &str, origin: &Path, n_hint: Option<usize>) -> Result<Graph> {
    let mut pairs = Vec::new();
    let mut max_id = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) =
            split_pair(line).ok_or_else(|| parse_err(origin, idx + 1, format!("expected two columns: {line:?}")))?;
        let a: NodeId = a
            .parse()
            .map_err(|_| parse_err(origin, idx + 1, format!("not a node id: {a:?}")))?;
        let b: NodeId = b
            .parse()
            .map_err(|_| parse_err(origin, idx + 1, format!("not a node id: {b:?}")))?;
        if a == b {
            return Err(parse_err(origin, idx + 1, format!("self-loop at node {a}")));
        }
        max_id = Some(max_id.unwrap_or(0).max(a).max(b));
        pairs.push((a, b));
    }
    let n = max_id.map_or(0, |m| m + 1).max(n_hint.unwrap_or(0));
    Graph::from_pairs(n, &pairs)
}

/// Mapping from original node labels to dense ids, in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    labels: Vec<String>,
}

impl IdMap {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Sidecar format: `dense_id<TAB>original_label` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{i}\t{l}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Reads an edge list with arbitrary node labels and remaps them to `0..n`.
pub fn load_edge_list_remapped(path: &Path) -> Result<(Graph, IdMap)> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list_remapped(&text, path)
}

pub fn parse_edge_list_remapped(text: &str, origin: &Path) -> Result<(Graph, IdMap)> {
    let mut ids: HashMap<String, NodeId> = HashMap::new();
    let mut map = IdMap::default();
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) =
            split_pair(line).ok_or_else(|| parse_err(origin, idx + 1, format!("expected two columns: {line:?}")))?;
        if a == b {
            return Err(parse_err(origin, idx + 1, format!("self-loop at node {a}")));
        }
        let mut intern = |s: &str| {
            *ids.entry(s.to_string()).or_insert_with(|| {
                map.labels.push(s.to_string());
                map.labels.len() - 1
            })
        };
        let ia = intern(a);
        let ib = intern(b);
        pairs.push((ia, ib));
    }
    let g = Graph::from_pairs(map.labels.len(), &pairs)?;
    Ok((g, map))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeCapReport {
    pub capped_edges: Vec<Edge>,
    pub dropped_count: usize,
    pub max_degree_before: usize,
    pub max_degree_after: usize,
    pub cap: usize,
    pub seed: u64,
}

impl DegreeCapReport {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("cap", self.cap)
            .push("seed", self.seed)
            .push("kept_count", self.capped_edges.len())
            .push("dropped_count", self.dropped_count)
            .push("max_degree_before", self.max_degree_before)
            .push("max_degree_after", self.max_degree_after);
        doc
    }
}

/// Caps every node degree at `k`.
///
/// Edges are scanned in a seeded uniform random order; an edge is kept iff both
/// endpoints still have fewer than `k` kept edges. Kept edges retain their
/// original relative order.
pub fn cap_degrees(g: &Graph, k: usize, seed: u64) -> Result<(Graph, DegreeCapReport)> {
    if k == 0 {
        return Err(Error::arg("degree cap K must be at least 1"));
    }
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut deg = vec![0usize; g.n];
    let mut keep = vec![false; g.edges.len()];
    for &i in &order {
        let e = g.edges[i];
        if deg[e.u] < k && deg[e.v] < k {
            deg[e.u] += 1;
            deg[e.v] += 1;
            keep[i] = true;
        }
    }
    let edges: Vec<Edge> = g
        .edges
        .iter()
        .zip(&keep)
        .filter_map(|(e, &kp)| kp.then_some(*e))
        .collect();
    let out = Graph {
        n: g.n,
        edges,
        features: g.features.clone(),
        active: g.active.clone(),
    };
    let report = DegreeCapReport {
        capped_edges: out.edges.clone(),
        dropped_count: g.edges.len() - out.edges.len(),
        max_degree_before: g.max_degree(),
        max_degree_after: deg.iter().copied().max().unwrap_or(0),
        cap: k,
        seed,
    };
    Ok((out, report))
}

/// Node-level neighbor: drops `u` and its incident edges. Ids are not renumbered.
pub fn remove_node(g: &Graph, u: NodeId) -> Result<Graph> {
    if u >= g.n {
        return Err(Error::arg(format!("node {u} out of range for n={}", g.n)));
    }
    let mut out = g.clone();
    out.edges.retain(|e| !e.contains(u));
    out.active[u] = false;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mem() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn reads_tab_separated() {
        let g = parse_edge_list("0\t1\n1\t2\n", mem(), None).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[Edge::new(0, 1).unwrap(), Edge::new(1, 2).unwrap()]);
    }

    #[test]
    fn rejects_self_loop_with_line() {
        let err = parse_edge_list("# c\n1\t1\n", mem(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_non_integer() {
        let err = parse_edge_list("0,1\n0,x\n", mem(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn deduplicates_reversed_pairs() {
        let g = parse_edge_list("0 1\n1 0\n", mem(), None).unwrap();
        assert_eq!(g.edges(), &[Edge::new(0, 1).unwrap()]);
    }

    #[test]
    fn n_hint_extends() {
        let g = parse_edge_list("0,1\n", mem(), Some(10)).unwrap();
        assert_eq!(g.n(), 10);
        let g = parse_edge_list("0,7\n", mem(), Some(3)).unwrap();
        assert_eq!(g.n(), 8);
    }

    #[test]
    fn remapping_assigns_first_seen_order() {
        let (g, map) = parse_edge_list_remapped("a\tb\nc,a\n", mem()).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(map.labels(), &["a", "b", "c"]);
        assert_eq!(g.edges(), &[Edge::new(0, 1).unwrap(), Edge::new(0, 2).unwrap()]);
        assert_eq!(map.render(), "0\ta\n1\tb\n2\tc\n");
    }

    #[test]
    fn features_with_header() {
        let f = Features::parse_csv("x,y\n1,2\n3,4.5\n", mem()).unwrap();
        assert_eq!((f.rows(), f.dim()), (2, 2));
        assert_eq!(f.row(1).unwrap(), &[3.0, 4.5]);
        assert!(Features::parse_csv("1,2\n3\n", mem()).is_err());
    }

    #[test]
    fn features_must_match_n() {
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        assert!(g.clone().with_features(Features::zeros(2, 4)).is_err());
        assert!(g.with_features(Features::zeros(3, 4)).is_ok());
    }

    #[test]
    fn star_capped_at_five() {
        let pairs: Vec<_> = (1..=10).map(|l| (0, l)).collect();
        let g = Graph::from_pairs(11, &pairs).unwrap();
        for seed in 0..20 {
            let (c, rep) = cap_degrees(&g, 5, seed).unwrap();
            assert_eq!(c.m(), 5);
            assert!(c.edges().iter().all(|e| e.contains(0)));
            let deg = c.degrees();
            assert!(deg[1..].iter().all(|&d| d <= 1));
            assert_eq!(rep.dropped_count, 5);
            assert_eq!((rep.max_degree_before, rep.max_degree_after), (10, 5));
        }
    }

    #[test]
    fn triangle_with_cap_one_keeps_one_edge() {
        let g = Graph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        for seed in 0..50 {
            let (c, _) = cap_degrees(&g, 1, seed).unwrap();
            assert_eq!(c.m(), 1);
        }
    }

    #[test]
    fn cap_zero_is_an_error() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        assert!(matches!(cap_degrees(&g, 0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn remove_node_examples() {
        let path = Graph::from_pairs(3, &[(0, 1), (1, 2)]).unwrap();
        let r = remove_node(&path, 1).unwrap();
        assert!(r.edges().is_empty());
        assert_eq!(r.active_nodes(), vec![0, 2]);
        let r = remove_node(&path, 0).unwrap();
        assert_eq!(r.edges(), &[Edge::new(1, 2).unwrap()]);
        let empty = Graph::from_pairs(3, &[]).unwrap();
        let r = remove_node(&empty, 2).unwrap();
        assert_eq!(r.active_nodes(), vec![0, 1]);
        assert!(remove_node(&empty, 3).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..25).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..80).prop_map(move |raw| {
                let pairs: Vec<_> = raw.into_iter().filter(|(a, b)| a != b).collect();
                Graph::from_pairs(n, &pairs).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn cap_is_bounded_subset(g in arb_graph(), k in 1usize..6, seed in any::<u64>()) {
            let (c, rep) = cap_degrees(&g, k, seed).unwrap();
            prop_assert!(c.max_degree() <= k);
            prop_assert_eq!(rep.max_degree_after, c.max_degree());
            let input: BTreeSet<_> = g.edges().iter().collect();
            prop_assert!(c.edges().iter().all(|e| input.contains(e)));
            if g.m() > 0 {
                prop_assert!(c.m() >= 1);
            }
            // greedy scan leaves no edge that could still be added
            let deg = c.degrees();
            let kept: BTreeSet<_> = c.edges().iter().collect();
            for e in g.edges() {
                if !kept.contains(e) {
                    prop_assert!(deg[e.u()] >= k || deg[e.v()] >= k);
                }
            }
        }

        #[test]
        fn cap_is_idempotent(g in arb_graph(), k in 1usize..6, s1 in any::<u64>(), s2 in any::<u64>()) {
            let (once, _) = cap_degrees(&g, k, s1).unwrap();
            let (twice, _) = cap_degrees(&once, k, s2).unwrap();
            prop_assert_eq!(once.edges(), twice.edges());
        }

        #[test]
        fn cap_is_deterministic(g in arb_graph(), k in 1usize..6, seed in any::<u64>()) {
            prop_assert_eq!(cap_degrees(&g, k, seed).unwrap().0, cap_degrees(&g, k, seed).unwrap().0);
        }

        #[test]
        fn removal_degrees(g in arb_graph(), pick in any::<prop::sample::Index>()) {
            let u = pick.index(g.n());
            let r = remove_node(&g, u).unwrap();
            let before = g.degrees();
            let after = r.degrees();
            let adj = g.adjacency();
            for v in 0..g.n() {
                if v == u {
                    prop_assert_eq!(after[v], 0);
                    continue;
                }
                let touching = usize::from(adj[u].contains(&v));
                prop_assert_eq!(after[v], before[v] - touching);
            }
            prop_assert!(!r.is_active(u));
        }
    }
}
