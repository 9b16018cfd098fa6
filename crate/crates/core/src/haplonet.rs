//! Relaxed-parsimony haplotype network and its spanning trees.
//!
//! Observed haplotypes are connected by an edge when they differ at exactly
//! one effective site. While the graph is disconnected, the construction finds
//! the minimum inter-component distance `d_min`, takes every cross-component
//! node pair within `d_min + ds`, and materializes the intermediate haplotypes
//! of all minimal mutation paths between them as unobserved (count 0) nodes.
//! Candidate trees are spanning trees of the final graph, represented as a
//! vector holding, per independent loop, the edge deleted from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::HaplotypeData;

/// Default cap on inferred intermediate nodes before giving up.
pub const DEFAULT_NODE_BUDGET: usize = 5_000;

/// Default cap on the number of loops for exact tree enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 12;

/// Upper bound on the parsimony relaxation parameter.
pub const MAX_DS: usize = 20;

/// A node of the network: an observed or inferred haplotype.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetNode {
    /// Residues over effective sites.
    pub residues: Vec<u8>,
    /// Observed copies; 0 for inferred intermediates.
    pub count: usize,
}

impl NetNode {
    pub fn is_observed(&self) -> bool {
        self.count > 0
    }
}

/// The relaxed-parsimony haplotype network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<NetNode>,
    /// Undirected edges (i, j) with i < j, between haplotypes one effective
    /// mutation apart, in deterministic order.
    pub edges: Vec<(usize, usize)>,
    /// Fundamental cycles from a depth-first spanning tree; each entry lists
    /// the member edge ids of one independent loop.
    pub loops: Vec<Vec<usize>>,
}

/// A candidate tree: the network minus one deleted edge per loop, plus a root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeState {
    /// Global edge id deleted from each loop; length equals `n_loop`.
    pub deleted: Vec<usize>,
    pub root: usize,
}

/// Rooted orientation of a spanning tree.
#[derive(Debug, Clone)]
pub struct OrientedTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order starting at the root.
    pub order: Vec<usize>,
    /// Edge distance from the root.
    pub depth: Vec<usize>,
}

impl Network {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_loop(&self) -> usize {
        self.loops.len()
    }

    /// Number of observed haplotypes (count > 0).
    pub fn n_observed(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_observed()).count()
    }

    /// Adjacency list as (neighbor, edge id) pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        adj
    }

    /// Whether each edge belongs to at least one loop.
    pub fn loop_edge_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.edges.len()];
        for l in &self.loops {
            for &e in l {
                flags[e] = true;
            }
        }
        flags
    }

    /// True when `deleted` selects distinct edges whose removal leaves a
    /// spanning tree.
    pub fn is_spanning_tree(&self, deleted: &[usize]) -> bool {
        if deleted.len() != self.n_loop() {
            return false;
        }
        let mut removed = deleted.to_vec();
        removed.sort_unstable();
        if removed.windows(2).any(|w| w[0] == w[1]) {
            return false;
        }
        // |E| - n_loop = |V| - 1 edges remain; connectivity makes it a tree.
        let mut dsu: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(dsu: &mut Vec<usize>, mut x: usize) -> usize {
            while dsu[x] != x {
                dsu[x] = dsu[dsu[x]];
                x = dsu[x];
            }
            x
        }
        let mut merged = 0;
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if removed.binary_search(&e).is_ok() {
                continue;
            }
            let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
            if ra != rb {
                dsu[ra] = rb;
                merged += 1;
            }
        }
        merged == self.nodes.len() - 1
    }

    /// Tree adjacency (neighbor lists) for a deleted-edge vector.
    pub fn tree_neighbors(&self, deleted: &[usize]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if deleted.contains(&e) {
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Orient the spanning tree of `tree` away from its root.
    pub fn orient(&self, tree: &TreeState) -> OrientedTree {
        let adj = self.tree_neighbors(&tree.deleted);
        let n = self.nodes.len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0usize; n];
        let mut order = Vec::with_capacity(n);
        let mut visited = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        visited[tree.root] = true;
        queue.push_back(tree.root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some(u);
                    children[u].push(v);
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        OrientedTree {
            root: tree.root,
            parent,
            children,
            order,
            depth,
        }
    }

    /// Degree of a node within the spanning tree.
    pub fn tree_degree(&self, deleted: &[usize], node: usize) -> usize {
        self.edges
            .iter()
            .enumerate()
            .filter(|(e, (a, b))| !deleted.contains(e) && (*a == node || *b == node))
            .count()
    }

    /// The deleted-edge vector that recovers the depth-first spanning tree the
    /// loop structure was derived from: loop j's defining chord. Always a
    /// valid spanning tree.
    pub fn default_tree_vector(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut in_tree = vec![false; self.edges.len()];
        if self.nodes.is_empty() {
            return Vec::new();
        }
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, e) in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    in_tree[e] = true;
                    stack.push(v);
                }
            }
        }
        // Non-tree edges appear in edge order, matching loop order.
        (0..self.edges.len()).filter(|&e| !in_tree[e]).collect()
    }

    /// Plain-text edge list, one `from,to` pair of 1-based node ids per line.
    pub fn edge_list_text(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            out.push_str(&format!("{},{}\n", a + 1, b + 1));
        }
        out
    }

    /// JSON document with nodes, counts, edges and loop membership.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes.iter().enumerate().map(|(i, n)| {
                serde_json::json!({
                    "id": i + 1,
                    "count": n.count,
                    "observed": n.is_observed(),
                    "residues": String::from_utf8_lossy(&n.residues),
                })
            }).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|&(a, b)| vec![a + 1, b + 1]).collect::<Vec<_>>(),
            "loops": self.loops.clone(),
        })
    }
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Connected components over the current distance-1 edges.
fn components(nodes: &[NetNode]) -> Vec<usize> {
    let n = nodes.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if comp[v] == usize::MAX && hamming(&nodes[u].residues, &nodes[v].residues) == 1 {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Build the relaxed-parsimony network for a parsimony relaxation `ds`.
///
/// The network is the union of the iterated closure run at every relaxation
/// level `0..=ds`, which makes larger `ds` values strictly more inclusive.
pub fn build_network(h: &HaplotypeData, ds: usize, node_budget: usize) -> Result<Network> {
    if ds > MAX_DS {
        return Err(Error::InvalidConfig(format!(
            "ds={ds} exceeds the supported maximum of {MAX_DS}"
        )));
    }
    let observed: Vec<NetNode> = h
        .haplotypes
        .iter()
        .zip(&h.counts)
        .map(|(residues, &count)| NetNode {
            residues: residues.clone(),
            count,
        })
        .collect();

    let mut union_nodes = observed.clone();
    for level in 0..=ds {
        let level_nodes = closure_at_level(&observed, level, node_budget)?;
        for node in level_nodes {
            if !union_nodes.iter().any(|n| n.residues == node.residues) {
                union_nodes.push(node);
            }
        }
        let inferred = union_nodes.len() - observed.len();
        if inferred > node_budget {
            return Err(Error::Saturation {
                nodes: inferred,
                budget: node_budget,
            });
        }
    }
    let nodes = union_nodes;

    // Final distance-1 edge set, lexicographically ordered.
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if hamming(&nodes[i].residues, &nodes[j].residues) == 1 {
                edges.push((i, j));
            }
        }
    }

    let loops = fundamental_cycles(nodes.len(), &edges);
    Ok(Network {
        nodes,
        edges,
        loops,
    })
}

/// Iterated closure at one relaxation level: repeatedly connect components by
/// materializing minimal-path intermediates for all cross-component pairs
/// within `d_min + level`.
fn closure_at_level(
    observed: &[NetNode],
    level: usize,
    node_budget: usize,
) -> Result<Vec<NetNode>> {
    let mut nodes = observed.to_vec();
    let n_observed = observed.len();

    loop {
        let comp = components(&nodes);
        let n_comp = comp.iter().max().map_or(0, |&m| m + 1);
        if n_comp <= 1 {
            break;
        }

        // Minimum inter-component distance over the current node set.
        let mut d_min = usize::MAX;
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                if comp[i] != comp[j] {
                    d_min = d_min.min(hamming(&nodes[i].residues, &nodes[j].residues));
                }
            }
        }
        let threshold = d_min + level;

        // Materialize intermediates of all minimal mutation paths between
        // every cross-component pair within the threshold. The union of the
        // minimal paths between u and v is the hypercube spanned by their
        // differing sites.
        let mut new_nodes: Vec<Vec<u8>> = Vec::new();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                if comp[i] == comp[j] {
                    continue;
                }
                let diff: Vec<usize> = nodes[i]
                    .residues
                    .iter()
                    .zip(&nodes[j].residues)
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(s, _)| s)
                    .collect();
                if diff.len() > threshold {
                    continue;
                }
                let d = diff.len();
                for mask in 1..((1u64 << d) - 1) {
                    let mut res = nodes[i].residues.clone();
                    for (bit, &site) in diff.iter().enumerate() {
                        if mask >> bit & 1 == 1 {
                            res[site] = nodes[j].residues[site];
                        }
                    }
                    if !nodes.iter().any(|n| n.residues == res)
                        && !new_nodes.iter().any(|r| *r == res)
                    {
                        new_nodes.push(res);
                    }
                }
            }
        }
        // Deterministic node numbering for the new round.
        new_nodes.sort_unstable();
        let inferred = nodes.len() - n_observed + new_nodes.len();
        if inferred > node_budget {
            return Err(Error::Saturation {
                nodes: inferred,
                budget: node_budget,
            });
        }
        if new_nodes.is_empty() {
            // No pair within threshold produced nodes; nothing can connect the
            // components (can only happen for pathological thresholds).
            return Err(Error::Internal(
                "network construction stalled before connectivity".into(),
            ));
        }
        for res in new_nodes {
            nodes.push(NetNode {
                residues: res,
                count: 0,
            });
        }
    }
    Ok(nodes)
}

/// Fundamental cycles of a connected graph from a depth-first spanning tree.
fn fundamental_cycles(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (e, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    // Iterative DFS recording the tree edge into each node.
    let mut parent_edge = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut visited = vec![false; n];
    let mut in_tree = vec![false; edges.len()];
    if n == 0 {
        return Vec::new();
    }
    let mut stack = vec![0usize];
    visited[0] = true;
    while let Some(u) = stack.pop() {
        for &(v, e) in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                parent[v] = u;
                parent_edge[v] = e;
                in_tree[e] = true;
                stack.push(v);
            }
        }
    }

    let depth = {
        let mut d = vec![0usize; n];
        // Parent pointers form a tree rooted at 0; compute depth by walking up.
        for v in 0..n {
            let mut x = v;
            let mut k = 0;
            while parent[x] != usize::MAX {
                x = parent[x];
                k += 1;
            }
            d[v] = k;
        }
        d
    };

    let mut loops = Vec::new();
    for (e, &(a, b)) in edges.iter().enumerate() {
        if in_tree[e] {
            continue;
        }
        // Cycle = e + tree path a..b.
        let mut cycle = vec![e];
        let (mut x, mut y) = (a, b);
        while depth[x] > depth[y] {
            cycle.push(parent_edge[x]);
            x = parent[x];
        }
        while depth[y] > depth[x] {
            cycle.push(parent_edge[y]);
            y = parent[y];
        }
        while x != y {
            cycle.push(parent_edge[x]);
            cycle.push(parent_edge[y]);
            x = parent[x];
            y = parent[y];
        }
        cycle.sort_unstable();
        loops.push(cycle);
    }
    loops
}

/// Count the spanning trees reachable by breaking each loop, and list one
/// canonical deleted-edge vector per distinct tree. Only feasible for small
/// loop counts; the sampler does not need it.
pub fn enumerate_trees(net: &Network, cap: usize) -> Result<(u64, Vec<Vec<usize>>)> {
    let k = net.n_loop();
    if k > cap {
        return Err(Error::EnumerationUnavailable(format!(
            "{k} loops exceed the enumeration cap of {cap}"
        )));
    }
    if k == 0 {
        return Ok((1, vec![Vec::new()]));
    }
    let mut seen: std::collections::BTreeSet<Vec<usize>> = std::collections::BTreeSet::new();
    let mut vectors = Vec::new();
    let mut choice = vec![0usize; k];
    loop {
        let deleted: Vec<usize> = choice.iter().enumerate().map(|(j, &c)| net.loops[j][c]).collect();
        let mut key = deleted.clone();
        key.sort_unstable();
        if net.is_spanning_tree(&deleted) && seen.insert(key) {
            vectors.push(deleted);
        }
        // Odometer increment.
        let mut j = 0;
        loop {
            choice[j] += 1;
            if choice[j] < net.loops[j].len() {
                break;
            }
            choice[j] = 0;
            j += 1;
            if j == k {
                return Ok((vectors.len() as u64, vectors));
            }
        }
    }
}

/// Visit counts of deleted-edge vectors seen during sampling.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TreeHashTable {
    #[serde(with = "vec_key_map")]
    counts: BTreeMap<Vec<usize>, u64>,
    total: u64,
}

/// JSON maps need string keys; store the table as a list of (vector, count)
/// pairs instead.
mod vec_key_map {
    use std::collections::BTreeMap;

    pub fn serialize<S: serde::Serializer>(
        map: &BTreeMap<Vec<usize>, u64>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&Vec<usize>, &u64)> = map.iter().collect();
        serde::Serialize::serialize(&pairs, ser)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<Vec<usize>, u64>, D::Error> {
        let pairs: Vec<(Vec<usize>, u64)> = serde::Deserialize::deserialize(de)?;
        Ok(pairs.into_iter().collect())
    }
}

impl TreeHashTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one visit of the tree identified by `deleted`.
    pub fn record(&mut self, deleted: &[usize]) {
        *self.counts.entry(deleted.to_vec()).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, deleted: &[usize]) -> u64 {
        self.counts.get(deleted).copied().unwrap_or(0)
    }

    pub fn n_distinct(&self) -> usize {
        self.counts.len()
    }

    /// The most visited vector; ties broken by vector order.
    pub fn modal_vector(&self) -> Option<Vec<usize>> {
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(v, _)| v.clone())
    }

    pub fn merge(&mut self, other: &TreeHashTable) {
        for (v, c) in &other.counts {
            *self.counts.entry(v.clone()).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, u64)> {
        self.counts.iter().map(|(v, &c)| (v, c))
    }
}

/// Fraction of samples whose induced spanning tree contains each edge.
pub fn edge_posterior(samples: &[TreeState], net: &Network) -> Vec<f64> {
    let mut present = vec![0u64; net.edges.len()];
    for s in samples {
        for e in 0..net.edges.len() {
            if !s.deleted.contains(&e) {
                present[e] += 1;
            }
        }
    }
    let n = samples.len().max(1) as f64;
    present.iter().map(|&c| c as f64 / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqio::HaplotypeData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hap_data(rows: &[&str], counts: &[usize]) -> HaplotypeData {
        let haplotypes: Vec<Vec<u8>> = rows.iter().map(|r| r.as_bytes().to_vec()).collect();
        let eff = haplotypes[0].len();
        HaplotypeData {
            haplotypes,
            counts: counts.to_vec(),
            effective_length: eff,
            label_map: Vec::new(),
            site_map: (0..eff).collect(),
            site_preimages: (0..eff).map(|s| vec![s]).collect(),
            dropped_sites: Vec::new(),
            constant_sites: Vec::new(),
        }
    }

    #[test]
    fn two_haplotypes_distance_one() {
        let net = build_network(&hap_data(&["A", "C"], &[1, 1]), 0, 100).unwrap();
        assert_eq!(net.n_nodes(), 2);
        assert_eq!(net.edges.len(), 1);
        assert_eq!(net.n_loop(), 0);
    }

    /// All single-mutation paths of a given length between two haplotypes,
    /// enumerated exhaustively over the 5-state alphabet.
    fn enumerate_paths(
        from: &[u8],
        to: &[u8],
        len: usize,
        nodes: &mut std::collections::BTreeSet<Vec<u8>>,
        edges: &mut std::collections::BTreeSet<(Vec<u8>, Vec<u8>)>,
        path: &mut Vec<Vec<u8>>,
    ) {
        if len == 0 {
            if from == to {
                for w in path.windows(2) {
                    let (a, b) = (w[0].clone(), w[1].clone());
                    edges.insert(if a < b { (a.clone(), b.clone()) } else { (b, a) });
                }
                for p in path.iter() {
                    nodes.insert(p.clone());
                }
            }
            return;
        }
        for site in 0..from.len() {
            for &state in &crate::seqio::STATES {
                if state == from[site] {
                    continue;
                }
                let mut next = from.to_vec();
                next[site] = state;
                path.push(next.clone());
                enumerate_paths(&next, to, len - 1, nodes, edges, path);
                path.pop();
            }
        }
    }

    #[test]
    fn distance_three_matches_path_oracle() {
        let u = b"AAA".to_vec();
        let v = b"CCC".to_vec();
        let net = build_network(&hap_data(&["AAA", "CCC"], &[1, 1]), 0, 100).unwrap();

        let mut nodes = std::collections::BTreeSet::new();
        let mut edges = std::collections::BTreeSet::new();
        let mut path = vec![u.clone()];
        enumerate_paths(&u, &v, 3, &mut nodes, &mut edges, &mut path);

        assert_eq!(nodes.len(), 8, "3-site hypercube has 2^3 nodes");
        assert_eq!(edges.len(), 12);
        let net_nodes: std::collections::BTreeSet<Vec<u8>> =
            net.nodes.iter().map(|n| n.residues.clone()).collect();
        assert_eq!(net_nodes, nodes);
        let net_edges: std::collections::BTreeSet<(Vec<u8>, Vec<u8>)> = net
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (net.nodes[a].residues.clone(), net.nodes[b].residues.clone());
                if x < y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect();
        assert_eq!(net_edges, edges);
    }

    #[test]
    fn saturation_error_when_budget_exceeded() {
        let err = build_network(&hap_data(&["AAAAAAAAAAAA", "CCCCCCCCCCCC"], &[1, 1]), 0, 10)
            .unwrap_err();
        assert!(matches!(err, Error::Saturation { .. }), "{err}");
    }

    #[test]
    fn ds_above_bound_rejected() {
        let err = build_network(&hap_data(&["A", "C"], &[1, 1]), 21, 100).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    fn four_cycle() -> Network {
        build_network(&hap_data(&["AA", "AC", "CC", "CA"], &[1, 1, 1, 1]), 0, 100).unwrap()
    }

    #[test]
    fn four_cycle_has_one_loop_and_four_trees() {
        let net = four_cycle();
        assert_eq!(net.n_nodes(), 4);
        assert_eq!(net.edges.len(), 4);
        assert_eq!(net.n_loop(), 1);
        let (count, vectors) = enumerate_trees(&net, 12).unwrap();
        assert_eq!(count, 4);
        for v in &vectors {
            assert!(net.is_spanning_tree(v));
        }
    }

    #[test]
    fn tree_shaped_network_single_tree() {
        let net = build_network(&hap_data(&["AA", "AC", "CC"], &[1, 1, 1]), 0, 100).unwrap();
        assert_eq!(net.n_loop(), 0);
        let (count, vectors) = enumerate_trees(&net, 12).unwrap();
        assert_eq!(count, 1);
        assert_eq!(vectors, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn two_triangles_with_bridge_give_nine_trees() {
        // Triangle over site 1 at {AAA, CAA, GAA}, triangle over site 3 at
        // {ACA, ACC, ACG}, joined by the single bridge AAA - ACA.
        let rows = ["AAA", "CAA", "GAA", "ACA", "ACC", "ACG"];
        let net = build_network(&hap_data(&rows, &[1; 6]), 0, 100).unwrap();
        assert_eq!(net.n_nodes(), 6);
        assert_eq!(net.edges.len(), 7);
        assert_eq!(net.n_loop(), 2);
        let (count, _) = enumerate_trees(&net, 12).unwrap();
        assert_eq!(count, 9);

        // Brute force: every 2-edge removal that leaves a spanning tree.
        let mut brute = 0u64;
        let e = net.edges.len();
        for a in 0..e {
            for b in (a + 1)..e {
                if net.is_spanning_tree(&[a, b]) {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, count);
    }

    #[test]
    fn enumeration_cap_exceeded_signals() {
        let net = four_cycle();
        let err = enumerate_trees(&net, 0).unwrap_err();
        assert!(matches!(err, Error::EnumerationUnavailable(_)));
    }

    #[test]
    fn hash_same_vector_twice() {
        let mut t = TreeHashTable::new();
        t.record(&[3, 7]);
        t.record(&[3, 7]);
        assert_eq!(t.count(&[3, 7]), 2);
        assert_eq!(t.total(), 2);
        assert_eq!(t.n_distinct(), 1);
    }

    #[test]
    fn hash_distinct_vectors() {
        let mut t = TreeHashTable::new();
        t.record(&[1]);
        t.record(&[2]);
        assert_eq!(t.total(), 2);
        assert_eq!(t.n_distinct(), 2);
    }

    #[test]
    fn hash_random_vectors_match_reference_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut table = TreeHashTable::new();
        let mut reference: Vec<Vec<usize>> = Vec::new();
        for _ in 0..100_000 {
            let v: Vec<usize> = (0..3).map(|_| rng.gen_range(0..6usize)).collect();
            table.record(&v);
            reference.push(v);
        }
        assert_eq!(table.total(), 100_000);
        reference.sort_unstable();
        let mut expected: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for v in reference {
            *expected.entry(v).or_insert(0) += 1;
        }
        assert_eq!(table.n_distinct(), expected.len());
        for (v, c) in &expected {
            assert_eq!(table.count(v), *c);
        }
    }

    #[test]
    fn edge_posterior_tree_shaped_all_ones() {
        let net = build_network(&hap_data(&["AA", "AC", "CC"], &[1, 1, 1]), 0, 100).unwrap();
        let samples = vec![
            TreeState {
                deleted: vec![],
                root: 0,
            };
            50
        ];
        let probs = edge_posterior(&samples, &net);
        assert!(probs.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn edge_posterior_four_cycle_uniform_draws() {
        let net = four_cycle();
        let (_, vectors) = enumerate_trees(&net, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<TreeState> = (0..10_000)
            .map(|_| TreeState {
                deleted: vectors[rng.gen_range(0..vectors.len())].clone(),
                root: 0,
            })
            .collect();
        let probs = edge_posterior(&samples, &net);
        for &p in &probs {
            assert!((p - 0.75).abs() < 0.02, "edge probability {p}");
        }
    }

    #[test]
    fn bridge_edge_probability_one() {
        let rows = ["AAA", "CAA", "GAA", "ACA", "ACC", "ACG"];
        let net = build_network(&hap_data(&rows, &[1; 6]), 0, 100).unwrap();
        let (_, vectors) = enumerate_trees(&net, 12).unwrap();
        let samples: Vec<TreeState> = vectors
            .iter()
            .map(|v| TreeState {
                deleted: v.clone(),
                root: 0,
            })
            .collect();
        let probs = edge_posterior(&samples, &net);
        let flags = net.loop_edge_flags();
        for (e, &is_loop) in flags.iter().enumerate() {
            if !is_loop {
                assert_eq!(probs[e], 1.0, "bridge edge {e}");
            } else {
                assert!(probs[e] < 1.0);
            }
        }
    }

    #[test]
    fn build_invariant_to_input_order() {
        let a = build_network(&hap_data(&["AAA", "CCC"], &[1, 2]), 0, 100).unwrap();
        let b = build_network(&hap_data(&["CCC", "AAA"], &[2, 1]), 0, 100).unwrap();
        let set_a: std::collections::BTreeSet<(Vec<u8>, usize)> = a
            .nodes
            .iter()
            .map(|n| (n.residues.clone(), n.count))
            .collect();
        let set_b: std::collections::BTreeSet<(Vec<u8>, usize)> = b
            .nodes
            .iter()
            .map(|n| (n.residues.clone(), n.count))
            .collect();
        assert_eq!(set_a, set_b);
        assert_eq!(a.edges.len(), b.edges.len());
        assert_eq!(a.n_loop(), b.n_loop());
    }

    #[test]
    fn monotone_inclusiveness_in_ds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let n = rng.gen_range(2..5usize);
            let len = rng.gen_range(2..5usize);
            let rows: Vec<Vec<u8>> = (0..n)
                .map(|_| {
                    (0..len)
                        .map(|_| crate::seqio::STATES[rng.gen_range(0..4)])
                        .collect()
                })
                .collect();
            let mut distinct: Vec<Vec<u8>> = Vec::new();
            for r in rows {
                if !distinct.contains(&r) {
                    distinct.push(r);
                }
            }
            if distinct.len() < 2 {
                continue;
            }
            let strs: Vec<String> = distinct
                .iter()
                .map(|r| String::from_utf8(r.clone()).unwrap())
                .collect();
            let refs: Vec<&str> = strs.iter().map(|s| s.as_str()).collect();
            let counts = vec![1usize; refs.len()];
            let h = hap_data(&refs, &counts);
            let net0 = build_network(&h, 0, 2000).unwrap();
            let net1 = build_network(&h, 1, 2000).unwrap();
            let nodes0: std::collections::BTreeSet<Vec<u8>> =
                net0.nodes.iter().map(|n| n.residues.clone()).collect();
            let nodes1: std::collections::BTreeSet<Vec<u8>> =
                net1.nodes.iter().map(|n| n.residues.clone()).collect();
            assert!(
                nodes0.is_subset(&nodes1),
                "ds=0 nodes not included in ds=1 nodes"
            );
        }
    }

    #[test]
    fn every_enumerated_vector_spans() {
        // Mixed topology: 4-cycle plus a pendant node.
        let net = build_network(&hap_data(&["AA", "AC", "CC", "CA", "GA"], &[1; 5]), 0, 100)
            .unwrap();
        let (count, vectors) = enumerate_trees(&net, 12).unwrap();
        assert_eq!(count as usize, vectors.len());
        for v in &vectors {
            assert!(net.is_spanning_tree(v));
            let orient = net.orient(&TreeState {
                deleted: v.clone(),
                root: 0,
            });
            assert_eq!(orient.order.len(), net.n_nodes(), "tree spans all nodes");
        }
    }
}
