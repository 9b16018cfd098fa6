//! Temporal orderings of replication and mutation events on a rooted tree.
//!
//! A rooted spanning tree admits a set of event histories: starting from a
//! single copy of the root, copies replicate and mutate into child haplotypes
//! until every node reaches its observed count. Each node `h` carries a budget
//! of `count(h) + children(h) - 1` replications and one mutation per child; a
//! mutation consumes a copy of the parent. A history is valid when it never
//! acts on a node with zero copies and never leaves a node at zero copies
//! while events of that node remain.
//!
//! The number of valid histories scores a (root, tree) pair: exact counts come
//! from a memoized dynamic program (feasible for small event totals), and the
//! sampler uses the unbiased single-draw estimator `1/q(O*)` obtained by
//! choosing uniformly among available moves.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::haplonet::{Network, TreeState};

/// Default cap on total events for exhaustive ordering counts.
pub const DEFAULT_EVENT_CAP: usize = 22;

/// One event of a temporal ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Replicate(usize),
    /// Mutation of the first node creating the second (a tree child).
    MutateTo(usize, usize),
}

/// Per-node event budgets implied by a rooted orientation.
#[derive(Debug, Clone)]
pub struct EventSchedule {
    pub root: usize,
    /// Remaining replications budget per node at the start.
    pub replications: Vec<usize>,
    /// Tree children (mutation targets) per node.
    pub children: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    pub total_events: usize,
    /// False when some non-root node has count 0 and no children: such a
    /// haplotype would appear and vanish without leaving descendants, which
    /// the model excludes; the orientation then admits no ordering at all.
    pub feasible: bool,
}

impl EventSchedule {
    pub fn new(net: &Network, tree: &TreeState) -> EventSchedule {
        let oriented = net.orient(tree);
        let n = net.n_nodes();
        let counts: Vec<usize> = net.nodes.iter().map(|nd| nd.count).collect();
        let mut replications = vec![0usize; n];
        let mut feasible = true;
        let mut total_events = 0usize;
        for u in 0..n {
            let k = counts[u] + oriented.children[u].len();
            if k == 0 {
                feasible = false;
                replications[u] = 0;
                continue;
            }
            replications[u] = k - 1;
            total_events += k - 1 + oriented.children[u].len();
        }
        EventSchedule {
            root: tree.root,
            replications,
            children: oriented.children,
            counts,
            total_events,
            feasible,
        }
    }
}

/// One sampled ordering with its log proposal probability.
#[derive(Debug, Clone)]
pub struct OrderingDraw {
    pub events: Vec<Event>,
    /// log q(O*): the sum of -log(#available moves) over the draw.
    pub log_q: f64,
}

impl OrderingDraw {
    /// The unbiased estimate 1/q(O*) on the log scale.
    pub fn log_estimate(&self) -> f64 {
        -self.log_q
    }
}

/// Mutable execution state of a schedule.
struct Execution<'a> {
    schedule: &'a EventSchedule,
    copies: Vec<usize>,
    rem_repl: Vec<usize>,
    /// Children not yet created, per node.
    pending: Vec<Vec<usize>>,
    created: Vec<bool>,
    remaining_events: usize,
}

impl<'a> Execution<'a> {
    fn new(schedule: &'a EventSchedule) -> Self {
        let n = schedule.replications.len();
        let mut copies = vec![0usize; n];
        let mut created = vec![false; n];
        copies[schedule.root] = 1;
        created[schedule.root] = true;
        Execution {
            copies,
            rem_repl: schedule.replications.clone(),
            pending: schedule.children.clone(),
            created,
            remaining_events: schedule.total_events,
            schedule,
        }
    }

    fn available_moves(&self) -> Vec<Event> {
        let mut moves = Vec::new();
        for u in 0..self.copies.len() {
            if !self.created[u] || self.copies[u] == 0 {
                continue;
            }
            if self.rem_repl[u] > 0 {
                moves.push(Event::Replicate(u));
            }
            // A mutation may not strand the node at zero copies while it
            // still has events left.
            let last_event = self.rem_repl[u] == 0 && self.pending[u].len() == 1;
            if self.copies[u] >= 2 || last_event {
                for &c in &self.pending[u] {
                    moves.push(Event::MutateTo(u, c));
                }
            }
        }
        moves
    }

    fn apply(&mut self, ev: Event) -> Result<()> {
        match ev {
            Event::Replicate(u) => {
                if !self.created[u] || self.copies[u] == 0 || self.rem_repl[u] == 0 {
                    return Err(Error::Internal(format!("invalid replication of node {u}")));
                }
                self.copies[u] += 1;
                self.rem_repl[u] -= 1;
            }
            Event::MutateTo(u, c) => {
                let pos = self.pending[u].iter().position(|&x| x == c);
                if !self.created[u] || self.copies[u] == 0 || pos.is_none() {
                    return Err(Error::Internal(format!("invalid mutation {u}->{c}")));
                }
                let after = self.copies[u] - 1;
                let events_left = self.rem_repl[u] + self.pending[u].len() - 1;
                if after == 0 && events_left > 0 {
                    return Err(Error::Internal(format!(
                        "mutation {u}->{c} strands node {u}"
                    )));
                }
                self.pending[u].remove(pos.unwrap());
                self.copies[u] -= 1;
                self.copies[c] = 1;
                self.created[c] = true;
            }
        }
        self.remaining_events -= 1;
        Ok(())
    }

    fn finished(&self) -> bool {
        self.remaining_events == 0
    }

    fn final_counts_match(&self) -> bool {
        self.copies
            .iter()
            .zip(&self.schedule.counts)
            .all(|(c, k)| c == k)
    }

    /// Memoization key: created set plus remaining replications.
    fn key(&self) -> Vec<u8> {
        let n = self.copies.len();
        let mut key = Vec::with_capacity(n / 8 + 1 + n);
        let mut byte = 0u8;
        for (i, &c) in self.created.iter().enumerate() {
            if c {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                key.push(byte);
                byte = 0;
            }
        }
        if n % 8 != 0 {
            key.push(byte);
        }
        for &r in &self.rem_repl {
            key.push(r as u8);
        }
        key
    }
}

/// Exact number of valid temporal orderings for a rooted tree, via memoized
/// dynamic programming over (created set, remaining replications) states.
pub fn count_orderings_exact(net: &Network, tree: &TreeState, cap: usize) -> Result<u128> {
    let schedule = EventSchedule::new(net, tree);
    if !schedule.feasible {
        return Ok(0);
    }
    if schedule.total_events > cap {
        return Err(Error::EnumerationUnavailable(format!(
            "{} events exceed the exact-count cap of {cap}",
            schedule.total_events
        )));
    }
    let mut memo: HashMap<Vec<u8>, u128> = HashMap::new();
    let mut exec = Execution::new(&schedule);
    count_rec(&mut exec, &mut memo)
}

fn count_rec(exec: &mut Execution, memo: &mut HashMap<Vec<u8>, u128>) -> Result<u128> {
    if exec.finished() {
        return Ok(if exec.final_counts_match() { 1 } else { 0 });
    }
    let key = exec.key();
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    let moves = exec.available_moves();
    if moves.is_empty() {
        return Err(Error::Internal(
            "dead-end ordering state: budgets remain but no move is available".into(),
        ));
    }
    let mut total: u128 = 0;
    for ev in moves {
        // Save-and-restore is cheaper than cloning the whole execution.
        let saved_copies = exec.copies.clone();
        let saved_repl = exec.rem_repl.clone();
        let saved_pending = exec.pending.clone();
        let saved_created = exec.created.clone();
        let saved_remaining = exec.remaining_events;
        exec.apply(ev)?;
        total += count_rec(exec, memo)?;
        exec.copies = saved_copies;
        exec.rem_repl = saved_repl;
        exec.pending = saved_pending;
        exec.created = saved_created;
        exec.remaining_events = saved_remaining;
    }
    memo.insert(key, total);
    Ok(total)
}

/// Draw one ordering uniformly among available moves at every step.
///
/// Returns `None` for infeasible orientations (which admit no ordering).
pub fn draw_ordering<R: Rng + ?Sized>(
    net: &Network,
    tree: &TreeState,
    rng: &mut R,
) -> Result<Option<OrderingDraw>> {
    let schedule = EventSchedule::new(net, tree);
    if !schedule.feasible {
        return Ok(None);
    }
    let mut exec = Execution::new(&schedule);
    let mut events = Vec::with_capacity(schedule.total_events);
    let mut log_q = 0.0;
    while !exec.finished() {
        let moves = exec.available_moves();
        if moves.is_empty() {
            return Err(Error::Internal(
                "dead-end ordering state reached during draw".into(),
            ));
        }
        let ev = moves[rng.gen_range(0..moves.len())];
        log_q -= (moves.len() as f64).ln();
        exec.apply(ev)?;
        events.push(ev);
    }
    if !exec.final_counts_match() {
        return Err(Error::Internal(
            "ordering draw terminated with wrong copy counts".into(),
        ));
    }
    Ok(Some(OrderingDraw { events, log_q }))
}

/// Replay an event list from scratch, verifying every invariant. Returns the
/// log proposal probability of the replayed ordering.
pub fn replay(net: &Network, tree: &TreeState, events: &[Event]) -> Result<f64> {
    let schedule = EventSchedule::new(net, tree);
    if !schedule.feasible {
        return Err(Error::InvalidState("infeasible orientation".into()));
    }
    let mut exec = Execution::new(&schedule);
    let mut log_q = 0.0;
    for ev in events {
        let moves = exec.available_moves();
        if !moves.contains(ev) {
            return Err(Error::InvalidState(format!(
                "event {ev:?} is not available at its position"
            )));
        }
        log_q -= (moves.len() as f64).ln();
        exec.apply(*ev)?;
    }
    if !exec.finished() || !exec.final_counts_match() {
        return Err(Error::InvalidState(
            "event list does not complete the schedule".into(),
        ));
    }
    Ok(log_q)
}

/// The single-draw unbiased estimate of the ordering count, `1/q(O*)`.
/// Infeasible orientations estimate 0.
pub fn estimate_orderings<R: Rng + ?Sized>(
    net: &Network,
    tree: &TreeState,
    rng: &mut R,
) -> Result<f64> {
    Ok(match draw_ordering(net, tree, rng)? {
        Some(draw) => draw.log_estimate().exp(),
        None => 0.0,
    })
}

/// Log-scale version of [`estimate_orderings`]; `-inf` for infeasible trees.
pub fn log_estimate_orderings<R: Rng + ?Sized>(
    net: &Network,
    tree: &TreeState,
    rng: &mut R,
) -> Result<f64> {
    Ok(match draw_ordering(net, tree, rng)? {
        Some(draw) => draw.log_estimate(),
        None => f64::NEG_INFINITY,
    })
}

/// Exact joint posterior over (root, tree) pairs from exhaustive ordering
/// counts.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    /// Deleted-edge vectors of the enumerated trees.
    pub trees: Vec<Vec<usize>>,
    /// counts[t][r] = number of orderings for tree t rooted at r.
    pub counts: Vec<Vec<u128>>,
    pub total: u128,
}

impl ExactPosterior {
    pub fn joint(&self, tree_idx: usize, root: usize) -> f64 {
        self.counts[tree_idx][root] as f64 / self.total as f64
    }

    /// P(r | S): marginal over trees.
    pub fn root_marginal(&self) -> Vec<f64> {
        let n = self.counts[0].len();
        let mut probs = vec![0.0; n];
        for per_tree in &self.counts {
            for (r, &c) in per_tree.iter().enumerate() {
                probs[r] += c as f64;
            }
        }
        for p in &mut probs {
            *p /= self.total as f64;
        }
        probs
    }

    /// P(T | S): marginal over roots.
    pub fn tree_marginal(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|per_tree| per_tree.iter().map(|&c| c as f64).sum::<f64>() / self.total as f64)
            .collect()
    }

    /// P(r | T, S) for one tree.
    pub fn root_given_tree(&self, tree_idx: usize) -> Vec<f64> {
        let denom: u128 = self.counts[tree_idx].iter().sum();
        self.counts[tree_idx]
            .iter()
            .map(|&c| if denom == 0 { 0.0 } else { c as f64 / denom as f64 })
            .collect()
    }

    /// P(T | r, S) for one root.
    pub fn tree_given_root(&self, root: usize) -> Vec<f64> {
        let denom: u128 = self.counts.iter().map(|t| t[root]).sum();
        self.counts
            .iter()
            .map(|t| {
                if denom == 0 {
                    0.0
                } else {
                    t[root] as f64 / denom as f64
                }
            })
            .collect()
    }
}

/// Exhaustive posterior over every (root, tree) pair. Available only when the
/// loop count permits tree enumeration and every orientation fits the event
/// cap.
pub fn root_posterior_exact(net: &Network, tree_cap: usize, event_cap: usize) -> Result<ExactPosterior> {
    let (_, trees) = crate::haplonet::enumerate_trees(net, tree_cap)?;
    let n = net.n_nodes();
    let mut counts = Vec::with_capacity(trees.len());
    let mut total: u128 = 0;
    for deleted in &trees {
        let mut per_tree = Vec::with_capacity(n);
        for r in 0..n {
            let c = count_orderings_exact(
                net,
                &TreeState {
                    deleted: deleted.clone(),
                    root: r,
                },
                event_cap,
            )?;
            total += c;
            per_tree.push(c);
        }
        counts.push(per_tree);
    }
    if total == 0 {
        return Err(Error::DegenerateData(
            "no rooted tree admits a valid ordering".into(),
        ));
    }
    Ok(ExactPosterior {
        trees,
        counts,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haplonet::{build_network, NetNode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hap_data(rows: &[&str], counts: &[usize]) -> crate::seqio::HaplotypeData {
        let haplotypes: Vec<Vec<u8>> = rows.iter().map(|r| r.as_bytes().to_vec()).collect();
        let eff = haplotypes[0].len();
        crate::seqio::HaplotypeData {
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

    fn single_node_net(count: usize) -> Network {
        Network {
            nodes: vec![NetNode {
                residues: b"A".to_vec(),
                count,
            }],
            edges: vec![],
            loops: vec![],
        }
    }

    #[test]
    fn single_haplotype_one_ordering() {
        let net = single_node_net(5);
        let t = TreeState {
            deleted: vec![],
            root: 0,
        };
        assert_eq!(count_orderings_exact(&net, &t, 22).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = draw_ordering(&net, &t, &mut rng).unwrap().unwrap();
        assert_eq!(draw.log_q, 0.0);
        assert_eq!(draw.events.len(), 4);
    }

    #[test]
    fn root_with_one_child_forced_ordering() {
        // Mutate-first would strand the root's remaining replication.
        let net = build_network(&hap_data(&["A", "C"], &[1, 1]), 0, 100).unwrap();
        let t = TreeState {
            deleted: vec![],
            root: 0,
        };
        assert_eq!(count_orderings_exact(&net, &t, 22).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draw = draw_ordering(&net, &t, &mut rng).unwrap().unwrap();
        assert_eq!(draw.log_q, 0.0, "every step is forced");
    }

    #[test]
    fn root_with_two_children_four_orderings() {
        // Star: root A with children C and G (one site, each observed once).
        let net = build_network(&hap_data(&["A", "C", "G"], &[1, 1, 1]), 0, 100).unwrap();
        let root = net
            .nodes
            .iter()
            .position(|n| n.residues == b"A".to_vec())
            .unwrap();
        let t = TreeState {
            deleted: vec![],
            root,
        };
        assert_eq!(count_orderings_exact(&net, &t, 22).unwrap(), 4);
    }

    #[test]
    fn estimator_unbiased_on_star() {
        let net = build_network(&hap_data(&["A", "C", "G"], &[1, 1, 1]), 0, 100).unwrap();
        let root = net
            .nodes
            .iter()
            .position(|n| n.residues == b"A".to_vec())
            .unwrap();
        let t = TreeState {
            deleted: vec![],
            root,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| estimate_orderings(&net, &t, &mut rng).unwrap())
            .collect();
        let (mean, var) = crate::stats::mean_var(&draws);
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - 4.0).abs() < 3.0 * se,
            "mean {mean} vs exact 4, se {se}"
        );
    }

    #[test]
    fn three_node_path_root_posterior() {
        // Path A - C - G over one site (A<->C and C<->G single mutations,
        // A<->G distance... states on one site are all distance 1, so use two
        // sites to get a path).
        let net = build_network(&hap_data(&["AA", "CA", "CC"], &[1, 1, 1]), 0, 100).unwrap();
        assert_eq!(net.edges.len(), 2);
        let post = root_posterior_exact(&net, 12, 22).unwrap();
        // Ends contribute 1 ordering each, the middle 4.
        let marg = post.root_marginal();
        let middle = net
            .nodes
            .iter()
            .position(|n| n.residues == b"CA".to_vec())
            .unwrap();
        for (r, &p) in marg.iter().enumerate() {
            let expect = if r == middle { 4.0 / 6.0 } else { 1.0 / 6.0 };
            assert!((p - expect).abs() < 1e-12, "root {r}: {p} vs {expect}");
        }
        let sum: f64 = marg.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_node_symmetric_posterior() {
        let net = build_network(&hap_data(&["A", "C"], &[1, 1]), 0, 100).unwrap();
        let post = root_posterior_exact(&net, 12, 22).unwrap();
        let marg = post.root_marginal();
        assert!((marg[0] - 0.5).abs() < 1e-12);
        assert!((marg[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tree_marginal_is_one_for_treelike_network() {
        let net = build_network(&hap_data(&["AA", "CA", "CC"], &[1, 1, 1]), 0, 100).unwrap();
        let post = root_posterior_exact(&net, 12, 22).unwrap();
        assert_eq!(post.trees.len(), 1);
        assert!((post.tree_marginal()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditionals_sum_to_one() {
        let net = build_network(&hap_data(&["AA", "AC", "CC", "CA"], &[2, 1, 1, 1]), 0, 100)
            .unwrap();
        let post = root_posterior_exact(&net, 12, 22).unwrap();
        for t in 0..post.trees.len() {
            let s: f64 = post.root_given_tree(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for r in 0..net.n_nodes() {
            let s: f64 = post.tree_given_root(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let joint_sum: f64 = (0..post.trees.len())
            .flat_map(|t| (0..net.n_nodes()).map(move |r| (t, r)))
            .map(|(t, r)| post.joint(t, r))
            .sum();
        assert!((joint_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn count_invariant_under_relabeling() {
        // The same path expressed with reversed numbering.
        let a = build_network(&hap_data(&["AA", "CA", "CC"], &[2, 1, 3]), 0, 100).unwrap();
        let b = build_network(&hap_data(&["CC", "CA", "AA"], &[3, 1, 2]), 0, 100).unwrap();
        let ra = a
            .nodes
            .iter()
            .position(|n| n.residues == b"AA".to_vec())
            .unwrap();
        let rb = b
            .nodes
            .iter()
            .position(|n| n.residues == b"AA".to_vec())
            .unwrap();
        let ca = count_orderings_exact(
            &a,
            &TreeState {
                deleted: vec![],
                root: ra,
            },
            22,
        )
        .unwrap();
        let cb = count_orderings_exact(
            &b,
            &TreeState {
                deleted: vec![],
                root: rb,
            },
            22,
        )
        .unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn unobserved_leaf_orientation_is_impossible() {
        // a(count 1) - b(count 0): rooted at a, b is a childless unobserved
        // node; rooted at b the history is the single mutation b -> a.
        let net = Network {
            nodes: vec![
                NetNode {
                    residues: b"A".to_vec(),
                    count: 1,
                },
                NetNode {
                    residues: b"C".to_vec(),
                    count: 0,
                },
            ],
            edges: vec![(0, 1)],
            loops: vec![],
        };
        let at_a = count_orderings_exact(
            &net,
            &TreeState {
                deleted: vec![],
                root: 0,
            },
            22,
        )
        .unwrap();
        let at_b = count_orderings_exact(
            &net,
            &TreeState {
                deleted: vec![],
                root: 1,
            },
            22,
        )
        .unwrap();
        assert_eq!(at_a, 0);
        assert_eq!(at_b, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(draw_ordering(
            &net,
            &TreeState {
                deleted: vec![],
                root: 0
            },
            &mut rng
        )
        .unwrap()
        .is_none());
        assert_eq!(
            estimate_orderings(
                &net,
                &TreeState {
                    deleted: vec![],
                    root: 0
                },
                &mut rng
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn event_cap_exceeded_signals() {
        let net = single_node_net(30);
        let err = count_orderings_exact(
            &net,
            &TreeState {
                deleted: vec![],
                root: 0,
            },
            22,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EnumerationUnavailable(_)));
    }

    #[test]
    fn draws_replay_cleanly() {
        let net = build_network(&hap_data(&["AA", "CA", "CC", "GA"], &[2, 1, 1, 2]), 0, 100)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in 0..net.n_nodes() {
            let t = TreeState {
                deleted: vec![],
                root: r,
            };
            for _ in 0..200 {
                let draw = draw_ordering(&net, &t, &mut rng).unwrap().unwrap();
                let log_q = replay(&net, &t, &draw.events).unwrap();
                assert!((log_q - draw.log_q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimator_matches_exact_on_random_path_network() {
        let net = build_network(&hap_data(&["AA", "CA", "CC"], &[2, 1, 2]), 0, 100).unwrap();
        let t = TreeState {
            deleted: vec![],
            root: 0,
        };
        let exact = count_orderings_exact(&net, &t, 22).unwrap() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 200_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| estimate_orderings(&net, &t, &mut rng).unwrap())
            .collect();
        let (mean, var) = crate::stats::mean_var(&draws);
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "mean {mean} vs exact {exact}, se {se}"
        );
    }
}
