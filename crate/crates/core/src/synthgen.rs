//! Forward simulation from the generative model: a random haplotype tree with
//! one fresh mutated site per edge, migration events founding clusters, and
//! Gaussian observations around cluster centres. Used by recovery tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::clustmodel::{completable, BoundaryStructure, ModelContext, NormalizedData, PartialLabels};
use crate::error::{Error, Result};
use crate::haplonet::TreeState;
use crate::seqio::{FileRow, Observation, ObservationTable, SequenceSet};

/// Simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_haplotypes: usize,
    pub n_observations: usize,
    /// Alignment length; needs one fresh site per tree edge.
    pub sites: usize,
    /// True number of migrations (clusters = true_k + 1, all non-empty).
    pub true_k: usize,
    /// Distance between adjacent cluster centres, in units of the cluster
    /// standard deviation.
    pub separation: f64,
    /// Within-cluster standard deviation of both coordinates.
    pub geo_sd: f64,
    pub seed: u64,
}

/// What the simulator actually did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Haplotype tree edges as (parent, child) indices.
    pub tree_edges: Vec<(usize, usize)>,
    pub root: usize,
    pub k: usize,
    /// Migrating haplotype indices (sorted multiset).
    pub m: Vec<usize>,
    /// Cluster label per observation.
    pub assign: Vec<usize>,
    pub cluster_centers: Vec<(f64, f64)>,
}

/// Generate a dataset. Each tree edge mutates a previously unused site, so
/// the haplotype network reconstructs the generating tree exactly at ds = 0.
pub fn generate(cfg: &SynthConfig) -> Result<(SequenceSet, ObservationTable, GroundTruth)> {
    if cfg.n_haplotypes < 2 {
        return Err(Error::InvalidConfig("need at least 2 haplotypes".into()));
    }
    if cfg.sites < cfg.n_haplotypes - 1 {
        return Err(Error::InvalidConfig(format!(
            "{} sites cannot host {} tree edges; provide at least {} sites",
            cfg.sites,
            cfg.n_haplotypes - 1,
            cfg.n_haplotypes - 1
        )));
    }
    if cfg.n_observations < cfg.n_haplotypes {
        return Err(Error::InvalidConfig(
            "every haplotype needs at least one observation".into(),
        ));
    }
    if cfg.true_k > cfg.n_haplotypes {
        return Err(Error::InvalidConfig(
            "true_k cannot exceed the number of haplotypes".into(),
        ));
    }
    if cfg.geo_sd <= 0.0 || cfg.separation < 0.0 {
        return Err(Error::InvalidConfig("scales must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_haplotypes;

    // Random attachment tree.
    let mut parent = vec![usize::MAX; n];
    let mut tree_edges = Vec::with_capacity(n - 1);
    for v in 1..n {
        let p = rng.gen_range(0..v);
        parent[v] = p;
        tree_edges.push((p, v));
    }

    // Root sequence, then one fresh mutated site per edge.
    const BASES: [u8; 4] = [b'A', b'C', b'G', b'T'];
    let root_seq: Vec<u8> = (0..cfg.sites).map(|_| BASES[rng.gen_range(0..4)]).collect();
    let mut rows: Vec<Vec<u8>> = vec![Vec::new(); n];
    rows[0] = root_seq;
    for v in 1..n {
        let mut seq = rows[parent[v]].clone();
        let site = v - 1;
        let old = seq[site];
        let mut new = BASES[rng.gen_range(0..4)];
        while new == old {
            new = BASES[rng.gen_range(0..4)];
        }
        seq[site] = new;
        rows[v] = seq;
    }

    // Observation counts: one each, extras spread at random.
    let mut counts = vec![1usize; n];
    for _ in 0..cfg.n_observations - n {
        counts[rng.gen_range(0..n)] += 1;
    }

    // Migrating haplotypes: weighted by observation counts, like the prior.
    let k = cfg.true_k;
    let mut m = Vec::with_capacity(k);
    for _ in 0..k {
        let mut t = rng.gen_range(0..cfg.n_observations);
        let mut pick = 0;
        for (v, &c) in counts.iter().enumerate() {
            if t < c {
                pick = v;
                break;
            }
            t -= c;
        }
        m.push(pick);
    }
    m.sort_unstable();

    // A tree-valid clustering with every cluster non-empty, grown through the
    // same boundary machinery the sampler uses (uniform fits).
    let assign = sample_valid_clustering(&rows, &counts, &tree_edges, &m, k + 1, &mut rng)?;

    // Cluster centres on a line, separated in units of the cluster sd.
    let cluster_centers: Vec<(f64, f64)> = (0..=k)
        .map(|l| (l as f64 * cfg.separation * cfg.geo_sd, 0.0))
        .collect();

    // Observations, haplotype-major.
    let labels: Vec<String> = (1..=cfg.n_observations).map(|i| format!("seq{i}")).collect();
    let mut residues = Vec::with_capacity(cfg.n_observations);
    let mut obs = Vec::with_capacity(cfg.n_observations);
    let mut file_rows = Vec::with_capacity(cfg.n_observations);
    let normal = rand_distr::Normal::new(0.0, cfg.geo_sd)
        .map_err(|e| Error::Internal(format!("normal: {e}")))?;
    let mut obs_idx = 0;
    for (v, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            residues.push(rows[v].clone());
            let center = cluster_centers[assign[obs_idx]];
            let lon = center.0 + normal.sample(&mut rng);
            let lat = center.1 + normal.sample(&mut rng);
            obs.push(Observation {
                lon,
                lat,
                covariates: vec![],
                sequence_id: obs_idx + 1,
                file_row: obs_idx,
            });
            file_rows.push(FileRow {
                lon,
                lat,
                covariates: vec![],
                line: obs_idx + 1,
            });
            obs_idx += 1;
        }
    }

    let seqs = SequenceSet { labels, residues };
    let locations = (0..obs.len()).map(|i| vec![i]).collect();
    let table = ObservationTable {
        obs,
        file_rows,
        locations,
        dims: 2,
    };
    let truth = GroundTruth {
        tree_edges,
        root: 0,
        k,
        m,
        assign,
        cluster_centers,
    };
    Ok((seqs, table, truth))
}

/// Sample a uniform-ish valid clustering over the generated tree with all
/// labels occupied, by random-order constrained growth with flat fits.
fn sample_valid_clustering(
    rows: &[Vec<u8>],
    counts: &[usize],
    tree_edges: &[(usize, usize)],
    m: &[usize],
    n_labels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n_obs: usize = counts.iter().sum();
    if n_labels == 1 {
        return Ok(vec![0; n_obs]);
    }
    // A throwaway context: the growth below only uses tree structure.
    let net = crate::haplonet::Network {
        nodes: rows
            .iter()
            .zip(counts)
            .map(|(r, &c)| crate::haplonet::NetNode {
                residues: r.clone(),
                count: c,
            })
            .collect(),
        edges: tree_edges
            .iter()
            .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect(),
        loops: vec![],
    };
    let data = NormalizedData {
        y: vec![vec![0.0, 0.0]; n_obs],
        dims: 2,
        geo_center: (0.0, 0.0),
        geo_scale: 1.0,
        cov_centers: vec![],
        cov_scales: vec![],
    };
    let mut node_of_obs = Vec::with_capacity(n_obs);
    for (v, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            node_of_obs.push(v);
        }
    }
    let mut obs_of_node = vec![Vec::new(); rows.len()];
    for (i, &v) in node_of_obs.iter().enumerate() {
        obs_of_node[v].push(i);
    }
    let ctx = ModelContext {
        net,
        data,
        node_of_obs,
        obs_of_node,
    };
    let tree = TreeState {
        deleted: vec![],
        root: 0,
    };

    for _attempt in 0..200 {
        let bs = BoundaryStructure::new(&ctx, &tree, m);
        let mut order: Vec<usize> = (0..bs.units.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut labels = PartialLabels::empty(&bs, &ctx, n_labels);
        let mut assign = vec![usize::MAX; n_obs];
        let mut ok = true;
        for &ui in &order {
            let unit = &bs.units[ui];
            let admissible: Vec<usize> = (0..n_labels)
                .filter(|&l| {
                    let mut trial = labels.clone();
                    trial.assign_unit(&bs, unit, l);
                    completable(&bs, &trial)
                })
                .collect();
            if admissible.is_empty() {
                ok = false;
                break;
            }
            let l = admissible[rng.gen_range(0..admissible.len())];
            labels.assign_unit(&bs, unit, l);
            for &o in bs.unit_obs(unit) {
                assign[o] = l;
            }
        }
        if !ok {
            continue;
        }
        let mut seen = vec![false; n_labels];
        for &a in &assign {
            seen[a] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(assign);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not place {} non-empty clusters on this tree; use fewer migrations or more observations",
        n_labels
    )))
}

/// Serialize sequences in the NEXUS format the parser accepts.
pub fn to_nexus(seqs: &SequenceSet) -> String {
    let mut out = String::new();
    out.push_str("#NEXUS\nBEGIN DATA;\n");
    out.push_str(&format!(
        "DIMENSIONS NTAX={} NCHAR={};\n",
        seqs.n(),
        seqs.len()
    ));
    out.push_str("FORMAT DATATYPE=DNA GAP=-;\nMATRIX\n");
    for (label, row) in seqs.labels.iter().zip(&seqs.residues) {
        out.push_str(label);
        out.push(' ');
        out.push_str(&String::from_utf8_lossy(row));
        out.push('\n');
    }
    out.push_str(";\nEND;\n");
    out
}

/// Serialize the coordinates table in the whitespace format the parser
/// accepts, one observation per line.
pub fn to_coords_text(table: &ObservationTable) -> String {
    let mut out = String::new();
    for o in &table.obs {
        out.push_str(&format!("{:.6} {:.6}", o.lon, o.lat));
        for c in &o.covariates {
            out.push_str(&format!(" {c:.6}"));
        }
        out.push_str(&format!(" {}\n", o.sequence_id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haplonet::build_network;
    use crate::seqio::{collapse_haplotypes, parse_coords, parse_nexus};

    fn base_cfg() -> SynthConfig {
        SynthConfig {
            n_haplotypes: 5,
            n_observations: 30,
            sites: 10,
            true_k: 1,
            separation: 6.0,
            geo_sd: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn zero_migrations_single_cloud() {
        let mut cfg = base_cfg();
        cfg.true_k = 0;
        let (_, table, truth) = generate(&cfg).unwrap();
        assert!(truth.assign.iter().all(|&a| a == 0));
        assert_eq!(table.n_obs(), 30);
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let cfg = base_cfg();
        let (s1, t1, _) = generate(&cfg).unwrap();
        let (s2, t2, _) = generate(&cfg).unwrap();
        assert_eq!(to_nexus(&s1), to_nexus(&s2));
        assert_eq!(to_coords_text(&t1), to_coords_text(&t2));
    }

    #[test]
    fn infeasible_site_count_rejected() {
        let mut cfg = base_cfg();
        cfg.sites = 2;
        assert!(matches!(
            generate(&cfg).unwrap_err(),
            Error::InvalidConfig(_)
        ));
    }

    #[test]
    fn network_reconstructs_generating_tree() {
        let cfg = base_cfg();
        let (seqs, _, truth) = generate(&cfg).unwrap();
        let reparsed = parse_nexus(&to_nexus(&seqs)).unwrap();
        let hap = collapse_haplotypes(&reparsed).unwrap();
        assert_eq!(hap.n(), cfg.n_haplotypes);
        let net = build_network(&hap, 0, 1000).unwrap();
        assert_eq!(net.n_nodes(), cfg.n_haplotypes, "no intermediates needed");
        assert_eq!(net.n_loop(), 0);
        let mut expected: Vec<(usize, usize)> = truth
            .tree_edges
            .iter()
            .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        expected.sort_unstable();
        let mut got = net.edges.clone();
        got.sort_unstable();
        assert_eq!(expected, got);
    }

    #[test]
    fn generated_clustering_is_valid_and_full() {
        for seed in 0..5u64 {
            let mut cfg = base_cfg();
            cfg.true_k = 2;
            cfg.seed = seed;
            let (seqs, table, truth) = generate(&cfg).unwrap();
            let hap = collapse_haplotypes(&seqs).unwrap();
            let net = build_network(&hap, 0, 1000).unwrap();
            let data = crate::clustmodel::normalize(&table).unwrap();
            let ctx = ModelContext::new(net, data, &hap, &table).unwrap();
            let tree = TreeState {
                deleted: vec![],
                root: truth.root,
            };
            assert!(crate::clustmodel::is_valid_clustering(
                &ctx,
                &tree,
                &truth.assign,
                &truth.m,
                truth.k + 1
            ));
            let mut seen = vec![false; truth.k + 1];
            for &a in &truth.assign {
                seen[a] = true;
            }
            assert!(seen.iter().all(|&s| s), "all clusters non-empty");
        }
    }

    #[test]
    fn two_separated_clusters_recoverable_by_two_means() {
        let mut cfg = base_cfg();
        cfg.true_k = 1;
        cfg.n_observations = 60;
        cfg.separation = 6.0;
        let (_, table, truth) = generate(&cfg).unwrap();

        // Plain 2-means on the coordinates.
        let pts: Vec<(f64, f64)> = table.obs.iter().map(|o| (o.lon, o.lat)).collect();
        let (mut c0, mut c1) = (pts[0], pts[1]);
        // Start from extreme points to avoid a degenerate split.
        for &p in &pts {
            if p.0 < c0.0 {
                c0 = p;
            }
            if p.0 > c1.0 {
                c1 = p;
            }
        }
        let mut assign = vec![0usize; pts.len()];
        for _ in 0..50 {
            for (i, &(x, y)) in pts.iter().enumerate() {
                let d0 = (x - c0.0).powi(2) + (y - c0.1).powi(2);
                let d1 = (x - c1.0).powi(2) + (y - c1.1).powi(2);
                assign[i] = usize::from(d1 < d0);
            }
            let mut sums = [(0.0, 0.0, 0.0); 2];
            for (i, &(x, y)) in pts.iter().enumerate() {
                let s = &mut sums[assign[i]];
                s.0 += x;
                s.1 += y;
                s.2 += 1.0;
            }
            if sums[0].2 > 0.0 {
                c0 = (sums[0].0 / sums[0].2, sums[0].1 / sums[0].2);
            }
            if sums[1].2 > 0.0 {
                c1 = (sums[1].0 / sums[1].2, sums[1].1 / sums[1].2);
            }
        }
        let agree = truth
            .assign
            .iter()
            .zip(&assign)
            .filter(|(a, b)| a == b)
            .count();
        let accuracy = agree.max(pts.len() - agree) as f64 / pts.len() as f64;
        assert!(accuracy >= 0.95, "2-means recovery accuracy {accuracy}");
    }

    #[test]
    fn emitted_files_reparse_identically() {
        let cfg = base_cfg();
        let (seqs, table, _) = generate(&cfg).unwrap();
        let reparsed_seqs = parse_nexus(&to_nexus(&seqs)).unwrap();
        assert_eq!(reparsed_seqs.labels, seqs.labels);
        assert_eq!(reparsed_seqs.residues, seqs.residues);
        let reparsed_table = parse_coords(&to_coords_text(&table), 2).unwrap();
        assert_eq!(reparsed_table.n_obs(), table.n_obs());
        for (a, b) in reparsed_table.obs.iter().zip(&table.obs) {
            assert_eq!(a.sequence_id, b.sequence_id);
            assert!((a.lon - b.lon).abs() < 1e-5);
        }
    }
}
