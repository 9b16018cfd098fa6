//! Posterior summaries: root and ancestral-location probabilities, migration
//! and cluster membership tables, the maximum a posteriori tree, geographic
//! contour ellipses and covariate credibility bands.

use serde::{Deserialize, Serialize};

use crate::clustmodel::ModelContext;
use crate::error::{Error, Result};
use crate::haplonet::{edge_posterior, TreeState};
use crate::sampler::{Diagnostics, PosteriorArchive, SavedDraw};
use crate::seqio::{HaplotypeData, ObservationTable};

/// 95th percentile of the standard normal.
pub const Z_95: f64 = 1.6448536269514722;

/// Mahalanobis radius of the level curve where a bivariate Gaussian density
/// falls to half its mode.
pub const HALF_DENSITY_RADIUS: f64 = 1.1774100225154747; // sqrt(2 ln 2)

/// The posterior summary of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    /// Posterior probability that each network node is the root.
    pub root_probs: Vec<f64>,
    /// Posterior probability that each coordinates-file row is the most
    /// ancestral location; within a shared location the first row carries the
    /// whole mass.
    pub root_loc_probs: Vec<f64>,
    /// Posterior over the number of effective migrations (non-empty clusters
    /// minus one), length max_mig + 1.
    pub mig_probs: Vec<f64>,
    /// Per observed haplotype, the posterior membership fractions over
    /// cluster labels.
    pub cluster_probs: Vec<ClusterMembership>,
    /// Posterior probability of each network edge being in the tree.
    pub edge_total_probs: Vec<f64>,
    /// Most-visited deleted-edge vector.
    pub map_tree: TreeState,
    /// Edges of the MAP tree as (from, to) node indices.
    pub map_edges: Vec<(usize, usize)>,
    /// Depth of every node in the MAP tree, root at level 0.
    pub levels: Vec<usize>,
    /// Posterior mean of each cluster centre per chain.
    pub chain_means: Vec<Vec<Vec<f64>>>,
    /// Observation count of each network node (0 for intermediates).
    pub node_counts: Vec<usize>,
    /// Row indices (0-based) of the three most probable ancestral locations.
    pub top_ancestral_rows: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// Cluster membership row for one observed haplotype.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterMembership {
    pub node: usize,
    pub probs: Vec<f64>,
}

/// One contour ellipse in normalized coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Rotation of the major axis, radians counter-clockwise from east.
    pub angle: f64,
}

impl Ellipse {
    /// The half-max-density ellipse of a bivariate Gaussian.
    pub fn from_gaussian(mu: (f64, f64), geo: &crate::stats::Sym2) -> Ellipse {
        let m = 0.5 * (geo.a + geo.c);
        let s = (0.25 * (geo.a - geo.c).powi(2) + geo.b * geo.b).sqrt();
        let l1 = (m + s).max(0.0);
        let l2 = (m - s).max(0.0);
        let angle = 0.5 * (2.0 * geo.b).atan2(geo.a - geo.c);
        Ellipse {
            center: mu,
            semi_major: HALF_DENSITY_RADIUS * l1.sqrt(),
            semi_minor: HALF_DENSITY_RADIUS * l2.sqrt(),
            angle,
        }
    }

    /// Polygon approximation with `n` vertices.
    pub fn polygon(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let x = self.semi_major * t.cos();
                let y = self.semi_minor * t.sin();
                (
                    self.center.0 + x * self.angle.cos() - y * self.angle.sin(),
                    self.center.1 + x * self.angle.sin() + y * self.angle.cos(),
                )
            })
            .collect()
    }
}

/// Contour ellipses per saved draw plus posterior-mean ellipses, in
/// normalized coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourSet {
    /// (draw index, cluster label, ellipse) for clusters non-empty in that
    /// draw.
    pub per_draw: Vec<(usize, usize, Ellipse)>,
    /// Posterior-mean ellipse per cluster label that is ever occupied.
    pub mean: Vec<(usize, Ellipse)>,
}

/// Per-cluster, per-covariate (5%, 50%, 95%) quantile bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateBands {
    /// bands[label][covariate] = (q05, q50, q95).
    pub bands: Vec<Vec<(f64, f64, f64)>>,
    /// Labels with no occupied draws have `false` here.
    pub occupied: Vec<bool>,
}

/// Compute the full summary report from a posterior archive.
pub fn summarize(
    archive: &PosteriorArchive,
    ctx: &ModelContext,
    obs: &ObservationTable,
) -> Result<SummaryReport> {
    if archive.draws.is_empty() {
        return Err(Error::InvalidState("archive holds no draws".into()));
    }
    let n_nodes = ctx.net.n_nodes();
    let n_draws = archive.draws.len() as f64;
    let n_labels = archive.prior.k_max + 1;

    // Root probabilities from the saved draws.
    let mut root_tally = vec![0u64; n_nodes];
    for d in &archive.draws {
        root_tally[d.root] += 1;
    }
    let root_probs: Vec<f64> = root_tally.iter().map(|&c| c as f64 / n_draws).collect();

    // MAP tree and root.
    let map_vector = archive
        .tree_hash
        .modal_vector()
        .unwrap_or_else(|| ctx.net.default_tree_vector());
    let map_root = root_probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let map_tree = TreeState {
        deleted: map_vector,
        root: map_root,
    };
    let map_edges: Vec<(usize, usize)> = ctx
        .net
        .edges
        .iter()
        .enumerate()
        .filter(|(e, _)| !map_tree.deleted.contains(e))
        .map(|(_, &(a, b))| (a, b))
        .collect();
    let levels = ctx.net.orient(&map_tree).depth;

    // Edge posterior over the saved draws.
    let tree_states: Vec<TreeState> = archive.draws.iter().map(|d| d.tree_state()).collect();
    let edge_total_probs = edge_posterior(&tree_states, &ctx.net);

    // Effective migrations.
    let mut mig_tally = vec![0u64; archive.prior.k_max + 1];
    for d in &archive.draws {
        let eff = d.effective_clusters() - 1;
        if eff < mig_tally.len() {
            mig_tally[eff] += 1;
        }
    }
    let mig_probs: Vec<f64> = mig_tally.iter().map(|&c| c as f64 / n_draws).collect();

    // Cluster membership per observed haplotype.
    let mut cluster_probs = Vec::new();
    for node in ctx.observed_nodes() {
        let obs_idx = &ctx.obs_of_node[node];
        let mut tally = vec![0u64; n_labels];
        for d in &archive.draws {
            for &o in obs_idx {
                tally[d.assign[o]] += 1;
            }
        }
        let denom = n_draws * obs_idx.len() as f64;
        let probs = tally.iter().map(|&c| c as f64 / denom).collect();
        cluster_probs.push(ClusterMembership { node, probs });
    }

    let root_loc_probs = ancestral_locations(archive, ctx, obs)?;
    let mut order: Vec<usize> = (0..root_loc_probs.len()).collect();
    order.sort_by(|&a, &b| {
        root_loc_probs[b]
            .partial_cmp(&root_loc_probs[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top_ancestral_rows: Vec<usize> = order
        .into_iter()
        .filter(|&r| root_loc_probs[r] > 0.0)
        .take(3)
        .collect();

    // Chain means per cluster.
    let mut chain_means = Vec::new();
    for chain in 0..archive.config.chains {
        let draws: Vec<&SavedDraw> = archive.draws_of_chain(chain).collect();
        let mut per_cluster = Vec::with_capacity(n_labels);
        for k in 0..n_labels {
            let mut mean = vec![0.0; ctx.data.dims];
            if !draws.is_empty() {
                for d in &draws {
                    for (j, v) in d.params[k].mu.iter().enumerate() {
                        mean[j] += v / draws.len() as f64;
                    }
                }
            }
            per_cluster.push(mean);
        }
        chain_means.push(per_cluster);
    }

    let node_counts = ctx.net.nodes.iter().map(|n| n.count).collect();

    Ok(SummaryReport {
        root_probs,
        root_loc_probs,
        mig_probs,
        cluster_probs,
        edge_total_probs,
        map_tree,
        map_edges,
        levels,
        chain_means,
        node_counts,
        top_ancestral_rows,
        diagnostics: archive.diagnostics.clone(),
    })
}

/// Posterior probability of each coordinates-file row being the most
/// ancestral location. Per draw, an observed root spreads its mass over its
/// copies' locations; an unobserved root passes the mass to the nearest
/// observed descendants (reachable through unobserved nodes only), shared
/// equally across all their copies. Rows sharing a location report on the
/// first row.
pub fn ancestral_locations(
    archive: &PosteriorArchive,
    ctx: &ModelContext,
    obs: &ObservationTable,
) -> Result<Vec<f64>> {
    let n_rows = obs.file_rows.len();
    let mut probs = vec![0.0; n_rows];
    let n_draws = archive.draws.len() as f64;
    let row_of_location = obs.location_of_row();
    // First row of each location.
    let carrier: Vec<usize> = obs.locations.iter().map(|rows| rows[0]).collect();

    for d in &archive.draws {
        let contributors: Vec<usize> = if ctx.net.nodes[d.root].is_observed() {
            vec![d.root]
        } else {
            nearest_observed_descendants(ctx, &d.tree_state())?
        };
        let total_copies: usize = contributors.iter().map(|&v| ctx.obs_of_node[v].len()).sum();
        if total_copies == 0 {
            continue;
        }
        for &v in &contributors {
            for &o in &ctx.obs_of_node[v] {
                let row = obs.obs[o].file_row;
                let loc = row_of_location[row];
                probs[carrier[loc]] += 1.0 / (total_copies as f64 * n_draws);
            }
        }
    }
    Ok(probs)
}

/// Observed nodes at minimal edge distance from an unobserved root, reachable
/// through unobserved nodes only.
fn nearest_observed_descendants(ctx: &ModelContext, tree: &TreeState) -> Result<Vec<usize>> {
    let adj = ctx.net.tree_neighbors(&tree.deleted);
    let mut depth = vec![usize::MAX; ctx.net.n_nodes()];
    let mut queue = std::collections::VecDeque::new();
    depth[tree.root] = 0;
    queue.push_back(tree.root);
    let mut found: Vec<usize> = Vec::new();
    let mut found_depth = usize::MAX;
    while let Some(u) = queue.pop_front() {
        if depth[u] > found_depth {
            break;
        }
        for &v in &adj[u] {
            if depth[v] != usize::MAX {
                continue;
            }
            depth[v] = depth[u] + 1;
            if ctx.net.nodes[v].is_observed() {
                if depth[v] <= found_depth {
                    found_depth = depth[v];
                    found.push(v);
                }
            } else {
                // Expand only through unobserved intermediates.
                queue.push_back(v);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidState(
            "no observed descendants reachable from the root".into(),
        ));
    }
    found.sort_unstable();
    found.dedup();
    Ok(found)
}

/// Contour ellipses (half-max-density level) per draw and per cluster,
/// plus posterior means.
pub fn contours(archive: &PosteriorArchive) -> ContourSet {
    let n_labels = archive.prior.k_max + 1;
    let mut per_draw = Vec::new();
    let mut sums: Vec<Option<(Vec<f64>, crate::stats::Sym2, usize)>> = vec![None; n_labels];
    for (di, d) in archive.draws.iter().enumerate() {
        let mut occupied = vec![false; n_labels];
        for &c in &d.assign {
            occupied[c] = true;
        }
        for (k, &occ) in occupied.iter().enumerate() {
            if !occ {
                continue;
            }
            let p = &d.params[k];
            per_draw.push((di, k, Ellipse::from_gaussian((p.mu[0], p.mu[1]), &p.geo)));
            let entry = sums[k].get_or_insert((vec![0.0; p.mu.len()], crate::stats::Sym2::new(0.0, 0.0, 0.0), 0));
            for (j, v) in p.mu.iter().enumerate() {
                entry.0[j] += v;
            }
            entry.1 = entry.1.add(&p.geo);
            entry.2 += 1;
        }
    }
    let mean = sums
        .into_iter()
        .enumerate()
        .filter_map(|(k, s)| {
            let (mu_sum, geo_sum, n) = s?;
            let n = n as f64;
            Some((
                k,
                Ellipse::from_gaussian(
                    (mu_sum[0] / n, mu_sum[1] / n),
                    &geo_sum.scale(1.0 / n),
                ),
            ))
        })
        .collect();
    ContourSet { per_draw, mean }
}

/// Per-cluster, per-covariate quantile bands: the medians over draws of the
/// per-draw Normal 5%, 50% and 95% quantiles.
pub fn covariate_bands(archive: &PosteriorArchive, hap: &HaplotypeData) -> Result<CovariateBands> {
    let _ = hap;
    let n_labels = archive.prior.k_max + 1;
    let dims = archive.config.dims;
    if dims < 3 {
        return Err(Error::InvalidState(
            "covariate bands need at least one covariate (dims >= 3)".into(),
        ));
    }
    let n_cov = dims - 2;
    let mut bands = vec![vec![(0.0, 0.0, 0.0); n_cov]; n_labels];
    let mut occupied = vec![false; n_labels];
    for k in 0..n_labels {
        // Quantiles of each draw where the cluster is non-empty.
        let mut lows: Vec<Vec<f64>> = vec![Vec::new(); n_cov];
        let mut mids: Vec<Vec<f64>> = vec![Vec::new(); n_cov];
        let mut highs: Vec<Vec<f64>> = vec![Vec::new(); n_cov];
        for d in &archive.draws {
            if !d.assign.iter().any(|&c| c == k) {
                continue;
            }
            for j in 0..n_cov {
                let mu = d.params[k].mu[j + 2];
                let sd = d.params[k].diag[j].sqrt();
                lows[j].push(mu - Z_95 * sd);
                mids[j].push(mu);
                highs[j].push(mu + Z_95 * sd);
            }
        }
        if lows[0].is_empty() {
            continue;
        }
        occupied[k] = true;
        for j in 0..n_cov {
            bands[k][j] = (median(&mut lows[j]), median(&mut mids[j]), median(&mut highs[j]));
        }
    }
    Ok(CovariateBands { bands, occupied })
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustmodel::{ClusterParams, PriorConfig};
    use crate::sampler::{Diagnostics, PosteriorArchive, RunConfig, SavedDraw};
    use crate::stats::Sym2;
    use crate::testutil::{make_ctx, obs_table, spread_coords};

    fn dummy_diag() -> Diagnostics {
        Diagnostics {
            root_tv: 0.0,
            root_converged: true,
            cluster_mean_discrepancy: 0.0,
            map_effective_agree: true,
            cluster_converged: true,
            converged: true,
        }
    }

    fn params_at(mu: Vec<f64>, geo: Sym2, n_cov: usize) -> ClusterParams {
        ClusterParams {
            mu,
            geo,
            diag: vec![1.0; n_cov],
        }
    }

    fn fake_archive(
        draws: Vec<SavedDraw>,
        k_max: usize,
        dims: usize,
    ) -> PosteriorArchive {
        let mut tree_hash = crate::haplonet::TreeHashTable::new();
        for d in &draws {
            tree_hash.record(&d.deleted);
        }
        let mut cfg = RunConfig::new(k_max, 100, 0, draws.len(), dims, 1);
        cfg.chains = 2;
        PosteriorArchive {
            config: cfg,
            prior: PriorConfig {
                k_max,
                psi: 1.0,
                g: 30,
                v: 4.0,
            },
            draws,
            tree_hash,
            per_chain_hash: vec![],
            root_counts: vec![],
            pivot: vec![],
            acceptance: vec![],
            diagnostics: dummy_diag(),
        }
    }

    fn draw(
        chain: usize,
        root: usize,
        assign: Vec<usize>,
        params: Vec<ClusterParams>,
    ) -> SavedDraw {
        SavedDraw {
            chain,
            iteration: 0,
            root,
            deleted: vec![],
            k: params.len() - 1,
            m: vec![],
            assign,
            params,
            gamma: 6,
            w_c: 0.5,
            log_post: 0.0,
        }
    }

    #[test]
    fn summary_counting_oracle() {
        let (ctx, _) = make_ctx(&["AA", "CA", "CC"], &[2, 1, 1], &spread_coords(4));
        let obs = obs_table(&spread_coords(4));
        let p0 = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let p1 = params_at(vec![1.0, 1.0], Sym2::identity(), 0);
        let draws = vec![
            draw(0, 1, vec![0, 0, 0, 0], vec![p0.clone(), p1.clone()]),
            draw(0, 1, vec![0, 0, 1, 1], vec![p0.clone(), p1.clone()]),
            draw(1, 0, vec![0, 0, 0, 1], vec![p0.clone(), p1.clone()]),
            draw(1, 1, vec![1, 1, 1, 0], vec![p0, p1]),
        ];
        let archive = fake_archive(draws, 1, 2);
        let report = summarize(&archive, &ctx, &obs).unwrap();

        // Root probabilities by direct counting: roots 1,1,0,1.
        assert_eq!(report.root_probs[0], 0.25);
        assert_eq!(report.root_probs[1], 0.75);
        assert_eq!(report.root_probs[2], 0.0);
        let s: f64 = report.root_probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);

        // Effective migrations: draws have 1, 2, 2, 2 occupied clusters.
        assert_eq!(report.mig_probs, vec![0.25, 0.75]);
        assert!((report.mig_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        // Cluster membership of haplotype node 0 (observations 0 and 1): all
        // four draws put both copies in one cluster; draw 4 flips to label 1.
        let row0 = &report.cluster_probs[0];
        assert_eq!(row0.node, 0);
        assert!((row0.probs[0] - 0.75).abs() < 1e-9);
        assert!((row0.probs[1] - 0.25).abs() < 1e-9);
        for row in &report.cluster_probs {
            let s: f64 = row.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }

        // Loop-free network: every edge has posterior probability one.
        assert!(report.edge_total_probs.iter().all(|&p| p == 1.0));

        // Levels: root at level 0, neighbors differ by one.
        assert_eq!(report.levels[report.map_tree.root], 0);
        for &(a, b) in &report.map_edges {
            let d = report.levels[a] as i64 - report.levels[b] as i64;
            assert_eq!(d.abs(), 1);
        }
    }

    #[test]
    fn root_probs_indicator_when_constant() {
        let (ctx, _) = make_ctx(&["AA", "CA", "CC"], &[1, 1, 1], &spread_coords(3));
        let obs = obs_table(&spread_coords(3));
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let draws: Vec<SavedDraw> = (0..10)
            .map(|_| draw(0, 1, vec![0, 0, 0], vec![p.clone()]))
            .collect();
        let archive = fake_archive(draws, 0, 2);
        let report = summarize(&archive, &ctx, &obs).unwrap();
        assert_eq!(report.root_probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(report.map_tree.root, 1);
    }

    #[test]
    fn ancestral_observed_root_single_location() {
        let (ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let obs = obs_table(&spread_coords(2));
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let draws = vec![draw(0, 0, vec![0, 0], vec![p])];
        let archive = fake_archive(draws, 0, 2);
        let probs = ancestral_locations(&archive, &ctx, &obs).unwrap();
        assert_eq!(probs, vec![1.0, 0.0]);
    }

    #[test]
    fn ancestral_mass_proportional_to_copies() {
        // Root haplotype observed twice at row 0's location and once at row
        // 1's: mass (2/3, 1/3).
        let coords = vec![
            vec![10.0, 0.0],
            vec![10.0, 0.0],
            vec![20.0, 5.0],
            vec![30.0, 9.0],
        ];
        let (ctx, _) = make_ctx(&["A", "C"], &[3, 1], &coords);
        let obs = obs_table(&coords);
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let draws = vec![draw(0, 0, vec![0; 4], vec![p])];
        let archive = fake_archive(draws, 0, 2);
        let probs = ancestral_locations(&archive, &ctx, &obs).unwrap();
        // Rows 0 and 1 share a location; the first row carries its mass.
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(probs[1], 0.0);
        assert!((probs[2] - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(probs[3], 0.0);
    }

    #[test]
    fn ancestral_unobserved_root_splits_between_descendants() {
        // Two haplotypes two mutations apart: the network holds unobserved
        // intermediates. Root at an intermediate: both observed ends are
        // equally divergent, one copy each.
        let (ctx, _) = make_ctx(&["AA", "CC"], &[1, 1], &spread_coords(2));
        let obs = obs_table(&spread_coords(2));
        let intermediate = (0..ctx.net.n_nodes())
            .find(|&v| !ctx.net.nodes[v].is_observed())
            .unwrap();
        // Break the square so the chosen intermediate keeps both observed
        // ends as tree neighbors: delete the edge joining the other
        // intermediate to node 1.
        let other = (0..ctx.net.n_nodes())
            .find(|&v| !ctx.net.nodes[v].is_observed() && v != intermediate)
            .unwrap();
        let deleted_edge = ctx
            .net
            .edges
            .iter()
            .position(|&(a, b)| (a, b) == (1, other) || (a, b) == (other, 1))
            .unwrap();
        assert!(ctx.net.is_spanning_tree(&[deleted_edge]));
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let mut d = draw(0, intermediate, vec![0, 0], vec![p]);
        d.deleted = vec![deleted_edge];
        let archive = fake_archive(vec![d], 0, 2);
        let probs = ancestral_locations(&archive, &ctx, &obs).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-9);
        assert!((probs[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn contour_radius_for_identity_covariance() {
        let e = Ellipse::from_gaussian((0.0, 0.0), &Sym2::identity());
        assert!((e.semi_major - HALF_DENSITY_RADIUS).abs() < 1e-12);
        assert!((e.semi_minor - HALF_DENSITY_RADIUS).abs() < 1e-12);
    }

    #[test]
    fn contour_axes_scale_with_variances() {
        let e = Ellipse::from_gaussian((1.0, 2.0), &Sym2::new(4.0, 0.0, 1.0));
        assert!((e.semi_major - 2.0 * HALF_DENSITY_RADIUS).abs() < 1e-12);
        assert!((e.semi_minor - HALF_DENSITY_RADIUS).abs() < 1e-12);
        assert_eq!(e.center, (1.0, 2.0));
    }

    #[test]
    fn contour_set_covers_occupied_clusters() {
        let (ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let _ = &ctx;
        let p0 = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let p1 = params_at(vec![5.0, 5.0], Sym2::identity(), 0);
        let draws = vec![
            draw(0, 0, vec![0, 0], vec![p0.clone(), p1.clone()]),
            draw(0, 0, vec![0, 1], vec![p0, p1]),
        ];
        let archive = fake_archive(draws, 1, 2);
        let set = contours(&archive);
        // Draw 0 occupies cluster 0 only; draw 1 occupies both.
        assert_eq!(set.per_draw.len(), 3);
        assert_eq!(set.mean.len(), 2);
    }

    #[test]
    fn bands_match_analytic_quantiles_for_constant_draws() {
        let (_ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let mu_cov = 2.5;
        let var_cov = 4.0;
        let params = ClusterParams {
            mu: vec![0.0, 0.0, mu_cov],
            geo: Sym2::identity(),
            diag: vec![var_cov],
        };
        let draws: Vec<SavedDraw> = (0..9)
            .map(|_| draw(0, 0, vec![0, 0], vec![params.clone()]))
            .collect();
        let archive = fake_archive(draws, 0, 3);
        let hap = crate::testutil::hap_data(&["A", "C"], &[1, 1]);
        let bands = covariate_bands(&archive, &hap).unwrap();
        let (lo, mid, hi) = bands.bands[0][0];
        assert!((mid - mu_cov).abs() < 1e-12);
        assert!((lo - (mu_cov - Z_95 * 2.0)).abs() < 1e-12);
        assert!((hi - (mu_cov + Z_95 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn bands_require_covariates() {
        let (_ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        let archive = fake_archive(vec![draw(0, 0, vec![0, 0], vec![p])], 0, 2);
        let hap = crate::testutil::hap_data(&["A", "C"], &[1, 1]);
        assert!(covariate_bands(&archive, &hap).is_err());
    }

    #[test]
    fn top_ancestral_rows_sorted_by_mass() {
        let coords = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![9.0, 2.0]];
        let (ctx, _) = make_ctx(&["A", "C", "G"], &[1, 1, 1], &coords);
        let obs = obs_table(&coords);
        let p = params_at(vec![0.0, 0.0], Sym2::identity(), 0);
        // Three draws root at node 1, one at node 0.
        let draws = vec![
            draw(0, 1, vec![0, 0, 0], vec![p.clone()]),
            draw(0, 1, vec![0, 0, 0], vec![p.clone()]),
            draw(1, 1, vec![0, 0, 0], vec![p.clone()]),
            draw(1, 0, vec![0, 0, 0], vec![p]),
        ];
        let archive = fake_archive(draws, 0, 2);
        let report = summarize(&archive, &ctx, &obs).unwrap();
        assert_eq!(report.top_ancestral_rows[0], 1);
        assert_eq!(report.top_ancestral_rows[1], 0);
        let s: f64 = report.root_loc_probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}
