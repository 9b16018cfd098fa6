//! Migration-constrained Gaussian clustering model.
//!
//! Observations are normalized coordinates plus covariates. A clustering is
//! constrained by the haplotype tree: migrating haplotype copies act as
//! cluster boundaries, every other haplotype inherits the cluster of its tree
//! neighborhood, and each cluster's member haplotypes must form a connected
//! subnetwork of the tree. Within a cluster, observations are Gaussian with a
//! free 2x2 longitude/latitude covariance block and independent variances for
//! the remaining covariates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haplonet::{Network, TreeState};
use crate::seqio::{HaplotypeData, ObservationTable};
use crate::stats::{
    ln_inv_gamma, ln_inv_wishart2, ln_normal1, ln_normal2, sample_inv_gamma, sample_inv_wishart2,
    sample_normal2, Sym2,
};

/// Observations normalized to the model's scale: longitude/latitude centered
/// and scaled by one shared factor so their average variance is 1, covariates
/// standardized marginally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedData {
    /// N x d matrix of normalized observations.
    pub y: Vec<Vec<f64>>,
    pub dims: usize,
    pub geo_center: (f64, f64),
    /// Shared multiplier applied to both centered geographic coordinates.
    pub geo_scale: f64,
    pub cov_centers: Vec<f64>,
    /// Per-covariate multipliers (1 / standard deviation).
    pub cov_scales: Vec<f64>,
}

impl NormalizedData {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Map a normalized point back to raw units.
    pub fn denormalize_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        out.push(x[0] / self.geo_scale + self.geo_center.0);
        out.push(x[1] / self.geo_scale + self.geo_center.1);
        for (j, &v) in x.iter().enumerate().skip(2) {
            out.push(v / self.cov_scales[j - 2] + self.cov_centers[j - 2]);
        }
        out
    }

    /// Map a raw point into normalized units.
    pub fn normalize_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        out.push((x[0] - self.geo_center.0) * self.geo_scale);
        out.push((x[1] - self.geo_center.1) * self.geo_scale);
        for (j, &v) in x.iter().enumerate().skip(2) {
            out.push((v - self.cov_centers[j - 2]) * self.cov_scales[j - 2]);
        }
        out
    }

    /// Largest extent of the two normalized geographic columns.
    pub fn geo_range(&self) -> f64 {
        let mut range = 0.0f64;
        for dim in 0..2 {
            let lo = self.y.iter().map(|r| r[dim]).fold(f64::INFINITY, f64::min);
            let hi = self
                .y
                .iter()
                .map(|r| r[dim])
                .fold(f64::NEG_INFINITY, f64::max);
            range = range.max(hi - lo);
        }
        range
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    crate::stats::mean_var(xs).1
}

/// Normalize raw observations. Longitude and latitude are centered by their
/// means and multiplied by the single factor that makes their average variance
/// 1; covariates are standardized to mean 0 and variance 1.
pub fn normalize(obs: &ObservationTable) -> Result<NormalizedData> {
    let n = obs.n_obs();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let lons: Vec<f64> = obs.obs.iter().map(|o| o.lon).collect();
    let lats: Vec<f64> = obs.obs.iter().map(|o| o.lat).collect();
    let mean_lon = lons.iter().sum::<f64>() / n as f64;
    let mean_lat = lats.iter().sum::<f64>() / n as f64;
    let var_avg = 0.5 * (sample_variance(&lons) + sample_variance(&lats));
    if var_avg <= 0.0 {
        return Err(Error::DegenerateData(
            "all observations share one geographic location; nothing to cluster".into(),
        ));
    }
    let geo_scale = 1.0 / var_avg.sqrt();

    let n_cov = obs.dims - 2;
    let mut cov_centers = Vec::with_capacity(n_cov);
    let mut cov_scales = Vec::with_capacity(n_cov);
    for j in 0..n_cov {
        let xs: Vec<f64> = obs.obs.iter().map(|o| o.covariates[j]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = sample_variance(&xs);
        if var <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "covariate {} has zero variance; drop it or provide varying values",
                j + 1
            )));
        }
        cov_centers.push(mean);
        cov_scales.push(1.0 / var.sqrt());
    }

    let y = obs
        .obs
        .iter()
        .map(|o| {
            let mut row = Vec::with_capacity(obs.dims);
            row.push((o.lon - mean_lon) * geo_scale);
            row.push((o.lat - mean_lat) * geo_scale);
            for j in 0..n_cov {
                row.push((o.covariates[j] - cov_centers[j]) * cov_scales[j]);
            }
            row
        })
        .collect();

    Ok(NormalizedData {
        y,
        dims: obs.dims,
        geo_center: (mean_lon, mean_lat),
        geo_scale,
        cov_centers,
        cov_scales,
    })
}

/// Prior hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Maximum number of migrations; K is uniform on {0..k_max}.
    pub k_max: usize,
    /// Scale of the Inverse-Wishart / Inverse-Gamma covariance priors.
    pub psi: f64,
    /// Upper bound of the uniform prior on the concentration gamma in {4..g}.
    pub g: usize,
    /// Diagonal value of the Gaussian prior covariance V for cluster means.
    pub v: f64,
}

impl PriorConfig {
    /// Defaults: `g` = 30, `V` = 4I, and `psi` calibrated so that under the
    /// midpoint concentration g/2 the prior mean cluster standard deviation is
    /// about 30% of the normalized data range.
    pub fn default_for(data: &NormalizedData, k_max: usize) -> PriorConfig {
        let g = 30usize;
        let gamma_mid = g as f64 / 2.0;
        let range = data.geo_range().max(1e-6);
        let target_sd = 0.3 * range / 2.0;
        let psi = (gamma_mid - 3.0) * target_sd * target_sd;
        PriorConfig {
            k_max,
            psi,
            g,
            v: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi <= 0.0 {
            return Err(Error::InvalidConfig("psi must be positive".into()));
        }
        if self.g < 4 {
            return Err(Error::InvalidConfig("g must be at least 4".into()));
        }
        if self.v <= 0.0 {
            return Err(Error::InvalidConfig("V must be positive definite".into()));
        }
        Ok(())
    }
}

/// Mean and structured covariance of one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterParams {
    pub mu: Vec<f64>,
    /// Free 2x2 longitude/latitude covariance block.
    pub geo: Sym2,
    /// Variances of the remaining covariate dimensions.
    pub diag: Vec<f64>,
}

impl ClusterParams {
    /// Log Gaussian density of one observation under this cluster.
    pub fn ln_density(&self, y: &[f64]) -> Result<f64> {
        let mut ll = ln_normal2(y[0], y[1], self.mu[0], self.mu[1], &self.geo)?;
        for j in 2..y.len() {
            ll += ln_normal1(y[j], self.mu[j], self.diag[j - 2]);
        }
        Ok(ll)
    }

    pub fn is_pd(&self) -> bool {
        self.geo.is_pd() && self.diag.iter().all(|&v| v > 0.0)
    }
}

/// Draw cluster parameters from their prior.
pub fn sample_params_prior<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &PriorConfig,
    gamma: usize,
    dims: usize,
) -> Result<ClusterParams> {
    let geo = sample_inv_wishart2(rng, gamma as f64, &Sym2::scaled_identity(cfg.psi))?;
    let diag: Vec<f64> = (0..dims - 2)
        .map(|_| sample_inv_gamma(rng, gamma as f64, cfg.psi))
        .collect::<Result<_>>()?;
    let mut mu = Vec::with_capacity(dims);
    for _ in 0..dims {
        let (a, _) = sample_normal2(rng, 0.0, 0.0, &Sym2::scaled_identity(cfg.v))?;
        mu.push(a);
    }
    Ok(ClusterParams { mu, geo, diag })
}

/// Full clustering state: migration count, migrating haplotypes, assignments,
/// per-cluster parameters and the concentration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterState {
    /// Number of migrations K; clusters carry labels 0..=K.
    pub k: usize,
    /// Multiset of migrating haplotype node ids (kept sorted).
    pub m: Vec<usize>,
    /// Cluster label of each observation.
    pub assign: Vec<usize>,
    /// Parameters of clusters 0..=K.
    pub params: Vec<ClusterParams>,
    /// Inverse-Wishart / Inverse-Gamma concentration, in {4..g}.
    pub gamma: usize,
    /// Retention weight of the previous clustering in growth proposals.
    pub w_c: f64,
}

impl ClusterState {
    pub fn n_clusters(&self) -> usize {
        self.k + 1
    }

    /// Observation counts per cluster label.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k + 1];
        for &c in &self.assign {
            sizes[c] += 1;
        }
        sizes
    }

    /// Number of non-empty clusters.
    pub fn effective_clusters(&self) -> usize {
        self.cluster_sizes().iter().filter(|&&s| s > 0).count()
    }

    /// Multiplicity of a haplotype in the migration multiset.
    pub fn multiplicity(&self, node: usize) -> usize {
        self.m.iter().filter(|&&x| x == node).count()
    }
}

/// Static context shared by model evaluations: the network, normalized data
/// and the observation-to-node correspondence.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub net: Network,
    pub data: NormalizedData,
    /// Observation index -> network node of its haplotype.
    pub node_of_obs: Vec<usize>,
    /// Network node -> observation indices (empty for intermediates).
    pub obs_of_node: Vec<Vec<usize>>,
}

impl ModelContext {
    pub fn new(
        net: Network,
        data: NormalizedData,
        hap: &HaplotypeData,
        obs: &ObservationTable,
    ) -> Result<ModelContext> {
        // Observed haplotypes occupy the first `hap.n()` network nodes.
        let mut node_of_obs = Vec::with_capacity(obs.n_obs());
        for o in &obs.obs {
            if o.sequence_id == 0 || o.sequence_id > hap.label_map.len() {
                return Err(Error::InvalidState(format!(
                    "observation references sequence {} outside the alignment",
                    o.sequence_id
                )));
            }
            node_of_obs.push(hap.haplotype_of_sequence(o.sequence_id));
        }
        let mut obs_of_node = vec![Vec::new(); net.n_nodes()];
        for (i, &node) in node_of_obs.iter().enumerate() {
            obs_of_node[node].push(i);
        }
        // Node counts must agree with the observation table.
        for (node, list) in obs_of_node.iter().enumerate() {
            if net.nodes[node].is_observed() && list.is_empty() {
                return Err(Error::InvalidState(format!(
                    "haplotype {} is observed in the alignment but has no coordinates",
                    node + 1
                )));
            }
        }
        Ok(ModelContext {
            net,
            data,
            node_of_obs,
            obs_of_node,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.data.n_obs()
    }

    /// Multinomial weight of each observed node: its observation share.
    pub fn node_weight(&self, node: usize) -> f64 {
        self.obs_of_node[node].len() as f64 / self.n_obs() as f64
    }

    /// Nodes with at least one observation.
    pub fn observed_nodes(&self) -> Vec<usize> {
        (0..self.net.n_nodes())
            .filter(|&v| !self.obs_of_node[v].is_empty())
            .collect()
    }
}

/// A unit allocated by the clustering proposal: either a whole component of
/// non-migrating haplotypes (with all its observations) or a single copy of a
/// migrating haplotype.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unit {
    /// Component id; carries every observation of its member haplotypes.
    Component(usize),
    /// One observation of a migrating haplotype.
    MigrantCopy { node: usize, obs: usize },
}

/// Tree structure around the migrating haplotypes: components of the tree
/// minus migrating nodes, the contracted boundary tree over sites, and the
/// allocatable units.
#[derive(Debug)]
pub struct BoundaryStructure {
    /// Distinct migrating nodes, sorted.
    pub migrating: Vec<usize>,
    /// Component id per network node; None for migrating nodes.
    pub comp_of_node: Vec<Option<usize>>,
    /// Nodes of each component.
    pub components: Vec<Vec<usize>>,
    /// Observations carried by each component.
    pub comp_obs: Vec<Vec<usize>>,
    /// Site graph: components first (site id = component id), then migrating
    /// nodes (site id = n_components + index into `migrating`).
    pub site_adj: Vec<Vec<usize>>,
    /// Allocatable units: observation-bearing components and migrant copies.
    pub units: Vec<Unit>,
}

impl BoundaryStructure {
    pub fn new(ctx: &ModelContext, tree: &TreeState, m: &[usize]) -> BoundaryStructure {
        let n = ctx.net.n_nodes();
        let mut migrating: Vec<usize> = m.to_vec();
        migrating.sort_unstable();
        migrating.dedup();

        let tree_adj = ctx.net.tree_neighbors(&tree.deleted);

        // Components of the tree minus migrating nodes.
        let mut comp_of_node: Vec<Option<usize>> = vec![None; n];
        let mut components: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if comp_of_node[start].is_some() || migrating.binary_search(&start).is_ok() {
                continue;
            }
            let id = components.len();
            let mut nodes = Vec::new();
            let mut stack = vec![start];
            comp_of_node[start] = Some(id);
            while let Some(u) = stack.pop() {
                nodes.push(u);
                for &v in &tree_adj[u] {
                    if comp_of_node[v].is_none() && migrating.binary_search(&v).is_err() {
                        comp_of_node[v] = Some(id);
                        stack.push(v);
                    }
                }
            }
            nodes.sort_unstable();
            components.push(nodes);
        }

        let comp_obs: Vec<Vec<usize>> = components
            .iter()
            .map(|nodes| {
                let mut list: Vec<usize> = nodes
                    .iter()
                    .flat_map(|&v| ctx.obs_of_node[v].iter().copied())
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();

        // Contracted site graph.
        let n_sites = components.len() + migrating.len();
        let site_of_node = |v: usize| -> usize {
            match comp_of_node[v] {
                Some(c) => c,
                None => {
                    components.len() + migrating.binary_search(&v).expect("migrating node")
                }
            }
        };
        let mut site_adj = vec![Vec::new(); n_sites];
        for u in 0..n {
            for &v in &tree_adj[u] {
                if u < v {
                    let (su, sv) = (site_of_node(u), site_of_node(v));
                    if su != sv {
                        if !site_adj[su].contains(&sv) {
                            site_adj[su].push(sv);
                            site_adj[sv].push(su);
                        }
                    }
                }
            }
        }

        // Units: observation-bearing components, then migrant copies in
        // (node, observation) order.
        let mut units = Vec::new();
        for (c, obs) in comp_obs.iter().enumerate() {
            if !obs.is_empty() {
                units.push(Unit::Component(c));
            }
        }
        for &node in &migrating {
            for &obs in &ctx.obs_of_node[node] {
                units.push(Unit::MigrantCopy { node, obs });
            }
        }

        BoundaryStructure {
            migrating,
            comp_of_node,
            components,
            comp_obs,
            site_adj,
            units,
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_adj.len()
    }

    pub fn site_of_migrant(&self, node: usize) -> usize {
        self.n_components() + self.migrating.binary_search(&node).expect("migrant")
    }

    /// Observations carried by a unit.
    pub fn unit_obs<'a>(&'a self, unit: &'a Unit) -> &'a [usize] {
        match unit {
            Unit::Component(c) => &self.comp_obs[*c],
            Unit::MigrantCopy { obs, .. } => std::slice::from_ref(obs),
        }
    }
}

/// Partial assignment of cluster labels to the boundary structure.
#[derive(Debug, Clone)]
pub struct PartialLabels {
    /// Label of each component; None while unassigned (or observation-free).
    pub comp_label: Vec<Option<usize>>,
    /// Labels already given to copies of each migrating node (by position in
    /// `migrating`).
    pub copy_labels: Vec<Vec<usize>>,
    /// Copies of each migrating node not yet assigned.
    pub copies_left: Vec<usize>,
    pub n_labels: usize,
}

impl PartialLabels {
    pub fn empty(bs: &BoundaryStructure, ctx: &ModelContext, n_labels: usize) -> PartialLabels {
        PartialLabels {
            comp_label: vec![None; bs.n_components()],
            copy_labels: vec![Vec::new(); bs.migrating.len()],
            copies_left: bs
                .migrating
                .iter()
                .map(|&v| ctx.obs_of_node[v].len())
                .collect(),
            n_labels,
        }
    }

    pub fn assign_unit(&mut self, bs: &BoundaryStructure, unit: &Unit, label: usize) {
        match unit {
            Unit::Component(c) => self.comp_label[*c] = Some(label),
            Unit::MigrantCopy { node, .. } => {
                let idx = bs.migrating.binary_search(node).expect("migrant");
                self.copy_labels[idx].push(label);
                self.copies_left[idx] -= 1;
            }
        }
    }
}

/// Decide whether a partial labeling can still be completed so that every
/// cluster's member haplotypes form a connected subnetwork of the tree.
///
/// For each label, the unique minimal subtree of the site graph spanning its
/// current anchors is forced to carry the label; a component on two labels'
/// forced subtrees, or a migrating node with more forced labels than free
/// copies, makes completion impossible.
pub fn completable(bs: &BoundaryStructure, labels: &PartialLabels) -> bool {
    let n_sites = bs.n_sites();
    if n_sites == 0 {
        return true;
    }
    let n_comp = bs.n_components();

    // Anchor sites per label.
    let mut anchors: Vec<Vec<usize>> = vec![Vec::new(); labels.n_labels];
    for (c, lab) in labels.comp_label.iter().enumerate() {
        if let Some(l) = lab {
            anchors[*l].push(c);
        }
    }
    for (mi, labs) in labels.copy_labels.iter().enumerate() {
        for &l in labs {
            let site = n_comp + mi;
            if !anchors[l].contains(&site) {
                anchors[l].push(site);
            }
        }
    }

    // BFS parents from an arbitrary root of the site tree.
    let mut parent = vec![usize::MAX; n_sites];
    let mut depth = vec![0usize; n_sites];
    let mut seen = vec![false; n_sites];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        for &v in &bs.site_adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }

    // Demands on free components and on migrating nodes.
    let mut comp_demand: Vec<Option<usize>> = vec![None; n_comp];
    let mut migrant_demands: Vec<Vec<usize>> = vec![Vec::new(); bs.migrating.len()];

    for (label, anchor_list) in anchors.iter().enumerate() {
        if anchor_list.len() < 2 {
            continue;
        }
        // Minimal spanning subtree = union of paths to the first anchor.
        let target = anchor_list[0];
        let mut on_subtree = std::collections::BTreeSet::new();
        for &a in anchor_list {
            let (mut x, mut y) = (a, target);
            let mut path = Vec::new();
            while depth[x] > depth[y] {
                path.push(x);
                x = parent[x];
            }
            let mut back = Vec::new();
            while depth[y] > depth[x] {
                back.push(y);
                y = parent[y];
            }
            while x != y {
                path.push(x);
                back.push(y);
                x = parent[x];
                y = parent[y];
            }
            path.push(x);
            path.extend(back.into_iter().rev());
            on_subtree.extend(path);
        }
        for &site in &on_subtree {
            if site < n_comp {
                match labels.comp_label[site] {
                    Some(l) if l == label => {}
                    Some(_) => return false,
                    None => match comp_demand[site] {
                        Some(l) if l == label => {}
                        Some(_) => return false,
                        None => comp_demand[site] = Some(label),
                    },
                }
            } else {
                let mi = site - n_comp;
                if !labels.copy_labels[mi].contains(&label)
                    && !migrant_demands[mi].contains(&label)
                {
                    migrant_demands[mi].push(label);
                }
            }
        }
    }

    // Components already counted; migrating nodes must have enough free
    // copies to satisfy all demanded labels.
    for (mi, demands) in migrant_demands.iter().enumerate() {
        if demands.len() > labels.copies_left[mi] {
            return false;
        }
    }
    true
}

/// Check a full clustering against the tree constraints: observations of
/// non-migrating haplotypes must share the label of their component, and every
/// cluster's member haplotypes must form a connected subnetwork of the tree
/// (unobserved intermediates may be co-opted as connectors by one cluster).
pub fn is_valid_clustering(
    ctx: &ModelContext,
    tree: &TreeState,
    assign: &[usize],
    m: &[usize],
    n_labels: usize,
) -> bool {
    if assign.len() != ctx.n_obs() {
        return false;
    }
    if assign.iter().any(|&c| c >= n_labels) {
        return false;
    }
    // Migrating haplotypes must be observed nodes.
    if m.iter().any(|&v| ctx.obs_of_node[v].is_empty()) {
        return false;
    }
    let bs = BoundaryStructure::new(ctx, tree, m);
    let mut labels = PartialLabels::empty(&bs, ctx, n_labels);

    // Component uniformity.
    for (c, obs_list) in bs.comp_obs.iter().enumerate() {
        if obs_list.is_empty() {
            continue;
        }
        let first = assign[obs_list[0]];
        if obs_list.iter().any(|&o| assign[o] != first) {
            return false;
        }
        labels.comp_label[c] = Some(first);
    }
    // Migrant copies.
    for (mi, &node) in bs.migrating.iter().enumerate() {
        for &o in &ctx.obs_of_node[node] {
            labels.copy_labels[mi].push(assign[o]);
        }
        labels.copies_left[mi] = 0;
    }
    completable(&bs, &labels)
}

/// Log prior density of a cluster state given the tree.
///
/// Sums the uniform prior on K, the multinomial mass of the migration
/// multiset under haplotype frequencies, the tree-constrained clustering
/// term, the covariance priors (Inverse-Wishart on the geographic block,
/// Inverse-Gamma on covariate variances), the uniform prior on gamma and the
/// Gaussian prior on cluster means. Invalid states get -inf.
pub fn log_prior(
    state: &ClusterState,
    cfg: &PriorConfig,
    ctx: &ModelContext,
    tree: &TreeState,
) -> Result<f64> {
    if state.gamma < 4 || state.gamma > cfg.g {
        return Ok(f64::NEG_INFINITY);
    }
    if state.k > cfg.k_max || state.m.len() != state.k || state.params.len() != state.k + 1 {
        return Ok(f64::NEG_INFINITY);
    }
    if !is_valid_clustering(ctx, tree, &state.assign, &state.m, state.k + 1) {
        return Ok(f64::NEG_INFINITY);
    }

    let mut lp = -((cfg.k_max + 1) as f64).ln();
    lp += log_m_prior(&state.m, ctx);
    lp += log_clustering_term(&state.m, ctx, tree);

    // gamma uniform on {4..g}.
    lp -= ((cfg.g - 3) as f64).ln();

    // Covariance and mean priors per cluster.
    let psi2 = Sym2::scaled_identity(cfg.psi);
    for p in &state.params {
        if !p.is_pd() {
            return Ok(f64::NEG_INFINITY);
        }
        lp += ln_inv_wishart2(&p.geo, state.gamma as f64, &psi2)?;
        for &v in &p.diag {
            lp += ln_inv_gamma(v, state.gamma as f64, cfg.psi);
        }
        for &m in &p.mu {
            lp += ln_normal1(m, 0.0, cfg.v);
        }
    }
    Ok(lp)
}

/// Multinomial log-mass of the migration multiset under haplotype sample
/// frequencies.
pub fn log_m_prior(m: &[usize], ctx: &ModelContext) -> f64 {
    use crate::stats::ln_gamma;
    let k = m.len();
    if k == 0 {
        return 0.0;
    }
    let mut lp = ln_gamma(k as f64 + 1.0);
    let mut sorted = m.to_vec();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let node = sorted[i];
        let mut mult = 1;
        while i + mult < sorted.len() && sorted[i + mult] == node {
            mult += 1;
        }
        lp -= ln_gamma(mult as f64 + 1.0);
        lp += mult as f64 * ctx.node_weight(node).ln();
        i += mult;
    }
    lp
}

/// The tree-constrained clustering term: each copy of a migrating haplotype
/// and each of its adjacent clades picks one of that haplotype's associated
/// clusters, of which there are 1 + multiplicity(h). One factor per distinct
/// migrating haplotype; K = 0 leaves the empty product.
pub fn log_clustering_term(m: &[usize], ctx: &ModelContext, tree: &TreeState) -> f64 {
    let mut lp = 0.0;
    let mut seen: Vec<usize> = Vec::new();
    for &node in m {
        if seen.contains(&node) {
            continue;
        }
        seen.push(node);
        let mult = m.iter().filter(|&&x| x == node).count();
        let copies = ctx.obs_of_node[node].len();
        let degree = ctx.net.tree_degree(&tree.deleted, node);
        lp += (copies + degree) as f64 * -(((1 + mult) as f64).ln());
    }
    lp
}

/// Log Gaussian likelihood of the normalized observations under the cluster
/// assignments; empty clusters contribute nothing.
pub fn log_likelihood(data: &NormalizedData, state: &ClusterState) -> Result<f64> {
    let mut ll = 0.0;
    for (i, y) in data.y.iter().enumerate() {
        let p = &state.params[state.assign[i]];
        if !p.is_pd() {
            return Err(Error::InvalidState(format!(
                "cluster {} covariance is not positive definite",
                state.assign[i]
            )));
        }
        ll += p.ln_density(y)?;
    }
    Ok(ll)
}

/// Sufficient statistics of one cluster's observations.
pub struct ClusterStats {
    pub n: usize,
    /// Per-dimension sums.
    pub sum: Vec<f64>,
    /// Scatter of the geographic block about a given center.
    pub geo_scatter: Sym2,
    /// Per-covariate sums of squared deviations about the center.
    pub diag_scatter: Vec<f64>,
}

/// Collect cluster statistics; scatters are taken about `center` when given,
/// otherwise about the cluster sample mean.
pub fn cluster_stats(
    data: &NormalizedData,
    assign: &[usize],
    k: usize,
    center: Option<&[f64]>,
) -> ClusterStats {
    let d = data.dims;
    let members: Vec<usize> = (0..data.n_obs()).filter(|&i| assign[i] == k).collect();
    let n = members.len();
    let mut sum = vec![0.0; d];
    for &i in &members {
        for j in 0..d {
            sum[j] += data.y[i][j];
        }
    }
    let center_vec: Vec<f64> = match center {
        Some(c) => c.to_vec(),
        None => {
            if n == 0 {
                vec![0.0; d]
            } else {
                sum.iter().map(|s| s / n as f64).collect()
            }
        }
    };
    let mut geo = Sym2::new(0.0, 0.0, 0.0);
    let mut diag_scatter = vec![0.0; d - 2];
    for &i in &members {
        let dx = data.y[i][0] - center_vec[0];
        let dy = data.y[i][1] - center_vec[1];
        geo.a += dx * dx;
        geo.b += dx * dy;
        geo.c += dy * dy;
        for j in 2..d {
            let dv = data.y[i][j] - center_vec[j];
            diag_scatter[j - 2] += dv * dv;
        }
    }
    ClusterStats {
        n,
        sum,
        geo_scatter: geo,
        diag_scatter,
    }
}

/// Gibbs update of one cluster mean from its Gaussian full conditional.
/// `tempering` scales the data contribution; empty clusters (or tempering 0)
/// reduce to a prior draw.
pub fn gibbs_mu<R: Rng + ?Sized>(
    data: &NormalizedData,
    state: &ClusterState,
    cfg: &PriorConfig,
    k: usize,
    tempering: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (mu, _) = mu_conditional_draw(data, state, cfg, k, tempering, rng)?;
    Ok(mu)
}

/// The mean's Gaussian full conditional given a covariance and cluster
/// sufficient statistics.
pub struct MuConditional {
    pub mean: Vec<f64>,
    pub geo_cov: Sym2,
    /// Conditional variances of the covariate dimensions.
    pub cov_vars: Vec<f64>,
}

/// Full conditional of a cluster mean under the N(0, V) prior, a fixed
/// structured covariance and `tempering`-scaled data.
pub fn mu_conditional(
    stats: &ClusterStats,
    geo: &Sym2,
    diag: &[f64],
    cfg: &PriorConfig,
    tempering: f64,
) -> Result<MuConditional> {
    let tn = tempering * stats.n as f64;
    let d = stats.sum.len();

    // Geographic block: precision = V^-1 + t·n·Sigma^-1.
    let geo_inv = geo.inverse()?;
    let prior_prec = 1.0 / cfg.v;
    let prec = Sym2::new(
        prior_prec + tn * geo_inv.a,
        tn * geo_inv.b,
        prior_prec + tn * geo_inv.c,
    );
    let cov = prec.inverse()?;
    let rhs0 = tempering * (geo_inv.a * stats.sum[0] + geo_inv.b * stats.sum[1]);
    let rhs1 = tempering * (geo_inv.b * stats.sum[0] + geo_inv.c * stats.sum[1]);
    let mut mean = vec![0.0; d];
    mean[0] = cov.a * rhs0 + cov.b * rhs1;
    mean[1] = cov.b * rhs0 + cov.c * rhs1;

    let mut cov_vars = Vec::with_capacity(d - 2);
    for j in 2..d {
        let prec_j = 1.0 / cfg.v + tn / diag[j - 2];
        mean[j] = (tempering * stats.sum[j] / diag[j - 2]) / prec_j;
        cov_vars.push(1.0 / prec_j);
    }
    Ok(MuConditional {
        mean,
        geo_cov: cov,
        cov_vars,
    })
}

/// Draw from the mean's full conditional, returning the draw and its log
/// density (used both as a Gibbs kernel and as a block-proposal component).
pub fn mu_conditional_draw<R: Rng + ?Sized>(
    data: &NormalizedData,
    state: &ClusterState,
    cfg: &PriorConfig,
    k: usize,
    tempering: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let p = &state.params[k];
    let stats = cluster_stats(data, &state.assign, k, None);
    let cond = mu_conditional(&stats, &p.geo, &p.diag, cfg, tempering)?;
    let d = data.dims;

    let (x0, x1) = sample_normal2(rng, cond.mean[0], cond.mean[1], &cond.geo_cov)?;
    let mut log_q = ln_normal2(x0, x1, cond.mean[0], cond.mean[1], &cond.geo_cov)?;
    let mut mu = vec![0.0; d];
    mu[0] = x0;
    mu[1] = x1;
    for j in 2..d {
        let sd = cond.cov_vars[j - 2].sqrt();
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        mu[j] = cond.mean[j] + sd * z;
        log_q += ln_normal1(mu[j], cond.mean[j], cond.cov_vars[j - 2]);
    }
    Ok((mu, log_q))
}

/// Gibbs update of one cluster covariance from its Inverse-Wishart /
/// Inverse-Gamma full conditionals given the current mean.
pub fn gibbs_sigma<R: Rng + ?Sized>(
    data: &NormalizedData,
    state: &ClusterState,
    cfg: &PriorConfig,
    k: usize,
    tempering: f64,
    rng: &mut R,
) -> Result<(Sym2, Vec<f64>)> {
    let p = &state.params[k];
    let stats = cluster_stats(data, &state.assign, k, Some(&p.mu));
    let tn = tempering * stats.n as f64;

    let nu = state.gamma as f64 + tn;
    let scale = Sym2::scaled_identity(cfg.psi).add(&stats.geo_scatter.scale(tempering));
    let geo = sample_inv_wishart2(rng, nu, &scale)?;

    let mut diag = Vec::with_capacity(data.dims - 2);
    for j in 0..data.dims - 2 {
        let shape = state.gamma as f64 + 0.5 * tn;
        let sc = cfg.psi + 0.5 * tempering * stats.diag_scatter[j];
        diag.push(sample_inv_gamma(rng, shape, sc)?);
    }
    Ok((geo, diag))
}
