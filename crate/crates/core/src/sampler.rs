//! The MCMC sampler: root and tree moves scored by estimated ordering counts,
//! migration birth/death, constrained clustering regrowth with a retention
//! weight, Gibbs refreshes, on-line pivot relabeling, multi-chain
//! orchestration and convergence diagnostics.
//!
//! Root moves follow the pseudo-marginal pattern: the current state keeps the
//! ordering-count estimate it was accepted with, a proposal draws a fresh
//! estimate for its own rooted tree, and the two estimates form the
//! Metropolis-Hastings ratio. The latent ordering itself is not part of the
//! accepted state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::clustmodel::{
    log_clustering_term, log_m_prior, mu_conditional, sample_params_prior, BoundaryStructure,
    ClusterParams, ClusterState, ClusterStats, ModelContext, PartialLabels, PriorConfig, Unit,
};
use crate::error::{Error, Result};
use crate::haplonet::{TreeHashTable, TreeState};
use crate::ordering::log_estimate_orderings;
use crate::stats::{
    ln_inv_gamma, ln_inv_wishart2, ln_normal1, ln_normal2, log_sum_exp, logit, sample_inv_gamma,
    sample_inv_wishart2, sample_normal2, sigmoid, Sym2,
};

/// Run parameters for the sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Maximum number of migrations (K is uniform on {0..max_mig}).
    pub max_mig: usize,
    /// MCMC iterations per chain.
    pub iterations: usize,
    /// Parsimony relaxation used to build the network (recorded here).
    pub ds: usize,
    /// Posterior draws saved per chain, thinned evenly from the kept tail.
    pub post_samples: usize,
    /// Total data dimension (2 + covariates).
    pub dims: usize,
    pub seed: u64,
    /// Independent chains; at least 2 for convergence diagnostics.
    pub chains: usize,
    /// Fraction of iterations discarded as burn-in.
    pub burn_in_fraction: f64,
    /// Tree and migration sub-moves run every this-many iterations.
    pub tree_move_every: usize,
    /// Concentration update frequency.
    pub hyper_move_every: usize,
    /// Likelihood tempering factor; 1 is the full posterior, 0 the prior.
    pub tempering: f64,
    /// Worker threads for chains (0 = one per chain).
    pub threads: usize,
    /// Print percentage ticks per chain while running.
    pub progress: bool,
}

impl RunConfig {
    pub fn new(
        max_mig: usize,
        iterations: usize,
        ds: usize,
        post_samples: usize,
        dims: usize,
        seed: u64,
    ) -> RunConfig {
        RunConfig {
            max_mig,
            iterations,
            ds,
            post_samples,
            dims,
            seed,
            chains: 2,
            burn_in_fraction: 0.9,
            tree_move_every: 5,
            hyper_move_every: 10,
            tempering: 1.0,
            threads: 0,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.post_samples == 0 {
            return Err(Error::InvalidConfig("post_samples must be positive".into()));
        }
        if self.iterations < self.post_samples {
            return Err(Error::InvalidConfig(format!(
                "iterations ({}) must be at least post_samples ({})",
                self.iterations, self.post_samples
            )));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidConfig(
                "burn_in_fraction must lie in [0, 1)".into(),
            ));
        }
        let kept = self.iterations - self.burn_in();
        if kept < self.post_samples {
            return Err(Error::InvalidConfig(format!(
                "only {kept} post-burn-in iterations but post_samples = {}",
                self.post_samples
            )));
        }
        if self.chains < 2 {
            return Err(Error::InvalidConfig(
                "at least 2 chains are required for convergence diagnostics".into(),
            ));
        }
        if self.tree_move_every == 0 || self.hyper_move_every == 0 {
            return Err(Error::InvalidConfig("move frequencies must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tempering) {
            return Err(Error::InvalidConfig("tempering must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.iterations as f64 * self.burn_in_fraction).floor() as usize
    }
}

/// One saved posterior draw (relabeled on-line against the pivot).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedDraw {
    pub chain: usize,
    pub iteration: usize,
    pub root: usize,
    pub deleted: Vec<usize>,
    pub k: usize,
    pub m: Vec<usize>,
    pub assign: Vec<usize>,
    /// Parameters padded to max_mig + 1 slots; slots beyond the live clusters
    /// hold prior draws.
    pub params: Vec<ClusterParams>,
    pub gamma: usize,
    pub w_c: f64,
    pub log_post: f64,
}

impl SavedDraw {
    pub fn tree_state(&self) -> TreeState {
        TreeState {
            deleted: self.deleted.clone(),
            root: self.root,
        }
    }

    /// Count of non-empty clusters in this draw.
    pub fn effective_clusters(&self) -> usize {
        let mut seen = vec![false; self.params.len()];
        for &c in &self.assign {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Two-chain convergence summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Total-variation distance between the chains' root marginals.
    pub root_tv: f64,
    pub root_converged: bool,
    /// Largest distance between the chains' relabeled cluster means.
    pub cluster_mean_discrepancy: f64,
    /// Whether the chains agree on the modal effective-cluster count.
    pub map_effective_agree: bool,
    pub cluster_converged: bool,
    pub converged: bool,
}

/// Everything a run produces: saved draws, tree visit counts, per-chain root
/// tallies, acceptance counters, the pivot clustering and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorArchive {
    pub config: RunConfig,
    pub prior: PriorConfig,
    pub draws: Vec<SavedDraw>,
    pub tree_hash: TreeHashTable,
    pub per_chain_hash: Vec<TreeHashTable>,
    /// Post-burn-in root visit counts per chain.
    pub root_counts: Vec<Vec<u64>>,
    /// Pivot clustering fixed at the end of chain 1's burn-in.
    pub pivot: Vec<usize>,
    /// Acceptance counters per chain: move -> (accepted, proposed).
    pub acceptance: Vec<BTreeMap<String, (u64, u64)>>,
    pub diagnostics: Diagnostics,
}

impl PosteriorArchive {
    pub fn draws_of_chain(&self, chain: usize) -> impl Iterator<Item = &SavedDraw> {
        self.draws.iter().filter(move |d| d.chain == chain)
    }
}

// ---------------------------------------------------------------------------
// Constrained clustering growth.

/// Outcome of one clustering proposal.
pub struct ClusteringProposal {
    pub assign: Vec<usize>,
    pub params: Vec<ClusterParams>,
    pub log_q_fwd: f64,
    pub log_q_rev: f64,
}

struct GrowInput<'a> {
    ctx: &'a ModelContext,
    prior: &'a PriorConfig,
    tree: &'a TreeState,
    m: &'a [usize],
    n_labels: usize,
    prev: Option<&'a [usize]>,
    w: f64,
    gamma: usize,
    tempering: f64,
    /// Shared random priority per observation; unit order follows the minimum
    /// priority of the observations a unit carries.
    priorities: &'a [f64],
}

enum GrowMode<'a> {
    Sample(&'a mut ChaCha8Rng),
    Density {
        assign: &'a [usize],
        params: &'a [ClusterParams],
    },
}

struct RunningCluster {
    n: usize,
    sum: Vec<f64>,
    /// Raw second moments of the geographic block.
    geo_raw: Sym2,
    /// Raw second moments of each covariate.
    diag_raw: Vec<f64>,
}

impl RunningCluster {
    fn new(d: usize) -> Self {
        RunningCluster {
            n: 0,
            sum: vec![0.0; d],
            geo_raw: Sym2::new(0.0, 0.0, 0.0),
            diag_raw: vec![0.0; d - 2],
        }
    }

    fn add(&mut self, y: &[f64]) {
        self.n += 1;
        for (s, &v) in self.sum.iter_mut().zip(y) {
            *s += v;
        }
        self.geo_raw.a += y[0] * y[0];
        self.geo_raw.b += y[0] * y[1];
        self.geo_raw.c += y[1] * y[1];
        for j in 2..y.len() {
            self.diag_raw[j - 2] += y[j] * y[j];
        }
    }

    /// Scatter about the sample mean (zero for empty clusters).
    fn centered(&self) -> (Sym2, Vec<f64>) {
        if self.n == 0 {
            return (Sym2::new(0.0, 0.0, 0.0), vec![0.0; self.diag_raw.len()]);
        }
        let n = self.n as f64;
        let mx = self.sum[0] / n;
        let my = self.sum[1] / n;
        let geo = Sym2::new(
            self.geo_raw.a - n * mx * mx,
            self.geo_raw.b - n * mx * my,
            self.geo_raw.c - n * my * my,
        );
        let diag = self
            .diag_raw
            .iter()
            .enumerate()
            .map(|(j, &raw)| {
                let m = self.sum[j + 2] / n;
                (raw - n * m * m).max(0.0)
            })
            .collect();
        (geo, diag)
    }

    /// Posterior-mean parameters implied by the allocated observations;
    /// prior means when empty.
    fn posterior_mean_params(
        &self,
        prior: &PriorConfig,
        gamma: usize,
        tempering: f64,
        dims: usize,
    ) -> Result<ClusterParams> {
        let g = gamma as f64;
        let tn = tempering * self.n as f64;
        let (geo_s, diag_s) = self.centered();
        let geo = Sym2::scaled_identity(prior.psi)
            .add(&geo_s.scale(tempering))
            .scale(1.0 / (g + tn - 3.0));
        let diag: Vec<f64> = diag_s
            .iter()
            .map(|&s| (prior.psi + 0.5 * tempering * s) / (g + 0.5 * tn - 1.0))
            .collect();

        // Conjugate mean given the covariance above.
        let stats = ClusterStats {
            n: self.n,
            sum: self.sum.clone(),
            geo_scatter: Sym2::new(0.0, 0.0, 0.0),
            diag_scatter: vec![0.0; dims - 2],
        };
        let cond = mu_conditional(&stats, &geo, &diag, prior, tempering)?;
        Ok(ClusterParams {
            mu: cond.mean,
            geo,
            diag,
        })
    }
}

/// The label of a unit in the previous clustering, when defined: the previous
/// label of a migrant copy's observation, or the most common previous label
/// among a component's observations (smallest label on ties).
fn unit_prev_label(
    bs: &BoundaryStructure,
    unit: &Unit,
    prev: Option<&[usize]>,
    n_labels: usize,
) -> Option<usize> {
    let prev = prev?;
    let label = match unit {
        Unit::MigrantCopy { obs, .. } => prev[*obs],
        Unit::Component(c) => {
            let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
            for &o in &bs.comp_obs[*c] {
                *tally.entry(prev[o]).or_insert(0) += 1;
            }
            *tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| l)
                .expect("component units carry observations")
        }
    };
    (label < n_labels).then_some(label)
}

/// Grow a tree-constrained clustering by allocating units in random order,
/// either sampling (forward move) or scoring a given outcome (reverse move).
/// Returns assignments, proposed parameters, the allocation log density and
/// the parameter-proposal log density.
fn grow(input: &GrowInput, mut mode: GrowMode) -> Result<(Vec<usize>, Vec<ClusterParams>, f64, f64)> {
    let ctx = input.ctx;
    let d = ctx.data.dims;
    let bs = BoundaryStructure::new(ctx, input.tree, input.m);

    // Deterministic unit order from the shared priorities.
    let mut order: Vec<usize> = (0..bs.units.len()).collect();
    let unit_priority = |u: &Unit| -> f64 {
        bs.unit_obs(u)
            .iter()
            .map(|&o| input.priorities[o])
            .fold(f64::INFINITY, f64::min)
    };
    order.sort_by(|&a, &b| {
        unit_priority(&bs.units[a])
            .total_cmp(&unit_priority(&bs.units[b]))
            .then(a.cmp(&b))
    });

    let mut labels = PartialLabels::empty(&bs, ctx, input.n_labels);
    let mut running: Vec<RunningCluster> = (0..input.n_labels).map(|_| RunningCluster::new(d)).collect();
    let mut assign = vec![usize::MAX; ctx.n_obs()];
    let mut log_q_alloc = 0.0;

    for &ui in &order {
        let unit = &bs.units[ui];
        // Admissible labels: those that keep the partial labeling completable.
        let mut admissible = Vec::new();
        for l in 0..input.n_labels {
            let mut trial = labels.clone();
            trial.assign_unit(&bs, unit, l);
            if crate::clustmodel::completable(&bs, &trial) {
                admissible.push(l);
            }
        }
        if admissible.is_empty() {
            return Err(Error::Internal(
                "no admissible cluster for a branch during growth".into(),
            ));
        }

        // Tempered predictive fit of the unit under each admissible cluster's
        // running posterior-mean parameters.
        let mut fit_log = Vec::with_capacity(admissible.len());
        for &l in &admissible {
            let params =
                running[l].posterior_mean_params(input.prior, input.gamma, input.tempering, d)?;
            let mut s = 0.0;
            for &o in bs.unit_obs(unit) {
                s += input.tempering * params.ln_density(&ctx.data.y[o])?;
            }
            fit_log.push(s);
        }
        let lse = log_sum_exp(&fit_log);
        let fit_probs: Vec<f64> = fit_log.iter().map(|&s| (s - lse).exp()).collect();

        let prev_label = unit_prev_label(&bs, unit, input.prev, input.n_labels);
        let probs: Vec<f64> = match prev_label {
            Some(p) if admissible.contains(&p) => admissible
                .iter()
                .zip(&fit_probs)
                .map(|(&l, &f)| if l == p { input.w + (1.0 - input.w) * f } else { (1.0 - input.w) * f })
                .collect(),
            _ => fit_probs.clone(),
        };

        let chosen = match &mut mode {
            GrowMode::Sample(rng) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = admissible.len() - 1;
                for (idx, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = idx;
                        break;
                    }
                }
                admissible[pick]
            }
            GrowMode::Density { assign: target, .. } => {
                let want = target[bs.unit_obs(unit)[0]];
                match admissible.iter().position(|&l| l == want) {
                    Some(_) => want,
                    None => {
                        return Err(Error::Internal(
                            "target clustering unreachable by the growth proposal".into(),
                        ))
                    }
                }
            }
        };
        let idx = admissible.iter().position(|&l| l == chosen).unwrap();
        log_q_alloc += probs[idx].ln();

        labels.assign_unit(&bs, unit, chosen);
        for &o in bs.unit_obs(unit) {
            assign[o] = chosen;
            running[chosen].add(&ctx.data.y[o]);
        }
    }

    debug_assert!(assign.iter().all(|&a| a != usize::MAX));

    // Parameter proposal: covariances from their conjugate forms about the
    // cluster sample means, then means from their exact conditionals.
    let mut params = Vec::with_capacity(input.n_labels);
    let mut log_q_params = 0.0;
    let g = input.gamma as f64;
    for l in 0..input.n_labels {
        let rc = &running[l];
        let tn = input.tempering * rc.n as f64;
        let (geo_s, diag_s) = rc.centered();
        let nu = g + tn;
        let geo_scale = Sym2::scaled_identity(input.prior.psi).add(&geo_s.scale(input.tempering));

        let geo = match &mut mode {
            GrowMode::Sample(rng) => sample_inv_wishart2(rng, nu, &geo_scale)?,
            GrowMode::Density { params, .. } => params[l].geo,
        };
        log_q_params += ln_inv_wishart2(&geo, nu, &geo_scale)?;

        let mut diag = Vec::with_capacity(d - 2);
        for j in 0..d - 2 {
            let shape = g + 0.5 * tn;
            let scale = input.prior.psi + 0.5 * input.tempering * diag_s[j];
            let v = match &mut mode {
                GrowMode::Sample(rng) => sample_inv_gamma(rng, shape, scale)?,
                GrowMode::Density { params, .. } => params[l].diag[j],
            };
            log_q_params += ln_inv_gamma(v, shape, scale);
            diag.push(v);
        }

        let stats = ClusterStats {
            n: rc.n,
            sum: rc.sum.clone(),
            geo_scatter: Sym2::new(0.0, 0.0, 0.0),
            diag_scatter: vec![0.0; d - 2],
        };
        let cond = mu_conditional(&stats, &geo, &diag, input.prior, input.tempering)?;
        let mu = match &mut mode {
            GrowMode::Sample(rng) => {
                let (x0, x1) = sample_normal2(rng, cond.mean[0], cond.mean[1], &cond.geo_cov)?;
                let mut mu = vec![0.0; d];
                mu[0] = x0;
                mu[1] = x1;
                for j in 2..d {
                    let z: f64 = rand_distr::StandardNormal.sample(rng);
                    mu[j] = cond.mean[j] + cond.cov_vars[j - 2].sqrt() * z;
                }
                mu
            }
            GrowMode::Density { params, .. } => params[l].mu.clone(),
        };
        log_q_params += ln_normal2(mu[0], mu[1], cond.mean[0], cond.mean[1], &cond.geo_cov)?;
        for j in 2..d {
            log_q_params += ln_normal1(mu[j], cond.mean[j], cond.cov_vars[j - 2]);
        }
        params.push(ClusterParams { mu, geo, diag });
    }

    Ok((assign, params, log_q_alloc, log_q_params))
}

/// Propose a fresh clustering for the current migration set and tree,
/// returning forward and reverse proposal densities. Used directly when
/// neither the tree nor the migration multiset changes.
pub fn propose_clustering(
    ctx: &ModelContext,
    prior: &PriorConfig,
    tree: &TreeState,
    clust: &ClusterState,
    tempering: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ClusteringProposal> {
    let priorities: Vec<f64> = (0..ctx.n_obs()).map(|_| rng.gen()).collect();
    let input = GrowInput {
        ctx,
        prior,
        tree,
        m: &clust.m,
        n_labels: clust.k + 1,
        prev: Some(&clust.assign),
        w: clust.w_c,
        gamma: clust.gamma,
        tempering,
        priorities: &priorities,
    };
    let (assign, params, a_fwd, p_fwd) = grow(&input, GrowMode::Sample(rng))?;
    let rev_input = GrowInput {
        prev: Some(&assign),
        ..input
    };
    let (_, _, a_rev, p_rev) = grow(
        &rev_input,
        GrowMode::Density {
            assign: &clust.assign,
            params: &clust.params,
        },
    )?;
    Ok(ClusteringProposal {
        assign,
        params,
        log_q_fwd: a_fwd + p_fwd,
        log_q_rev: a_rev + p_rev,
    })
}

// ---------------------------------------------------------------------------
// Chain state and moves.

pub(crate) struct Chain<'a> {
    pub id: usize,
    pub ctx: &'a ModelContext,
    pub prior: &'a PriorConfig,
    pub cfg: &'a RunConfig,
    pub rng: ChaCha8Rng,
    pub tree: TreeState,
    /// log of the current state's ordering-count estimate.
    pub log_est: f64,
    pub clust: ClusterState,
    pub accept: BTreeMap<String, (u64, u64)>,
    pub root_counts: Vec<u64>,
    pub hash: TreeHashTable,
    pub best_log_post: f64,
    pub best_assign: Vec<usize>,
    pub draws: Vec<SavedDraw>,
}

fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl<'a> Chain<'a> {
    /// Initialize a chain. Even chains start at K = 0, odd chains at
    /// K = max_mig with a freshly grown clustering.
    pub fn init(
        id: usize,
        ctx: &'a ModelContext,
        prior: &'a PriorConfig,
        cfg: &'a RunConfig,
    ) -> Result<Chain<'a>> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed, id as u64));
        let gamma0 = (4 + prior.g) / 2;

        // Initial spanning tree: delete the defining chord of each loop; odd
        // chains then re-draw loop edges at random, keeping valid vectors.
        let mut deleted = initial_chords(ctx);
        if id % 2 == 1 {
            for j in 0..ctx.net.n_loop() {
                let cand = ctx.net.loops[j][rng.gen_range(0..ctx.net.loops[j].len())];
                let old = deleted[j];
                deleted[j] = cand;
                if !ctx.net.is_spanning_tree(&deleted) {
                    deleted[j] = old;
                }
            }
        }

        // Root: a feasible orientation with a finite estimate must exist.
        let observed = ctx.observed_nodes();
        let mut root_candidates: Vec<usize> = Vec::new();
        let max_count_node = observed
            .iter()
            .copied()
            .max_by_key(|&v| ctx.obs_of_node[v].len())
            .expect("at least one observed node");
        root_candidates.push(max_count_node);
        root_candidates.extend(0..ctx.net.n_nodes());
        let mut tree = TreeState {
            deleted,
            root: max_count_node,
        };
        let mut log_est = f64::NEG_INFINITY;
        for &r in &root_candidates {
            tree.root = r;
            log_est = log_estimate_orderings(&ctx.net, &tree, &mut rng)?;
            if log_est.is_finite() {
                break;
            }
        }
        if !log_est.is_finite() {
            return Err(Error::InvalidState(
                "no feasible rooted tree found for the initial state".into(),
            ));
        }

        // Initial clustering.
        let k0 = if id % 2 == 1 { cfg.max_mig } else { 0 };
        let mut m = Vec::with_capacity(k0);
        for _ in 0..k0 {
            m.push(draw_migrant(ctx, &mut rng));
        }
        m.sort_unstable();
        let priorities: Vec<f64> = (0..ctx.n_obs()).map(|_| rng.gen()).collect();
        let input = GrowInput {
            ctx,
            prior,
            tree: &tree,
            m: &m,
            n_labels: k0 + 1,
            prev: None,
            w: 0.5,
            gamma: gamma0,
            tempering: cfg.tempering,
            priorities: &priorities,
        };
        let (assign, params, _, _) = grow(&input, GrowMode::Sample(&mut rng))?;
        let clust = ClusterState {
            k: k0,
            m,
            assign,
            params,
            gamma: gamma0,
            w_c: 0.5,
        };

        let best_assign = clust.assign.clone();
        let mut chain = Chain {
            id,
            ctx,
            prior,
            cfg,
            rng,
            tree,
            log_est,
            clust,
            accept: BTreeMap::new(),
            root_counts: vec![0; ctx.net.n_nodes()],
            hash: TreeHashTable::new(),
            best_log_post: f64::NEG_INFINITY,
            best_assign,
            draws: Vec::new(),
        };
        chain.best_log_post = chain.log_posterior()?;
        Ok(chain)
    }

    pub fn log_posterior(&self) -> Result<f64> {
        let lp = crate::clustmodel::log_prior(&self.clust, self.prior, self.ctx, &self.tree)?;
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let ll = crate::clustmodel::log_likelihood(&self.ctx.data, &self.clust)?;
        Ok(self.log_est + lp + self.cfg.tempering * ll)
    }

    fn tally(&mut self, name: &str, accepted: bool) {
        let e = self.accept.entry(name.to_string()).or_insert((0, 0));
        e.1 += 1;
        if accepted {
            e.0 += 1;
        }
    }

    fn mh_accept(&mut self, log_alpha: f64) -> bool {
        if log_alpha >= 0.0 {
            true
        } else if log_alpha == f64::NEG_INFINITY {
            false
        } else {
            self.rng.gen::<f64>() < log_alpha.exp()
        }
    }

    /// Step 1: propose a new root with a fresh ordering estimate.
    pub fn step_root(&mut self) -> Result<()> {
        let r_new = self.rng.gen_range(0..self.ctx.net.n_nodes());
        let proposal = TreeState {
            deleted: self.tree.deleted.clone(),
            root: r_new,
        };
        let log_est_new = log_estimate_orderings(&self.ctx.net, &proposal, &mut self.rng)?;
        let log_alpha = log_est_new - self.log_est;
        let accepted = self.mh_accept(log_alpha);
        if accepted {
            self.tree.root = r_new;
            self.log_est = log_est_new;
        }
        self.tally("root", accepted);
        Ok(())
    }

    /// Steps 2a-2d: optionally re-draw one loop edge and one migration slot,
    /// always regrow the clustering with a refreshed retention weight, and
    /// accept or reject the block jointly.
    pub fn step_tree_and_clustering(&mut self, with_tree_moves: bool) -> Result<()> {
        let ctx = self.ctx;
        let tempering = self.cfg.tempering;
        let mut log_q_fwd = 0.0;
        let mut log_q_rev = 0.0;

        // 2a: tree sub-move.
        let mut prop_tree = self.tree.clone();
        let mut log_est_prop = self.log_est;
        let tree_moved = with_tree_moves && ctx.net.n_loop() > 0;
        if tree_moved {
            let j = self.rng.gen_range(0..ctx.net.n_loop());
            let edge = ctx.net.loops[j][self.rng.gen_range(0..ctx.net.loops[j].len())];
            prop_tree.deleted[j] = edge;
            if !ctx.net.is_spanning_tree(&prop_tree.deleted) {
                self.tally("tree_clust", false);
                return Ok(());
            }
            log_est_prop = log_estimate_orderings(&ctx.net, &prop_tree, &mut self.rng)?;
            // Uniform loop and edge choices are symmetric.
        }

        // 2b: migration slot re-draw.
        let mut m_prop = self.clust.m.clone();
        if with_tree_moves && self.clust.k > 0 {
            let idx = self.rng.gen_range(0..self.clust.k);
            let old = self.clust.m[idx];
            let new = draw_migrant(ctx, &mut self.rng);
            m_prop[idx] = new;
            m_prop.sort_unstable();
            let mult_old = self.clust.m.iter().filter(|&&x| x == old).count();
            let mult_new = m_prop.iter().filter(|&&x| x == new).count();
            log_q_fwd += (mult_old as f64 / self.clust.k as f64).ln() + ctx.node_weight(new).ln();
            log_q_rev += (mult_new as f64 / self.clust.k as f64).ln() + ctx.node_weight(old).ln();
        }

        // Retention-weight walk in logit space (uniform prior on (0,1), so the
        // Jacobian is the only asymmetry): q(w'|w) carries a 1/(w'(1-w'))
        // factor from the change of variables.
        let step: f64 = 0.6;
        let z: f64 = rand_distr::StandardNormal.sample(&mut self.rng);
        let w_new = sigmoid(logit(self.clust.w_c) + step * z);
        let w_new = w_new.clamp(1e-9, 1.0 - 1e-9);
        log_q_fwd += -(w_new * (1.0 - w_new)).ln();
        log_q_rev += -(self.clust.w_c * (1.0 - self.clust.w_c)).ln();

        // 2c: regrow the clustering under the proposed structures.
        let priorities: Vec<f64> = (0..ctx.n_obs()).map(|_| self.rng.gen()).collect();
        let fwd_input = GrowInput {
            ctx,
            prior: self.prior,
            tree: &prop_tree,
            m: &m_prop,
            n_labels: self.clust.k + 1,
            prev: Some(&self.clust.assign),
            w: w_new,
            gamma: self.clust.gamma,
            tempering,
            priorities: &priorities,
        };
        let (assign_new, params_new, a_fwd, p_fwd) = grow(&fwd_input, GrowMode::Sample(&mut self.rng))?;
        log_q_fwd += a_fwd + p_fwd;

        let rev_input = GrowInput {
            ctx,
            prior: self.prior,
            tree: &self.tree,
            m: &self.clust.m,
            n_labels: self.clust.k + 1,
            prev: Some(&assign_new),
            w: self.clust.w_c,
            gamma: self.clust.gamma,
            tempering,
            priorities: &priorities,
        };
        let (_, _, a_rev, p_rev) = grow(
            &rev_input,
            GrowMode::Density {
                assign: &self.clust.assign,
                params: &self.clust.params,
            },
        )?;
        log_q_rev += a_rev + p_rev;

        // 2d: joint accept/reject.
        let mut log_alpha = (log_est_prop - self.log_est)
            + (log_m_prior(&m_prop, ctx) - log_m_prior(&self.clust.m, ctx))
            + (log_clustering_term(&m_prop, ctx, &prop_tree)
                - log_clustering_term(&self.clust.m, ctx, &self.tree))
            + (log_params_prior(&params_new, self.clust.gamma, self.prior)?
                - log_params_prior(&self.clust.params, self.clust.gamma, self.prior)?)
            + log_q_rev
            - log_q_fwd;
        if tempering > 0.0 {
            let mut prop_state = self.clust.clone();
            prop_state.assign = assign_new.clone();
            prop_state.params = params_new.clone();
            log_alpha += tempering
                * (crate::clustmodel::log_likelihood(&ctx.data, &prop_state)?
                    - crate::clustmodel::log_likelihood(&ctx.data, &self.clust)?);
        }

        let accepted = self.mh_accept(log_alpha);
        if accepted {
            self.tree = prop_tree;
            self.log_est = log_est_prop;
            self.clust.m = m_prop;
            self.clust.assign = assign_new;
            self.clust.params = params_new;
            self.clust.w_c = w_new;
        }
        self.tally("tree_clust", accepted);
        Ok(())
    }

    /// Step 3: Gibbs refresh of every cluster's mean, then covariance.
    pub fn gibbs_refresh(&mut self) -> Result<()> {
        for k in 0..=self.clust.k {
            let mu = crate::clustmodel::gibbs_mu(
                &self.ctx.data,
                &self.clust,
                self.prior,
                k,
                self.cfg.tempering,
                &mut self.rng,
            )?;
            self.clust.params[k].mu = mu;
            let (geo, diag) = crate::clustmodel::gibbs_sigma(
                &self.ctx.data,
                &self.clust,
                self.prior,
                k,
                self.cfg.tempering,
                &mut self.rng,
            )?;
            self.clust.params[k].geo = geo;
            self.clust.params[k].diag = diag;
        }
        Ok(())
    }

    /// Concentration update: independence proposal on {4..g} scored against
    /// the covariance priors.
    pub fn step_hyper(&mut self) -> Result<()> {
        let gamma_new = self.rng.gen_range(4..=self.prior.g);
        let log_alpha = log_params_prior(&self.clust.params, gamma_new, self.prior)?
            - log_params_prior(&self.clust.params, self.clust.gamma, self.prior)?;
        let accepted = self.mh_accept(log_alpha);
        if accepted {
            self.clust.gamma = gamma_new;
        }
        self.tally("hyper", accepted);
        Ok(())
    }

    /// Step 4: trans-dimensional move. Propose K±1 (reflecting at the
    /// bounds), add or remove a migration slot, regrow the clustering, and
    /// accept the block with the full ratio.
    pub fn step_dimension(&mut self) -> Result<()> {
        let ctx = self.ctx;
        let k = self.clust.k;
        let k_max = self.prior.k_max;
        if k_max == 0 {
            return Ok(());
        }
        let tempering = self.cfg.tempering;
        let go_up = if k == 0 {
            true
        } else if k == k_max {
            false
        } else {
            self.rng.gen::<bool>()
        };
        let dir_fwd: f64 = if k == 0 || k == k_max { 1.0 } else { 0.5 };

        let mut log_q_fwd = dir_fwd.ln();
        let mut log_q_rev;
        let mut m_prop = self.clust.m.clone();
        let k_new;
        if go_up {
            k_new = k + 1;
            let h = draw_migrant(ctx, &mut self.rng);
            m_prop.push(h);
            m_prop.sort_unstable();
            log_q_fwd += ctx.node_weight(h).ln();
            let dir_rev: f64 = if k_new == k_max { 1.0 } else { 0.5 };
            let mult_new = m_prop.iter().filter(|&&x| x == h).count();
            log_q_rev = dir_rev.ln() + (mult_new as f64 / k_new as f64).ln();
        } else {
            k_new = k - 1;
            let idx = self.rng.gen_range(0..k);
            let h = m_prop.remove(idx);
            let mult_old = self.clust.m.iter().filter(|&&x| x == h).count();
            log_q_fwd += (mult_old as f64 / k as f64).ln();
            let dir_rev: f64 = if k_new == 0 { 1.0 } else { 0.5 };
            log_q_rev = dir_rev.ln() + ctx.node_weight(h).ln();
        }

        let priorities: Vec<f64> = (0..ctx.n_obs()).map(|_| self.rng.gen()).collect();
        let fwd_input = GrowInput {
            ctx,
            prior: self.prior,
            tree: &self.tree,
            m: &m_prop,
            n_labels: k_new + 1,
            prev: Some(&self.clust.assign),
            w: self.clust.w_c,
            gamma: self.clust.gamma,
            tempering,
            priorities: &priorities,
        };
        let (assign_new, params_new, a_fwd, p_fwd) = grow(&fwd_input, GrowMode::Sample(&mut self.rng))?;
        log_q_fwd += a_fwd + p_fwd;

        let rev_input = GrowInput {
            ctx,
            prior: self.prior,
            tree: &self.tree,
            m: &self.clust.m,
            n_labels: k + 1,
            prev: Some(&assign_new),
            w: self.clust.w_c,
            gamma: self.clust.gamma,
            tempering,
            priorities: &priorities,
        };
        let (_, _, a_rev, p_rev) = grow(
            &rev_input,
            GrowMode::Density {
                assign: &self.clust.assign,
                params: &self.clust.params,
            },
        )?;
        log_q_rev += a_rev + p_rev;

        let mut log_alpha = (log_m_prior(&m_prop, ctx) - log_m_prior(&self.clust.m, ctx))
            + (log_clustering_term(&m_prop, ctx, &self.tree)
                - log_clustering_term(&self.clust.m, ctx, &self.tree))
            + (log_params_prior(&params_new, self.clust.gamma, self.prior)?
                - log_params_prior(&self.clust.params, self.clust.gamma, self.prior)?)
            + log_q_rev
            - log_q_fwd;
        if tempering > 0.0 {
            let mut prop_state = self.clust.clone();
            prop_state.k = k_new;
            prop_state.assign = assign_new.clone();
            prop_state.params = params_new.clone();
            log_alpha += tempering
                * (crate::clustmodel::log_likelihood(&ctx.data, &prop_state)?
                    - crate::clustmodel::log_likelihood(&ctx.data, &self.clust)?);
        }

        let accepted = self.mh_accept(log_alpha);
        if accepted {
            self.clust.k = k_new;
            self.clust.m = m_prop;
            self.clust.assign = assign_new;
            self.clust.params = params_new;
        }
        self.tally("dimension", accepted);
        Ok(())
    }

    /// One full iteration of the move schedule.
    pub fn step(&mut self, iteration: usize) -> Result<()> {
        self.step_root()?;
        self.step_tree_and_clustering(iteration % self.cfg.tree_move_every == 0)?;
        if iteration % self.cfg.hyper_move_every == 0 {
            self.step_hyper()?;
        }
        self.step_dimension()?;
        self.gibbs_refresh()?;
        Ok(())
    }

    /// Pad parameters to max_mig + 1 slots with prior draws.
    fn padded_params(&mut self) -> Result<Vec<ClusterParams>> {
        let mut params = self.clust.params.clone();
        while params.len() < self.prior.k_max + 1 {
            params.push(sample_params_prior(
                &mut self.rng,
                self.prior,
                self.clust.gamma,
                self.ctx.data.dims,
            )?);
        }
        Ok(params)
    }

    fn save_draw(&mut self, iteration: usize, pivot: &[usize]) -> Result<()> {
        let params = self.padded_params()?;
        let perm = crate::relabel::pivot_permutation(pivot, &params, &self.ctx.data)?;
        let (params, assign) = crate::relabel::apply_permutation(&perm, &params, &self.clust.assign);
        let draw = SavedDraw {
            chain: self.id,
            iteration,
            root: self.tree.root,
            deleted: self.tree.deleted.clone(),
            k: self.clust.k,
            m: self.clust.m.clone(),
            assign,
            params,
            gamma: self.clust.gamma,
            w_c: self.clust.w_c,
            log_post: self.log_posterior()?,
        };
        self.draws.push(draw);
        Ok(())
    }
}

/// Multinomial draw of a migrating haplotype: observed nodes weighted by
/// their observation counts.
fn draw_migrant(ctx: &ModelContext, rng: &mut ChaCha8Rng) -> usize {
    let total = ctx.n_obs();
    let mut t = rng.gen_range(0..total);
    for v in 0..ctx.net.n_nodes() {
        let c = ctx.obs_of_node[v].len();
        if t < c {
            return v;
        }
        t -= c;
    }
    unreachable!("observation counts sum to the total")
}

/// A valid starting deleted-edge vector: the chords of the depth-first
/// spanning tree the loops were built from.
fn initial_chords(ctx: &ModelContext) -> Vec<usize> {
    ctx.net.default_tree_vector()
}

/// Log prior density of a parameter set under fixed gamma.
pub fn log_params_prior(params: &[ClusterParams], gamma: usize, prior: &PriorConfig) -> Result<f64> {
    let psi2 = Sym2::scaled_identity(prior.psi);
    let mut lp = 0.0;
    for p in params {
        lp += ln_inv_wishart2(&p.geo, gamma as f64, &psi2)?;
        for &v in &p.diag {
            lp += ln_inv_gamma(v, gamma as f64, prior.psi);
        }
        for &m in &p.mu {
            lp += ln_normal1(m, 0.0, prior.v);
        }
    }
    Ok(lp)
}

/// Run the configured number of chains and assemble the archive.
pub fn run(cfg: &RunConfig, prior: &PriorConfig, ctx: &ModelContext) -> Result<PosteriorArchive> {
    cfg.validate()?;
    prior.validate()?;
    if cfg.dims != ctx.data.dims {
        return Err(Error::InvalidConfig(format!(
            "config dims {} but data has {} dimensions",
            cfg.dims, ctx.data.dims
        )));
    }
    if prior.k_max != cfg.max_mig {
        return Err(Error::InvalidConfig(
            "prior k_max must match the configured max_mig".into(),
        ));
    }

    let burn = cfg.burn_in();
    let kept = cfg.iterations - burn;
    // Evenly spaced save points in the kept tail.
    let save_points: Vec<usize> = (1..=cfg.post_samples)
        .map(|j| burn + (j * kept) / cfg.post_samples - 1)
        .collect();

    let mut chains: Vec<Chain> = (0..cfg.chains)
        .map(|id| Chain::init(id, ctx, prior, cfg))
        .collect::<Result<_>>()?;

    // Burn-in phase; chain 0 tracks the highest-posterior clustering as the
    // relabeling pivot.
    run_phase(&mut chains, 0..burn, None, &save_points, cfg)?;
    let pivot = chains[0].best_assign.clone();

    // Sampling phase with on-line relabeling.
    run_phase(&mut chains, burn..cfg.iterations, Some(&pivot), &save_points, cfg)?;

    // Merge.
    let mut tree_hash = TreeHashTable::new();
    let mut per_chain_hash = Vec::new();
    let mut root_counts = Vec::new();
    let mut acceptance = Vec::new();
    let mut draws = Vec::new();
    for chain in &mut chains {
        tree_hash.merge(&chain.hash);
        per_chain_hash.push(chain.hash.clone());
        root_counts.push(chain.root_counts.clone());
        acceptance.push(chain.accept.clone());
        draws.append(&mut chain.draws);
    }
    draws.sort_by_key(|d| (d.chain, d.iteration));

    let diagnostics = compute_diagnostics(&draws, &root_counts, cfg, prior);
    Ok(PosteriorArchive {
        config: cfg.clone(),
        prior: prior.clone(),
        draws,
        tree_hash,
        per_chain_hash,
        root_counts,
        pivot,
        acceptance,
        diagnostics,
    })
}

fn run_phase(
    chains: &mut [Chain],
    range: std::ops::Range<usize>,
    pivot: Option<&[usize]>,
    save_points: &[usize],
    cfg: &RunConfig,
) -> Result<()> {
    let threads = if cfg.threads == 0 {
        chains.len()
    } else {
        cfg.threads
    };
    let worker = |chain: &mut Chain, range: std::ops::Range<usize>| -> Result<()> {
        let total = chain.cfg.iterations;
        let mut next_tick = 10;
        for it in range {
            chain.step(it)?;
            if pivot.is_some() {
                // Post-burn-in: record the visited tree and root.
                let deleted = chain.tree.deleted.clone();
                chain.hash.record(&deleted);
                chain.root_counts[chain.tree.root] += 1;
            } else {
                // Burn-in: track the pivot candidate on chain 0.
                if chain.id == 0 {
                    let lp = chain.log_posterior()?;
                    if lp > chain.best_log_post {
                        chain.best_log_post = lp;
                        chain.best_assign = chain.clust.assign.clone();
                    }
                }
            }
            if let Some(p) = pivot {
                if save_points.binary_search(&it).is_ok() {
                    chain.save_draw(it, p)?;
                }
            }
            if chain.cfg.progress {
                let pct = (it + 1) * 100 / total;
                if pct >= next_tick {
                    eprintln!("Chain {}: {}%", chain.id + 1, pct);
                    next_tick += 10;
                }
            }
        }
        Ok(())
    };

    if threads <= 1 {
        for chain in chains.iter_mut() {
            worker(chain, range.clone())?;
        }
        Ok(())
    } else {
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chain in chains.iter_mut() {
                let r = range.clone();
                handles.push(scope.spawn(move || worker(chain, r)));
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        });
        for r in results {
            r?;
        }
        Ok(())
    }
}

fn compute_diagnostics(
    draws: &[SavedDraw],
    root_counts: &[Vec<u64>],
    cfg: &RunConfig,
    prior: &PriorConfig,
) -> Diagnostics {
    // Root marginals from the post-burn-in tallies of the first two chains.
    let marginal = |counts: &[u64]| -> Vec<f64> {
        let total: u64 = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    };
    let m0 = marginal(&root_counts[0]);
    let m1 = marginal(&root_counts[1]);
    let root_tv = 0.5 * m0.iter().zip(&m1).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let root_converged = root_tv < 0.1;

    // Modal effective-cluster count per chain.
    let modal_effective = |chain: usize| -> usize {
        let mut tally = vec![0usize; prior.k_max + 2];
        for d in draws.iter().filter(|d| d.chain == chain) {
            tally[d.effective_clusters()] += 1;
        }
        tally
            .iter()
            .enumerate()
            .max_by_key(|&(_, c)| *c)
            .map(|(k, _)| k)
            .unwrap_or(0)
    };
    let map_effective_agree = modal_effective(0) == modal_effective(1);

    // Relabeled cluster-mean agreement on clusters that are non-empty in at
    // least half of both chains' draws.
    let chain_means = |chain: usize| -> Vec<Option<Vec<f64>>> {
        let chain_draws: Vec<&SavedDraw> = draws.iter().filter(|d| d.chain == chain).collect();
        let n = chain_draws.len().max(1);
        (0..=prior.k_max)
            .map(|k| {
                let occupied: Vec<&&SavedDraw> = chain_draws
                    .iter()
                    .filter(|d| d.assign.iter().any(|&c| c == k))
                    .collect();
                if occupied.len() * 2 < n {
                    return None;
                }
                let mut mean = vec![0.0; cfg.dims];
                for d in &occupied {
                    for (j, v) in d.params[k].mu.iter().enumerate() {
                        mean[j] += v;
                    }
                }
                for v in &mut mean {
                    *v /= occupied.len() as f64;
                }
                Some(mean)
            })
            .collect()
    };
    let means0 = chain_means(0);
    let means1 = chain_means(1);
    let mut discrepancy = 0.0f64;
    for (a, b) in means0.iter().zip(&means1) {
        if let (Some(x), Some(y)) = (a, b) {
            let dist = x
                .iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            discrepancy = discrepancy.max(dist);
        }
    }
    let cluster_converged = discrepancy < 0.5 && map_effective_agree;

    Diagnostics {
        root_tv,
        root_converged,
        cluster_mean_discrepancy: discrepancy,
        map_effective_agree,
        cluster_converged,
        converged: root_converged && cluster_converged,
    }
}
