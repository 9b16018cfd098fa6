//! Command-line driver: `run` executes the full pipeline and writes an
//! archive directory, `summarize`/`export` post-process an existing archive,
//! `simulate` emits synthetic datasets, `validate` checks inputs only.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::clustmodel::{normalize, ModelContext, PriorConfig};
use crate::error::{Error, Result};
use crate::sampler::RunConfig;
use crate::seqio;

#[derive(Parser, Debug)]
#[command(
    name = "phylogeo",
    version,
    about = "Bayesian phylogeographic and ecological clustering of DNA haplotypes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline: parse, build the network, sample, summarize.
    Run(RunArgs),
    /// Recompute the summary of an existing archive directory.
    Summarize(ArchiveArgs),
    /// Regenerate the exports (KML, Newick, SVG, JSON) of an archive.
    Export(ArchiveArgs),
    /// Forward-simulate a dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Parse and check the inputs without sampling.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// NEXUS alignment path, or "-" for standard input.
    #[arg(long)]
    seqs: String,
    /// Coordinates/covariates table path, or "-" for standard input.
    #[arg(long)]
    coords: String,
    /// Total dimension: 2 geographic coordinates plus covariates.
    #[arg(long)]
    dims: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Maximum number of migrations considered.
    #[arg(long = "max-mig")]
    max_mig: usize,
    /// MCMC iterations per chain.
    #[arg(long)]
    iter: usize,
    /// Parsimony relaxation parameter.
    #[arg(long, default_value_t = 0)]
    ds: usize,
    /// Posterior samples saved per chain.
    #[arg(long = "post-samples")]
    post_samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Independent chains (at least 2).
    #[arg(long, default_value_t = 2)]
    chains: usize,
    /// Worker threads for chains (0 = one per chain).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory (default: $PHYLOGEO_OUT or ./phylogeo_out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Covariance prior scale (default calibrated from the data).
    #[arg(long)]
    psi: Option<f64>,
    /// Upper bound of the concentration prior.
    #[arg(long, default_value_t = 30)]
    g: usize,
    /// Diagonal of the cluster-mean prior covariance.
    #[arg(long, default_value_t = 4.0)]
    v: f64,
    /// Likelihood tempering factor (1 = full posterior; 0 = prior only).
    #[arg(long, default_value_t = 1.0)]
    tempering: f64,
    /// Inferred-intermediate budget for network construction.
    #[arg(long = "node-budget", default_value_t = crate::haplonet::DEFAULT_NODE_BUDGET)]
    node_budget: usize,
    /// Dump exact (root, tree) ordering-count tables as JSON, when feasible.
    #[arg(long = "dump-exact-tables", hide = true)]
    dump_exact_tables: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct ArchiveArgs {
    /// Archive directory written by `run`.
    #[arg(long)]
    archive: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    haplotypes: usize,
    #[arg(long, default_value_t = 60)]
    observations: usize,
    #[arg(long, default_value_t = 20)]
    sites: usize,
    #[arg(long, default_value_t = 1)]
    migrations: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for sequences.nex, coords.txt and truth.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// NEXUS alignment path, or "-" for standard input (optional).
    #[arg(long)]
    seqs: Option<String>,
    /// Coordinates/covariates table path, or "-" for standard input.
    #[arg(long)]
    coords: String,
    #[arg(long)]
    dims: usize,
}

/// Exit code when results were written but convergence diagnostics failed.
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests exit 0 by clap convention.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("PHYLOGEO_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("phylogeo_out"))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Export(args) => cmd_export(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

struct Pipeline {
    ctx: ModelContext,
    hap: seqio::HaplotypeData,
    obs: seqio::ObservationTable,
    seq_count: usize,
    seq_length: usize,
}

fn build_pipeline(input: &InputArgs, ds: usize, node_budget: usize) -> Result<Pipeline> {
    let seq_text = seqio::read_input(&input.seqs)?;
    let seqs = seqio::parse_nexus(&seq_text)?;
    let coords_text = seqio::read_input(&input.coords)?;
    let obs = seqio::parse_coords(&coords_text, input.dims)?;
    obs.validate_against(&seqs)?;
    let hap = seqio::collapse_haplotypes(&seqs)?;
    let net = crate::haplonet::build_network(&hap, ds, node_budget)?;
    let data = normalize(&obs)?;
    let ctx = ModelContext::new(net, data, &hap, &obs)?;
    Ok(Pipeline {
        ctx,
        hap,
        obs,
        seq_count: seqs.n(),
        seq_length: seqs.len(),
    })
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    println!("Starting run...");
    println!("Inferring possible missing sequences....");
    let p = build_pipeline(&args.input, args.ds, args.node_budget)?;
    println!("Counting loops in the network...");
    println!();
    if p.ctx.net.n_loop() == 0 {
        println!("The program found no loops that need to be resolved in the network");
    } else {
        println!(
            "The program found {} loops to resolve in the network",
            p.ctx.net.n_loop()
        );
    }
    println!();
    println!("Number of iterations is {}", args.iter);
    println!("Number of saved iterations {}", args.post_samples);
    println!("Sample size is {}", p.seq_count);
    println!("Input sequence length is {}", p.seq_length);
    println!("Effective sequence length is {}", p.hap.effective_length);
    println!(
        "Total number of haplotypes (including missing) {}",
        p.ctx.net.n_nodes()
    );
    println!("Dimension is {}", args.input.dims);
    println!("Parsimony relaxation is {}", args.ds);
    println!("Maximum number of migrations is {}", args.max_mig);
    println!();

    let mut cfg = RunConfig::new(
        args.max_mig,
        args.iter,
        args.ds,
        args.post_samples,
        args.input.dims,
        args.seed,
    );
    cfg.chains = args.chains;
    cfg.threads = args.threads;
    cfg.tempering = args.tempering;
    cfg.progress = !args.quiet;

    let mut prior = PriorConfig::default_for(&p.ctx.data, args.max_mig);
    if let Some(psi) = args.psi {
        prior.psi = psi;
    }
    prior.g = args.g;
    prior.v = args.v;

    println!(
        "Starting MCMC sampler (burn-in ends at {}%)",
        (cfg.burn_in_fraction * 100.0).round() as u64
    );
    let archive = crate::sampler::run(&cfg, &prior, &p.ctx)?;
    for chain in 0..cfg.chains {
        println!("Chain {}: |====================|100%", chain + 1);
    }
    println!();

    let report = crate::summaries::summarize(&archive, &p.ctx, &p.obs)?;
    let out_dir = args.out.unwrap_or_else(default_out_dir);
    crate::archive::save(&out_dir, &archive, &p.ctx, &p.hap, &p.obs, &report)?;

    if let Some(path) = &args.dump_exact_tables {
        match crate::ordering::root_posterior_exact(
            &p.ctx.net,
            crate::haplonet::DEFAULT_ENUMERATION_CAP,
            crate::ordering::DEFAULT_EVENT_CAP,
        ) {
            Ok(exact) => {
                let doc = serde_json::json!({
                    "trees": exact.trees,
                    "counts": exact.counts.iter().map(|row| {
                        row.iter().map(|c| c.to_string()).collect::<Vec<_>>()
                    }).collect::<Vec<_>>(),
                    "root_marginal": exact.root_marginal(),
                    "tree_marginal": exact.tree_marginal(),
                });
                std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
            }
            Err(e) => eprintln!("exact tables unavailable: {e}"),
        }
    }

    let log = run_log(&report, &p);
    print!("{log}");
    std::fs::write(out_dir.join("run_log.txt"), &log)?;
    std::fs::write(
        out_dir.join("run_log.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "map_root": report.map_tree.root + 1,
            "top_ancestral_rows": report.top_ancestral_rows.iter().map(|r| r + 1).collect::<Vec<_>>(),
            "map_effective_migrations": arg_max(&report.mig_probs),
            "root_converged": report.diagnostics.root_converged,
            "cluster_converged": report.diagnostics.cluster_converged,
        }))?,
    )?;
    println!("Archive written to {}", out_dir.display());

    if !archive.diagnostics.converged {
        Ok(EXIT_NOT_CONVERGED)
    } else {
        Ok(0)
    }
}

fn arg_max(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn run_log(report: &crate::summaries::SummaryReport, p: &Pipeline) -> String {
    let mut log = String::new();
    let _ = p;
    log.push_str(&format!(
        "The most likely root node is {}\n",
        report.map_tree.root + 1
    ));
    let tops: Vec<String> = report
        .top_ancestral_rows
        .iter()
        .map(|r| (r + 1).to_string())
        .collect();
    log.push_str(&format!(
        "The most likely ancestral locations are {}\n",
        tops.join(",")
    ));
    log.push_str(&format!(
        "The most likely number of migrations is {}\n",
        arg_max(&report.mig_probs)
    ));
    if !report.diagnostics.root_converged {
        log.push_str("NO ROOT CONVERGENCE: You need to re-run the sampler with more iterations\n");
    }
    if !report.diagnostics.cluster_converged {
        log.push_str(
            "NO CLUSTERING CONVERGENCE: You need to re-run the sampler with more iterations\n",
        );
    }
    log
}

fn cmd_summarize(args: ArchiveArgs) -> Result<i32> {
    let loaded = crate::archive::load(&args.archive)?;
    let report = crate::summaries::summarize(&loaded.archive, &loaded.ctx, &loaded.obs)?;
    std::fs::write(
        args.archive.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!("The most likely root node is {}", report.map_tree.root + 1);
    println!(
        "The most likely number of migrations is {}",
        arg_max(&report.mig_probs)
    );
    println!(
        "Summary written to {}",
        args.archive.join("summary.json").display()
    );
    Ok(0)
}

fn cmd_export(args: ArchiveArgs) -> Result<i32> {
    let loaded = crate::archive::load(&args.archive)?;
    let report = crate::summaries::summarize(&loaded.archive, &loaded.ctx, &loaded.obs)?;
    let files = crate::archive::save(
        &args.archive,
        &loaded.archive,
        &loaded.ctx,
        &loaded.hap,
        &loaded.obs,
        &report,
    )?;
    println!("Re-exported {} files under {}", files.len(), args.archive.display());
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let cfg = crate::synthgen::SynthConfig {
        n_haplotypes: args.haplotypes,
        n_observations: args.observations,
        sites: args.sites,
        true_k: args.migrations,
        separation: args.separation,
        geo_sd: args.sd,
        seed: args.seed,
    };
    let (seqs, table, truth) = crate::synthgen::generate(&cfg)?;
    let out = args.out.unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("sequences.nex"), crate::synthgen::to_nexus(&seqs))?;
    std::fs::write(out.join("coords.txt"), crate::synthgen::to_coords_text(&table))?;
    std::fs::write(
        out.join("truth.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    println!(
        "Simulated {} observations of {} haplotypes into {}",
        args.observations,
        args.haplotypes,
        out.display()
    );
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> Result<i32> {
    let coords_text = seqio::read_input(&args.coords)?;
    let obs = seqio::parse_coords(&coords_text, args.dims)?;
    let mut distinct: Vec<usize> = obs.obs.iter().map(|o| o.sequence_id).collect();
    distinct.sort_unstable();
    distinct.dedup();
    println!(
        "{} observations, {} locations, {} haplotype ids",
        obs.n_obs(),
        obs.n_locations(),
        distinct.len()
    );
    if let Some(seqs_path) = &args.seqs {
        let seqs = seqio::parse_nexus(&seqio::read_input(seqs_path)?)?;
        obs.validate_against(&seqs)?;
        let hap = seqio::collapse_haplotypes(&seqs)?;
        println!(
            "{} sequences of length {}, {} haplotypes, effective length {}",
            seqs.n(),
            seqs.len(),
            hap.n(),
            hap.effective_length
        );
    }
    println!("inputs OK");
    Ok(0)
}

impl From<clap::Error> for Error {
    fn from(e: clap::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}
