// Scratch probe: long-run effective-cluster distribution vs psi.
use phylogeo::clustmodel::*;
use phylogeo::haplonet::*;
use phylogeo::sampler::*;
use phylogeo::seqio::*;
use phylogeo::synthgen::*;

fn main() {
    let cfg = SynthConfig {
        n_haplotypes: 5, n_observations: 60, sites: 12, true_k: 1,
        separation: 6.0, geo_sd: 1.0, seed: 3,
    };
    let (seqs, table, _truth) = generate(&cfg).unwrap();
    let hap = collapse_haplotypes(&seqs).unwrap();
    let net = build_network(&hap, 0, 5000).unwrap();
    let data = normalize(&table).unwrap();
    let ctx = ModelContext::new(net, data, &hap, &table).unwrap();

    for (name, psi_scale) in [("default", 1.0f64), ("quarter", 0.25), ("tenth", 0.1)] {
        let mut prior = PriorConfig::default_for(&ctx.data, 3);
        prior.psi *= psi_scale;
        let mut run_cfg = RunConfig::new(3, 200_000, 0, 1000, 2, 17);
        run_cfg.threads = 2;
        let t0 = std::time::Instant::now();
        let archive = run(&run_cfg, &prior, &ctx).unwrap();
        let mut eff = [0usize; 5];
        let mut ks = [0usize; 4];
        for d in &archive.draws {
            eff[d.effective_clusters()] += 1;
            ks[d.k] += 1;
        }
        let acc: Vec<String> = archive.acceptance[0].iter()
            .map(|(k, (a, t))| format!("{k}={:.3}", *a as f64 / *t as f64)).collect();
        println!(
            "psi {name} ({:.2}): eff {:?} k {:?} root_tv {:.3} acc {:?} {:.1}s",
            prior.psi, eff, ks, archive.diagnostics.root_tv, acc, t0.elapsed().as_secs_f64()
        );
    }
}
