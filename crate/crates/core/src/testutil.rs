//! Shared helpers for building small model contexts in tests.

use crate::clustmodel::{normalize, ModelContext};
use crate::haplonet::{build_network, TreeState};
use crate::seqio::{FileRow, HaplotypeData, Observation, ObservationTable};

pub fn hap_data(rows: &[&str], counts: &[usize]) -> HaplotypeData {
    let haplotypes: Vec<Vec<u8>> = rows.iter().map(|r| r.as_bytes().to_vec()).collect();
    let eff = haplotypes[0].len();
    let mut label_map = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            label_map.push(i);
        }
    }
    HaplotypeData {
        haplotypes,
        counts: counts.to_vec(),
        effective_length: eff,
        label_map,
        site_map: (0..eff).collect(),
        site_preimages: (0..eff).map(|s| vec![s]).collect(),
        dropped_sites: Vec::new(),
        constant_sites: Vec::new(),
    }
}

pub fn obs_table(coords: &[Vec<f64>]) -> ObservationTable {
    let dims = coords[0].len();
    let obs: Vec<Observation> = coords
        .iter()
        .enumerate()
        .map(|(i, c)| Observation {
            lon: c[0],
            lat: c[1],
            covariates: c[2..].to_vec(),
            sequence_id: i + 1,
            file_row: i,
        })
        .collect();
    let file_rows: Vec<FileRow> = coords
        .iter()
        .enumerate()
        .map(|(i, c)| FileRow {
            lon: c[0],
            lat: c[1],
            covariates: c[2..].to_vec(),
            line: i + 1,
        })
        .collect();
    let mut locations: Vec<Vec<usize>> = Vec::new();
    for (r, row) in file_rows.iter().enumerate() {
        match locations
            .iter_mut()
            .find(|rows| file_rows[rows[0]].lon == row.lon && file_rows[rows[0]].lat == row.lat)
        {
            Some(rows) => rows.push(r),
            None => locations.push(vec![r]),
        }
    }
    ObservationTable {
        obs,
        file_rows,
        locations,
        dims,
    }
}

/// Build a full context from haplotype rows, per-haplotype counts and one
/// coordinate row per observation (haplotype-major order). Returns the
/// context and the default spanning tree rooted at node 0.
pub fn make_ctx(rows: &[&str], counts: &[usize], coords: &[Vec<f64>]) -> (ModelContext, TreeState) {
    let hap = hap_data(rows, counts);
    assert_eq!(hap.n_raw(), coords.len());
    let obs = obs_table(coords);
    let net = build_network(&hap, 0, 5000).unwrap();
    let data = normalize(&obs).unwrap();
    let deleted = net.default_tree_vector();
    let ctx = ModelContext::new(net, data, &hap, &obs).unwrap();
    (ctx, TreeState { deleted, root: 0 })
}

pub fn spread_coords(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![i as f64, (i as f64 * 0.7).sin() * 3.0])
        .collect()
}
