//! Input parsing and haplotype collapsing.
//!
//! Reads aligned DNA sequences from NEXUS files (data or characters block,
//! sequential or interleaved) and whitespace-delimited coordinate/covariate
//! tables, then collapses raw sequences into unique haplotypes over effective
//! nucleotide sites: columns touched by ambiguity codes are dropped, alignment
//! gaps act as a fifth character state, constant columns are removed, and
//! columns that induce the same partition of the haplotypes are merged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unambiguous residue states. '-' is a real fifth state (insertion/deletion).
pub const STATES: [u8; 5] = [b'A', b'C', b'G', b'T', b'-'];

/// IUPAC ambiguity codes; any column containing one is dropped.
pub const AMBIGUITY_CODES: [u8; 12] = [
    b'R', b'Y', b'S', b'W', b'K', b'M', b'B', b'D', b'H', b'V', b'N', b'?',
];

fn is_state(c: u8) -> bool {
    STATES.contains(&c)
}

fn is_ambiguity(c: u8) -> bool {
    AMBIGUITY_CODES.contains(&c)
}

/// An aligned set of raw sequences.
#[derive(Debug, Clone)]
pub struct SequenceSet {
    pub labels: Vec<String>,
    /// One row per sequence, each of length `self.len()`, uppercase bytes.
    pub residues: Vec<Vec<u8>>,
}

impl SequenceSet {
    /// Number of sequences.
    pub fn n(&self) -> usize {
        self.residues.len()
    }

    /// Alignment length.
    pub fn len(&self) -> usize {
        self.residues.first().map_or(0, |r| r.len())
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

/// One line of the coordinates file, before expansion into observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRow {
    pub lon: f64,
    pub lat: f64,
    pub covariates: Vec<f64>,
    /// 1-based line number in the source text.
    pub line: usize,
}

/// One individual observation: a sampled sequence with its location data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lon: f64,
    pub lat: f64,
    pub covariates: Vec<f64>,
    /// 1-based sequence number, referring to the NEXUS file order.
    pub sequence_id: usize,
    /// Index of the file row this observation was expanded from.
    pub file_row: usize,
}

/// Parsed coordinates/covariates with one row per individual observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTable {
    pub obs: Vec<Observation>,
    pub file_rows: Vec<FileRow>,
    /// Distinct (lon, lat) locations in order of first appearance; each entry
    /// lists the file rows sharing that location (first row carries reported
    /// location mass).
    pub locations: Vec<Vec<usize>>,
    /// Total dimension: 2 geographic + number of covariates.
    pub dims: usize,
}

impl ObservationTable {
    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    /// Location index of each file row.
    pub fn location_of_row(&self) -> Vec<usize> {
        let mut out = vec![0; self.file_rows.len()];
        for (loc, rows) in self.locations.iter().enumerate() {
            for &r in rows {
                out[r] = loc;
            }
        }
        out
    }

    /// Check that every sequence id refers to a sequence present in `seqs`.
    pub fn validate_against(&self, seqs: &SequenceSet) -> Result<()> {
        for o in &self.obs {
            if o.sequence_id == 0 || o.sequence_id > seqs.n() {
                return Err(Error::InvalidState(format!(
                    "observation refers to sequence {} but the alignment has {} sequences",
                    o.sequence_id,
                    seqs.n()
                )));
            }
        }
        Ok(())
    }
}

/// Sequences collapsed to unique haplotypes over effective sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaplotypeData {
    /// One row per haplotype over the effective sites.
    pub haplotypes: Vec<Vec<u8>>,
    /// Observed copies of each haplotype; sums to the number of raw sequences.
    pub counts: Vec<usize>,
    pub effective_length: usize,
    /// Raw sequence index -> haplotype index.
    pub label_map: Vec<usize>,
    /// Effective site -> representative original site (0-based).
    pub site_map: Vec<usize>,
    /// Effective site -> all original sites merged into it.
    pub site_preimages: Vec<Vec<usize>>,
    /// Original sites dropped because some sequence has an ambiguity code.
    pub dropped_sites: Vec<usize>,
    /// Original sites dropped because they do not vary across haplotypes.
    pub constant_sites: Vec<usize>,
}

impl HaplotypeData {
    /// Number of distinct observed haplotypes.
    pub fn n(&self) -> usize {
        self.haplotypes.len()
    }

    /// Total number of raw sequences.
    pub fn n_raw(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Haplotype index (0-based) of a 1-based sequence id.
    pub fn haplotype_of_sequence(&self, sequence_id: usize) -> usize {
        self.label_map[sequence_id - 1]
    }
}

/// Strip NEXUS bracket comments, preserving line structure.
fn strip_comments(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    let mut depth = 0usize;
    for ch in input.chars() {
        match ch {
            '[' => depth += 1,
            ']' if depth > 0 => depth -= 1,
            '\n' => out.push('\n'),
            c if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

/// Parse a NEXUS file containing a DATA or CHARACTERS block with aligned
/// sequences. Both sequential and interleaved matrices are accepted; gap
/// characters are preserved verbatim.
pub fn parse_nexus(input: &str) -> Result<SequenceSet> {
    let text = strip_comments(input);
    let lines: Vec<&str> = text.lines().collect();

    if !text.trim_start().to_uppercase().starts_with("#NEXUS") {
        return Err(Error::parse(1, "missing #NEXUS header"));
    }

    // Locate the data/characters block.
    let mut block_start = None;
    for (i, line) in lines.iter().enumerate() {
        let u = line.trim().to_uppercase();
        if u.starts_with("BEGIN DATA") || u.starts_with("BEGIN CHARACTERS") {
            block_start = Some(i);
            break;
        }
    }
    let block_start =
        block_start.ok_or_else(|| Error::parse(1, "no DATA or CHARACTERS block found"))?;

    // Optional declared dimensions.
    let mut ntax: Option<usize> = None;
    let mut nchar: Option<usize> = None;

    // Find the MATRIX keyword within the block.
    let mut matrix_start = None;
    for (i, line) in lines.iter().enumerate().skip(block_start + 1) {
        let u = line.trim().to_uppercase();
        if u.starts_with("END;") || u.starts_with("ENDBLOCK;") {
            break;
        }
        if u.contains("DIMENSIONS") {
            for token in u.split([' ', '\t', ';', ',']) {
                if let Some(v) = token.strip_prefix("NTAX=") {
                    ntax = v.parse().ok();
                }
                if let Some(v) = token.strip_prefix("NCHAR=") {
                    nchar = v.parse().ok();
                }
            }
        }
        if u.starts_with("MATRIX") {
            matrix_start = Some(i + 1);
            break;
        }
    }
    let matrix_start =
        matrix_start.ok_or_else(|| Error::parse(block_start + 1, "no MATRIX in data block"))?;

    // Read (label, chunk) rows until the terminating ';'.
    let mut order: Vec<String> = Vec::new();
    let mut chunks: BTreeMap<String, (Vec<u8>, usize, usize)> = BTreeMap::new(); // seq, n_chunks, last_line
    let mut terminated = false;
    for (i, raw_line) in lines.iter().enumerate().skip(matrix_start) {
        let line_no = i + 1;
        let mut line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let mut ends_here = false;
        if let Some(pos) = line.find(';') {
            line = line[..pos].trim();
            ends_here = true;
        }
        if !line.is_empty() {
            let mut tokens = line.split_whitespace();
            let label = tokens.next().unwrap().to_string();
            let seq_part: String = tokens.collect::<Vec<_>>().concat();
            if seq_part.is_empty() {
                return Err(Error::parse(
                    line_no,
                    format!("row '{label}' has a label but no sequence data"),
                ));
            }
            let mut bytes = Vec::with_capacity(seq_part.len());
            for ch in seq_part.bytes() {
                let c = ch.to_ascii_uppercase();
                if is_state(c) || is_ambiguity(c) {
                    bytes.push(c);
                } else {
                    return Err(Error::parse(
                        line_no,
                        format!("unrecognized residue '{}' in sequence '{label}'", ch as char),
                    ));
                }
            }
            let entry = chunks.entry(label.clone()).or_insert_with(|| {
                order.push(label.clone());
                (Vec::new(), 0, line_no)
            });
            entry.0.extend_from_slice(&bytes);
            entry.1 += 1;
            entry.2 = line_no;
        }
        if ends_here {
            terminated = true;
            break;
        }
    }
    if !terminated {
        return Err(Error::parse(lines.len(), "MATRIX not terminated by ';'"));
    }
    if order.len() < 2 {
        return Err(Error::parse(
            matrix_start,
            format!("need at least 2 sequences, found {}", order.len()),
        ));
    }

    // All labels must contribute the same number of chunks: a mismatch means a
    // duplicate label (sequential) or a broken interleave cycle.
    let first_chunks = chunks[&order[0]].1;
    for label in &order {
        let (_, n_chunks, last_line) = &chunks[label];
        if *n_chunks != first_chunks {
            return Err(Error::parse(
                *last_line,
                format!(
                    "label '{label}' appears {n_chunks} times but '{}' appears {first_chunks} \
                     times: duplicate label or inconsistent interleaving",
                    order[0]
                ),
            ));
        }
    }

    let expected_len = chunks[&order[0]].0.len();
    for label in &order {
        let (seq, _, last_line) = &chunks[label];
        if seq.len() != expected_len {
            return Err(Error::parse(
                *last_line,
                format!(
                    "ragged alignment: sequence '{label}' has length {} but '{}' has length {}",
                    seq.len(),
                    order[0],
                    expected_len
                ),
            ));
        }
    }

    if let Some(nt) = ntax {
        if nt != order.len() {
            return Err(Error::parse(
                block_start + 1,
                format!("NTAX={nt} but matrix has {} sequences", order.len()),
            ));
        }
    }
    if let Some(nc) = nchar {
        if nc != expected_len {
            return Err(Error::parse(
                block_start + 1,
                format!("NCHAR={nc} but sequences have length {expected_len}"),
            ));
        }
    }

    let residues = order.iter().map(|l| chunks[l].0.clone()).collect();
    Ok(SequenceSet {
        labels: order,
        residues,
    })
}

/// Parse a whitespace-delimited coordinates file. Each line holds `dims`
/// numeric fields (longitude, latitude, then covariates) followed by one or
/// more sequence numbers; every sequence number becomes one observation row.
pub fn parse_coords(text: &str, dims: usize) -> Result<ObservationTable> {
    if dims < 2 {
        return Err(Error::InvalidConfig(format!(
            "dims must be at least 2 (longitude and latitude), got {dims}"
        )));
    }
    let mut file_rows = Vec::new();
    let mut obs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < dims {
            return Err(Error::parse(
                line_no,
                format!("expected {dims} numeric fields, found {}", tokens.len()),
            ));
        }
        let mut nums = Vec::with_capacity(dims);
        for t in &tokens[..dims] {
            let v: f64 = t.parse().map_err(|_| {
                Error::parse(line_no, format!("non-numeric coordinate field '{t}'"))
            })?;
            nums.push(v);
        }
        let ids = &tokens[dims..];
        if ids.is_empty() {
            return Err(Error::parse(line_no, "row has no haplotype ids"));
        }
        let row_idx = file_rows.len();
        file_rows.push(FileRow {
            lon: nums[0],
            lat: nums[1],
            covariates: nums[2..].to_vec(),
            line: line_no,
        });
        for t in ids {
            let id: usize = t.parse().map_err(|_| {
                Error::parse(
                    line_no,
                    format!("invalid haplotype id '{t}' (expect a positive integer)"),
                )
            })?;
            if id == 0 {
                return Err(Error::parse(line_no, "haplotype ids are 1-based; 0 is invalid"));
            }
            obs.push(Observation {
                lon: nums[0],
                lat: nums[1],
                covariates: nums[2..].to_vec(),
                sequence_id: id,
                file_row: row_idx,
            });
        }
    }
    if obs.is_empty() {
        return Err(Error::parse(1, "coordinates file contains no observations"));
    }

    // Group file rows by identical coordinates, first appearance first.
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

    Ok(ObservationTable {
        obs,
        file_rows,
        locations,
        dims,
    })
}

/// Collapse a sequence set into unique haplotypes over effective sites.
pub fn collapse_haplotypes(seqs: &SequenceSet) -> Result<HaplotypeData> {
    let n_raw = seqs.n();
    let len = seqs.len();
    if n_raw < 2 {
        return Err(Error::InvalidState(format!(
            "need at least 2 sequences, got {n_raw}"
        )));
    }

    // (i) Drop any column where some sequence carries an ambiguity code.
    let mut dropped_sites = Vec::new();
    let mut kept_sites = Vec::new();
    for site in 0..len {
        if seqs.residues.iter().any(|r| is_ambiguity(r[site])) {
            dropped_sites.push(site);
        } else {
            kept_sites.push(site);
        }
    }

    // (iii) Merge identical rows over the kept sites; first appearance fixes
    // haplotype numbering.
    let mut haplotype_rows: Vec<Vec<u8>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut label_map = Vec::with_capacity(n_raw);
    for r in &seqs.residues {
        let key: Vec<u8> = kept_sites.iter().map(|&s| r[s]).collect();
        match haplotype_rows.iter().position(|h| *h == key) {
            Some(idx) => {
                counts[idx] += 1;
                label_map.push(idx);
            }
            None => {
                haplotype_rows.push(key);
                counts.push(1);
                label_map.push(haplotype_rows.len() - 1);
            }
        }
    }
    let n = haplotype_rows.len();
    if n == 1 {
        return Err(Error::DegenerateData(
            "all sequences collapse to a single haplotype (effective length 0); \
             there is no variation to infer from"
                .into(),
        ));
    }

    // (iv)+(v) Drop constant columns and merge columns inducing the same
    // partition of the haplotypes. The partition signature renames states by
    // first occurrence down the column, so distinguishing power alone decides
    // identity.
    let mut constant_sites = Vec::new();
    let mut signature_order: Vec<Vec<u8>> = Vec::new();
    let mut site_preimages: Vec<Vec<usize>> = Vec::new();
    for (k, &site) in kept_sites.iter().enumerate() {
        let mut sig = Vec::with_capacity(n);
        let mut seen: Vec<u8> = Vec::new();
        for h in &haplotype_rows {
            let c = h[k];
            let rank = match seen.iter().position(|&s| s == c) {
                Some(p) => p as u8,
                None => {
                    seen.push(c);
                    (seen.len() - 1) as u8
                }
            };
            sig.push(rank);
        }
        if seen.len() == 1 {
            constant_sites.push(site);
            continue;
        }
        match signature_order.iter().position(|s| *s == sig) {
            Some(e) => site_preimages[e].push(site),
            None => {
                signature_order.push(sig);
                site_preimages.push(vec![site]);
            }
        }
    }

    let site_map: Vec<usize> = site_preimages.iter().map(|p| p[0]).collect();
    let effective_length = site_map.len();

    // Representative residues per haplotype over effective sites.
    let site_pos: Vec<usize> = site_map
        .iter()
        .map(|&orig| kept_sites.iter().position(|&s| s == orig).unwrap())
        .collect();
    let haplotypes: Vec<Vec<u8>> = haplotype_rows
        .iter()
        .map(|row| site_pos.iter().map(|&p| row[p]).collect())
        .collect();

    Ok(HaplotypeData {
        haplotypes,
        counts,
        effective_length,
        label_map,
        site_map,
        site_preimages,
        dropped_sites,
        constant_sites,
    })
}

/// Read a file, or standard input when the path is "-".
pub fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        use std::io::Read;
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        Ok(buf)
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}
