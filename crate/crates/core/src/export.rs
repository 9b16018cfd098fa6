//! Geospatial and tree exports: KML 2.2 documents, Newick text, a JSON tree
//! description for plotting, and an SVG contour figure. All geometry leaves
//! the engine in raw (denormalized) degrees.

use std::fmt::Write as _;

use crate::clustmodel::{ModelContext, NormalizedData};
use crate::error::{Error, Result};
use crate::haplonet::{Network, TreeState};
use crate::seqio::ObservationTable;
use crate::summaries::{ContourSet, Ellipse, SummaryReport};

/// Color wheel for cluster styling (KML aabbggrr, SVG rrggbb).
const CLUSTER_COLORS: [(&str, &str); 8] = [
    ("ff00a5ff", "ffa500"), // orange
    ("ffd4ff7f", "7fffd4"), // aquamarine
    ("ff9314ff", "ff1493"), // pink
    ("ff00ff00", "00ff00"), // green
    ("ffff0000", "0000ff"), // blue
    ("ff00ffff", "ffff00"), // yellow
    ("ffff00ff", "ff00ff"), // magenta
    ("ffffbf00", "00bfff"), // sky
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maximum per-draw ellipses drawn in exports.
pub const MAX_DRAW_ELLIPSES: usize = 200;

/// Denormalize an ellipse back to degrees: positions shift and scale, axes
/// scale by the shared geographic factor, the angle is preserved.
fn denorm_ellipse(e: &Ellipse, data: &NormalizedData) -> Ellipse {
    let s = 1.0 / data.geo_scale;
    Ellipse {
        center: (
            e.center.0 * s + data.geo_center.0,
            e.center.1 * s + data.geo_center.1,
        ),
        semi_major: e.semi_major * s,
        semi_minor: e.semi_minor * s,
        angle: e.angle,
    }
}

fn kml_polygon(out: &mut String, name: &str, style: &str, points: &[(f64, f64)]) {
    let _ = writeln!(out, "    <Placemark>");
    let _ = writeln!(out, "      <name>{}</name>", xml_escape(name));
    let _ = writeln!(out, "      <styleUrl>#{style}</styleUrl>");
    let _ = writeln!(
        out,
        "      <Polygon><outerBoundaryIs><LinearRing><coordinates>"
    );
    for &(lon, lat) in points.iter().chain(points.first().into_iter()) {
        let _ = writeln!(out, "        {lon:.9},{lat:.9},0");
    }
    let _ = writeln!(
        out,
        "      </coordinates></LinearRing></outerBoundaryIs></Polygon>"
    );
    let _ = writeln!(out, "    </Placemark>");
}

fn kml_point(out: &mut String, name: &str, style: &str, lon: f64, lat: f64) {
    let _ = writeln!(out, "    <Placemark>");
    let _ = writeln!(out, "      <name>{}</name>", xml_escape(name));
    let _ = writeln!(out, "      <styleUrl>#{style}</styleUrl>");
    let _ = writeln!(
        out,
        "      <Point><coordinates>{lon:.9},{lat:.9},0</coordinates></Point>"
    );
    let _ = writeln!(out, "    </Placemark>");
}

fn kml_header(out: &mut String, name: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, r#"<kml xmlns="http://www.opengis.net/kml/2.2">"#);
    let _ = writeln!(out, "  <Document>");
    let _ = writeln!(out, "    <name>{}</name>", xml_escape(name));
}

fn kml_styles(out: &mut String, n_labels: usize) {
    for k in 0..n_labels {
        let (kml_color, _) = CLUSTER_COLORS[k % CLUSTER_COLORS.len()];
        let translucent = format!("4c{}", &kml_color[2..]);
        let _ = writeln!(
            out,
            "    <Style id=\"cluster{k}\"><LineStyle><color>{kml_color}</color><width>2</width></LineStyle><PolyStyle><color>{translucent}</color></PolyStyle></Style>"
        );
        let faint = format!("19{}", &kml_color[2..]);
        let _ = writeln!(
            out,
            "    <Style id=\"cluster{k}draw\"><LineStyle><color>{faint}</color><width>1</width></LineStyle><PolyStyle><color>0c{}</color></PolyStyle></Style>",
            &kml_color[2..]
        );
    }
    let _ = writeln!(
        out,
        "    <Style id=\"site\"><IconStyle><scale>0.6</scale></IconStyle></Style>"
    );
    let _ = writeln!(
        out,
        "    <Style id=\"ancestral\"><IconStyle><scale>1.4</scale></IconStyle></Style>"
    );
    let _ = writeln!(
        out,
        "    <Style id=\"edge\"><LineStyle><color>ff444444</color><width>2</width></LineStyle></Style>"
    );
}

/// KML document with the cluster contour ellipses (posterior means plus a
/// bounded number of per-draw ellipses), sampling sites, and the top
/// ancestral locations.
pub fn kml_contours(
    contours: &ContourSet,
    data: &NormalizedData,
    obs: &ObservationTable,
    top_rows: &[usize],
) -> String {
    let n_labels = contours
        .mean
        .iter()
        .map(|&(k, _)| k + 1)
        .max()
        .unwrap_or(1);
    let mut out = String::new();
    kml_header(&mut out, "cluster contours");
    kml_styles(&mut out, n_labels);

    for (di, k, e) in contours.per_draw.iter().take(MAX_DRAW_ELLIPSES) {
        let e = denorm_ellipse(e, data);
        kml_polygon(
            &mut out,
            &format!("cluster {} draw {}", k + 1, di),
            &format!("cluster{k}draw"),
            &e.polygon(72),
        );
    }
    for (k, e) in &contours.mean {
        let e = denorm_ellipse(e, data);
        kml_polygon(
            &mut out,
            &format!("cluster {} mean", k + 1),
            &format!("cluster{k}"),
            &e.polygon(72),
        );
    }
    for (loc, rows) in obs.locations.iter().enumerate() {
        let row = rows[0];
        let fr = &obs.file_rows[row];
        let style = if top_rows.contains(&row) {
            "ancestral"
        } else {
            "site"
        };
        kml_point(
            &mut out,
            &format!("location {}", loc + 1),
            style,
            fr.lon,
            fr.lat,
        );
    }
    out.push_str("  </Document>\n</kml>\n");
    out
}

/// KML document with the MAP tree laid over the sampling map: one placemark
/// per observed haplotype at its first sampled location, and edges between
/// located haplotypes (chains of unobserved intermediates are contracted).
pub fn kml_tree(
    ctx: &ModelContext,
    obs: &ObservationTable,
    report: &SummaryReport,
) -> String {
    let net = &ctx.net;
    let mut out = String::new();
    kml_header(&mut out, "haplotype tree");
    kml_styles(&mut out, report.mig_probs.len());

    // First sampled location per observed node.
    let position = |node: usize| -> Option<(f64, f64)> {
        ctx.obs_of_node[node].first().map(|&o| {
            let row = obs.obs[o].file_row;
            (obs.file_rows[row].lon, obs.file_rows[row].lat)
        })
    };

    for node in 0..net.n_nodes() {
        if let Some((lon, lat)) = position(node) {
            kml_point(
                &mut out,
                &format!("haplotype {} (n={})", node + 1, net.nodes[node].count),
                "site",
                lon,
                lat,
            );
        }
    }

    // Contract intermediate chains: connect each located pair joined by a
    // path of unobserved nodes in the MAP tree.
    let adj = net.tree_neighbors(&report.map_tree.deleted);
    let mut lines: Vec<(usize, usize)> = Vec::new();
    for start in 0..net.n_nodes() {
        if !net.nodes[start].is_observed() {
            continue;
        }
        // Walk away from `start` through unobserved nodes only.
        let mut stack: Vec<(usize, usize)> = adj[start].iter().map(|&v| (v, start)).collect();
        while let Some((v, from)) = stack.pop() {
            if net.nodes[v].is_observed() {
                if start < v {
                    lines.push((start, v));
                }
                continue;
            }
            for &w in &adj[v] {
                if w != from {
                    stack.push((w, v));
                }
            }
        }
    }
    lines.sort_unstable();
    lines.dedup();
    for (a, b) in lines {
        if let (Some((lon_a, lat_a)), Some((lon_b, lat_b))) = (position(a), position(b)) {
            let _ = writeln!(out, "    <Placemark>");
            let _ = writeln!(out, "      <name>edge {}-{}</name>", a + 1, b + 1);
            let _ = writeln!(out, "      <styleUrl>#edge</styleUrl>");
            let _ = writeln!(
                out,
                "      <LineString><coordinates>{lon_a:.9},{lat_a:.9},0 {lon_b:.9},{lat_b:.9},0</coordinates></LineString>"
            );
            let _ = writeln!(out, "    </Placemark>");
        }
    }
    out.push_str("  </Document>\n</kml>\n");
    out
}

/// Serialize the MAP tree as Newick rooted at the MAP root. Observed
/// haplotypes are labeled `H<id>`; unobserved intermediates stay unlabeled.
/// Returns the string and a warning when the root is an unobserved
/// degree-2 intermediate (such a rooting adds no real bifurcation).
pub fn write_newick(net: &Network, tree: &TreeState) -> (String, Option<String>) {
    let oriented = net.orient(tree);
    fn subtree(net: &Network, oriented: &crate::haplonet::OrientedTree, v: usize, out: &mut String) {
        if !oriented.children[v].is_empty() {
            out.push('(');
            for (i, &c) in oriented.children[v].iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                subtree(net, oriented, c, out);
            }
            out.push(')');
        }
        if net.nodes[v].is_observed() {
            let _ = write!(out, "H{}", v + 1);
        }
        if oriented.parent[v].is_some() {
            out.push_str(":1");
        }
    }
    let mut s = String::new();
    subtree(net, &oriented, tree.root, &mut s);
    s.push(';');
    let warning = if !net.nodes[tree.root].is_observed()
        && oriented.children[tree.root].len() == 2
    {
        Some(format!(
            "root is an unobserved intermediate of degree 2; the Newick root node {} is artificial",
            tree.root + 1
        ))
    } else {
        None
    };
    (s, warning)
}

/// A parsed Newick tree: parallel vectors of labels and child lists; node 0
/// is the root.
#[derive(Debug, Clone)]
pub struct NewickTree {
    pub labels: Vec<String>,
    pub children: Vec<Vec<usize>>,
}

/// Parse Newick text (labels and optional branch lengths; no quoting).
pub fn parse_newick(text: &str) -> Result<NewickTree> {
    let bytes = text.trim().as_bytes();
    if bytes.is_empty() || *bytes.last().unwrap() != b';' {
        return Err(Error::parse(1, "newick must end with ';'"));
    }
    let inner = &text.trim()[..text.trim().len() - 1];
    let mut labels = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();

    fn parse_node(
        s: &str,
        labels: &mut Vec<String>,
        children: &mut Vec<Vec<usize>>,
    ) -> Result<usize> {
        let s = s.trim();
        let (kids, rest) = if s.starts_with('(') {
            // Find the matching close parenthesis.
            let mut depth = 0usize;
            let mut close = None;
            for (i, c) in s.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(i);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            let close = close.ok_or_else(|| Error::parse(1, "unbalanced parentheses"))?;
            let inside = &s[1..close];
            // Split on commas at depth zero.
            let mut parts = Vec::new();
            let mut depth = 0usize;
            let mut start = 0usize;
            for (i, c) in inside.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    ',' if depth == 0 => {
                        parts.push(&inside[start..i]);
                        start = i + 1;
                    }
                    _ => {}
                }
            }
            parts.push(&inside[start..]);
            let mut kid_ids = Vec::new();
            for p in parts {
                kid_ids.push(parse_node(p, labels, children)?);
            }
            (kid_ids, &s[close + 1..])
        } else {
            (Vec::new(), s)
        };
        // Label and optional :length.
        let label = match rest.find(':') {
            Some(pos) => &rest[..pos],
            None => rest,
        };
        let id = labels.len();
        labels.push(label.trim().to_string());
        children.push(kids);
        Ok(id)
    }

    let root = parse_node(inner, &mut labels, &mut children)?;
    // Re-root so that node 0 is the root (parse_node appends bottom-up).
    if root != 0 {
        labels.swap(0, root);
        children.swap(0, root);
        for kids in children.iter_mut() {
            for k in kids.iter_mut() {
                if *k == 0 {
                    *k = root;
                } else if *k == root {
                    *k = 0;
                }
            }
        }
    }
    Ok(NewickTree {
        labels,
        children,
    })
}

impl NewickTree {
    /// Canonical topology string: labels pin observed nodes, unlabeled nodes
    /// contribute shape only.
    pub fn canonical(&self) -> String {
        self.canon_node(0)
    }

    fn canon_node(&self, v: usize) -> String {
        if self.children[v].is_empty() {
            return self.labels[v].clone();
        }
        let mut parts: Vec<String> = self.children[v].iter().map(|&c| self.canon_node(c)).collect();
        parts.sort();
        format!("{}({})", self.labels[v], parts.join(","))
    }
}

/// Canonical topology of a rooted network tree, comparable with
/// [`NewickTree::canonical`].
pub fn canonical_topology(net: &Network, tree: &TreeState) -> String {
    let oriented = net.orient(tree);
    fn canon(net: &Network, o: &crate::haplonet::OrientedTree, v: usize) -> String {
        let label = if net.nodes[v].is_observed() {
            format!("H{}", v + 1)
        } else {
            String::new()
        };
        if o.children[v].is_empty() {
            return label;
        }
        let mut parts: Vec<String> = o.children[v].iter().map(|&c| canon(net, o, c)).collect();
        parts.sort();
        format!("{}({})", label, parts.join(","))
    }
    canon(net, &oriented, tree.root)
}

/// JSON description of the MAP tree for plotting: nodes carry sizes
/// (observation counts), cluster membership fractions and levels; edges carry
/// posterior probabilities.
pub fn tree_json(ctx: &ModelContext, report: &SummaryReport) -> serde_json::Value {
    let net = &ctx.net;
    let membership: std::collections::BTreeMap<usize, &Vec<f64>> = report
        .cluster_probs
        .iter()
        .map(|row| (row.node, &row.probs))
        .collect();
    serde_json::json!({
        "root": report.map_tree.root + 1,
        "nodes": (0..net.n_nodes()).map(|v| {
            serde_json::json!({
                "id": v + 1,
                "size": net.nodes[v].count,
                "observed": net.nodes[v].is_observed(),
                "level": report.levels[v],
                "cluster_probs": membership.get(&v).cloned(),
            })
        }).collect::<Vec<_>>(),
        "edges": net.edges.iter().enumerate()
            .filter(|(e, _)| !report.map_tree.deleted.contains(e))
            .map(|(e, &(a, b))| {
                serde_json::json!({
                    "from": a + 1,
                    "to": b + 1,
                    "probability": report.edge_total_probs[e],
                })
            }).collect::<Vec<_>>(),
    })
}

/// SVG figure of the contours: posterior-mean ellipses with solid strokes,
/// transparent per-draw ellipses, sampling points and enlarged markers on the
/// top ancestral locations. Geometry in raw degrees, y flipped for screen
/// coordinates.
pub fn svg_contours(
    contours: &ContourSet,
    data: &NormalizedData,
    obs: &ObservationTable,
    top_rows: &[usize],
) -> String {
    let width = 800.0;
    let height = 600.0;

    // Bounding box over sites and mean ellipses.
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let mut extend = |x: f64, y: f64| {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    };
    for fr in &obs.file_rows {
        extend(fr.lon, fr.lat);
    }
    for (_, e) in &contours.mean {
        let e = denorm_ellipse(e, data);
        let r = e.semi_major.max(e.semi_minor);
        extend(e.center.0 - r, e.center.1 - r);
        extend(e.center.0 + r, e.center.1 + r);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let scale = ((width - 80.0) / span_x).min((height - 80.0) / span_y);
    let sx = |x: f64| 40.0 + (x - min_x) * scale;
    let sy = |y: f64| height - 40.0 - (y - min_y) * scale;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"  <rect width="{width}" height="{height}" fill="white"/>"#);

    let ellipse_path = |e: &Ellipse| -> String {
        let pts = e.polygon(72);
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        d.push('Z');
        d
    };

    for (_, k, e) in contours.per_draw.iter().take(MAX_DRAW_ELLIPSES) {
        let (_, color) = CLUSTER_COLORS[k % CLUSTER_COLORS.len()];
        let e = denorm_ellipse(e, data);
        let _ = writeln!(
            out,
            r##"  <path d="{}" fill="#{color}" fill-opacity="0.04" stroke="#{color}" stroke-opacity="0.15"/>"##,
            ellipse_path(&e)
        );
    }
    for (k, e) in &contours.mean {
        let (_, color) = CLUSTER_COLORS[k % CLUSTER_COLORS.len()];
        let e = denorm_ellipse(e, data);
        let _ = writeln!(
            out,
            r##"  <path d="{}" fill="none" stroke="#{color}" stroke-width="2.5"/>"##,
            ellipse_path(&e)
        );
    }
    for (loc, rows) in obs.locations.iter().enumerate() {
        let row = rows[0];
        let fr = &obs.file_rows[row];
        let top = top_rows.contains(&row);
        let r = if top { 8.0 } else { 3.0 };
        let fill = if top { "black" } else { "dimgray" };
        let _ = writeln!(
            out,
            r#"  <circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}"><title>location {}</title></circle>"#,
            sx(fr.lon),
            sy(fr.lat),
            loc + 1
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haplonet::build_network;
    use crate::summaries::Ellipse;
    use crate::testutil::{hap_data, make_ctx, obs_table, spread_coords};

    fn sample_contours() -> ContourSet {
        ContourSet {
            per_draw: vec![(
                0,
                0,
                Ellipse {
                    center: (0.0, 0.0),
                    semi_major: 1.0,
                    semi_minor: 0.5,
                    angle: 0.3,
                },
            )],
            mean: vec![(
                0,
                Ellipse {
                    center: (0.1, -0.1),
                    semi_major: 1.2,
                    semi_minor: 0.6,
                    angle: 0.3,
                },
            )],
        }
    }

    #[test]
    fn kml_is_well_formed_and_carries_placemarks() {
        let (ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let obs = obs_table(&spread_coords(2));
        let kml = kml_contours(&sample_contours(), &ctx.data, &obs, &[0]);

        let mut reader = quick_xml::Reader::from_str(&kml);
        let mut depth = 0i64;
        let mut placemarks = 0;
        let mut saw_kml_ns = false;
        loop {
            match reader.read_event().expect("well-formed XML") {
                quick_xml::events::Event::Start(e) => {
                    depth += 1;
                    if e.name().as_ref() == b"Placemark" {
                        placemarks += 1;
                    }
                    if e.name().as_ref() == b"kml" {
                        for attr in e.attributes().flatten() {
                            if attr.key.as_ref() == b"xmlns"
                                && attr.value.as_ref() == b"http://www.opengis.net/kml/2.2"
                            {
                                saw_kml_ns = true;
                            }
                        }
                    }
                }
                quick_xml::events::Event::End(_) => depth -= 1,
                quick_xml::events::Event::Eof => break,
                _ => {}
            }
        }
        assert_eq!(depth, 0, "all tags closed");
        assert!(saw_kml_ns, "KML 2.2 namespace present");
        // 1 draw ellipse + 1 mean ellipse + 2 locations.
        assert_eq!(placemarks, 4);
    }

    #[test]
    fn kml_coordinates_are_raw_degrees() {
        let coords = vec![vec![40.25, 45.75], vec![41.5, 46.5]];
        let (ctx, _) = make_ctx(&["A", "C"], &[1, 1], &coords);
        let obs = obs_table(&coords);
        // An ellipse centered on the first site in normalized units.
        let center = ctx.data.y[0].clone();
        let set = ContourSet {
            per_draw: vec![],
            mean: vec![(
                0,
                Ellipse {
                    center: (center[0], center[1]),
                    semi_major: 0.0,
                    semi_minor: 0.0,
                    angle: 0.0,
                },
            )],
        };
        let kml = kml_contours(&set, &ctx.data, &obs, &[]);
        assert!(
            kml.contains("40.250000000,45.750000000"),
            "denormalized centre matches the raw site"
        );
    }

    #[test]
    fn newick_roundtrip_topology() {
        let hap = hap_data(&["AA", "CA", "CC", "GA"], &[2, 1, 1, 1]);
        let net = build_network(&hap, 0, 100).unwrap();
        for root in 0..net.n_nodes() {
            let tree = TreeState {
                deleted: vec![],
                root,
            };
            let (text, warning) = write_newick(&net, &tree);
            assert!(warning.is_none());
            let parsed = parse_newick(&text).unwrap();
            assert_eq!(parsed.canonical(), canonical_topology(&net, &tree));
        }
    }

    #[test]
    fn newick_flags_unobserved_degree2_root() {
        let hap = hap_data(&["AA", "CC"], &[1, 1]);
        let net = build_network(&hap, 0, 100).unwrap();
        // Break the square into a path and root at a middle intermediate.
        let deleted = net.default_tree_vector();
        let intermediate = (0..net.n_nodes())
            .find(|&v| {
                !net.nodes[v].is_observed()
                    && net.tree_degree(&deleted, v) == 2
            })
            .unwrap();
        let tree = TreeState {
            deleted,
            root: intermediate,
        };
        let (text, warning) = write_newick(&net, &tree);
        assert!(warning.is_some());
        let parsed = parse_newick(&text).unwrap();
        assert_eq!(parsed.canonical(), canonical_topology(&net, &tree));
    }

    #[test]
    fn newick_labels_internal_observed_nodes() {
        let hap = hap_data(&["AA", "CA", "CC"], &[1, 1, 1]);
        let net = build_network(&hap, 0, 100).unwrap();
        let tree = TreeState {
            deleted: vec![],
            root: 1,
        };
        let (text, _) = write_newick(&net, &tree);
        // Root is the middle haplotype: it is internal and labeled.
        assert!(text.contains("H2"), "{text}");
        assert!(text.ends_with(";"));
        let parsed = parse_newick(&text).unwrap();
        assert_eq!(parsed.canonical(), canonical_topology(&net, &tree));
    }

    #[test]
    fn svg_contains_expected_elements() {
        let (ctx, _) = make_ctx(&["A", "C"], &[1, 1], &spread_coords(2));
        let obs = obs_table(&spread_coords(2));
        let svg = svg_contours(&sample_contours(), &ctx.data, &obs, &[0]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("circle"));
        assert!(svg.contains("path"));
        assert!(svg.contains(r#"r="8""#), "top location enlarged");
    }
}
