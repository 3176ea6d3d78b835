//! Bodies of the fuzz targets. Each accepts arbitrary bytes, must not panic
//! on malformed input, and checks a round trip when parsing succeeds.

use spikeslab_ep::io::{self, FitReport};

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

pub fn read_table(data: &[u8]) {
    let Ok(table) = io::read_table(data) else { return };
    assert_eq!(table.values.ncols(), table.names.len());
    let mut out = Vec::new();
    io::write_table(&mut out, &table.names, &table.values).unwrap();
    let back = io::read_table(out.as_slice()).unwrap();
    assert_eq!(back.names, table.names);
    assert_eq!(back.values.shape(), table.values.shape());
    assert!(back.values.iter().zip(table.values.iter()).all(|(a, b)| same(*a, *b)));
}

pub fn read_grouping(data: &[u8]) {
    let features: Vec<String> = ["x1", "x2", "x3", "x4"].map(String::from).to_vec();
    let Ok((grouping, names)) = io::read_grouping(data, &features) else { return };
    assert_eq!(grouping.n_features(), features.len());
    assert_eq!(grouping.n_groups(), names.len());
    assert!(grouping.members().iter().all(|m| !m.is_empty()));
}

pub fn read_edges(data: &[u8]) {
    let Ok(edges) = io::read_edges(data) else { return };
    assert!(edges.iter().all(|&(a, b)| a < b));
    let mut out = Vec::new();
    io::write_edges(&mut out, &edges).unwrap();
    assert_eq!(io::read_edges(out.as_slice()).unwrap(), edges);
}

pub fn read_ranking(data: &[u8]) {
    let Ok(edges) = io::read_ranking(data) else { return };
    assert!(edges.iter().all(|e| e.a < e.b && !e.score.is_nan()));
    let mut out = Vec::new();
    io::write_ranking(&mut out, &edges).unwrap();
    assert_eq!(io::read_ranking(out.as_slice()).unwrap().len(), edges.len());
}

pub fn read_nodes(data: &[u8]) {
    let Ok(nodes) = io::read_nodes(data) else { return };
    nodes.validate().unwrap();
    let mut out = Vec::new();
    io::write_nodes(&mut out, &nodes).unwrap();
    assert_eq!(io::read_nodes(out.as_slice()).unwrap(), nodes);
}

pub fn read_truth(data: &[u8]) {
    let _ = io::read_truth(data);
}

pub fn fit_report(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = FitReport::from_json(text) else { return };
    let again = FitReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(again.feature_names, report.feature_names);
    assert_eq!(again.feature_groups, report.feature_groups);
}

pub const TARGETS: [(&str, fn(&[u8])); 7] = [
    ("read_table", read_table),
    ("read_grouping", read_grouping),
    ("read_edges", read_edges),
    ("read_ranking", read_ranking),
    ("read_nodes", read_nodes),
    ("read_truth", read_truth),
    ("fit_report", fit_report),
];
