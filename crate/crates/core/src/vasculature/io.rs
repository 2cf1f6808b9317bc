//! Plain-text graph files.
//!
//! ```text
//! ulmgraph v1
//! bounds <x0> <y0> <z0> <x1> <y1> <z1>
//! nodes <N>
//! <id> <x> <y> <z>
//! edges <M>
//! <a> <b> <radius_um>
//! ```
//!
//! Coordinates are micrometers. Floats print in shortest-roundtrip form, so
//! write/read is lossless.

use super::{Aabb, Edge, Vec3, VascularGraph};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_graph(path: &Path, graph: &VascularGraph) -> Result<()> {
    let mut out = String::new();
    out.push_str("ulmgraph v1\n");
    let (lo, hi) = (graph.bounds.min, graph.bounds.max);
    writeln!(out, "bounds {} {} {} {} {} {}", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z).unwrap();
    writeln!(out, "nodes {}", graph.nodes.len()).unwrap();
    for (i, p) in graph.nodes.iter().enumerate() {
        writeln!(out, "{i} {} {} {}", p.x, p.y, p.z).unwrap();
    }
    writeln!(out, "edges {}", graph.edges.len()).unwrap();
    for e in &graph.edges {
        writeln!(out, "{} {} {}", e.a, e.b, e.radius_um).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_graph(path: &Path) -> Result<VascularGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::format(path, reason);
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| Error::format(path, format!("missing {what}")))
    };

    let (_, header) = next("header")?;
    if header.trim() != "ulmgraph v1" {
        return Err(fail("header is not `ulmgraph v1`"));
    }

    let (ln, bounds_line) = next("bounds line")?;
    let nums = parse_fields::<f64>(bounds_line.strip_prefix("bounds").ok_or_else(|| {
        Error::format(path, format!("line {ln}: expected `bounds`"))
    })?)?;
    if nums.len() != 6 {
        return Err(fail("bounds needs six values"));
    }
    let bounds = Aabb {
        min: Vec3::new(nums[0], nums[1], nums[2]),
        max: Vec3::new(nums[3], nums[4], nums[5]),
    };

    let (_, count_line) = next("nodes count")?;
    let n_nodes: usize = parse_count(count_line, "nodes").map_err(|r| Error::format(path, r))?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = next("node row")?;
        let f = parse_fields::<f64>(line)?;
        if f.len() != 4 || f[0] as usize != nodes.len() {
            return Err(Error::format(path, format!("line {ln}: bad node row")));
        }
        nodes.push(Vec3::new(f[1], f[2], f[3]));
    }

    let (_, count_line) = next("edges count")?;
    let n_edges: usize = parse_count(count_line, "edges").map_err(|r| Error::format(path, r))?;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (ln, line) = next("edge row")?;
        let f = parse_fields::<f64>(line)?;
        if f.len() != 3 {
            return Err(Error::format(path, format!("line {ln}: bad edge row")));
        }
        edges.push(Edge { a: f[0] as usize, b: f[1] as usize, radius_um: f[2] });
    }

    let graph = VascularGraph { nodes, edges, bounds };
    graph.validate()?;
    Ok(graph)
}

fn parse_count(line: &str, key: &str) -> std::result::Result<usize, String> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| format!("expected `{key} <count>`, got `{line}`"))?;
    rest.trim().parse().map_err(|_| format!("bad {key} count `{}`", rest.trim()))
}

fn parse_fields<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::InvalidArgument(format!("bad numeric field `{tok}`")))
        })
        .collect()
}
