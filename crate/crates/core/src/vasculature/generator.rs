//! Seeded growth of a branching vessel network.
//!
//! Depth-first tip extension with gentle taper, Murray-split bifurcations
//! (child radii cubed sum to the parent radius cubed), occasional loop
//! closures, and re-sprouting from the existing tree when all tips die.
//! Everything is driven by one counter-based RNG stream, so a seed fixes the
//! graph bit for bit.

use super::{Aabb, Edge, Vec3, VascularGraph};
use crate::rng::{seeded, sub_seed};
use crate::{Error, Result};
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// Box extents in micrometers, before dilation.
    pub volume_um: [f64; 3],
    /// Exact number of vessel segments to produce.
    pub target_edges: usize,
    /// Allowed segment radii in micrometers, before dilation.
    pub radius_range_um: (f64, f64),
    /// Radii drawn for tree roots and re-sprouts (log-uniform).
    pub root_radius_um: (f64, f64),
    /// Probability that a tip extension bifurcates.
    pub branch_probability: f64,
    /// Probability that a tip closes a loop onto a nearby existing node.
    pub loop_probability: f64,
    /// Coordinate and radius scale applied after growth.
    pub dilation: f64,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            volume_um: [1000.0, 1000.0, 1000.0],
            target_edges: 120,
            radius_range_um: (1.0, 28.6),
            root_radius_um: (10.0, 28.6),
            branch_probability: 0.35,
            loop_probability: 0.04,
            dilation: 1.0,
            seed: 0,
        }
    }
}

struct Tip {
    node: usize,
    dir: Vec3,
    radius: f64,
}

pub fn generate_synthetic_graph(config: &GraphConfig) -> Result<VascularGraph> {
    let vol = config.volume_um;
    if vol.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("volume extents must be positive".into()));
    }
    if config.target_edges == 0 {
        return Err(Error::InvalidArgument("target edge count must be at least 1".into()));
    }
    let (r_min, r_max) = config.radius_range_um;
    if !(r_min > 0.0 && r_min < r_max) {
        return Err(Error::InvalidArgument("radius range must satisfy 0 < min < max".into()));
    }

    let bounds = Aabb {
        min: Vec3::ZERO,
        max: Vec3::new(vol[0], vol[1], vol[2]),
    };
    let min_extent = vol[0].min(vol[1]).min(vol[2]);
    let mut rng = seeded(sub_seed(config.seed, 0x6772_6170_68)); // "graph"

    let mut nodes: Vec<Vec3> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut tips: Vec<Tip> = Vec::new();

    // First root anchors the single connected component; later growth only
    // ever sprouts from existing nodes.
    let root_pos = sample_interior(&bounds, &mut rng);
    nodes.push(root_pos);
    tips.push(Tip {
        node: 0,
        dir: random_unit(&mut rng),
        radius: log_uniform(config.root_radius_um, &mut rng).clamp(r_min, r_max),
    });

    let max_steps = 500 + 400 * config.target_edges;
    let mut steps = 0usize;

    while edges.len() < config.target_edges {
        steps += 1;
        if steps > max_steps {
            return Err(Error::GraphTargetUnreachable {
                achieved: edges.len(),
                target: config.target_edges,
            });
        }

        let Some(tip) = tips.pop() else {
            // Tree died out; sprout a fresh branch from an existing node.
            let node = rng.random_range(0..nodes.len());
            tips.push(Tip {
                node,
                dir: random_unit(&mut rng),
                radius: log_uniform(config.root_radius_um, &mut rng).clamp(r_min, r_max),
            });
            continue;
        };

        if tip.radius < r_min {
            continue; // capillary end, branch terminates
        }

        // Loop closure: connect to a nearby foreign node and stop this tip.
        let step_len = step_length(tip.radius, min_extent, &mut rng);
        if rng.random::<f64>() < config.loop_probability {
            if let Some(other) = nearby_node(&nodes, tip.node, nodes[tip.node], 2.5 * step_len) {
                if !duplicate_edge(&edges, tip.node, other) {
                    edges.push(Edge { a: tip.node, b: other, radius_um: tip.radius });
                    continue;
                }
            }
        }

        // Extend the tip by one segment, reflecting off the box walls once.
        let mut dir = perturb(tip.dir, 0.30, &mut rng);
        let mut next = nodes[tip.node] + dir * step_len;
        if !bounds.contains(next) {
            dir = reflect_into(dir, next, &bounds);
            next = nodes[tip.node] + dir * step_len;
        }
        if !bounds.contains(next) {
            continue; // cornered, terminate branch
        }

        let new_node = nodes.len();
        nodes.push(next);
        edges.push(Edge { a: tip.node, b: new_node, radius_um: tip.radius });

        if rng.random::<f64>() < config.branch_probability {
            // Murray split: u^(1/3) and (1-u)^(1/3) shares of the radius,
            // daughters fanned to either side of the parent direction.
            let u: f64 = rng.random_range(0.25..0.75);
            let axis = orthogonal_unit(dir, &mut rng);
            let angle = rng.random_range(0.35..0.90);
            let r1 = tip.radius * u.powf(1.0 / 3.0);
            let r2 = tip.radius * (1.0 - u).powf(1.0 / 3.0);
            for (r, sign) in [(r1, 1.0), (r2, -1.0)] {
                if r >= r_min {
                    tips.push(Tip {
                        node: new_node,
                        dir: rotate(dir, axis, sign * angle),
                        radius: r.min(r_max),
                    });
                }
            }
        } else {
            let taper = rng.random_range(0.93..1.0);
            tips.push(Tip { node: new_node, dir, radius: (tip.radius * taper).min(r_max) });
        }
    }

    let graph = VascularGraph { nodes, edges, bounds };
    graph.validate()?;
    if config.dilation != 1.0 {
        Ok(graph.dilate(config.dilation))
    } else {
        Ok(graph)
    }
}

fn sample_interior(bounds: &Aabb, rng: &mut crate::rng::Rng) -> Vec3 {
    let e = bounds.extent();
    // Inner 60% of the box, so roots have room to grow in any direction.
    Vec3::new(
        bounds.min.x + e.x * rng.random_range(0.2..0.8),
        bounds.min.y + e.y * rng.random_range(0.2..0.8),
        bounds.min.z + e.z * rng.random_range(0.2..0.8),
    )
}

fn random_unit(rng: &mut crate::rng::Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn log_uniform(range: (f64, f64), rng: &mut crate::rng::Rng) -> f64 {
    let (lo, hi) = range;
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn step_length(radius: f64, min_extent: f64, rng: &mut crate::rng::Rng) -> f64 {
    let base = (4.0 * radius).clamp(12.0, 0.18 * min_extent);
    base * rng.random_range(0.75..1.25)
}

fn perturb(dir: Vec3, sigma: f64, rng: &mut crate::rng::Rng) -> Vec3 {
    let axis = orthogonal_unit(dir, rng);
    let angle = rng.random_range(0.0..sigma * std::f64::consts::PI);
    rotate(dir, axis, angle)
}

fn orthogonal_unit(dir: Vec3, rng: &mut crate::rng::Rng) -> Vec3 {
    loop {
        let v = random_unit(rng);
        let ortho = v - dir * v.dot(dir);
        let n = ortho.norm();
        if n > 1e-3 {
            return ortho * (1.0 / n);
        }
    }
}

/// Rodrigues rotation of `v` around unit `axis` by `angle` radians.
fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Flip the direction components whose axis the overshooting endpoint left.
fn reflect_into(dir: Vec3, overshoot: Vec3, bounds: &Aabb) -> Vec3 {
    let mut d = dir;
    if overshoot.x < bounds.min.x || overshoot.x > bounds.max.x {
        d.x = -d.x;
    }
    if overshoot.y < bounds.min.y || overshoot.y > bounds.max.y {
        d.y = -d.y;
    }
    if overshoot.z < bounds.min.z || overshoot.z > bounds.max.z {
        d.z = -d.z;
    }
    d
}

fn nearby_node(nodes: &[Vec3], except: usize, from: Vec3, max_dist: f64) -> Option<usize> {
    nodes
        .iter()
        .enumerate()
        .filter(|&(i, p)| {
            let d = (*p - from).norm();
            i != except && d > 1.0 && d <= max_dist
        })
        .min_by(|a, b| {
            let da = (*a.1 - from).norm();
            let db = (*b.1 - from).norm();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
}

fn duplicate_edge(edges: &[Edge], a: usize, b: usize) -> bool {
    edges.iter().any(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_1mm(target: usize, seed: u64) -> GraphConfig {
        GraphConfig { target_edges: target, seed, ..GraphConfig::default() }
    }

    #[test]
    fn produces_requested_edge_count_with_valid_radii() {
        let g = generate_synthetic_graph(&config_1mm(50, 7)).unwrap();
        assert_eq!(g.edges.len(), 50);
        for e in &g.edges {
            assert!(e.radius_um >= 1.0 && e.radius_um <= 28.6);
        }
        g.validate().unwrap();
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_synthetic_graph(&config_1mm(80, 3)).unwrap();
        let b = generate_synthetic_graph(&config_1mm(80, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_graph(&config_1mm(80, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nodes_stay_inside_bounds_and_lengths_positive() {
        let g = generate_synthetic_graph(&config_1mm(150, 11)).unwrap();
        for &p in &g.nodes {
            assert!(g.bounds.contains(p));
        }
        for e in 0..g.edges.len() {
            assert!(g.edge_length(e) > 0.0);
        }
    }

    #[test]
    fn dilation_scales_radii_and_bounds() {
        let mut cfg = config_1mm(60, 5);
        cfg.dilation = 2.0;
        let g = generate_synthetic_graph(&cfg).unwrap();
        let base = generate_synthetic_graph(&config_1mm(60, 5)).unwrap();
        let max_r = |g: &VascularGraph| {
            g.edges.iter().map(|e| e.radius_um).fold(0.0f64, f64::max)
        };
        assert_eq!(max_r(&g), 2.0 * max_r(&base));
        assert_eq!(g.bounds.max.x, 2.0 * base.bounds.max.x);
        assert_eq!(g.bounds.volume_mm3(), 8.0 * base.bounds.volume_mm3());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = config_1mm(10, 0);
        cfg.volume_um = [0.0, 100.0, 100.0];
        assert!(generate_synthetic_graph(&cfg).is_err());
        let mut cfg = config_1mm(0, 0);
        cfg.target_edges = 0;
        assert!(generate_synthetic_graph(&cfg).is_err());
    }
}
