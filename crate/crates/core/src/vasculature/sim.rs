//! Microbubble seeding and transport along the flow field.

use super::{poiseuille_velocity, FlowField, Vec3, VascularGraph};
use crate::rng::{seeded, sub_seed, Rng};
use crate::Result;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use std::collections::BTreeMap;

/// A tracked bubble. The radial offset is stored as a fraction of the local
/// vessel radius, fixed for the bubble's lifetime, so it stays strictly
/// inside the lumen across every node transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Microbubble {
    pub edge: usize,
    /// Arc-length position from the upstream node, micrometers.
    pub s_um: f64,
    /// Radial offset divided by the local radius, in [0, 1).
    pub rho_frac: f64,
    /// Angular position around the vessel axis, radians.
    pub phi: f64,
    /// Identity for ground-truth tracks; respawns get a fresh one.
    pub track: u64,
}

impl Microbubble {
    pub fn rho_um(&self, graph: &VascularGraph) -> f64 {
        self.rho_frac * graph.edges[self.edge].radius_um
    }
}

/// Positions of one bubble over the frames it was alive, micrometers.
///
/// Consecutive samples are one frame apart and within v_max * dt of each
/// other, plus a cross-section allowance of the two lumen radii for frames
/// that straddle a node (the radial offset re-expresses in the next edge's
/// frame there). Respawned bubbles never continue a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track: u64,
    pub samples: Vec<(u32, Vec3)>,
}

/// Expected count is density times the bounding-box volume (Poisson draw).
/// Edges are picked proportionally to length, the cross-section is covered
/// uniformly via rho = R*sqrt(u).
pub fn seed_microbubbles(
    graph: &VascularGraph,
    density_per_mm3: f64,
    rng: &mut Rng,
    next_track: &mut u64,
) -> Vec<Microbubble> {
    let mean = density_per_mm3 * graph.bounds.volume_mm3();
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    (0..count).map(|_| spawn_one(graph, rng, next_track)).collect()
}

fn spawn_one(graph: &VascularGraph, rng: &mut Rng, next_track: &mut u64) -> Microbubble {
    let lengths: Vec<f64> = (0..graph.edges.len()).map(|e| graph.edge_length(e)).collect();
    let total: f64 = lengths.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut edge = graph.edges.len() - 1;
    for (i, &len) in lengths.iter().enumerate() {
        if pick < len {
            edge = i;
            break;
        }
        pick -= len;
    }
    let s_um = rng.random::<f64>() * lengths[edge];
    // sqrt maps the uniform draw to uniform area coverage of the disk; the
    // tiny shrink keeps the wall (rho = R) unreachable.
    let rho_frac = rng.random::<f64>().sqrt().min(1.0 - 1e-12);
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let track = *next_track;
    *next_track += 1;
    Microbubble { edge, s_um, rho_frac, phi, track }
}

/// 3D position of a bubble: centerline point plus the radial offset in the
/// edge's cross-sectional frame.
pub fn mb_position(graph: &VascularGraph, flow: &FlowField, mb: &Microbubble) -> Vec3 {
    let up = graph.nodes[flow.upstream(graph, mb.edge)];
    let down = graph.nodes[flow.downstream(graph, mb.edge)];
    let len = (down - up).norm();
    let axis = (down - up) * (1.0 / len);
    let center = up + axis * mb.s_um.clamp(0.0, len);
    let (u, v) = cross_section_basis(axis);
    let rho = mb.rho_um(graph);
    center + u * (rho * mb.phi.cos()) + v * (rho * mb.phi.sin())
}

/// Deterministic orthonormal pair perpendicular to `axis`.
fn cross_section_basis(axis: Vec3) -> (Vec3, Vec3) {
    let pick = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
        Vec3::new(1.0, 0.0, 0.0)
    } else if axis.y.abs() <= axis.z.abs() {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    let u = axis.cross(pick).normalized();
    let v = axis.cross(u);
    (u, v)
}

/// Advance every bubble by one frame period. Node transitions conserve the
/// residual arc length; the outgoing edge is drawn with probability
/// proportional to R^4 (volumetric flow share). Bubbles reaching a dead end
/// respawn under the seeding rule with a new track id, which keeps the count
/// constant.
pub fn step_microbubbles(
    graph: &VascularGraph,
    flow: &FlowField,
    mbs: &mut [Microbubble],
    dt_s: f64,
    rng: &mut Rng,
    next_track: &mut u64,
) -> Result<()> {
    assert!(dt_s > 0.0);
    for mb in mbs.iter_mut() {
        let r = graph.edges[mb.edge].radius_um;
        let v_mm_s = poiseuille_velocity(mb.rho_um(graph), r, flow.v_mean_mm_s[mb.edge])?;
        let mut advance_um = v_mm_s * 1e3 * dt_s;
        let mut hops = 0;
        loop {
            let len = graph.edge_length(mb.edge);
            if mb.s_um + advance_um <= len {
                mb.s_um += advance_um;
                break;
            }
            advance_um -= len - mb.s_um;
            let node = flow.downstream(graph, mb.edge);
            let out = flow.outgoing(node);
            hops += 1;
            if out.is_empty() || hops > 64 {
                *mb = spawn_one(graph, rng, next_track);
                break;
            }
            mb.edge = pick_by_flow_share(graph, out, rng);
            mb.s_um = 0.0;
        }
    }
    Ok(())
}

fn pick_by_flow_share(graph: &VascularGraph, out: &[usize], rng: &mut Rng) -> usize {
    let weights: Vec<f64> = out.iter().map(|&e| graph.edges[e].radius_um.powi(4)).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if pick < w {
            return out[i];
        }
        pick -= w;
    }
    out[out.len() - 1]
}

/// Seed at the given density and record every bubble position over
/// `n_frames` frames (frame 0 is the freshly seeded state). One trajectory
/// per track id, ordered by id.
pub fn simulate_block(
    graph: &VascularGraph,
    flow: &FlowField,
    density_per_mm3: f64,
    n_frames: u32,
    dt_s: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = seeded(sub_seed(seed, 0x6d62_7369_6d)); // "mbsim"
    let mut next_track = 0u64;
    let mut mbs = seed_microbubbles(graph, density_per_mm3, &mut rng, &mut next_track);
    let mut tracks: BTreeMap<u64, Trajectory> = BTreeMap::new();
    for frame in 0..n_frames {
        for mb in &mbs {
            tracks
                .entry(mb.track)
                .or_insert_with(|| Trajectory { track: mb.track, samples: Vec::new() })
                .samples
                .push((frame, mb_position(graph, flow, mb)));
        }
        if frame + 1 < n_frames {
            step_microbubbles(graph, flow, &mut mbs, dt_s, &mut rng, &mut next_track)?;
        }
    }
    Ok(tracks.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vasculature::{generate_synthetic_graph, Aabb, Edge, GraphConfig};

    fn line_graph() -> (VascularGraph, FlowField) {
        // Single 1000 um edge along +x inside a 1 mm^3 box.
        let graph = VascularGraph {
            nodes: vec![Vec3::new(0.0, 500.0, 500.0), Vec3::new(1000.0, 500.0, 500.0)],
            edges: vec![Edge { a: 0, b: 1, radius_um: 10.0 }],
            bounds: Aabb { min: Vec3::ZERO, max: Vec3::new(1000.0, 1000.0, 1000.0) },
        };
        let flow = FlowField::new(&graph);
        (graph, flow)
    }

    #[test]
    fn zero_density_seeds_nothing() {
        let (graph, _) = line_graph();
        let mut rng = seeded(1);
        let mut next = 0;
        assert!(seed_microbubbles(&graph, 0.0, &mut rng, &mut next).is_empty());
    }

    #[test]
    fn seeded_bubbles_sit_inside_the_lumen() {
        let g = generate_synthetic_graph(&GraphConfig { target_edges: 60, seed: 2, ..Default::default() })
            .unwrap();
        let mut rng = seeded(3);
        let mut next = 0;
        let mbs = seed_microbubbles(&g, 50.0, &mut rng, &mut next);
        assert!(!mbs.is_empty());
        for mb in &mbs {
            let r = g.edges[mb.edge].radius_um;
            assert!(mb.rho_um(&g) < r);
            assert!(mb.s_um >= 0.0 && mb.s_um <= g.edge_length(mb.edge));
        }
    }

    /// Count averaged over many independent seedings matches the requested
    /// density (1 mm^3 box, so density == expected count).
    #[test]
    fn mean_count_matches_density() {
        let (graph, _) = line_graph();
        let mut total = 0usize;
        let n = 10_000;
        for s in 0..n {
            let mut rng = seeded(s);
            let mut next = 0;
            total += seed_microbubbles(&graph, 5.0, &mut rng, &mut next).len();
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean count {mean}");
    }

    #[test]
    fn centerline_step_kinematics() {
        let (graph, flow) = line_graph();
        // Override flow speed to exactly 1 mm/s for the oracle.
        let mut flow = flow;
        flow.v_mean_mm_s[0] = 1.0;
        let mut mbs = vec![Microbubble { edge: 0, s_um: 100.0, rho_frac: 0.0, phi: 0.0, track: 0 }];
        let before = mb_position(&graph, &flow, &mbs[0]);
        let mut rng = seeded(0);
        let mut next = 1;
        step_microbubbles(&graph, &flow, &mut mbs, 1e-3, &mut rng, &mut next).unwrap();
        let after = mb_position(&graph, &flow, &mbs[0]);
        assert!(((after - before).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wall_bubble_barely_moves() {
        let (graph, mut flow) = line_graph();
        flow.v_mean_mm_s[0] = 5.4;
        let mut mbs =
            vec![Microbubble { edge: 0, s_um: 100.0, rho_frac: 1.0 - 1e-9, phi: 0.3, track: 0 }];
        let before = mb_position(&graph, &flow, &mbs[0]);
        let mut rng = seeded(0);
        let mut next = 1;
        step_microbubbles(&graph, &flow, &mut mbs, 1e-3, &mut rng, &mut next).unwrap();
        let after = mb_position(&graph, &flow, &mbs[0]);
        assert!((after - before).norm() < 1e-6);
    }

    #[test]
    fn degree_two_node_conserves_residual_arc() {
        // Two collinear 500 um edges; bubble crosses the middle node.
        let graph = VascularGraph {
            nodes: vec![
                Vec3::new(0.0, 500.0, 500.0),
                Vec3::new(500.0, 500.0, 500.0),
                Vec3::new(1000.0, 500.0, 500.0),
            ],
            edges: vec![
                Edge { a: 0, b: 1, radius_um: 10.0 },
                Edge { a: 1, b: 2, radius_um: 10.0 },
            ],
            bounds: Aabb { min: Vec3::ZERO, max: Vec3::new(1000.0, 1000.0, 1000.0) },
        };
        let mut flow = FlowField::new(&graph);
        flow.v_mean_mm_s = vec![1.0, 1.0];
        let mut mbs = vec![Microbubble { edge: 0, s_um: 499.6, rho_frac: 0.0, phi: 0.0, track: 0 }];
        let mut rng = seeded(0);
        let mut next = 1;
        step_microbubbles(&graph, &flow, &mut mbs, 1e-3, &mut rng, &mut next).unwrap();
        assert_eq!(mbs[0].edge, 1);
        assert!((mbs[0].s_um - 0.6).abs() < 1e-9);
        assert_eq!(mbs[0].track, 0);
    }

    #[test]
    fn dead_end_respawns_with_new_track() {
        let (graph, mut flow) = line_graph();
        flow.v_mean_mm_s[0] = 1.0;
        let mut mbs = vec![Microbubble { edge: 0, s_um: 999.9, rho_frac: 0.0, phi: 0.0, track: 0 }];
        let mut rng = seeded(9);
        let mut next = 1;
        step_microbubbles(&graph, &flow, &mut mbs, 1e-3, &mut rng, &mut next).unwrap();
        assert_eq!(mbs.len(), 1);
        assert_eq!(mbs[0].track, 1);
        assert!(mbs[0].s_um <= graph.edge_length(0));
    }

    #[test]
    fn population_is_stationary_over_a_block() {
        let g = generate_synthetic_graph(&GraphConfig { target_edges: 60, seed: 4, ..Default::default() })
            .unwrap();
        let flow = FlowField::new(&g);
        let mut rng = seeded(5);
        let mut next = 0;
        let mut mbs = seed_microbubbles(&g, 20.0, &mut rng, &mut next);
        let n0 = mbs.len();
        for _ in 0..512 {
            step_microbubbles(&g, &flow, &mut mbs, 1e-3, &mut rng, &mut next).unwrap();
            assert_eq!(mbs.len(), n0);
        }
    }

    #[test]
    fn simulated_blocks_are_reproducible_and_speed_bounded() {
        let g = generate_synthetic_graph(&GraphConfig { target_edges: 60, seed: 6, ..Default::default() })
            .unwrap();
        let flow = FlowField::new(&g);
        let a = simulate_block(&g, &flow, 10.0, 64, 1e-3, 42).unwrap();
        let b = simulate_block(&g, &flow, 10.0, 64, 1e-3, 42).unwrap();
        assert_eq!(a, b);
        let v_max_mm_s = flow.v_mean_mm_s.iter().cloned().fold(0.0, f64::max);
        let r_max = g.edges.iter().map(|e| e.radius_um).fold(0.0, f64::max);
        // Lumen-frame change at node crossings adds up to two radii.
        let bound_um = v_max_mm_s * 1e3 * 1e-3 + 2.0 * r_max + 1e-9;
        for t in &a {
            for w in t.samples.windows(2) {
                let ((fa, pa), (fb, pb)) = (w[0], w[1]);
                assert_eq!(fb, fa + 1);
                assert!((pb - pa).norm() <= bound_um);
            }
        }
    }
}
