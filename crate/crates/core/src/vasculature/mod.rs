//! Synthetic microvascular bed: branching graph growth, Poiseuille flow,
//! microbubble transport, and ground-truth track rasterization.

mod flow;
mod generator;
mod io;
mod raster;
mod sim;

pub use flow::{mean_velocity, poiseuille_velocity, FlowField, CALIB_RADIUS_UM, CALIB_VELOCITY_MM_S};
pub use generator::{generate_synthetic_graph, GraphConfig};
pub use io::{read_graph, write_graph};
pub use raster::{rasterize_tracks, BlockGeometry, TrackMask};
pub use sim::{mb_position, seed_microbubbles, simulate_block, step_microbubbles, Microbubble, Trajectory};

use crate::{Error, Result};

/// Position in micrometers. z is depth (away from the probe), x lateral, y elevation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self * (1.0 / n)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Axis-aligned box in micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume_mm3(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z * 1e-9
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Straight vessel segment between two nodes. Flow runs a -> b unless the
/// owning [`FlowField`] flips it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub radius_um: f64,
}

/// Single-connected vessel network. Immutable once built; shared freely
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VascularGraph {
    pub nodes: Vec<Vec3>,
    pub edges: Vec<Edge>,
    pub bounds: Aabb,
}

impl VascularGraph {
    pub fn edge_length(&self, e: usize) -> f64 {
        let ed = &self.edges[e];
        (self.nodes[ed.b] - self.nodes[ed.a]).norm()
    }

    pub fn total_length_um(&self) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_length(e)).sum()
    }

    /// Scale every coordinate and radius by `factor` (bounds included).
    pub fn dilate(&self, factor: f64) -> VascularGraph {
        VascularGraph {
            nodes: self.nodes.iter().map(|&p| p * factor).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge { radius_um: e.radius_um * factor, ..*e })
                .collect(),
            bounds: Aabb { min: self.bounds.min * factor, max: self.bounds.max * factor },
        }
    }

    /// Structural invariants: valid node refs, positive edge lengths, one
    /// connected component.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.edges.is_empty() {
            return Err(Error::InvalidArgument("graph has no nodes or no edges".into()));
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.a >= self.nodes.len() || e.b >= self.nodes.len() {
                return Err(Error::InvalidArgument(format!(
                    "edge {i} references node out of range"
                )));
            }
            if self.edge_length(i) <= 0.0 {
                return Err(Error::InvalidArgument(format!("edge {i} has zero length")));
            }
            if !(e.radius_um > 0.0) {
                return Err(Error::InvalidArgument(format!("edge {i} has nonpositive radius")));
            }
        }
        if self.component_count() != 1 {
            return Err(Error::InvalidArgument("graph is not single-connected".into()));
        }
        Ok(())
    }

    fn component_count(&self) -> usize {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }
}
