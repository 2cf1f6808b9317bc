//! Laminar flow assignment: centerline speed from vessel radius, parabolic
//! profile across the lumen.

use super::VascularGraph;
use crate::{Error, Result};

/// Radius endpoints (micrometers) of the velocity calibration.
pub const CALIB_RADIUS_UM: (f64, f64) = (1.0, 28.6);
/// Centerline speeds (mm/s) at the calibration radii.
pub const CALIB_VELOCITY_MM_S: (f64, f64) = (0.0093, 5.4);

/// Centerline speed in mm/s for a vessel of radius `r_um` micrometers.
///
/// Power law a * R^b through both calibration endpoints; a equals the speed
/// at R = 1 um, b solves the remaining endpoint.
pub fn mean_velocity(r_um: f64) -> f64 {
    debug_assert!(r_um > 0.0);
    let a = CALIB_VELOCITY_MM_S.0;
    let b = (CALIB_VELOCITY_MM_S.1 / CALIB_VELOCITY_MM_S.0).ln() / CALIB_RADIUS_UM.1.ln();
    a * r_um.powf(b)
}

/// Parabolic profile: speed at radial offset `rho_um` inside a vessel of
/// radius `r_um` whose centerline moves at `v_mean` mm/s. Errors when the
/// offset reaches the wall; callers must not clamp around that.
pub fn poiseuille_velocity(rho_um: f64, r_um: f64, v_mean: f64) -> Result<f64> {
    if !(rho_um >= 0.0 && rho_um < r_um) {
        return Err(Error::InvalidArgument(format!(
            "radial offset {rho_um} outside [0, {r_um})"
        )));
    }
    Ok(v_mean * (1.0 - (rho_um * rho_um) / (r_um * r_um)))
}

/// Per-edge flow: centerline speed, signed direction along the stored edge
/// orientation, and the outgoing-edge index used at node transitions.
#[derive(Debug, Clone)]
pub struct FlowField {
    /// Centerline speed per edge, mm/s. Radii are clamped into the
    /// calibration interval first so dilated vessels keep physical speeds.
    pub v_mean_mm_s: Vec<f64>,
    /// +1 means flow runs a -> b, -1 the reverse.
    pub direction: Vec<i8>,
    /// Edges leaving each node (their upstream node is this node).
    outgoing: Vec<Vec<usize>>,
}

impl FlowField {
    pub fn new(graph: &VascularGraph) -> FlowField {
        let direction = vec![1i8; graph.edges.len()];
        let v_mean_mm_s = graph
            .edges
            .iter()
            .map(|e| mean_velocity(e.radius_um.clamp(CALIB_RADIUS_UM.0, CALIB_RADIUS_UM.1)))
            .collect();
        let mut outgoing = vec![Vec::new(); graph.nodes.len()];
        for (i, e) in graph.edges.iter().enumerate() {
            let up = if direction[i] > 0 { e.a } else { e.b };
            outgoing[up].push(i);
        }
        FlowField { v_mean_mm_s, direction, outgoing }
    }

    pub fn upstream(&self, graph: &VascularGraph, e: usize) -> usize {
        if self.direction[e] > 0 {
            graph.edges[e].a
        } else {
            graph.edges[e].b
        }
    }

    pub fn downstream(&self, graph: &VascularGraph, e: usize) -> usize {
        if self.direction[e] > 0 {
            graph.edges[e].b
        } else {
            graph.edges[e].a
        }
    }

    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }
}
