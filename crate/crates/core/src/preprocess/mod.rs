//! From beamformed cine-loops to training pairs: clutter filtering,
//! correlation with the system impulse response, block assembly, and the
//! on-disk dataset container.

mod block;
mod correlation;
mod dataset;
mod generate;
mod svd;

pub use block::assemble_block;
pub use correlation::correlation_map;
pub use dataset::{
    read_manifest, read_record, write_manifest, write_record, Split, MANIFEST_NAME,
};
pub use generate::{assign_splits, generate_dataset, DatasetConfig, SplitMode};
pub use svd::{casorati_singular_values, svd_clutter_filter};

use crate::vasculature::{BlockGeometry, TrackMask};
use crate::{Error, Result};
use num_complex::Complex32;

/// Normalized correlation cine-loop, t-major (t, z, x), 32-bit complex.
/// Every voxel magnitude is bounded by 1 up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationBlock {
    pub n_t: usize,
    /// Spatial placement. Not persisted by the block container; a block read
    /// back from disk carries a zero origin.
    pub geom: BlockGeometry,
    data: Vec<Complex32>,
}

impl CorrelationBlock {
    pub fn from_data(n_t: usize, geom: BlockGeometry, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != n_t * geom.n_z * geom.n_x {
            return Err(Error::shape(n_t * geom.n_z * geom.n_x, data.len()));
        }
        Ok(CorrelationBlock { n_t, geom, data })
    }

    pub fn get(&self, t: usize, z: usize, x: usize) -> Complex32 {
        self.data[(t * self.geom.n_z + z) * self.geom.n_x + x]
    }

    pub fn frame(&self, t: usize) -> &[Complex32] {
        let stride = self.geom.n_z * self.geom.n_x;
        &self.data[t * stride..(t + 1) * stride]
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    /// Largest voxel magnitude; 0 for an empty block.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f32::max)
    }

    pub fn check_bound(&self) -> Result<()> {
        let worst = self.max_abs();
        if worst > 1.0 + 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "correlation magnitude {worst} exceeds the normalized bound"
            )));
        }
        Ok(())
    }
}

/// One training/evaluation example: the correlation block and its
/// ground-truth track mask on the upscaled grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub chi: CorrelationBlock,
    pub psi: TrackMask,
    pub density_per_mm3: f64,
    pub seed: u64,
    pub upscale: u32,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        let r = self.upscale as usize;
        if self.psi.n_z != r * self.chi.geom.n_z || self.psi.n_x != r * self.chi.geom.n_x {
            return Err(Error::shape(
                format!("{}x{}", r * self.chi.geom.n_z, r * self.chi.geom.n_x),
                format!("{}x{}", self.psi.n_z, self.psi.n_x),
            ));
        }
        self.chi.check_bound()
    }
}
