//! Stacking correlation frames into the canonical (t, z, x) block.

use super::CorrelationBlock;
use crate::acoustics::IQFrame;
use crate::{Error, Result};
use num_complex::Complex32;

/// Stack `n_t` frames starting at `t0` into one block, narrowing to 32-bit
/// storage. All frames must share a geometry.
pub fn assemble_block(frames: &[IQFrame], t0: usize, n_t: usize) -> Result<CorrelationBlock> {
    if n_t == 0 {
        return Err(Error::InvalidArgument("block needs at least one frame".into()));
    }
    if t0 + n_t > frames.len() {
        return Err(Error::InvalidArgument(format!(
            "window [{t0}, {}) exceeds the {} available frames",
            t0 + n_t,
            frames.len()
        )));
    }
    let geom = frames[t0].geom;
    let mut data = Vec::with_capacity(n_t * geom.n_z * geom.n_x);
    for frame in &frames[t0..t0 + n_t] {
        if frame.geom != geom {
            return Err(Error::shape(format!("{geom:?}"), format!("{:?}", frame.geom)));
        }
        data.extend(frame.data().iter().map(|c| Complex32::new(c.re as f32, c.im as f32)));
    }
    CorrelationBlock::from_data(n_t, geom, data)
}
