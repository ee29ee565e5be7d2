//! Synthetic sources, references, and masks for hermetic fixtures.

use crate::error::{FlowError, Result};
use crate::state::{GridShape, LatentState, Mask};

/// Gaussian bump of the given amplitude on a zero background, at time 1.
///
/// The value at the center cell is exactly the amplitude, and for radius >= 2
/// on grids of 16x16 or larger the total mass approximates
/// amplitude * 2 * pi * radius^2.
pub fn make_blob_grid(
    shape: GridShape,
    center: (usize, usize),
    radius: f64,
    amplitude: f64,
) -> Result<LatentState> {
    if center.0 >= shape.rows || center.1 >= shape.cols {
        return Err(FlowError::OutOfBounds("blob center"));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(FlowError::InvalidArgument("blob radius must be positive"));
    }
    if !amplitude.is_finite() {
        return Err(FlowError::NonFinite("blob amplitude"));
    }
    let inv = 1.0 / (2.0 * radius * radius);
    let mut values = Vec::with_capacity(shape.len());
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            let dr = r as f64 - center.0 as f64;
            let dc = c as f64 - center.1 as f64;
            values.push(amplitude * (-(dr * dr + dc * dc) * inv).exp());
        }
    }
    LatentState::with_shape(values, 1.0, shape)
}

/// Binary mask: 1 inside the box, 0 outside.
pub fn make_box_mask(
    shape: GridShape,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Mask> {
    if height == 0 || width == 0 {
        return Err(FlowError::InvalidArgument(
            "mask box must have positive area",
        ));
    }
    if top + height > shape.rows || left + width > shape.cols {
        return Err(FlowError::OutOfBounds("mask box"));
    }
    let mut values = vec![0.0; shape.len()];
    for r in top..top + height {
        for c in left..left + width {
            values[r * shape.cols + c] = 1.0;
        }
    }
    Mask::with_shape(values, shape)
}
