//! Per-camera residual maps and the restore step `observation - residual`.

use crate::error::{Error, Result};
use crate::image::Image;

/// Residual magnitudes below this are flushed to zero. Together with the
/// `f32` grid it keeps `observation - residual` exact in `f64`, so adding
/// the residual back recovers the observation bit for bit.
pub const RESIDUAL_FLUSH: f64 = 1.0 / (1u64 << 29) as f64;

/// Largest residual magnitude kept by [`snap_residual`].
pub const RESIDUAL_LIMIT: f64 = 1024.0;

/// One learnable residual image per training camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMapSet {
    pub maps: Vec<Image>,
}

impl ResidualMapSet {
    pub fn zeros(cameras: usize, width: usize, height: usize) -> Self {
        ResidualMapSet {
            maps: vec![Image::zeros(width, height); cameras],
        }
    }

    /// A set with no maps, as stored by a stripped checkpoint.
    pub fn none() -> Self {
        ResidualMapSet { maps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, camera: usize) -> &Image {
        &self.maps[camera]
    }

    pub fn validate(&self) -> Result<()> {
        for (c, m) in self.maps.iter().enumerate() {
            if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!(
                    "residual map {c} has a non-finite value at {i}"
                )));
            }
        }
        Ok(())
    }

    /// Mean absolute value over all maps.
    pub fn mean_abs(&self) -> f64 {
        let count: usize = self.maps.iter().map(|m| m.len()).sum();
        if count == 0 {
            return 0.0;
        }
        self.maps
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|v| v.abs())
            .sum::<f64>()
            / count as f64
    }
}

/// Rounds a residual value onto the representable grid used for training.
pub fn snap_residual(v: f64) -> f64 {
    let v = v.clamp(-RESIDUAL_LIMIT, RESIDUAL_LIMIT) as f32 as f64;
    if v.abs() < RESIDUAL_FLUSH {
        0.0
    } else {
        v
    }
}

pub fn snap_map(m: &mut Image) {
    for v in m.data.iter_mut() {
        *v = snap_residual(*v);
    }
}

/// `observation - residual`, unclamped.
pub fn restore_target(observation: &Image, residual: &Image) -> Result<Image> {
    observation.check_same_shape(residual, "restore_target")?;
    let data = observation
        .data
        .iter()
        .zip(&residual.data)
        .map(|(o, m)| o - m)
        .collect();
    Image::from_data(observation.width, observation.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_image;

    #[test]
    fn zero_residual_is_identity() {
        let o = random_image(1, 12, 12, 0.0, 1.0);
        assert_eq!(restore_target(&o, &Image::zeros(12, 12)).unwrap(), o);
    }

    #[test]
    fn residual_equal_to_observation_gives_zero() {
        let o = random_image(2, 12, 12, 0.0, 1.0);
        assert!(restore_target(&o, &o).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(restore_target(&Image::zeros(4, 4), &Image::zeros(4, 5)).is_err());
    }

    #[test]
    fn snap_flushes_tiny_values() {
        assert_eq!(snap_residual(1e-12), 0.0);
        assert_eq!(snap_residual(-1e-10), 0.0);
        assert_eq!(snap_residual(0.25), 0.25);
        assert_eq!(snap_residual(0.1), 0.1f32 as f64);
    }
}
