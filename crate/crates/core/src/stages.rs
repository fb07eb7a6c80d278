//! Grid-to-window cropping as a pipeline stage.

use crate::diff::{check_len, DiffComponent, Port};
use crate::error::Result;
use crate::field::{centered_window, crop_vjp, GridSpec, ScalarField3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPlacement {
    /// Always the same window origin.
    Fixed([usize; 3]),
    /// Re-centered on the negative region of every input. The origin is
    /// piecewise constant in the input, so the vjp treats it as fixed.
    Centered,
}

/// Crops a scalar field on `source` to a `dims` window.
#[derive(Debug, Clone)]
pub struct CropStage {
    source: GridSpec,
    dims: [usize; 3],
    placement: WindowPlacement,
}

impl CropStage {
    pub fn new(source: GridSpec, dims: [usize; 3], placement: WindowPlacement) -> Result<Self> {
        source.validate()?;
        let probe = match placement {
            WindowPlacement::Fixed(origin) => origin,
            WindowPlacement::Centered => [0; 3],
        };
        source.window(probe, dims)?;
        Ok(CropStage {
            source,
            dims,
            placement,
        })
    }

    pub fn source(&self) -> &GridSpec {
        &self.source
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Window origin used for `input`.
    pub fn origin_for(&self, input: &[f64]) -> Result<[usize; 3]> {
        match self.placement {
            WindowPlacement::Fixed(origin) => Ok(origin),
            WindowPlacement::Centered => {
                let field = ScalarField3::new(self.source, input.to_vec())?;
                centered_window(&field, self.dims)
            }
        }
    }
}

impl DiffComponent for CropStage {
    fn name(&self) -> &str {
        "crop"
    }
    fn input_shape(&self) -> Port {
        Port::Scalar(self.source.dims)
    }
    fn output_shape(&self) -> Port {
        Port::Scalar(self.dims)
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("crop input", self.source.len(), input.len())?;
        let origin = self.origin_for(input)?;
        let field = ScalarField3::new(self.source, input.to_vec())?;
        Ok(field.crop(origin, self.dims)?.into_values())
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("crop input", self.source.len(), input.len())?;
        let origin = self.origin_for(input)?;
        let window = self.source.window(origin, self.dims)?;
        let cot = ScalarField3::new(window, cotangent.to_vec())?;
        Ok(crop_vjp(&self.source, origin, &cot)?.into_values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{check_vjp, GradCheckOptions};

    #[test]
    fn fixed_crop_gradcheck() {
        let spec = GridSpec::cube(0.0, 1.0, 6).unwrap();
        let stage = CropStage::new(spec, [3, 2, 4], WindowPlacement::Fixed([1, 2, 0])).unwrap();
        let x: Vec<f64> = (0..spec.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..24).map(|i| (i as f64 * 1.3).cos()).collect();
        let probes: Vec<usize> = (0..20).map(|i| (i * 37) % spec.len()).collect();
        let report = check_vjp(&stage, &x, &v, &probes, GradCheckOptions::default()).unwrap();
        assert!(report.passes(1e-6), "{}", report.max_rel_err());
    }

    #[test]
    fn centered_window_follows_obstacle() {
        let spec = GridSpec::new([0.0; 3], [1.0; 3], [10, 6, 6]).unwrap();
        let field = ScalarField3::from_fn(spec, |p| {
            ((p[0] - 7.0).powi(2) + (p[1] - 3.0).powi(2) + (p[2] - 3.0).powi(2)).sqrt() - 1.1
        });
        let stage = CropStage::new(spec, [4, 4, 4], WindowPlacement::Centered).unwrap();
        assert_eq!(stage.origin_for(field.values()).unwrap(), [5, 1, 1]);
        let out = stage.forward(field.values()).unwrap();
        assert_eq!(out.len(), 64);
        assert!(CropStage::new(spec, [11, 4, 4], WindowPlacement::Centered).is_err());
    }
}
