use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-feature z-scoring fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation of each column; constant
    /// columns get scale 1.
    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        let d = data.ncols();
        if data.nrows() == 0 {
            return Self::identity(d);
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let scale =
            data.std_axis(Axis(0), 0.0)
                .mapv(|s| if s > 1e-12 && s.is_finite() { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            scale: Array1::ones(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::Dimension {
                what: "data columns vs standardizer",
                expected: self.dim(),
                got: data.ncols(),
            });
        }
        let mut out = data.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row -= &self.mean;
            row /= &self.scale;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn z_scores_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let s = Standardizer::fit(x.view());
        assert_eq!(s.mean.to_vec(), vec![3.0, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let z = s.apply(x.view()).unwrap();
        assert!((z.column(0).mapv(|v| v * v).sum() / 3.0 - 1.0).abs() < 1e-12);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }
}
