use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use super::{GroundMetric, PointCloud};
use crate::error::{Error, Result};

/// Ground cost `C_ij = ‖L(x_i − y_j)‖²` between two clouds.
pub fn cost_matrix(x: &PointCloud, y: &PointCloud, metric: &GroundMetric) -> Result<Array2<f64>> {
    check_dims(x.dim(), y.dim(), metric.input_dim())?;
    let zx = metric.project(x.points().view())?;
    let zy = metric.project(y.points().view())?;
    Ok(pairwise_sq_dists(zx.view(), zy.view()))
}

pub(crate) fn check_dims(dx: usize, dy: usize, dm: usize) -> Result<()> {
    if dx != dm {
        return Err(Error::Dimension {
            what: "first cloud dimension vs metric",
            expected: dm,
            got: dx,
        });
    }
    if dy != dm {
        return Err(Error::Dimension {
            what: "second cloud dimension vs metric",
            expected: dm,
            got: dy,
        });
    }
    Ok(())
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
///
/// Computed from explicit differences, so identical rows give exactly zero.
pub fn pairwise_sq_dists(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "row dimension mismatch");
    let (n, m, k) = (a.nrows(), b.nrows(), a.ncols());
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (sa, sb) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ai = &sa[i * k..(i + 1) * k];
        let row = &mut out[i * m..(i + 1) * m];
        for (j, slot) in row.iter_mut().enumerate() {
            let bj = &sb[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for t in 0..k {
                let diff = ai[t] - bj[t];
                acc += diff * diff;
            }
            *slot = acc;
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

pub(crate) fn reduced_factor(l: &Array2<f64>) -> Array2<f64> {
    let (r, d) = l.dim();
    if r <= d {
        return l.clone();
    }
    let m = DMatrix::from_fn(r, d, |i, j| l[[i, j]]);
    let rf = m.qr().r();
    Array2::from_shape_fn((d, d), |(i, j)| rf[(i, j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud(p: Array2<f64>) -> PointCloud {
        PointCloud::uniform(p).unwrap()
    }

    #[test]
    fn identity_metric_gives_euclidean() {
        let x = cloud(array![[0.0, 0.0]]);
        let y = cloud(array![[3.0, 4.0]]);
        let m = GroundMetric::identity(2, 1.0).unwrap();
        assert_eq!(cost_matrix(&x, &y, &m).unwrap()[[0, 0]], 25.0);
    }

    #[test]
    fn zero_metric_gives_zero_cost() {
        let x = cloud(array![[0.3, -1.0], [2.0, 5.0]]);
        let y = cloud(array![[3.0, 4.0], [1.0, 1.0], [7.0, 0.0]]);
        let m = GroundMetric::new(Array2::zeros((3, 2)), 0.5).unwrap();
        let c = cost_matrix(&x, &y, &m).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_metric_hand_expansion() {
        let x = cloud(array![[1.0, 1.0]]);
        let y = cloud(array![[0.0, 0.0]]);
        let m = GroundMetric::new(array![[2.0, 0.0], [0.0, 1.0]], 1.0).unwrap();
        assert_eq!(cost_matrix(&x, &y, &m).unwrap()[[0, 0]], 5.0);
    }

    #[test]
    fn matches_brute_force_matrix_product() {
        let x = cloud(array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        let y = cloud(array![[2.0, 1.0, -1.0], [0.5, 0.5, 0.5], [4.0, 0.0, 2.0]]);
        let l = array![[1.0, 0.5, -0.3], [0.2, -1.0, 2.0]];
        let m = GroundMetric::new(l.clone(), 1.0).unwrap();
        let c = cost_matrix(&x, &y, &m).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let diff = &x.points().row(i) - &y.points().row(j);
                let proj = l.dot(&diff);
                let expect: f64 = proj.iter().map(|v| v * v).sum();
                assert!((c[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tall_transform_uses_equivalent_factor() {
        let l = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [0.0, 1.0]];
        let m = GroundMetric::new(l.clone(), 1.0).unwrap();
        let f = m.factor();
        assert_eq!(f.dim(), (2, 2));
        let lhs = f.t().dot(&f);
        let rhs = l.t().dot(&l);
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_for_same_cloud() {
        let x = cloud(array![[1.0, 2.0], [0.0, 3.0], [-1.0, 0.5]]);
        let m = GroundMetric::new(array![[1.0, 0.3]], 1.0).unwrap();
        let c = cost_matrix(&x, &x, &m).unwrap();
        assert_eq!(c, c.t());
        assert!(c.diag().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let x = cloud(array![[1.0, 2.0]]);
        let y = cloud(array![[1.0, 2.0, 3.0]]);
        let m = GroundMetric::identity(2, 1.0).unwrap();
        assert!(matches!(
            cost_matrix(&x, &y, &m),
            Err(Error::Dimension { .. })
        ));
    }
}
