use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// How the transform is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// The first `r` rows of the `d × d` identity.
    IdentityLike,
    /// I.i.d. normal entries with standard deviation `1/√d`.
    ScaledGaussian,
}

impl InitScheme {
    /// Identity rows when they fit, Gaussian otherwise.
    pub fn default_for(r: usize, d: usize) -> Self {
        if r <= d {
            InitScheme::IdentityLike
        } else {
            InitScheme::ScaledGaussian
        }
    }
}

pub fn init_metric(r: usize, d: usize, scheme: InitScheme, seed: u64) -> Result<Array2<f64>> {
    if r == 0 || d == 0 {
        return input(format!("transform shape must be positive, got {r}x{d}"));
    }
    match scheme {
        InitScheme::IdentityLike => {
            if r > d {
                return input(format!(
                    "identity-like initialization needs r <= d, got r = {r}, d = {d}"
                ));
            }
            Ok(Array2::from_shape_fn((r, d), |(i, j)| {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            }))
        }
        InitScheme::ScaledGaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sd = 1.0 / (d as f64).sqrt();
            let mut l = Array2::zeros((r, d));
            for v in l.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sd * z;
            }
            Ok(l)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_like_rows() {
        assert_eq!(
            init_metric(3, 3, InitScheme::IdentityLike, 0).unwrap(),
            Array2::<f64>::eye(3)
        );
        let l = init_metric(2, 5, InitScheme::IdentityLike, 0).unwrap();
        assert_eq!(l.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(l.row(1).to_vec(), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(init_metric(4, 3, InitScheme::IdentityLike, 0).is_err());
    }

    #[test]
    fn gaussian_is_reproducible() {
        let a = init_metric(5, 100, InitScheme::ScaledGaussian, 7).unwrap();
        let b = init_metric(5, 100, InitScheme::ScaledGaussian, 7).unwrap();
        let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = init_metric(5, 100, InitScheme::ScaledGaussian, 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!((var - 0.01).abs() < 0.005);
    }
}
