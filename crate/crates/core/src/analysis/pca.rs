//! Principal-component projection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Points in a reduced space with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// Row-major `M x d`.
    pub points: Vec<f64>,
    pub dims: usize,
    pub labels: Vec<u16>,
    /// Covariance eigenvalues of the kept directions, largest first.
    pub variances: Vec<f64>,
    /// Directions with non-zero variance; the rest are zero-padded.
    pub rank: usize,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }
}

/// Projects centered `M x D` features onto their top `d` principal
/// directions. Each direction's largest-magnitude component is made
/// positive. Eigen-decomposes the smaller of the Gram and covariance
/// matrices.
pub fn reduce_dims(
    features: &[f64],
    m: usize,
    d_in: usize,
    labels: &[u16],
    d: usize,
) -> Result<Embedding> {
    if features.len() != m * d_in || labels.len() != m {
        return Err(Error::Shape(format!(
            "{} values and {} labels for a {m}x{d_in} matrix",
            features.len(),
            labels.len()
        )));
    }
    if d == 0 || m <= d {
        return Err(Error::InvalidArgument(format!(
            "need M > d >= 1, got M={m}, d={d}"
        )));
    }
    let mut x = features.to_vec();
    for j in 0..d_in {
        let mean = (0..m).map(|i| x[i * d_in + j]).sum::<f64>() / m as f64;
        for i in 0..m {
            x[i * d_in + j] -= mean;
        }
    }
    let denom = (m - 1) as f64;
    // directions as columns of a D x d matrix, with covariance eigenvalues
    let mut dirs = vec![0.0; d_in * d];
    let mut vars = vec![0.0; d];
    let (values, vectors, n) = if d_in <= m {
        let mut cov = vec![0.0; d_in * d_in];
        for i in 0..m {
            let row = &x[i * d_in..(i + 1) * d_in];
            for a in 0..d_in {
                for b in a..d_in {
                    cov[a * d_in + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..d_in {
            for b in a..d_in {
                cov[a * d_in + b] /= denom;
                cov[b * d_in + a] = cov[a * d_in + b];
            }
        }
        let (v, e) = symmetric_eigen(&cov, d_in);
        (v, e, d_in)
    } else {
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let g: f64 = x[i * d_in..(i + 1) * d_in]
                    .iter()
                    .zip(&x[j * d_in..(j + 1) * d_in])
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i * m + j] = g;
                gram[j * m + i] = g;
            }
        }
        let (v, e) = symmetric_eigen(&gram, m);
        (v, e, m)
    };
    let top = values.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = top * 1e-10 * n as f64;
    let mut rank = 0;
    for k in 0..d.min(n) {
        let idx = n - 1 - k;
        let lambda = values[idx];
        if lambda <= tol {
            break;
        }
        rank += 1;
        if d_in <= m {
            for j in 0..d_in {
                dirs[j * d + k] = vectors[j * n + idx];
            }
            vars[k] = lambda;
        } else {
            let norm = lambda.sqrt();
            for j in 0..d_in {
                dirs[j * d + k] = (0..m)
                    .map(|i| x[i * d_in + j] * vectors[i * n + idx])
                    .sum::<f64>()
                    / norm;
            }
            vars[k] = lambda / denom;
        }
        let (mut best, mut best_abs) = (0.0, -1.0);
        for j in 0..d_in {
            let v = dirs[j * d + k];
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            for j in 0..d_in {
                dirs[j * d + k] = -dirs[j * d + k];
            }
        }
    }
    let mut points = vec![0.0; m * d];
    for i in 0..m {
        let row = &x[i * d_in..(i + 1) * d_in];
        for k in 0..rank {
            points[i * d + k] = row
                .iter()
                .enumerate()
                .map(|(j, v)| v * dirs[j * d + k])
                .sum();
        }
    }
    Ok(Embedding {
        points,
        dims: d,
        labels: labels.to_vec(),
        variances: vars,
        rank,
    })
}
