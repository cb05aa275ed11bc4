//! Linear autoencoder: the encoder/decoder pair that minimises squared
//! reconstruction error over the training set is the PCA projection onto the
//! top-`m` principal directions.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAutoencoder {
    n: usize,
    m: usize,
    mean: Vec<f64>,
    /// `m x n`, row-major, orthonormal rows.
    basis: Vec<f64>,
}

impl LinearAutoencoder {
    /// Build from explicit parts. Rows of `basis` must be orthonormal.
    pub fn from_parts(mean: Vec<f64>, basis: Vec<f64>, m: usize) -> Result<Self> {
        let n = mean.len();
        if m == 0 || m > n || basis.len() != m * n {
            return Err(Error::InvalidConfig(format!(
                "basis of {} values does not form {m} rows of length {n}",
                basis.len()
            )));
        }
        Ok(Self { n, m, mean, basis })
    }

    /// Fit mean and top-`m` principal directions of `train`.
    ///
    /// Directions are ordered by decreasing variance and each row's sign is
    /// fixed so that its largest-magnitude entry is positive. If the data has
    /// rank below `m`, the remaining rows complete an orthonormal basis from
    /// the standard basis vectors, in index order.
    pub fn train<S: AsRef<[f64]>>(train: &[S], m: usize) -> Result<Self> {
        let samples = train.len();
        if samples == 0 {
            return Err(Error::Training("empty training set".into()));
        }
        if m > samples {
            return Err(Error::Training(format!(
                "latent size {m} exceeds the number of training samples {samples}"
            )));
        }
        let n = train[0].as_ref().len();
        if m == 0 || m > n {
            return Err(Error::Training(format!("latent size {m} must be in 1..={n}")));
        }
        for s in train {
            if s.as_ref().len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: s.as_ref().len(),
                });
            }
        }

        let mut mean = vec![0.0; n];
        for s in train {
            for (acc, v) in mean.iter_mut().zip(s.as_ref()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= samples as f64);

        let x = DMatrix::from_fn(samples, n, |i, j| train[i].as_ref()[j] - mean[j]);
        let mut directions: Vec<(f64, Vec<f64>)> = if samples <= n {
            // Eigen-decompose the Gram matrix X X^T and lift with X^T u / sqrt(lambda).
            let gram = &x * x.transpose();
            let eig = SymmetricEigen::new(gram);
            let mut pairs: Vec<(f64, Vec<f64>)> = (0..samples)
                .map(|k| {
                    let lambda = eig.eigenvalues[k];
                    let u = eig.eigenvectors.column(k);
                    let lifted = x.transpose() * u;
                    (lambda, lifted.iter().copied().collect())
                })
                .collect();
            for (lambda, v) in &mut pairs {
                let scale = lambda.max(0.0).sqrt();
                if scale > 0.0 {
                    v.iter_mut().for_each(|e| *e /= scale);
                }
            }
            pairs
        } else {
            let cov = x.transpose() * &x;
            let eig = SymmetricEigen::new(cov);
            (0..n)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
                .collect()
        };
        directions.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top = directions.first().map_or(0.0, |d| d.0.max(0.0));
        let floor = top * 1e-12 * n as f64;

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (lambda, v) in directions.into_iter().take(m) {
            if lambda <= floor {
                break;
            }
            if let Some(row) = orthonormalize(&rows, v) {
                rows.push(row);
            }
        }
        let mut unit = 0;
        while rows.len() < m {
            let mut e = vec![0.0; n];
            e[unit] = 1.0;
            unit += 1;
            if let Some(row) = orthonormalize(&rows, e) {
                rows.push(row);
            }
        }
        for row in &mut rows {
            let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
        Ok(Self {
            n,
            m,
            mean,
            basis: rows.concat(),
        })
    }

    /// Keep the leading `m` principal directions.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m {
            return Err(Error::InvalidConfig(format!("cannot truncate {} components to {m}", self.m)));
        }
        Self::from_parts(self.mean.clone(), self.basis[..m * self.n].to_vec(), m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.n..(i + 1) * self.n]
    }

    /// `z = B (x - mean)`
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok((0..self.m).map(|i| dot(self.row(i), &centered)).collect())
    }

    /// `x = B^T z + mean`
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                got: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (i, &zi) in z.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(i)) {
                *o += zi * b;
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Project `v` off `rows` (twice) and normalise; `None` if nothing is left.
fn orthonormalize(rows: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    let start = dot(&v, &v).sqrt();
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for r in rows {
            let d = dot(r, &v);
            for (a, b) in v.iter_mut().zip(r) {
                *a -= d * b;
            }
        }
    }
    let len = dot(&v, &v).sqrt();
    if len <= 1e-8 * start {
        return None;
    }
    v.iter_mut().for_each(|e| *e /= len);
    Some(v)
}
