//! Deterministic compressed sensing with a binary block-diagonal sampling
//! matrix and an orthonormal DCT dictionary.
//!
//! Measurement is `y = Phi x`, where row `i` of `Phi` holds ones on the
//! contiguous block `[i*b, (i+1)*b)` with `b = n / m`, so encoding is a plain
//! block sum. Reconstruction runs orthogonal matching pursuit over the
//! effective dictionary `A = Phi Psi^T`; atom correlations `A^T r` are computed
//! as the DCT of the block-upsampled residual.

use std::f64::consts::PI;

use super::dct::OrthoDct;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CompressedSensing {
    n: usize,
    m: usize,
    block: usize,
    dct: OrthoDct,
    atom_norms: Vec<f64>,
}

impl CompressedSensing {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 || n == 0 || n % m != 0 {
            return Err(Error::InvalidConfig(format!(
                "signal length {n} is not divisible by measurement count {m}"
            )));
        }
        let mut cs = Self {
            n,
            m,
            block: n / m,
            dct: OrthoDct::new(n),
            atom_norms: Vec::new(),
        };
        let mut atom = vec![0.0; m];
        cs.atom_norms = (0..n)
            .map(|j| {
                cs.atom_into(j, &mut atom);
                atom.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        Ok(cs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn block_len(&self) -> usize {
        self.block
    }

    /// Default OMP sparsity: one atom per ten measurements.
    pub fn default_sparsity(&self) -> usize {
        (self.m / 10).max(1)
    }

    /// Dense `m x n` sampling matrix, row-major.
    pub fn sampling_matrix(&self) -> Vec<f64> {
        let mut phi = vec![0.0; self.m * self.n];
        for i in 0..self.m {
            for t in i * self.block..(i + 1) * self.block {
                phi[i * self.n + t] = 1.0;
            }
        }
        phi
    }

    /// `y = Phi x`, i.e. the sum of each block.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(x.chunks_exact(self.block).map(|b| b.iter().sum()).collect())
    }

    /// Column `j` of `Phi Psi^T`: block sums of DCT basis function `j`.
    fn atom_into(&self, j: usize, out: &mut [f64]) {
        let scale = self.dct.scale(j);
        if j == 0 {
            out.fill(scale * self.block as f64);
            return;
        }
        // sum_{t=a}^{a+b-1} cos(theta (2t+1)) = sin(b theta) / sin(theta) * cos(theta (2a + b))
        let theta = PI * j as f64 / (2 * self.n) as f64;
        let b = self.block as f64;
        let gain = (b * theta).sin() / theta.sin();
        for (i, v) in out.iter_mut().enumerate() {
            let a = (i * self.block) as f64;
            *v = scale * gain * (theta * (2.0 * a + b)).cos();
        }
    }

    /// `A^T r` for a measurement-domain vector `r`.
    fn correlate(&self, r: &[f64], buf: &mut [f64]) {
        for (chunk, &v) in buf.chunks_exact_mut(self.block).zip(r) {
            chunk.fill(v);
        }
        self.dct.forward(buf);
    }

    /// Orthogonal matching pursuit with at most `sparsity` DCT atoms, least
    /// squares refit on the selected support, and synthesis `x = Psi^T c`.
    ///
    /// Ties in the atom score (equal to a relative 1e-9, which covers atoms
    /// aliased onto the same block sums) are broken towards the lowest index.
    pub fn decode(&self, y: &[f64], sparsity: usize) -> Result<Vec<f64>> {
        if y.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                got: y.len(),
            });
        }
        let k = sparsity.clamp(1, self.m);
        let y_norm = norm(y);
        let mut coeffs = vec![0.0; self.n];
        if y_norm == 0.0 || !y_norm.is_finite() {
            return Ok(coeffs);
        }

        let mut support: Vec<usize> = Vec::with_capacity(k);
        // Modified Gram-Schmidt factors of the selected atoms: A_S = Q R.
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut qty: Vec<f64> = Vec::with_capacity(k);
        let mut residual = y.to_vec();
        let mut corr = vec![0.0; self.n];
        let mut atom = vec![0.0; self.m];
        let min_norm = 1e-9 * (self.block as f64).sqrt();
        let mut excluded: Vec<usize> = Vec::new();

        while support.len() < k {
            self.correlate(&residual, &mut corr);
            let mut best: Option<(usize, f64)> = None;
            for (j, (&c, &an)) in corr.iter().zip(&self.atom_norms).enumerate() {
                if an < min_norm || support.contains(&j) || excluded.contains(&j) {
                    continue;
                }
                let score = c.abs() / an;
                if best.is_none_or(|(_, s)| score > s * (1.0 + 1e-9)) {
                    best = Some((j, score));
                }
            }
            let Some((j, score)) = best else { break };
            if score <= 1e-10 * y_norm {
                break;
            }

            self.atom_into(j, &mut atom);
            let mut v = atom.clone();
            let mut rcol = vec![0.0; q.len() + 1];
            // Two passes of MGS keep Q orthonormal to working precision.
            for _ in 0..2 {
                for (i, qi) in q.iter().enumerate() {
                    let d = dot(qi, &v);
                    rcol[i] += d;
                    axpy(-d, qi, &mut v);
                }
            }
            let vn = norm(&v);
            if vn <= 1e-6 * self.atom_norms[j] {
                // Numerically inside the span of the current support.
                excluded.push(j);
                if excluded.len() > self.m {
                    break;
                }
                continue;
            }
            v.iter_mut().for_each(|e| *e /= vn);
            rcol[q.len()] = vn;
            let proj = dot(&v, y);
            let step = dot(&v, &residual);
            axpy(-step, &v, &mut residual);
            qty.push(proj);
            q.push(v);
            r_cols.push(rcol);
            support.push(j);
            if norm(&residual) <= 1e-10 * y_norm {
                break;
            }
        }

        // Back substitution R c = Q^T y.
        let s = support.len();
        let mut c = vec![0.0; s];
        for i in (0..s).rev() {
            let mut acc = qty[i];
            for (l, cl) in c.iter().enumerate().skip(i + 1) {
                acc -= r_cols[l][i] * cl;
            }
            c[i] = acc / r_cols[i][i];
        }
        for (&j, &cj) in support.iter().zip(&c) {
            coeffs[j] = cj;
        }
        self.dct.inverse(&mut coeffs);
        Ok(coeffs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
