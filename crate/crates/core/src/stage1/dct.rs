//! Orthonormal type-II DCT and its inverse on top of `rustdct`.

use std::fmt;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

/// Orthonormal DCT-II of length `n`: `c_j = s_j * sum_t x_t cos(pi j (2t+1) / 2n)`
/// with `s_0 = sqrt(1/n)` and `s_j = sqrt(2/n)` otherwise.
#[derive(Clone)]
pub struct OrthoDct {
    n: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
    s0: f64,
    s: f64,
}

impl fmt::Debug for OrthoDct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrthoDct").field("n", &self.n).finish()
    }
}

impl OrthoDct {
    pub fn new(n: usize) -> Self {
        let plan = DctPlanner::new().plan_dct2(n);
        let nf = n as f64;
        Self {
            n,
            plan,
            s0: (1.0 / nf).sqrt(),
            s: (2.0 / nf).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Scale of basis function `j`.
    pub fn scale(&self, j: usize) -> f64 {
        if j == 0 {
            self.s0
        } else {
            self.s
        }
    }

    /// In-place forward transform (signal to coefficients).
    pub fn forward(&self, buf: &mut [f64]) {
        assert_eq!(buf.len(), self.n);
        self.plan.process_dct2(buf);
        buf[0] *= self.s0;
        for v in &mut buf[1..] {
            *v *= self.s;
        }
    }

    /// In-place inverse transform (coefficients to signal).
    pub fn inverse(&self, buf: &mut [f64]) {
        assert_eq!(buf.len(), self.n);
        // rustdct's DCT-III halves the DC term.
        buf[0] *= 2.0 * self.s0;
        for v in &mut buf[1..] {
            *v *= self.s;
        }
        self.plan.process_dct3(buf);
    }
}
