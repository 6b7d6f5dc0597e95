//! Small dense matrix helpers for the low-dimensional covariance updates.
//!
//! Matrices are row-major `Vec<f64>` of size `d * d`; everything here assumes
//! `d` is small (feature dimensions in the single digits), so naive O(d^3)
//! routines are fine.

/// Row-major square matrix with a handful of in-place update routines.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub d: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(d: usize) -> Self {
        Mat {
            d,
            data: vec![0.0; d * d],
        }
    }

    /// `s * I`
    pub fn scaled_identity(d: usize, s: f64) -> Self {
        let mut m = Mat::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = s;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
    }

    /// `self += w * u u^T`
    pub fn add_outer(&mut self, w: f64, u: &[f64]) {
        let d = self.d;
        for i in 0..d {
            let wu = w * u[i];
            for j in 0..d {
                self.data[i * d + j] += wu * u[j];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.data[i * d + j] * x[j];
            }
            out[i] = s;
        }
        out
    }

    /// `x^T self x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.data[i * d + j] * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// Gauss-Jordan inverse with partial pivoting. Returns `None` on a
    /// numerically singular pivot.
    pub fn inverse(&self) -> Option<Mat> {
        let d = self.d;
        let mut a = vec![0.0; d * 2 * d];
        for i in 0..d {
            for j in 0..d {
                a[i * 2 * d + j] = self.data[i * d + j];
            }
            a[i * 2 * d + d + i] = 1.0;
        }
        for col in 0..d {
            let mut piv = col;
            let mut best = a[col * 2 * d + col].abs();
            for r in (col + 1)..d {
                let v = a[r * 2 * d + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return None;
            }
            if piv != col {
                for j in 0..2 * d {
                    a.swap(col * 2 * d + j, piv * 2 * d + j);
                }
            }
            let div = a[col * 2 * d + col];
            for j in 0..2 * d {
                a[col * 2 * d + j] /= div;
            }
            for r in 0..d {
                if r == col {
                    continue;
                }
                let f = a[r * 2 * d + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..2 * d {
                    a[r * 2 * d + j] -= f * a[col * 2 * d + j];
                }
            }
        }
        let mut inv = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                inv.data[i * d + j] = a[i * 2 * d + d + j];
            }
        }
        Some(inv)
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Rank-1 update of a matrix and its inverse in one pass:
/// `a += w * u u^T` and `a_inv` via the Sherman-Morrison identity.
///
/// Requires `1 + w * u^T a_inv u > 0` (always true for `w >= 0` and positive
/// definite `a`).
pub fn sherman_morrison_update(a: &mut Mat, a_inv: &mut Mat, w: f64, u: &[f64]) {
    a.add_outer(w, u);
    let ainv_u = a_inv.matvec(u);
    let denom = 1.0 + w * dot(u, &ainv_u);
    let scale = w / denom;
    let d = a.d;
    for i in 0..d {
        let si = scale * ainv_u[i];
        for j in 0..d {
            a_inv.data[i * d + j] -= si * ainv_u[j];
        }
    }
    // keep the inverse symmetric against drift
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (a_inv.data[i * d + j] + a_inv.data[j * d + i]);
            a_inv.data[i * d + j] = m;
            a_inv.data[j * d + i] = m;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let mut a = Mat::scaled_identity(d, 0.7);
        for _ in 0..12 {
            let u = random_vec(&mut rng, d);
            a.add_outer(0.5, &u);
        }
        let inv = a.inverse().unwrap();
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += a.get(i, k) * inv.get(k, j);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10, "entry ({i},{j}) = {s}");
            }
        }
    }

    #[test]
    fn sherman_morrison_matches_fresh_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 6;
        let mut a = Mat::scaled_identity(d, 0.25);
        let mut a_inv = Mat::scaled_identity(d, 4.0);
        for step in 0..1000 {
            let u = random_vec(&mut rng, d);
            let w = rng.gen_range(0.1..4.0);
            sherman_morrison_update(&mut a, &mut a_inv, w, &u);
            if step % 250 == 249 {
                let fresh = a.inverse().unwrap();
                assert!(
                    a_inv.frobenius_diff(&fresh) < 1e-8,
                    "drift {} at step {}",
                    a_inv.frobenius_diff(&fresh),
                    step
                );
            }
        }
        let fresh = a.inverse().unwrap();
        assert!(a_inv.frobenius_diff(&fresh) < 1e-8);
    }
}
