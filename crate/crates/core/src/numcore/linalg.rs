//! Small dense matrices and the spectral quantities the convergence lab needs.

use crate::error::{EmoError, Result};

/// Dense row-major matrix, sized for tens to a few hundred rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Matrices up to this size are diagonalised with cyclic Jacobi; larger ones
/// fall back to power iteration for the extreme eigenvalue.
pub const JACOBI_MAX_DIM: usize = 64;

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(EmoError::Shape(format!("ragged rows: {} vs {c}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EmoError::Shape(format!("{rows}x{cols} matrix from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &SmallMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(EmoError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(EmoError::Shape(format!("{}x{} times vector of {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// `mᵀ m`
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.cols);
        for i in 0..self.cols {
            for j in i..self.cols {
                let s: f64 = (0..self.rows).map(|r| self.get(r, i) * self.get(r, j)).sum();
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }

    fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(m: &SmallMatrix) -> Result<Vec<f64>> {
    let (vals, _) = sym_eigen(m)?;
    Ok(vals)
}

/// Eigenvalues (ascending) and matching column eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &SmallMatrix) -> Result<(Vec<f64>, SmallMatrix)> {
    if m.rows != m.cols {
        return Err(EmoError::Shape(format!("eigenvalues of a {}x{} matrix", m.rows, m.cols)));
    }
    if !m.is_finite() {
        return Err(EmoError::NonFinite("matrix passed to eigensolver".into()));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = SmallMatrix::identity(n);
    let scale = a.frobenius().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if a.off_diagonal_norm() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let vals = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = SmallMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, new_j, v.get(k, old_j));
        }
    }
    Ok((vals, vecs))
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration, stopping once the Rayleigh quotient settles to 1e-14 relative.
pub fn largest_psd_eigenvalue(m: &SmallMatrix) -> Result<f64> {
    if m.rows != m.cols {
        return Err(EmoError::Shape(format!("eigenvalues of a {}x{} matrix", m.rows, m.cols)));
    }
    let n = m.rows;
    if n == 0 {
        return Ok(0.0);
    }
    // deterministic start with no exact orthogonality to typical eigenvectors
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 97) as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w = m.mul_vec(&v)?;
        let rq: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (rq - lambda).abs() <= 1e-14 * rq.abs() {
            return Ok(rq);
        }
        lambda = rq;
    }
    Ok(lambda)
}

/// Largest singular value: the square root of the top eigenvalue of `mᵀm`.
pub fn spectral_norm(m: &SmallMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(EmoError::NonFinite("matrix passed to spectral_norm".into()));
    }
    let gram = m.gram();
    let top = if gram.rows <= JACOBI_MAX_DIM {
        sym_eigenvalues(&gram)?.last().copied().unwrap_or(0.0)
    } else {
        largest_psd_eigenvalue(&gram)?
    };
    Ok(top.max(0.0).sqrt())
}

/// Largest eigenvalue modulus, via the characteristic polynomial of a
/// companion-form matrix. Only used for diagnostics on the reduced matrix.
pub fn companion_spectral_radius(first_row: &[f64]) -> f64 {
    // roots of z^S - c0 z^{S-1} - c1 z^{S-2} - ... - c_{S-1}
    let s = first_row.len();
    if s == 0 {
        return 0.0;
    }
    if s == 1 {
        return first_row[0].abs();
    }
    let mut roots: Vec<(f64, f64)> = (0..s)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / s as f64;
            (0.9 * ang.cos(), 0.9 * ang.sin())
        })
        .collect();
    let poly = |z: (f64, f64)| -> (f64, f64) {
        // Horner on monic polynomial with coefficients [1, -c0, -c1, ...]
        let mut acc = (1.0, 0.0);
        for &c in first_row {
            acc = (acc.0 * z.0 - acc.1 * z.1 - c, acc.0 * z.1 + acc.1 * z.0);
        }
        acc
    };
    // Durand-Kerner
    for _ in 0..2000 {
        let mut delta: f64 = 0.0;
        for i in 0..s {
            let zi = roots[i];
            let num = poly(zi);
            let mut den = (1.0, 0.0);
            for (j, &zj) in roots.iter().enumerate() {
                if i != j {
                    let d = (zi.0 - zj.0, zi.1 - zj.1);
                    den = (den.0 * d.0 - den.1 * d.1, den.0 * d.1 + den.1 * d.0);
                }
            }
            let dd = den.0 * den.0 + den.1 * den.1;
            if dd == 0.0 {
                continue;
            }
            let q = ((num.0 * den.0 + num.1 * den.1) / dd, (num.1 * den.0 - num.0 * den.1) / dd);
            roots[i] = (zi.0 - q.0, zi.1 - q.1);
            delta = delta.max(q.0.hypot(q.1));
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots.iter().map(|z| z.0.hypot(z.1)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_norm() {
        assert!((spectral_norm(&SmallMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_reference() {
        let m = SmallMatrix::from_rows(&[vec![0.9, -0.1], vec![1.0, 0.0]]).unwrap();
        // closed form for the 2x2 gram [[1.81, -0.09], [-0.09, 0.01]]
        let (a, b, c) = (1.81_f64, -0.09_f64, 0.01_f64);
        let top = 0.5 * (a + c) + (0.25 * (a - c).powi(2) + b * b).sqrt();
        let expected = top.sqrt();
        let got = spectral_norm(&m).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert!((got - 1.3470).abs() < 5e-5);
    }

    #[test]
    fn one_by_one_is_abs() {
        let m = SmallMatrix::from_rows(&[vec![-0.8]]).unwrap();
        assert!((spectral_norm(&m).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn jacobi_matches_power_iteration() {
        let n = 12;
        let mut m = SmallMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.4);
            }
        }
        let g = m.gram();
        let jac = *sym_eigenvalues(&g).unwrap().last().unwrap();
        let pow = largest_psd_eigenvalue(&g).unwrap();
        assert!((jac - pow).abs() < 1e-8 * jac, "{jac} vs {pow}");
    }

    #[test]
    fn eigenvectors_reconstruct() {
        let m = SmallMatrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 1.0]]).unwrap();
        let (vals, vecs) = sym_eigen(&m).unwrap();
        let recon = vecs.matmul(&SmallMatrix::diag(&vals)).unwrap().matmul(&vecs.transpose()).unwrap();
        for (a, b) in recon.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn companion_radius_scalar_and_quadratic() {
        assert!((companion_spectral_radius(&[0.5]) - 0.5).abs() < 1e-15);
        // z^2 - 0.9 z + 0.2 = (z - 0.5)(z - 0.4)
        let r = companion_spectral_radius(&[0.9, -0.2]);
        assert!((r - 0.5).abs() < 1e-12, "{r}");
    }
}
