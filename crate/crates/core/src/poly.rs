//! Small dense real polynomials (ascending coefficient order) and a real-root
//! finder based on companion-matrix eigenvalues.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    /// `coeffs[k]` multiplies `s^k`.
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// `s + a`
    pub fn linear(a: f64) -> Self {
        Self {
            coeffs: vec![a, 1.0],
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly { coeffs: out }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |p: &Poly, k: usize| p.coeffs.get(k).copied().unwrap_or(0.0);
        Poly {
            coeffs: (0..n).map(|k| get(self, k) + get(other, k)).collect(),
        }
    }

    pub fn scale(&self, f: f64) -> Poly {
        Poly {
            coeffs: self.coeffs.iter().map(|c| c * f).collect(),
        }
    }

    /// Magnitude of the terms of `p(s)`, used to judge residuals.
    pub fn term_scale(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| (c * s.powi(k as i32)).abs())
            .sum()
    }

    /// Eigenvalues of the companion matrix of the monic-normalized polynomial,
    /// as `(re, im)` pairs.
    pub fn companion_roots(&self) -> Vec<(f64, f64)> {
        let n = self.degree();
        if n == 0 {
            return Vec::new();
        }
        let lead = self.coeffs[n];
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -self.coeffs[i] / lead;
        }
        m.complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect()
    }

    /// Newton iterations on a real root estimate.
    pub fn polish(&self, mut r: f64) -> f64 {
        let d = self.derivative();
        for _ in 0..100 {
            let slope = d.eval(r);
            if slope == 0.0 {
                break;
            }
            let step = self.eval(r) / slope;
            if !step.is_finite() {
                break;
            }
            r -= step;
            if step.abs() <= 4.0 * f64::EPSILON * r.abs() {
                break;
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let p = Poly::linear(1.0).mul(&Poly::linear(2.0));
        assert_eq!(p.coeffs, vec![2.0, 3.0, 1.0]);
        assert_eq!(p.eval(1.0), 6.0);
        assert_eq!(p.derivative().coeffs, vec![3.0, 2.0]);
        assert_eq!(p.add(&Poly::constant(1.0)).coeffs, vec![3.0, 3.0, 1.0]);
    }

    #[test]
    fn roots_of_cubic() {
        let p = Poly::linear(1.0)
            .mul(&Poly::linear(4.0))
            .mul(&Poly::linear(10.0));
        let mut roots: Vec<f64> = p
            .companion_roots()
            .into_iter()
            .map(|(re, im)| {
                assert!(im.abs() < 1e-9);
                p.polish(re)
            })
            .collect();
        roots.sort_by(f64::total_cmp);
        for (r, want) in roots.iter().zip([-10.0, -4.0, -1.0]) {
            assert!((r - want).abs() < 1e-12, "{r} vs {want}");
        }
    }
}
