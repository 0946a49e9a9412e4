//! Simplex quadrature from collapsed (conical product) Gauss-Legendre rules.

use std::sync::OnceLock;

/// Points in barycentric coordinates; weights sum to one, so an integral is
/// `measure · Σ w_q f(λ_q)`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 4], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Shared copy of [`simplex_rule`] for the degrees the solvers use (≤ 6).
pub fn cached_rule(dim: usize, degree: usize) -> &'static QuadratureRule {
    static CACHE: OnceLock<Vec<Vec<QuadratureRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| {
        (1..=3)
            .map(|d| (0..=6).map(|k| simplex_rule(d, k)).collect())
            .collect()
    });
    assert!(degree <= 6, "no cached rule of degree {degree}");
    &cache[dim - 1][degree]
}

/// Rule on the `dim`-simplex (dim = 1, 2, 3) exact for polynomials of total
/// degree `degree`.
pub fn simplex_rule(dim: usize, degree: usize) -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        1 => {
            let (x, w) = gauss_legendre(degree / 2 + 1);
            for (t, wt) in x.into_iter().zip(w) {
                points.push([1.0 - t, t, 0.0, 0.0]);
                weights.push(wt);
            }
        }
        2 => {
            let (xu, wu) = gauss_legendre((degree + 2).div_ceil(2));
            let (xv, wv) = gauss_legendre(degree / 2 + 1);
            for (&u, &a) in xu.iter().zip(&wu) {
                for (&v, &b) in xv.iter().zip(&wv) {
                    let (x, y) = (u, (1.0 - u) * v);
                    points.push([1.0 - x - y, x, y, 0.0]);
                    weights.push(2.0 * a * b * (1.0 - u));
                }
            }
        }
        3 => {
            let (xu, wu) = gauss_legendre((degree + 3).div_ceil(2));
            let (xv, wv) = gauss_legendre((degree + 2).div_ceil(2));
            let (xw, ww) = gauss_legendre(degree / 2 + 1);
            for (&u, &a) in xu.iter().zip(&wu) {
                for (&v, &b) in xv.iter().zip(&wv) {
                    for (&s, &c) in xw.iter().zip(&ww) {
                        let x = u;
                        let y = (1.0 - u) * v;
                        let z = (1.0 - u) * (1.0 - v) * s;
                        points.push([1.0 - x - y - z, x, y, z]);
                        weights.push(6.0 * a * b * c * (1.0 - u) * (1.0 - u) * (1.0 - v));
                    }
                }
            }
        }
        _ => panic!("no simplex rule for dimension {dim}"),
    }
    QuadratureRule { points, weights }
}
