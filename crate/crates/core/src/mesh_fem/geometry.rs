//! P1 element geometry, generic over the scalar type so that coordinate
//! derivatives come out of the same code path.

use crate::dual::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct CellGeometry<S> {
    /// Gradient of each barycentric basis function (rows), padded to 3.
    pub grads: [[S; 3]; 4],
    /// Signed volume (area in 2D).
    pub volume: S,
    /// Longest edge.
    pub size: S,
}

pub fn cell_geometry<S: Scalar>(dim: usize, x: &[[S; 3]; 4]) -> CellGeometry<S> {
    let zero = S::zero();
    let mut grads = [[zero; 3]; 4];
    let volume;
    if dim == 2 {
        let e1 = [x[1][0] - x[0][0], x[1][1] - x[0][1]];
        let e2 = [x[2][0] - x[0][0], x[2][1] - x[0][1]];
        let det = e1[0] * e2[1] - e2[0] * e1[1];
        let inv = det.recip();
        grads[1] = [e2[1] * inv, -e2[0] * inv, zero];
        grads[2] = [-e1[1] * inv, e1[0] * inv, zero];
        volume = det * 0.5;
    } else {
        let e: [[S; 3]; 3] = std::array::from_fn(|i| {
            [
                x[i + 1][0] - x[0][0],
                x[i + 1][1] - x[0][1],
                x[i + 1][2] - x[0][2],
            ]
        });
        let c23 = cross(&e[1], &e[2]);
        let c31 = cross(&e[2], &e[0]);
        let c12 = cross(&e[0], &e[1]);
        let det = e[0][0] * c23[0] + e[0][1] * c23[1] + e[0][2] * c23[2];
        let inv = det.recip();
        for k in 0..3 {
            grads[1][k] = c23[k] * inv;
            grads[2][k] = c31[k] * inv;
            grads[3][k] = c12[k] * inv;
        }
        volume = det * (1.0 / 6.0);
    }
    for k in 0..dim {
        let mut s = zero;
        for a in 1..=dim {
            s -= grads[a][k];
        }
        grads[0][k] = s;
    }
    CellGeometry {
        grads,
        volume,
        size: longest_edge(dim, x),
    }
}

fn cross<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Longest edge. The maximizing edge is picked on the primal values, so the
/// derivative is that of the winning edge (well defined unless two edges tie).
pub fn longest_edge<S: Scalar>(dim: usize, x: &[[S; 3]; 4]) -> S {
    let mut best = (f64::NEG_INFINITY, S::zero());
    for a in 0..=dim {
        for b in a + 1..=dim {
            let mut l2 = S::zero();
            for k in 0..dim {
                let d = x[a][k] - x[b][k];
                l2 += d * d;
            }
            if l2.re() > best.0 {
                best = (l2.re(), l2);
            }
        }
    }
    best.1.sqrt()
}

/// Facet measure times the unit outward normal, for a facet with vertices
/// `f` lying on a cell whose remaining vertex is `opposite`.
pub fn facet_normal<S: Scalar>(dim: usize, f: &[[S; 3]; 3], opposite: &[f64; 3]) -> [S; 3] {
    let zero = S::zero();
    let mut n = if dim == 2 {
        // rotate the edge by -90 degrees
        let t = [f[1][0] - f[0][0], f[1][1] - f[0][1]];
        [t[1], -t[0], zero]
    } else {
        let e1 = [f[1][0] - f[0][0], f[1][1] - f[0][1], f[1][2] - f[0][2]];
        let e2 = [f[2][0] - f[0][0], f[2][1] - f[0][1], f[2][2] - f[0][2]];
        let c = cross(&e1, &e2);
        [c[0] * 0.5, c[1] * 0.5, c[2] * 0.5]
    };
    let mut inward = 0.0;
    for k in 0..dim {
        inward += n[k].re() * (opposite[k] - f[0][k].re());
    }
    if inward > 0.0 {
        for v in &mut n {
            *v = -*v;
        }
    }
    n
}

/// Facet measure (length in 2D, area in 3D).
pub fn facet_measure<S: Scalar>(dim: usize, f: &[[S; 3]; 3]) -> S {
    let n = facet_normal(dim, f, &[0.0; 3]);
    let mut s = S::zero();
    for v in n.iter().take(dim) {
        s += *v * *v;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_triangle_gradients() {
        let x = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        let g = cell_geometry::<f64>(2, &x);
        assert_eq!(g.volume, 0.5);
        assert_eq!(g.grads[0][..2], [-1.0, -1.0]);
        assert_eq!(g.grads[1][..2], [1.0, 0.0]);
        assert_eq!(g.grads[2][..2], [0.0, 1.0]);
        assert!((g.size - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reference_tetrahedron_gradients() {
        let x = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let g = cell_geometry::<f64>(3, &x);
        assert!((g.volume - 1.0 / 6.0).abs() < 1e-16);
        assert_eq!(g.grads[0], [-1.0, -1.0, -1.0]);
        assert_eq!(g.grads[3], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn facet_normal_points_outward() {
        let f = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]];
        let n = facet_normal::<f64>(2, &f, &[0.3, 0.5, 0.0]);
        assert_eq!(n[..2], [0.0, -1.0]);
    }
}
