//! Dense 3-component tensor algebra used by every module.
//!
//! All spatial tensors are stored in frame components as plain fixed-size
//! arrays. Index order conventions:
//!   - `Con3[i][j][k]`  = connection coefficient with upper index `i`,
//!     lower indices `(j, k)` in that order,
//!   - `Riem[d][c][a][b]` = component along `e_d` of `R(e_a, e_b) e_c`.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
/// Rank-(1,2) coefficients, e.g. Christoffel symbols.
pub type Con3 = [[[f64; 3]; 3]; 3];
/// Rank-(1,3) curvature storage.
pub type Riem3 = [[[[f64; 3]; 3]; 3]; 3];

pub const ZERO_VEC3: Vec3 = [0.0; 3];
pub const ZERO_MAT3: Mat3 = [[0.0; 3]; 3];
pub const ZERO_CON3: Con3 = [[[0.0; 3]; 3]; 3];
pub const ZERO_RIEM3: Riem3 = [[[[0.0; 3]; 3]; 3]; 3];

pub fn ident3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_scale(a: &Mat3, s: f64) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][j] * s;
        }
    }
    r
}

pub fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][j] + b[i][j];
        }
    }
    r
}

pub fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][j] - b[i][j];
        }
    }
    r
}

pub fn mat_axpy(r: &mut Mat3, s: f64, a: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * a[i][j];
        }
    }
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a[i][k] * b[k][j];
            }
            r[i][j] = s;
        }
    }
    r
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse of a 3x3 matrix; `None` when `|det|` is below `1e-300`.
pub fn inv3(a: &Mat3) -> Option<Mat3> {
    let d = det3(a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let id = 1.0 / d;
    let mut r = ZERO_MAT3;
    r[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * id;
    r[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * id;
    r[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * id;
    r[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * id;
    r[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * id;
    r[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * id;
    r[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * id;
    r[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * id;
    r[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * id;
    Some(r)
}

/// Solve the 3x3 linear system `a x = b` by Gaussian elimination with
/// partial pivoting; `None` on a (near-)singular matrix.
pub fn solve3(a: &Mat3, b: &Vec3) -> Option<Vec3> {
    let mut m = *a;
    let mut rhs = *b;
    let mut perm = [0usize, 1, 2];
    for col in 0..3 {
        let mut piv = col;
        for r in col + 1..3 {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        perm.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = ZERO_VEC3;
    for r in (0..3).rev() {
        let mut s = rhs[r];
        for c in r + 1..3 {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    let mut r = ZERO_VEC3;
    for i in 0..3 {
        for j in 0..3 {
            r[i] += a[i][j] * v[j];
        }
    }
    r
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `g_{ij} a^i b^j` for a metric given by its lower components.
pub fn inner(metric: &Mat3, a: &Vec3, b: &Vec3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += metric[i][j] * a[i] * b[j];
        }
    }
    s
}

/// `u_{ij} v_{kl} m^{ik} m^{jl}` for symmetric `u`, `v` and inverse metric `m`.
pub fn inner_sym2(minv: &Mat3, u: &Mat3, v: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    s += minv[i][k] * minv[j][l] * u[i][j] * v[k][l];
                }
            }
        }
    }
    s
}

/// Trace `m^{ij} u_{ij}`.
pub fn trace_with(minv: &Mat3, u: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += minv[i][j] * u[i][j];
        }
    }
    s
}

pub fn symmetrize(a: &Mat3) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = 0.5 * (a[i][j] + a[j][i]);
        }
    }
    r
}

pub fn max_abs_mat(a: &Mat3) -> f64 {
    let mut m: f64 = 0.0;
    for row in a {
        for v in row {
            m = m.max(v.abs());
        }
    }
    m
}

pub fn max_abs_vec(a: &Vec3) -> f64 {
    a[0].abs().max(a[1].abs()).max(a[2].abs())
}

pub fn max_abs_con(a: &Con3) -> f64 {
    let mut m: f64 = 0.0;
    for x in a {
        for y in x {
            for v in y {
                m = m.max(v.abs());
            }
        }
    }
    m
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// ascending order.
pub fn sym_eigenvalues(a: &Mat3) -> Vec3 {
    let mut m = symmetrize(a);
    for _ in 0..64 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off < 1e-15 * (1.0 + max_abs_mat(&m)) {
            break;
        }
        for p in 0..2 {
            for q in p + 1..3 {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut r = ident3();
                r[p][p] = c;
                r[q][q] = c;
                r[p][q] = s;
                r[q][p] = -s;
                let rt = transpose(&r);
                m = mat_mul(&rt, &mat_mul(&m, &r));
            }
        }
    }
    let mut ev = [m[0][0], m[1][1], m[2][2]];
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut r = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

/// Eigen-decomposition of a symmetric NxN matrix (row-major, dense) by
/// cyclic Jacobi; returns (eigenvalues ascending, column eigenvectors).
/// Used for the small invariant-sector operators (6x6 at most).
pub fn sym_eigen_n(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q].abs();
            }
        }
        let scale: f64 = (0..n).map(|i| m[i][i].abs()).sum::<f64>() + 1.0;
        if off < 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| m[i][i]).collect();
    let vecs: Vec<Vec<f64>> = idx
        .iter()
        .map(|&c| (0..n).map(|r| v[r][c]).collect())
        .collect();
    (vals, vecs)
}

/// Deterministic splittable PRNG (splitmix64 core), stable across
/// platforms and releases. Enough for test-data generation.
#[derive(Clone, Debug)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Rng64 {
            state: seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-1, 1).
    pub fn sym_uniform(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    pub fn split(&mut self) -> Rng64 {
        Rng64::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let a: Mat3 = [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 5.0]];
        let inv = inv3(&a).unwrap();
        let id = mat_mul(&a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a: Mat3 = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(inv3(&a).is_none());
    }

    #[test]
    fn jacobi_eigenvalues_diagonal() {
        let a: Mat3 = [[2.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 7.0]];
        let ev = sym_eigenvalues(&a);
        assert!((ev[0] + 1.0).abs() < 1e-13);
        assert!((ev[1] - 2.0).abs() < 1e-13);
        assert!((ev[2] - 7.0).abs() < 1e-13);
    }

    #[test]
    fn jacobi_eigen_n_matches_3x3() {
        let a: Mat3 = [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 5.0]];
        let ev3 = sym_eigenvalues(&a);
        let rows: Vec<Vec<f64>> = a.iter().map(|r| r.to_vec()).collect();
        let (evn, _) = sym_eigen_n(&rows);
        for k in 0..3 {
            assert!((ev3[k] - evn[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn solve3_matches_inverse() {
        let a: Mat3 = [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 5.0]];
        let b: Vec3 = [1.0, -2.0, 0.5];
        let x = solve3(&a, &b).unwrap();
        let ax = mat_vec(&a, &x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }
}
