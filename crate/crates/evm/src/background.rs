//! Background geometry backends.
//!
//! Two realizations of the fixed spatial background `(M, γ)`:
//!
//! * [`BackgroundGeometry::hyperbolic`] — a left-invariant frame model of a
//!   negative Einstein space. Structure constants `C^2_{12} = C^3_{13} = 1`
//!   with `γ = 9 δ` give `Ric[γ] = -(2/9) γ`. All dynamical fields are
//!   frame-invariant, so there is a single spatial sample and frame
//!   derivatives of component functions vanish; covariant operations reduce
//!   to structure-constant algebra.
//! * [`BackgroundGeometry::flat_torus`] — a periodic grid on `[0,1)^3` with
//!   `γ = δ`. Frame derivatives are centered finite differences (order 2 or
//!   4). Its background is not a fixed point of the flow; it exists to
//!   verify discrete operators against manufactured solutions.

use crate::algebra::*;
use crate::error::{EvmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilOrder {
    Two,
    Four,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    HomogeneousHyperbolic,
    FlatTorus { n: usize },
}

/// Spatial sample descriptors with coordinate quadrature weights.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub count: usize,
    /// Coordinate-volume weight of each sample; sums to the comoving volume.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BackgroundGeometry {
    pub kind: BackendKind,
    pub stencil: StencilOrder,
    /// Frame structure constants `C^a_{bc}` with `[e_b, e_c] = C^a_{bc} e_a`.
    pub structure: Con3,
    pub gamma: Mat3,
    pub gamma_inv: Mat3,
    pub sqrt_det_gamma: f64,
    /// Frame Christoffel symbols of `γ`.
    pub christoffel_gamma: Con3,
    /// `Riem[γ]^d_{c a b}`, component along `e_d` of `R(e_a, e_b) e_c`.
    pub riemann_gamma: Riem3,
    pub ricci_gamma: Mat3,
    pub samples: SampleSet,
    pub comoving_volume: f64,
    /// Grid points per axis (1 for the homogeneous backend).
    pub n: usize,
    /// Grid spacing (1.0 for the homogeneous backend).
    pub h: f64,
}

impl BackgroundGeometry {
    /// Left-invariant hyperbolic frame model with `Ric[γ] = -(2/9) γ`.
    pub fn hyperbolic() -> Self {
        let mut structure = ZERO_CON3;
        // [e_1, e_2] = e_2, [e_1, e_3] = e_3
        structure[1][0][1] = 1.0;
        structure[1][1][0] = -1.0;
        structure[2][0][2] = 1.0;
        structure[2][2][0] = -1.0;
        let gamma = mat_scale(&ident3(), 9.0);
        let gamma_inv = mat_scale(&ident3(), 1.0 / 9.0);
        let christoffel_gamma = invariant_christoffel(&structure, &gamma, &gamma_inv);
        let riemann_gamma = invariant_riemann(&structure, &christoffel_gamma);
        let ricci_gamma = ricci_from_riemann(&riemann_gamma);
        let bg = BackgroundGeometry {
            kind: BackendKind::HomogeneousHyperbolic,
            stencil: StencilOrder::Two,
            structure,
            gamma,
            gamma_inv,
            sqrt_det_gamma: det3(&gamma).sqrt(),
            christoffel_gamma,
            riemann_gamma,
            ricci_gamma,
            samples: SampleSet {
                count: 1,
                weights: vec![1.0],
            },
            comoving_volume: 1.0,
            n: 1,
            h: 1.0,
        };
        debug_assert!(bg.einstein_constant_residual() < 1e-12);
        bg
    }

    /// Periodic flat grid on `[0,1)^3`, `n` points per axis.
    pub fn flat_torus(n: usize, stencil: StencilOrder) -> Self {
        assert!(n >= 4, "torus grid needs at least 4 points per axis");
        let count = n * n * n;
        let h = 1.0 / n as f64;
        let w = h * h * h;
        BackgroundGeometry {
            kind: BackendKind::FlatTorus { n },
            stencil,
            structure: ZERO_CON3,
            gamma: ident3(),
            gamma_inv: ident3(),
            sqrt_det_gamma: 1.0,
            christoffel_gamma: ZERO_CON3,
            riemann_gamma: ZERO_RIEM3,
            ricci_gamma: ZERO_MAT3,
            samples: SampleSet {
                count,
                weights: vec![w; count],
            },
            comoving_volume: 1.0,
            n,
            h,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.kind, BackendKind::HomogeneousHyperbolic)
    }

    pub fn sample_count(&self) -> usize {
        self.samples.count
    }

    /// Relative residual of `Ric[γ] + (2/9) γ = 0` (exact zero on the torus).
    pub fn einstein_constant_residual(&self) -> f64 {
        match self.kind {
            BackendKind::FlatTorus { .. } => max_abs_riem(&self.riemann_gamma),
            BackendKind::HomogeneousHyperbolic => {
                let mut r: f64 = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        r = r.max((self.ricci_gamma[i][j] + 2.0 / 9.0 * self.gamma[i][j]).abs());
                    }
                }
                r / max_abs_mat(&self.gamma)
            }
        }
    }

    /// Coordinates of a torus sample (sample index -> (x, y, z)).
    pub fn coords(&self, s: usize) -> Vec3 {
        match self.kind {
            BackendKind::HomogeneousHyperbolic => ZERO_VEC3,
            BackendKind::FlatTorus { n } => {
                let iz = s % n;
                let iy = (s / n) % n;
                let ix = s / (n * n);
                [
                    ix as f64 * self.h,
                    iy as f64 * self.h,
                    iz as f64 * self.h,
                ]
            }
        }
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// Neighbor of `s` shifted by `delta` grid points along `axis`.
    pub fn shift(&self, s: usize, axis: usize, delta: isize) -> usize {
        let n = self.n as isize;
        let iz = (s % self.n) as isize;
        let iy = ((s / self.n) % self.n) as isize;
        let ix = (s / (self.n * self.n)) as isize;
        let mut c = [ix, iy, iz];
        c[axis] = (c[axis] + delta).rem_euclid(n);
        self.index(c[0] as usize, c[1] as usize, c[2] as usize)
    }

    /// Frame derivative `e_a u` of a scalar component field, at one sample.
    pub fn deriv_scalar_at(&self, data: &[f64], s: usize, axis: usize) -> f64 {
        match self.kind {
            BackendKind::HomogeneousHyperbolic => 0.0,
            BackendKind::FlatTorus { .. } => match self.stencil {
                StencilOrder::Two => {
                    let p = data[self.shift(s, axis, 1)];
                    let m = data[self.shift(s, axis, -1)];
                    (p - m) / (2.0 * self.h)
                }
                StencilOrder::Four => {
                    let p1 = data[self.shift(s, axis, 1)];
                    let m1 = data[self.shift(s, axis, -1)];
                    let p2 = data[self.shift(s, axis, 2)];
                    let m2 = data[self.shift(s, axis, -2)];
                    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * self.h)
                }
            },
        }
    }

    /// All three frame derivatives of a scalar field.
    pub fn deriv_scalar(&self, data: &[f64]) -> Vec<Vec3> {
        let count = self.sample_count();
        let mut out = vec![ZERO_VEC3; count];
        if self.is_homogeneous() {
            return out;
        }
        for s in 0..count {
            for a in 0..3 {
                out[s][a] = self.deriv_scalar_at(data, s, a);
            }
        }
        out
    }

    /// Frame derivatives of a `Vec3` field: `out[s][a][i] = e_a v^i`.
    pub fn deriv_vec3(&self, data: &[Vec3]) -> Vec<Mat3> {
        let count = self.sample_count();
        let mut out = vec![ZERO_MAT3; count];
        if self.is_homogeneous() {
            return out;
        }
        let comp: Vec<Vec<f64>> = (0..3)
            .map(|i| data.iter().map(|v| v[i]).collect())
            .collect();
        for s in 0..count {
            for a in 0..3 {
                for i in 0..3 {
                    out[s][a][i] = self.deriv_scalar_at(&comp[i], s, a);
                }
            }
        }
        out
    }

    /// Frame derivatives of a `Mat3` field: `out[s][a][i][j] = e_a u_{ij}`.
    pub fn deriv_mat3(&self, data: &[Mat3]) -> Vec<Con3> {
        let count = self.sample_count();
        let mut out = vec![ZERO_CON3; count];
        if self.is_homogeneous() {
            return out;
        }
        for i in 0..3 {
            for j in 0..3 {
                let comp: Vec<f64> = data.iter().map(|m| m[i][j]).collect();
                for (s, o) in out.iter_mut().enumerate() {
                    for a in 0..3 {
                        o[a][i][j] = self.deriv_scalar_at(&comp, s, a);
                    }
                }
            }
        }
        out
    }

    /// Frame derivatives of a `Con3` field: `out[s][a][i][j][k] = e_a Γ^i_{jk}`.
    pub fn deriv_con3(&self, data: &[Con3]) -> Vec<[Con3; 3]> {
        let count = self.sample_count();
        let mut out = vec![[ZERO_CON3; 3]; count];
        if self.is_homogeneous() {
            return out;
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let comp: Vec<f64> = data.iter().map(|c| c[i][j][k]).collect();
                    for (s, o) in out.iter_mut().enumerate() {
                        for a in 0..3 {
                            o[a][i][j][k] = self.deriv_scalar_at(&comp, s, a);
                        }
                    }
                }
            }
        }
        out
    }

    /// Integral of a scalar sample field against the coordinate measure.
    pub fn integrate_coordinate(&self, vals: &[f64]) -> f64 {
        vals.iter()
            .zip(self.samples.weights.iter())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Integral against the metric measure `dμ_g` given `sqrt(det g)` per sample.
    pub fn integrate_metric(&self, vals: &[f64], sqrt_det_g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.sample_count() {
            acc += vals[s] * sqrt_det_g[s] * self.samples.weights[s];
        }
        acc
    }

    /// Metric volume of `M` given `sqrt(det g)` per sample.
    pub fn metric_volume(&self, sqrt_det_g: &[f64]) -> f64 {
        let ones = vec![1.0; self.sample_count()];
        self.integrate_metric(&ones, sqrt_det_g)
    }

    pub fn check_quadrature(&self) -> Result<()> {
        let total: f64 = self.samples.weights.iter().sum();
        if self.samples.weights.iter().any(|&w| w <= 0.0) {
            return Err(EvmError::Config("nonpositive quadrature weight".into()));
        }
        if (total - self.comoving_volume).abs() > 1e-12 * self.comoving_volume {
            return Err(EvmError::Config(format!(
                "quadrature weights sum to {total}, expected {}",
                self.comoving_volume
            )));
        }
        Ok(())
    }
}

/// Frame Christoffel symbols of an invariant metric from the Koszul formula.
pub fn invariant_christoffel(structure: &Con3, g: &Mat3, g_inv: &Mat3) -> Con3 {
    // C_{c,ab} = g_{cd} C^d_{ab}
    let mut c_low = ZERO_CON3;
    for c in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for d in 0..3 {
                    s += g[c][d] * structure[d][a][b];
                }
                c_low[c][a][b] = s;
            }
        }
    }
    let mut out = ZERO_CON3;
    for e in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for c in 0..3 {
                    let low = 0.5 * (c_low[c][a][b] - c_low[b][a][c] - c_low[a][b][c]);
                    s += g_inv[e][c] * low;
                }
                out[e][a][b] = s;
            }
        }
    }
    out
}

/// Riemann tensor of an invariant connection:
/// `R^d_{c a b} = Γ^d_{ae} Γ^e_{bc} - Γ^d_{be} Γ^e_{ac} - C^e_{ab} Γ^d_{ec}`.
pub fn invariant_riemann(structure: &Con3, christoffel: &Con3) -> Riem3 {
    let mut r = ZERO_RIEM3;
    for d in 0..3 {
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = 0.0;
                    for e in 0..3 {
                        s += christoffel[d][a][e] * christoffel[e][b][c]
                            - christoffel[d][b][e] * christoffel[e][a][c]
                            - structure[e][a][b] * christoffel[d][e][c];
                    }
                    r[d][c][a][b] = s;
                }
            }
        }
    }
    r
}

/// `Ric_{cb} = R^a_{c a b}`.
pub fn ricci_from_riemann(riem: &Riem3) -> Mat3 {
    let mut ric = ZERO_MAT3;
    for c in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += riem[a][c][a][b];
            }
            ric[c][b] = s;
        }
    }
    ric
}

/// `(R̊ u)_{ij} = Riem_{i k j l} u^{kl}` with the first index lowered by `g`.
pub fn ring_curvature(riem: &Riem3, g: &Mat3, g_inv: &Mat3, u: &Mat3) -> Mat3 {
    // raise u: u^{kl} = g^{ka} g^{lb} u_{ab}
    let mut u_up = ZERO_MAT3;
    for k in 0..3 {
        for l in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += g_inv[k][a] * g_inv[l][b] * u[a][b];
                }
            }
            u_up[k][l] = s;
        }
    }
    let mut out = ZERO_MAT3;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for d in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        s += g[i][d] * riem[d][k][j][l] * u_up[k][l];
                    }
                }
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn max_abs_riem(r: &Riem3) -> f64 {
    let mut m: f64 = 0.0;
    for a in r {
        for b in a {
            for c in b {
                for v in c {
                    m = m.max(v.abs());
                }
            }
        }
    }
    m
}
