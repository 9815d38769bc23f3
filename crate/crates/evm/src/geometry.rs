//! Rescaled 3-geometry: metric caches, connections, curvature, the
//! conformal spacetime connection, and the geometric derivative formulas
//! shared by the other modules.

use crate::algebra::*;
use crate::background::{ring_curvature, BackgroundGeometry};
use crate::error::{EvmError, Result};

/// Spatial metric samples with inverse and determinant caches.
#[derive(Clone, Debug)]
pub struct SpatialMetric {
    pub g: Vec<Mat3>,
    pub inv: Vec<Mat3>,
    pub det: Vec<f64>,
    pub sqrt_det: Vec<f64>,
}

impl SpatialMetric {
    pub fn new(components: Vec<Mat3>) -> Result<Self> {
        let mut inv = Vec::with_capacity(components.len());
        let mut det = Vec::with_capacity(components.len());
        let mut sqrt_det = Vec::with_capacity(components.len());
        for (s, m) in components.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    if (m[i][j] - m[j][i]).abs() > 1e-12 * (1.0 + max_abs_mat(m)) {
                        return Err(EvmError::SingularMetric(format!(
                            "asymmetric metric at sample {s}"
                        )));
                    }
                }
            }
            let ev = sym_eigenvalues(m);
            if ev[0] <= 0.0 {
                return Err(EvmError::SingularMetric(format!(
                    "nonpositive eigenvalue {} at sample {s}",
                    ev[0]
                )));
            }
            let d = det3(m);
            let mi = inv3(m)
                .ok_or_else(|| EvmError::SingularMetric(format!("singular at sample {s}")))?;
            inv.push(mi);
            det.push(d);
            sqrt_det.push(d.sqrt());
        }
        Ok(SpatialMetric {
            g: components,
            inv,
            det,
            sqrt_det,
        })
    }

    pub fn background(bg: &BackgroundGeometry) -> Self {
        SpatialMetric::new(vec![bg.gamma; bg.sample_count()]).expect("background metric")
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Max-norm residual of `g^{ik} g_{kj} = δ^i_j` over all samples.
    pub fn inverse_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for s in 0..self.len() {
            let id = mat_mul(&self.inv[s], &self.g[s]);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    r = r.max((id[i][j] - want).abs());
                }
            }
        }
        r
    }
}

/// Trace-free symmetric 2-tensor samples (the rescaled `Σ`).
#[derive(Clone, Debug)]
pub struct TraceFreeSym2 {
    pub sigma: Vec<Mat3>,
}

impl TraceFreeSym2 {
    pub fn zero(count: usize) -> Self {
        TraceFreeSym2 {
            sigma: vec![ZERO_MAT3; count],
        }
    }

    /// Remove the `g`-trace part in place.
    pub fn project_trace_free(&mut self, metric: &SpatialMetric) {
        for s in 0..self.sigma.len() {
            let tr = trace_with(&metric.inv[s], &self.sigma[s]);
            mat_axpy(&mut self.sigma[s], -tr / 3.0, &metric.g[s]);
        }
    }

    /// Max over samples of `|tr_g Σ| / max(1, |Σ|)`.
    pub fn trace_residual(&self, metric: &SpatialMetric) -> f64 {
        let mut r: f64 = 0.0;
        for s in 0..self.sigma.len() {
            let tr = trace_with(&metric.inv[s], &self.sigma[s]).abs();
            let scale = max_abs_mat(&self.sigma[s]).max(1e-30);
            r = r.max(tr / scale.max(1.0));
        }
        r
    }
}

/// Lapse and shift with the derived quantities `N̂ = N/3 - 1`, `X̂ = X/N`.
#[derive(Clone, Debug)]
pub struct LapseShift {
    pub lapse: Vec<f64>,
    pub shift: Vec<Vec3>,
}

impl LapseShift {
    pub fn milne(count: usize) -> Self {
        LapseShift {
            lapse: vec![3.0; count],
            shift: vec![ZERO_VEC3; count],
        }
    }

    pub fn n_hat(&self, s: usize) -> f64 {
        self.lapse[s] / 3.0 - 1.0
    }

    pub fn x_hat(&self, s: usize) -> Vec3 {
        let n = self.lapse[s];
        let x = self.shift[s];
        [x[0] / n, x[1] / n, x[2] / n]
    }

    pub fn validate(&self, upper_tol: f64) -> Result<()> {
        for (s, &n) in self.lapse.iter().enumerate() {
            if n <= 0.0 {
                return Err(EvmError::LapsePositivityViolation(format!(
                    "N = {n} at sample {s}"
                )));
            }
            if n > 3.0 + upper_tol {
                return Err(EvmError::LapsePositivityViolation(format!(
                    "N = {n} exceeds 3 + {upper_tol} at sample {s}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Covariant derivative helpers. Connections are per-sample `Con3` fields.
// ---------------------------------------------------------------------------

/// `D_a f` (a frame gradient; connection-free).
pub fn cov_deriv_scalar(bg: &BackgroundGeometry, f: &[f64]) -> Vec<Vec3> {
    bg.deriv_scalar(f)
}

/// `D_a w_b` for a one-form field: `out[s][a][b]`.
pub fn cov_deriv_oneform(bg: &BackgroundGeometry, chr: &[Con3], w: &[Vec3]) -> Vec<Mat3> {
    let mut out = bg.deriv_vec3(w);
    for s in 0..w.len() {
        for a in 0..3 {
            for b in 0..3 {
                let mut corr = 0.0;
                for c in 0..3 {
                    corr += chr[s][c][a][b] * w[s][c];
                }
                out[s][a][b] -= corr;
            }
        }
    }
    out
}

/// `D_a v^i` for a vector field: `out[s][a][i]`.
pub fn cov_deriv_vector(bg: &BackgroundGeometry, chr: &[Con3], v: &[Vec3]) -> Vec<Mat3> {
    let mut out = bg.deriv_vec3(v);
    for s in 0..v.len() {
        for a in 0..3 {
            for i in 0..3 {
                let mut corr = 0.0;
                for c in 0..3 {
                    corr += chr[s][i][a][c] * v[s][c];
                }
                out[s][a][i] += corr;
            }
        }
    }
    out
}

/// `D_a u_{ij}` for a symmetric (or general) 2-tensor: `out[s][a][i][j]`.
pub fn cov_deriv_sym2(bg: &BackgroundGeometry, chr: &[Con3], u: &[Mat3]) -> Vec<Con3> {
    let mut out = bg.deriv_mat3(u);
    for s in 0..u.len() {
        for a in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut corr = 0.0;
                    for c in 0..3 {
                        corr += chr[s][c][a][i] * u[s][c][j] + chr[s][c][a][j] * u[s][i][c];
                    }
                    out[s][a][i][j] -= corr;
                }
            }
        }
    }
    out
}

/// `D_b W_{a i j}` for a (0,3) field stored as `Con3` `[a][i][j]`:
/// `out[s][b][a][i][j]`.
pub fn cov_deriv_rank3(bg: &BackgroundGeometry, chr: &[Con3], w: &[Con3]) -> Vec<[Con3; 3]> {
    let mut out = bg.deriv_con3(w);
    for s in 0..w.len() {
        for b in 0..3 {
            for a in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut corr = 0.0;
                        for c in 0..3 {
                            corr += chr[s][c][b][a] * w[s][c][i][j]
                                + chr[s][c][b][i] * w[s][a][c][j]
                                + chr[s][c][b][j] * w[s][a][i][c];
                        }
                        out[s][b][a][i][j] -= corr;
                    }
                }
            }
        }
    }
    out
}

/// Hessian `D_a D_b f`: `out[s][a][b]`.
pub fn hessian_scalar(bg: &BackgroundGeometry, chr: &[Con3], f: &[f64]) -> Vec<Mat3> {
    let grad = bg.deriv_scalar(f);
    cov_deriv_oneform(bg, chr, &grad)
}

/// Scalar Laplacian `Δ_g f = g^{ab} D_a D_b f`.
pub fn laplacian_scalar(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
    f: &[f64],
) -> Vec<f64> {
    let hess = hessian_scalar(bg, chr, f);
    (0..f.len())
        .map(|s| trace_with(&metric.inv[s], &hess[s]))
        .collect()
}

/// Divergence `D_a v^a` of a vector field.
pub fn divergence_vector(bg: &BackgroundGeometry, chr: &[Con3], v: &[Vec3]) -> Vec<f64> {
    let dv = cov_deriv_vector(bg, chr, v);
    (0..v.len())
        .map(|s| dv[s][0][0] + dv[s][1][1] + dv[s][2][2])
        .collect()
}

/// Divergence `g^{ab} D_a w_b` of a one-form.
pub fn divergence_oneform(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
    w: &[Vec3],
) -> Vec<f64> {
    let dw = cov_deriv_oneform(bg, chr, w);
    (0..w.len())
        .map(|s| trace_with(&metric.inv[s], &dw[s]))
        .collect()
}

// ---------------------------------------------------------------------------
// Connections and curvature of the dynamical metric.
// ---------------------------------------------------------------------------

/// Difference tensor `Υ^i_{jk} = ½ g^{il} (D̄_j g_{kl} + D̄_k g_{lj} - D̄_l g_{jk})`
/// where `D̄` is the covariant derivative of the reference connection.
pub fn difference_tensor(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    reference_chr: &[Con3],
) -> Vec<Con3> {
    let dg = cov_deriv_sym2(bg, reference_chr, &metric.g);
    let mut out = vec![ZERO_CON3; metric.len()];
    for s in 0..metric.len() {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc += 0.5
                            * metric.inv[s][i][l]
                            * (dg[s][j][k][l] + dg[s][k][l][j] - dg[s][l][j][k]);
                    }
                    out[s][i][j][k] = acc;
                }
            }
        }
    }
    out
}

/// Christoffel symbols of `g` as `Γ̂[γ] + Υ(g, γ)`.
pub fn christoffel(bg: &BackgroundGeometry, metric: &SpatialMetric) -> Vec<Con3> {
    let gamma_chr = vec![bg.christoffel_gamma; metric.len()];
    let mut ups = difference_tensor(bg, metric, &gamma_chr);
    for s in 0..metric.len() {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    ups[s][i][j][k] += bg.christoffel_gamma[i][j][k];
                }
            }
        }
    }
    ups
}

/// Riemann tensor of a connection field (frame formula with structure
/// constants; stencil derivatives on the torus).
pub fn riemann_of_connection(bg: &BackgroundGeometry, chr: &[Con3]) -> Vec<Riem3> {
    let dchr = bg.deriv_con3(chr);
    let mut out = vec![ZERO_RIEM3; chr.len()];
    for s in 0..chr.len() {
        for d in 0..3 {
            for c in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let mut acc = dchr[s][a][d][b][c] - dchr[s][b][d][a][c];
                        for e in 0..3 {
                            acc += chr[s][d][a][e] * chr[s][e][b][c]
                                - chr[s][d][b][e] * chr[s][e][a][c]
                                - bg.structure[e][a][b] * chr[s][d][e][c];
                        }
                        out[s][d][c][a][b] = acc;
                    }
                }
            }
        }
    }
    out
}

pub fn ricci_of_riemann(riem: &[Riem3]) -> Vec<Mat3> {
    riem.iter()
        .map(crate::background::ricci_from_riemann)
        .collect()
}

pub fn scalar_curvature(metric: &SpatialMetric, ricci: &[Mat3]) -> Vec<f64> {
    (0..metric.len())
        .map(|s| trace_with(&metric.inv[s], &ricci[s]))
        .collect()
}

/// CMCSH gauge functional `V^l = g^{ij} (Γ[g]^l_{ij} - Γ̂[γ]^l_{ij})` per sample.
pub fn cmcsh_gauge_vector(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
) -> Vec<Vec3> {
    let mut out = vec![ZERO_VEC3; metric.len()];
    for s in 0..metric.len() {
        for l in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += metric.inv[s][i][j] * (chr[s][l][i][j] - bg.christoffel_gamma[l][i][j]);
                }
            }
            out[s][l] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Einstein operator and the Lichnerowicz pair.
// ---------------------------------------------------------------------------

/// `Δ_E u = -Δ̂_γ u - 2 R̊_γ u` on symmetric 2-tensors.
pub fn einstein_operator(bg: &BackgroundGeometry, u: &[Mat3]) -> Vec<Mat3> {
    let gamma_chr = vec![bg.christoffel_gamma; u.len()];
    let du = cov_deriv_sym2(bg, &gamma_chr, u);
    let ddu = cov_deriv_rank3(bg, &gamma_chr, &du);
    let mut out = vec![ZERO_MAT3; u.len()];
    for s in 0..u.len() {
        let mut lap = ZERO_MAT3;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += bg.gamma_inv[a][b] * ddu[s][a][b][i][j];
                    }
                }
                lap[i][j] = acc;
            }
        }
        let ring = ring_curvature(&bg.riemann_gamma, &bg.gamma, &bg.gamma_inv, &u[s]);
        for i in 0..3 {
            for j in 0..3 {
                out[s][i][j] = -lap[i][j] - 2.0 * ring[i][j];
            }
        }
    }
    out
}

/// Weighted Laplacian
/// `Δ_{g,γ} u_{ij} = |g|^{-1/2} D̂_k [ g^{kl} |g|^{1/2} D̂_l u_{ij} ]`.
pub fn weighted_laplacian(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    u: &[Mat3],
) -> Vec<Mat3> {
    let gamma_chr = vec![bg.christoffel_gamma; u.len()];
    let du = cov_deriv_sym2(bg, &gamma_chr, u);
    // P^k_{ij} = g^{kl} sqrt|g| D̂_l u_{ij}, stored as Con3 [k][i][j]
    let mut p = vec![ZERO_CON3; u.len()];
    for s in 0..u.len() {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc += metric.inv[s][k][l] * metric.sqrt_det[s] * du[s][l][i][j];
                    }
                    p[s][k][i][j] = acc;
                }
            }
        }
    }
    // D̂_k P^k_{ij}: derivative plus connection terms for one upper and two
    // lower slots.
    let dp = bg.deriv_con3(&p);
    let mut out = vec![ZERO_MAT3; u.len()];
    for s in 0..u.len() {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += dp[s][k][k][i][j];
                    for c in 0..3 {
                        acc += bg.christoffel_gamma[k][k][c] * p[s][c][i][j]
                            - bg.christoffel_gamma[c][k][i] * p[s][k][c][j]
                            - bg.christoffel_gamma[c][k][j] * p[s][k][i][c];
                    }
                }
                out[s][i][j] = acc / metric.sqrt_det[s];
            }
        }
    }
    out
}

/// `𝓛_{g,γ} u = -Δ_{g,γ} u - 2 R̊_γ u`.
pub fn lichnerowicz_operator(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    u: &[Mat3],
) -> Vec<Mat3> {
    let lap = weighted_laplacian(bg, metric, u);
    (0..u.len())
        .map(|s| {
            let ring = ring_curvature(&bg.riemann_gamma, &bg.gamma, &bg.gamma_inv, &u[s]);
            let mut m = ZERO_MAT3;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = -lap[s][i][j] - 2.0 * ring[i][j];
                }
            }
            m
        })
        .collect()
}

/// The gauge identity residual
/// `𝕁 = Ric[g] + (2/9) g - ½ 𝓛_{g,γ}(g - γ)`, returned with `𝓛_{g,γ} u`.
pub fn lichnerowicz_pair(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    u: &[Mat3],
) -> (Vec<Mat3>, Vec<Mat3>) {
    let lu = lichnerowicz_operator(bg, metric, u);
    let dev: Vec<Mat3> = metric.g.iter().map(|g| mat_sub(g, &bg.gamma)).collect();
    let ldev = lichnerowicz_operator(bg, metric, &dev);
    let chr = christoffel(bg, metric);
    let riem = riemann_of_connection(bg, &chr);
    let ricci = ricci_of_riemann(&riem);
    let mut jj = vec![ZERO_MAT3; metric.len()];
    for s in 0..metric.len() {
        for i in 0..3 {
            for j in 0..3 {
                jj[s][i][j] = ricci[s][i][j] + 2.0 / 9.0 * metric.g[s][i][j]
                    - 0.5 * ldev[s][i][j];
            }
        }
    }
    (lu, jj)
}

// ---------------------------------------------------------------------------
// Spacetime connection of the conformal metric h.
// ---------------------------------------------------------------------------

/// The six Christoffel families of the conformal spacetime metric in the
/// `(e_0, e_a)` frame, plus the second fundamental form `Π`.
#[derive(Clone, Debug)]
pub struct SpacetimeConnection {
    /// `Γ[h]^0̂_{0̂0̂}` — identically zero, stored for completeness.
    pub c_000: Vec<f64>,
    /// `Γ[h]^i_{0̂0̂} = g^{ij} N^{-1} ∂_j N`.
    pub c_i00: Vec<Vec3>,
    /// `Γ[h]^0̂_{i0̂}` — identically zero.
    pub c_0i0: Vec<Vec3>,
    /// `Γ[h]^i_{j0̂} = -g^{ik} Π_{kj}`.
    pub c_ij0: Vec<Mat3>,
    /// `Γ[h]^0̂_{ij} = -Π_{ij}`.
    pub c_0ij: Vec<Mat3>,
    /// `Γ[h]^i_{jk} = Γ[g]^i_{jk}`.
    pub c_ijk: Vec<Con3>,
    /// `Π = -Σ + N^{-1} (1 - N/3) g`.
    pub pi: Vec<Mat3>,
}

pub fn second_fundamental_form(
    metric: &SpatialMetric,
    sigma: &TraceFreeSym2,
    lapse: &[f64],
) -> Vec<Mat3> {
    (0..metric.len())
        .map(|s| {
            let n = lapse[s];
            let mut m = mat_scale(&metric.g[s], (1.0 - n / 3.0) / n);
            mat_axpy(&mut m, -1.0, &sigma.sigma[s]);
            m
        })
        .collect()
}

pub fn spacetime_connection(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    sigma: &TraceFreeSym2,
    lapse_shift: &LapseShift,
) -> Result<SpacetimeConnection> {
    for (s, &n) in lapse_shift.lapse.iter().enumerate() {
        if n <= 0.0 {
            return Err(EvmError::LapsePositivityViolation(format!(
                "N = {n} at sample {s}"
            )));
        }
    }
    let count = metric.len();
    let pi = second_fundamental_form(metric, sigma, &lapse_shift.lapse);
    let chr = christoffel(bg, metric);
    let dn = bg.deriv_scalar(&lapse_shift.lapse);
    let mut c_i00 = vec![ZERO_VEC3; count];
    let mut c_ij0 = vec![ZERO_MAT3; count];
    let mut c_0ij = vec![ZERO_MAT3; count];
    for s in 0..count {
        let n = lapse_shift.lapse[s];
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += metric.inv[s][i][j] * dn[s][j] / n;
            }
            c_i00[s][i] = acc;
            for j in 0..3 {
                let mut m = 0.0;
                for k in 0..3 {
                    m -= metric.inv[s][i][k] * pi[s][k][j];
                }
                c_ij0[s][i][j] = m;
                c_0ij[s][i][j] = -pi[s][i][j];
            }
        }
    }
    Ok(SpacetimeConnection {
        c_000: vec![0.0; count],
        c_i00,
        c_0i0: vec![ZERO_VEC3; count],
        c_ij0,
        c_0ij,
        c_ijk: chr,
        pi,
    })
}

// ---------------------------------------------------------------------------
// Lie derivatives in the frame.
// ---------------------------------------------------------------------------

/// `(ℒ_X w)_i` for a one-form (covariant form, frame-valid):
/// `X^a D_a w_i + w_a D_i X^a`.
pub fn lie_oneform(
    bg: &BackgroundGeometry,
    chr: &[Con3],
    x: &[Vec3],
    w: &[Vec3],
) -> Vec<Vec3> {
    let dw = cov_deriv_oneform(bg, chr, w);
    let dx = cov_deriv_vector(bg, chr, x);
    let mut out = vec![ZERO_VEC3; w.len()];
    for s in 0..w.len() {
        for i in 0..3 {
            let mut acc = 0.0;
            for a in 0..3 {
                acc += x[s][a] * dw[s][a][i] + w[s][a] * dx[s][i][a];
            }
            out[s][i] = acc;
        }
    }
    out
}

/// `(ℒ_X u)_{ij}` for a symmetric 2-tensor:
/// `X^a D_a u_{ij} + u_{aj} D_i X^a + u_{ia} D_j X^a`.
pub fn lie_sym2(bg: &BackgroundGeometry, chr: &[Con3], x: &[Vec3], u: &[Mat3]) -> Vec<Mat3> {
    let du = cov_deriv_sym2(bg, chr, u);
    let dx = cov_deriv_vector(bg, chr, x);
    let mut out = vec![ZERO_MAT3; u.len()];
    for s in 0..u.len() {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    acc += x[s][a] * du[s][a][i][j]
                        + u[s][a][j] * dx[s][i][a]
                        + u[s][i][a] * dx[s][j][a];
                }
                out[s][i][j] = acc;
            }
        }
    }
    out
}

/// `(ℒ_X m)^{ij}` for a (2,0) tensor:
/// `X^a D_a m^{ij} - m^{aj} D_a X^i - m^{ia} D_a X^j`.
pub fn lie_up2(bg: &BackgroundGeometry, chr: &[Con3], x: &[Vec3], m: &[Mat3]) -> Vec<Mat3> {
    // covariant derivative of a (2,0) tensor
    let dm_raw = bg.deriv_mat3(m);
    let dx = cov_deriv_vector(bg, chr, x);
    let mut out = vec![ZERO_MAT3; m.len()];
    for s in 0..m.len() {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    let mut dm = dm_raw[s][a][i][j];
                    for c in 0..3 {
                        dm += chr[s][i][a][c] * m[s][c][j] + chr[s][j][a][c] * m[s][i][c];
                    }
                    acc += x[s][a] * dm - m[s][a][j] * dx[s][a][i] - m[s][i][a] * dx[s][a][j];
                }
                out[s][i][j] = acc;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Invariant-sector Einstein operator (homogeneous backend).
// ---------------------------------------------------------------------------

/// Canonical basis of symmetric 2-tensors used for the invariant sector.
pub fn sym2_basis() -> [Mat3; 6] {
    let mut b = [ZERO_MAT3; 6];
    b[0][0][0] = 1.0;
    b[1][1][1] = 1.0;
    b[2][2][2] = 1.0;
    b[3][0][1] = 1.0;
    b[3][1][0] = 1.0;
    b[4][0][2] = 1.0;
    b[4][2][0] = 1.0;
    b[5][1][2] = 1.0;
    b[5][2][1] = 1.0;
    b
}

/// Spectrum of the Einstein operator restricted to invariant symmetric
/// 2-tensors, as (eigenvalues ascending, eigentensors), self-adjoint with
/// respect to the `γ` inner product.
pub fn invariant_einstein_spectrum(bg: &BackgroundGeometry) -> (Vec<f64>, Vec<Mat3>) {
    let basis = sym2_basis();
    // Gram matrix of the γ inner product on the canonical basis.
    let mut gram = vec![vec![0.0; 6]; 6];
    for a in 0..6 {
        for b in 0..6 {
            gram[a][b] = inner_sym2(&bg.gamma_inv, &basis[a], &basis[b]);
        }
    }
    // Orthonormalize (Gram-Schmidt).
    let mut ortho: Vec<Mat3> = Vec::with_capacity(6);
    for a in 0..6 {
        let mut v = basis[a];
        for o in &ortho {
            let c = inner_sym2(&bg.gamma_inv, &v, o);
            let mut vv = v;
            mat_axpy(&mut vv, -c, o);
            v = vv;
        }
        let norm = inner_sym2(&bg.gamma_inv, &v, &v).sqrt();
        ortho.push(mat_scale(&v, 1.0 / norm));
    }
    let _ = gram;
    // Matrix of Δ_E in the orthonormal basis.
    let mut m = vec![vec![0.0; 6]; 6];
    for (a, oa) in ortho.iter().enumerate() {
        let image = einstein_operator(bg, &[*oa]);
        for (b, ob) in ortho.iter().enumerate() {
            m[a][b] = inner_sym2(&bg.gamma_inv, &image[0], ob);
        }
    }
    // Symmetrize against round-off and diagonalize.
    for a in 0..6 {
        for b in a + 1..6 {
            let avg = 0.5 * (m[a][b] + m[b][a]);
            m[a][b] = avg;
            m[b][a] = avg;
        }
    }
    let (vals, vecs) = sym_eigen_n(&m);
    let tensors: Vec<Mat3> = vecs
        .iter()
        .map(|v| {
            let mut t = ZERO_MAT3;
            for (k, o) in ortho.iter().enumerate() {
                mat_axpy(&mut t, v[k], o);
            }
            t
        })
        .collect();
    (vals, tensors)
}
