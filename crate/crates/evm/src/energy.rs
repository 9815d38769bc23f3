//! The energy hierarchy of the stability analysis: geometric energy with
//! its correction constant, Sasaki-weighted distribution energy, potential
//! and Faraday norms, density energy, momentum-support functional, the
//! exponentially weighted total, the smallness functional, and decay-rate
//! fitting.
//!
//! Derivative orders are truncated to 2 on every functional (a desk-scale
//! reduction applied consistently so that ratios between monitors remain
//! meaningful).

use crate::algebra::*;
use crate::background::BackgroundGeometry;
use crate::error::{EvmError, Result};
use crate::geometry::{
    cov_deriv_oneform, cov_deriv_rank3, cov_deriv_sym2, invariant_einstein_spectrum,
    lichnerowicz_operator, SpatialMetric, TraceFreeSym2,
};
use crate::kinetic::{sasaki_coefficients, DistributionGrid, KineticContext};
use crate::maxwell::{hodge_laplacian_oneform, FaradayField, PotentialState};

// ---------------------------------------------------------------------------
// Weights.
// ---------------------------------------------------------------------------

/// The exponents and constants tying the individual energies together.
#[derive(Clone, Copy, Debug)]
pub struct EnergyWeights {
    pub delta_e: f64,
    pub delta_cal: f64,
    pub delta_bb: f64,
    pub delta_alpha: f64,
    pub alpha: f64,
    pub c_e: f64,
    pub lambda0: f64,
}

impl EnergyWeights {
    /// Build weights from `δ_E`, `δ_ℰ` and the lowest positive eigenvalue of
    /// the Einstein operator. `δ_α` follows the eigenvalue dichotomy with
    /// margin `eps`; `δ_𝔼 = δ_E + 2 δ_α`.
    pub fn new(delta_e: f64, delta_cal: f64, lambda0: f64, eps: f64) -> Result<Self> {
        if 9.0 * lambda0 < 1.0 - 1e-12 {
            return Err(EvmError::InvalidWeights(format!(
                "9 λ0 = {} < 1",
                9.0 * lambda0
            )));
        }
        let delta_alpha = if lambda0 > 1.0 / 9.0 + 1e-12 {
            0.0
        } else {
            (1.0 - 9.0 * (lambda0 - eps)).max(0.0).sqrt()
        };
        let delta_bb = delta_e + 2.0 * delta_alpha;
        let w = EnergyWeights {
            delta_e,
            delta_cal,
            delta_bb,
            delta_alpha,
            alpha: 1.0 - delta_alpha,
            c_e: 1.0 - delta_alpha * delta_alpha,
            lambda0,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn for_background(bg: &BackgroundGeometry, delta_e: f64, delta_cal: f64) -> Result<Self> {
        let lambda0 = lowest_positive_einstein_eigenvalue(bg);
        EnergyWeights::new(delta_e, delta_cal, lambda0, 1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_e <= 0.0 || self.delta_cal <= 0.0 || self.delta_bb <= 0.0 {
            return Err(EvmError::InvalidWeights("weights must be positive".into()));
        }
        if self.delta_e >= self.delta_cal {
            return Err(EvmError::InvalidWeights(format!(
                "δ_E = {} must be < δ_ℰ = {}",
                self.delta_e, self.delta_cal
            )));
        }
        if (self.delta_e - (self.delta_bb - 2.0 * self.delta_alpha)).abs() > 1e-14 {
            return Err(EvmError::InvalidWeights(
                "δ_E = δ_𝔼 - 2 δ_α violated".into(),
            ));
        }
        let implied_lo = 2.0 * self.delta_alpha;
        let implied_hi = 2.0 * self.delta_alpha + self.delta_cal;
        if !(self.delta_bb > implied_lo - 1e-14 && self.delta_bb < implied_hi) {
            return Err(EvmError::InvalidWeights(format!(
                "2δ_α < δ_𝔼 < 2δ_α + δ_ℰ violated: {} vs ({}, {})",
                self.delta_bb, implied_lo, implied_hi
            )));
        }
        if self.delta_e + self.delta_cal + self.delta_bb >= 0.1 {
            return Err(EvmError::InvalidWeights(
                "δ_E + δ_ℰ + δ_𝔼 must stay well below 1 (< 0.1)".into(),
            ));
        }
        Ok(())
    }
}

/// Lowest positive eigenvalue of the Einstein operator on the invariant
/// sector (homogeneous backend) or the first harmonic band (torus).
pub fn lowest_positive_einstein_eigenvalue(bg: &BackgroundGeometry) -> f64 {
    if bg.is_homogeneous() {
        let (vals, _) = invariant_einstein_spectrum(bg);
        let tol = 1e-9;
        for v in vals {
            if v > tol {
                return v;
            }
        }
        0.0
    } else {
        // flat torus: -Δ̂ has spectrum (2πk)², curvature term vanishes
        std::f64::consts::TAU * std::f64::consts::TAU
    }
}

/// Kernel of the Einstein operator on the invariant sector, used to build
/// decaying initial data.
pub fn einstein_kernel_basis(bg: &BackgroundGeometry) -> Vec<Mat3> {
    if !bg.is_homogeneous() {
        return Vec::new();
    }
    let (vals, tensors) = invariant_einstein_spectrum(bg);
    vals.iter()
        .zip(tensors)
        .filter(|(v, _)| v.abs() <= 1e-9)
        .map(|(_, t)| t)
        .collect()
}

/// Positive-eigenvalue invariant modes (the decaying directions).
pub fn invariant_positive_basis(bg: &BackgroundGeometry) -> Vec<(f64, Mat3)> {
    if !bg.is_homogeneous() {
        return Vec::new();
    }
    let (vals, tensors) = invariant_einstein_spectrum(bg);
    vals.iter()
        .zip(tensors)
        .filter(|(v, _)| **v > 1e-9)
        .map(|(v, t)| (*v, t))
        .collect()
}

// ---------------------------------------------------------------------------
// Background Sobolev norms (with respect to γ).
// ---------------------------------------------------------------------------

pub fn sobolev_norm_scalar(bg: &BackgroundGeometry, u: &[f64], k: usize) -> f64 {
    let count = u.len();
    let weight: Vec<f64> = (0..count)
        .map(|s| bg.sqrt_det_gamma * bg.samples.weights[s])
        .collect();
    let mut total = 0.0;
    for s in 0..count {
        total += u[s] * u[s] * weight[s];
    }
    if k >= 1 {
        let gamma_chr = vec![bg.christoffel_gamma; count];
        let du = bg.deriv_scalar(u);
        for s in 0..count {
            total += inner(&mat_inv_gamma(bg), &du[s], &du[s]) * weight[s];
        }
        if k >= 2 {
            let ddu = cov_deriv_oneform(bg, &gamma_chr, &du);
            for s in 0..count {
                total += inner_sym2(&bg.gamma_inv, &ddu[s], &ddu[s]) * weight[s];
            }
        }
    }
    total.sqrt()
}

fn mat_inv_gamma(bg: &BackgroundGeometry) -> Mat3 {
    bg.gamma_inv
}

pub fn sobolev_norm_vec(bg: &BackgroundGeometry, u: &[Vec3], k: usize) -> f64 {
    let count = u.len();
    let weight: Vec<f64> = (0..count)
        .map(|s| bg.sqrt_det_gamma * bg.samples.weights[s])
        .collect();
    let gamma_chr = vec![bg.christoffel_gamma; count];
    let mut total = 0.0;
    for s in 0..count {
        total += inner(&bg.gamma, u[s].as_ref().try_into().unwrap(), &u[s]) * weight[s];
    }
    if k >= 1 {
        // lower the index and differentiate as a one-form
        let low: Vec<Vec3> = u.iter().map(|v| mat_vec(&bg.gamma, v)).collect();
        let dlow = cov_deriv_oneform(bg, &gamma_chr, &low);
        for s in 0..count {
            total += inner_sym2(&bg.gamma_inv, &dlow[s], &dlow[s]) * weight[s];
        }
        if k >= 2 {
            let ddlow = cov_deriv_sym2(bg, &gamma_chr, &dlow);
            for s in 0..count {
                total += rank3_norm2(&bg.gamma_inv, &ddlow[s]) * weight[s];
            }
        }
    }
    total.sqrt()
}

pub fn sobolev_norm_sym2(bg: &BackgroundGeometry, u: &[Mat3], k: usize) -> f64 {
    let count = u.len();
    let weight: Vec<f64> = (0..count)
        .map(|s| bg.sqrt_det_gamma * bg.samples.weights[s])
        .collect();
    let gamma_chr = vec![bg.christoffel_gamma; count];
    let mut total = 0.0;
    for s in 0..count {
        total += inner_sym2(&bg.gamma_inv, &u[s], &u[s]) * weight[s];
    }
    if k >= 1 {
        let du = cov_deriv_sym2(bg, &gamma_chr, u);
        for s in 0..count {
            total += rank3_norm2(&bg.gamma_inv, &du[s]) * weight[s];
        }
        if k >= 2 {
            let ddu = cov_deriv_rank3(bg, &gamma_chr, &du);
            for s in 0..count {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        let mut block_a = ZERO_CON3;
                        let mut block_b = ZERO_CON3;
                        for c in 0..3 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    block_a[c][i][j] = ddu[s][a][c][i][j];
                                    block_b[c][i][j] = ddu[s][b][c][i][j];
                                }
                            }
                        }
                        acc += bg.gamma_inv[a][b] * rank3_inner(&bg.gamma_inv, &block_a, &block_b);
                    }
                }
                total += acc * weight[s];
            }
        }
    }
    total.sqrt()
}

fn rank3_norm2(minv: &Mat3, w: &Con3) -> f64 {
    rank3_inner(minv, w, w)
}

fn rank3_inner(minv: &Mat3, w: &Con3, v: &Con3) -> f64 {
    let mut acc = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            acc += minv[a][b] * minv[i][j] * minv[k][l] * w[a][i][k] * v[b][j][l];
                        }
                    }
                }
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Geometric energy E_k.
// ---------------------------------------------------------------------------

/// `E_k = Σ_{1<=m<=k} [ ℰ_(m) + c_E Γ_(m) ]` with
/// `ℰ_(m) = 18 ∫ ⟨Σ, 𝓛^{m-1} Σ⟩ dμ_g + (9/2) ∫ ⟨g-γ, 𝓛^m (g-γ)⟩ dμ_g`,
/// `Γ_(m) = 6 ∫ ⟨Σ, 𝓛^{m-1} (g-γ)⟩ dμ_g`, inner products via `γ`.
pub fn geometric_energy(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    sigma: &TraceFreeSym2,
    weights: &EnergyWeights,
    k: usize,
) -> f64 {
    assert!(k >= 1 && k <= 2, "geometric energy order k <= 2");
    let count = metric.len();
    let measure: Vec<f64> = (0..count)
        .map(|s| metric.sqrt_det[s] * bg.samples.weights[s])
        .collect();
    // On the frame surrogate the Einstein operator has a kernel of
    // invariant moduli with no compact-slice counterpart; the energy is
    // coercive only on its orthogonal complement, so the perturbation is
    // measured there. On a compact slice the kernel is empty and this is
    // the identity.
    let kernel = einstein_kernel_basis(bg);
    let project = |u: &Mat3| -> Mat3 {
        let mut out = *u;
        for kv in &kernel {
            let norm2 = inner_sym2(&bg.gamma_inv, kv, kv);
            if norm2 < 1e-28 {
                continue;
            }
            let c = inner_sym2(&bg.gamma_inv, &out, kv) / norm2;
            mat_axpy(&mut out, -c, kv);
        }
        out
    };
    let dev: Vec<Mat3> = metric
        .g
        .iter()
        .map(|g| project(&mat_sub(g, &bg.gamma)))
        .collect();
    let sig_p: Vec<Mat3> = sigma.sigma.iter().map(&project).collect();
    // powers of 𝓛 on Σ and on (g - γ)
    let mut l_sigma = vec![sig_p.clone()]; // 𝓛^0 Σ
    let mut l_dev = vec![dev.clone()]; // 𝓛^0 (g-γ)
    for m in 0..k {
        l_sigma.push(lichnerowicz_operator(bg, metric, &l_sigma[m]));
        l_dev.push(lichnerowicz_operator(bg, metric, &l_dev[m]));
    }
    let pair = |a: &[Mat3], b: &[Mat3]| -> f64 {
        let mut acc = 0.0;
        for s in 0..count {
            acc += inner_sym2(&bg.gamma_inv, &a[s], &b[s]) * measure[s];
        }
        acc
    };
    let mut total = 0.0;
    for m in 1..=k {
        let cal = 18.0 * pair(&sig_p, &l_sigma[m - 1]) + 4.5 * pair(&dev, &l_dev[m]);
        let cross = 6.0 * pair(&sig_p, &l_dev[m - 1]);
        total += cal + weights.c_e * cross;
    }
    total
}

// ---------------------------------------------------------------------------
// Sasaki-weighted distribution energy.
// ---------------------------------------------------------------------------

/// `ℰ_{ℓ,μ}(f)` with `ℓ <= 2`, evaluated with lattice vertical derivatives
/// and the structure-constant horizontal algebra (invariant spatial
/// dependence; the homogeneous backend).
pub fn vlasov_energy(
    contexts: &[KineticContext],
    metric: &SpatialMetric,
    bg: &BackgroundGeometry,
    dist: &DistributionGrid,
    ell: usize,
    mu: f64,
) -> f64 {
    assert!(ell <= 2, "distribution energy order ℓ <= 2");
    let count = metric.len();
    let lattice = &dist.lattice;
    let len = lattice.len();
    let cell = lattice.cell_volume();
    let mut total = 0.0;
    for s in 0..count {
        let ctx = &contexts[s];
        let f = &dist.values[s];
        // measure |g| dx dp on TM
        let measure = metric.det[s] * bg.samples.weights[s] * cell;
        let ginv = &metric.inv[s];
        // first derivatives θ_a f: horizontal A_a f = -p^i Γ^k_{ai} B_k f,
        // vertical B_a f
        let mut bf = vec![ZERO_VEC3; len];
        for l in 0..len {
            for a in 0..3 {
                bf[l][a] = lattice.db(f, l, a);
            }
        }
        let mut af = vec![ZERO_VEC3; len];
        for l in 0..len {
            let p = lattice.point(l);
            for a in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for kk in 0..3 {
                        acc -= p[i] * ctx.chr[kk][a][i] * bf[l][kk];
                    }
                }
                af[l][a] = acc;
            }
        }
        // second raw derivatives θ_a θ_b f where needed
        let need_second = ell >= 2;
        let mut bbf = vec![ZERO_MAT3; if need_second { len } else { 0 }];
        let mut baf = vec![ZERO_MAT3; if need_second { len } else { 0 }];
        let mut abf = vec![ZERO_MAT3; if need_second { len } else { 0 }];
        let mut aaf = vec![ZERO_MAT3; if need_second { len } else { 0 }];
        if need_second {
            for l in 0..len {
                for a in 0..3 {
                    for b in 0..3 {
                        bbf[l][a][b] = lattice.d2b(f, l, a, b);
                    }
                }
            }
            // B_a (A_b f): differentiate the horizontal derivative field
            let af_comp: Vec<Vec<f64>> = (0..3)
                .map(|b| af.iter().map(|v| v[b]).collect())
                .collect();
            for l in 0..len {
                for a in 0..3 {
                    for b in 0..3 {
                        baf[l][a][b] = lattice.db(&af_comp[b], l, a);
                    }
                }
            }
            // A_a (B_b f) = -p^i Γ^k_{ai} B_k B_b f
            for l in 0..len {
                let p = lattice.point(l);
                for a in 0..3 {
                    for b in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            for kk in 0..3 {
                                acc -= p[i] * ctx.chr[kk][a][i] * bbf[l][kk][b];
                            }
                        }
                        abf[l][a][b] = acc;
                    }
                }
            }
            // A_a (A_b f) = -p^i Γ^k_{ai} B_k (A_b f)
            for l in 0..len {
                let p = lattice.point(l);
                for a in 0..3 {
                    for b in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            for kk in 0..3 {
                                acc -= p[i] * ctx.chr[kk][a][i] * baf[l][kk][b];
                            }
                        }
                        aaf[l][a][b] = acc;
                    }
                }
            }
        }
        for l in 0..len {
            if f[l] == 0.0 && !nonzero_near(f, lattice, l) {
                continue;
            }
            let p = lattice.point(l);
            let p2 = inner(&metric.g[s], &p, &p);
            let pw = 1.0 + p2;
            // k = 0 term
            let w0 = pw.powf(mu + 2.0 * ell as f64);
            let mut acc = w0 * f[l] * f[l];
            if ell >= 1 {
                // |θ f|² with horizontal g^{ab}, vertical ⟨p⟩² g^{ab}
                let mut d1 = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        d1 += ginv[a][b] * (af[l][a] * af[l][b] + pw * bf[l][a] * bf[l][b]);
                    }
                }
                let w1 = pw.powf(mu + 2.0 * (ell as f64 - 1.0));
                acc += w1 * d1;
            }
            if ell >= 2 {
                // 𝐃²_{AB} f = θ_A θ_B f - Γ^C_{AB} θ_C f over the 6-frame
                let gam = sasaki_coefficients(ctx, &p);
                let theta1 = |c: usize| -> f64 {
                    if c < 3 {
                        af[l][c]
                    } else {
                        bf[l][c - 3]
                    }
                };
                let raw2 = |a: usize, b: usize| -> f64 {
                    match (a < 3, b < 3) {
                        (true, true) => aaf[l][a][b],
                        (true, false) => abf[l][a][b - 3],
                        (false, true) => baf[l][a - 3][b],
                        (false, false) => bbf[l][a - 3][b - 3],
                    }
                };
                let mut d2 = [[0.0f64; 6]; 6];
                for a in 0..6 {
                    for b in 0..6 {
                        let mut v = raw2(a, b);
                        for c in 0..6 {
                            v -= gam[c][a][b] * theta1(c);
                        }
                        d2[a][b] = v;
                    }
                }
                // contraction with the weighted inverse metric per slot
                let slot = |a: usize, b: usize| -> f64 {
                    if a < 3 && b < 3 {
                        ginv[a][b]
                    } else if a >= 3 && b >= 3 {
                        pw * ginv[a - 3][b - 3]
                    } else {
                        0.0
                    }
                };
                let mut norm2 = 0.0;
                for a in 0..6 {
                    for b in 0..6 {
                        for c in 0..6 {
                            for d in 0..6 {
                                let w = slot(a, b) * slot(c, d);
                                if w != 0.0 {
                                    norm2 += w * d2[a][c] * d2[b][d];
                                }
                            }
                        }
                    }
                }
                let w2 = pw.powf(mu);
                acc += w2 * norm2;
            }
            total += acc * measure;
        }
    }
    total.max(0.0).sqrt()
}

fn nonzero_near(f: &[f64], lattice: &crate::kinetic::MomentumLattice, l: usize) -> bool {
    let (i, j, k) = lattice.coords(l);
    let n = lattice.n;
    for di in -2isize..=2 {
        for dj in -2isize..=2 {
            for dk in -2isize..=2 {
                let ii = i as isize + di;
                let jj = j as isize + dj;
                let kk = k as isize + dk;
                if ii < 0 || jj < 0 || kk < 0 {
                    continue;
                }
                let (ii, jj, kk) = (ii as usize, jj as usize, kk as usize);
                if ii >= n || jj >= n || kk >= n {
                    continue;
                }
                if f[lattice.index(ii, jj, kk)] != 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Maxwell energies.
// ---------------------------------------------------------------------------

/// `𝔼_k = Σ_{ℓ=0}^{k-1} ∫ ⟨Δ_H^ℓ ω̇, ω̇⟩ + ⟨Δ_H^{ℓ+1} ω, ω⟩ dμ_g`.
pub fn maxwell_energy(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
    ricci: &[Mat3],
    pot: &PotentialState,
    k: usize,
) -> f64 {
    assert!(k >= 1 && k <= 2);
    let count = metric.len();
    let measure: Vec<f64> = (0..count)
        .map(|s| metric.sqrt_det[s] * bg.samples.weights[s])
        .collect();
    let pair = |a: &[Vec3], b: &[Vec3]| -> f64 {
        let mut acc = 0.0;
        for s in 0..count {
            for i in 0..3 {
                for j in 0..3 {
                    acc += metric.inv[s][i][j] * a[s][i] * b[s][j] * measure[s];
                }
            }
        }
        acc
    };
    let mut lap_dot = vec![pot.omega_dot.clone()];
    let mut lap_om = vec![pot.omega.clone()];
    for m in 0..k {
        lap_dot.push(hodge_laplacian_oneform(bg, metric, chr, ricci, &lap_dot[m]));
        lap_om.push(hodge_laplacian_oneform(bg, metric, chr, ricci, &lap_om[m]));
    }
    let mut total = 0.0;
    for l in 0..k {
        total += pair(&lap_dot[l], &pot.omega_dot) + pair(&lap_om[l + 1], &pot.omega);
    }
    total
}

/// `‖F‖_k` with the τ² weight on the `F_{0i}` block.
pub fn faraday_norm(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
    tau: f64,
    faraday: &FaradayField,
    k: usize,
) -> f64 {
    assert!(k <= 2);
    let count = metric.len();
    let measure: Vec<f64> = (0..count)
        .map(|s| metric.sqrt_det[s] * bg.samples.weights[s])
        .collect();
    let mut total = 0.0;
    // electric block: one-form F_{0i}
    {
        let d1 = cov_deriv_oneform(bg, chr, &faraday.f_0i);
        let d2 = cov_deriv_sym2(bg, chr, &d1);
        for s in 0..count {
            let ginv = &metric.inv[s];
            let mut acc = inner(&raise(ginv), &faraday.f_0i[s], &faraday.f_0i[s]);
            if k >= 1 {
                acc += inner_sym2(ginv, &d1[s], &d1[s]);
            }
            if k >= 2 {
                acc += rank3_norm2(ginv, &d2[s]);
            }
            total += tau * tau * acc * measure[s];
        }
    }
    // magnetic block: (0,2) tensor F_{ij}
    {
        let d1 = cov_deriv_sym2(bg, chr, &faraday.f_ij);
        let d2 = cov_deriv_rank3(bg, chr, &d1);
        for s in 0..count {
            let ginv = &metric.inv[s];
            let mut acc = inner_sym2(ginv, &faraday.f_ij[s], &faraday.f_ij[s]);
            if k >= 1 {
                acc += rank3_norm2(ginv, &d1[s]);
            }
            if k >= 2 {
                let mut a2 = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        let mut block_a = ZERO_CON3;
                        let mut block_b = ZERO_CON3;
                        for c in 0..3 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    block_a[c][i][j] = d2[s][a][c][i][j];
                                    block_b[c][i][j] = d2[s][b][c][i][j];
                                }
                            }
                        }
                        a2 += ginv[a][b] * rank3_inner(ginv, &block_a, &block_b);
                    }
                }
                acc += a2;
            }
            total += acc * measure[s];
        }
    }
    total.max(0.0).sqrt()
}

fn raise(minv: &Mat3) -> Mat3 {
    *minv
}

// ---------------------------------------------------------------------------
// Density energy.
// ---------------------------------------------------------------------------

/// `ϱ_k = sqrt(Σ_{ℓ<=k} ∫ |D^ℓ ρ|² dμ_g)` with the dynamical connection.
pub fn density_energy(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    chr: &[Con3],
    rho: &[f64],
    k: usize,
) -> f64 {
    assert!(k <= 2);
    let count = metric.len();
    let measure: Vec<f64> = (0..count)
        .map(|s| metric.sqrt_det[s] * bg.samples.weights[s])
        .collect();
    let mut total = 0.0;
    for s in 0..count {
        total += rho[s] * rho[s] * measure[s];
    }
    if k >= 1 {
        let d1 = bg.deriv_scalar(rho);
        for s in 0..count {
            total += inner(&metric.inv[s], &d1[s], &d1[s]) * measure[s];
        }
        if k >= 2 {
            let d2 = cov_deriv_oneform(bg, chr, &d1);
            for s in 0..count {
                total += inner_sym2(&metric.inv[s], &d2[s], &d2[s]) * measure[s];
            }
        }
    }
    total.max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Total energy and smallness.
// ---------------------------------------------------------------------------

/// `𝐄_tot = e^{(1+δ_E)T} E + e^{-(1-δ_ℰ)T} ℰ² + e^{-(1-δ_𝔼)T} 𝔼`.
pub fn total_energy(
    e_geom: f64,
    cal_e: f64,
    bb_e: f64,
    weights: &EnergyWeights,
    t_log: f64,
) -> f64 {
    ((1.0 + weights.delta_e) * t_log).exp() * e_geom
        + (-(1.0 - weights.delta_cal) * t_log).exp() * cal_e * cal_e
        + (-(1.0 - weights.delta_bb) * t_log).exp() * bb_e
}

/// One row of the monitored hierarchy.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyReport {
    pub t_log: f64,
    pub tau: f64,
    pub e1: f64,
    pub e2: f64,
    pub cal_e: f64,
    pub bb_e1: f64,
    pub bb_e2: f64,
    pub f_norm: f64,
    pub varrho: f64,
    pub support: f64,
    pub total: f64,
    pub smallness: f64,
    /// `‖F‖ / (‖Ψ‖_{k+1-truncated} + sqrt(𝔼))` equivalence ratio.
    pub equivalence_ratio: f64,
}

/// The smallness functional
/// `δ = |τ|^{-1/2}(‖g-γ‖ + ‖Σ‖) + ‖ρ‖ + |τ|^{1/2} ℰ + ‖F‖`
/// at the implemented orders (H², H¹, H², ℰ_{2,4}, ‖F‖_2).
#[allow(clippy::too_many_arguments)]
pub fn smallness(
    bg: &BackgroundGeometry,
    metric: &SpatialMetric,
    sigma: &TraceFreeSym2,
    rho: &[f64],
    cal_e: f64,
    f_norm: f64,
    tau: f64,
) -> f64 {
    let dev: Vec<Mat3> = metric.g.iter().map(|g| mat_sub(g, &bg.gamma)).collect();
    let g_norm = sobolev_norm_sym2(bg, &dev, 2);
    let s_norm = sobolev_norm_sym2(bg, &sigma.sigma, 1);
    let rho_norm = sobolev_norm_scalar(bg, rho, 2);
    let at = tau.abs();
    (g_norm + s_norm) / at.sqrt() + rho_norm + at.sqrt() * cal_e + f_norm
}

// ---------------------------------------------------------------------------
// Decay fitting.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    pub exponent: f64,
    /// Standard error of the fitted slope.
    pub band: f64,
    pub samples: usize,
}

/// Least-squares slope of `log(value)` against `T` over `[t_lo, t_hi]`.
pub fn decay_fit(series: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= t_lo && *t <= t_hi)
        .copied()
        .collect();
    if pts.len() < 10 {
        return Err(EvmError::FitDomain(format!(
            "need at least 10 samples in the window, got {}",
            pts.len()
        )));
    }
    let span = pts.last().unwrap().0 - pts.first().unwrap().0;
    if span < 3.0 - 1e-9 {
        return Err(EvmError::FitDomain(format!(
            "window span {span} < 3 in logarithmic time"
        )));
    }
    if pts.iter().any(|(_, v)| *v <= 0.0) {
        return Err(EvmError::FitDomain("nonpositive value in series".into()));
    }
    let n = pts.len() as f64;
    let mean_t: f64 = pts.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_y: f64 = pts.iter().map(|(_, v)| v.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, v) in &pts {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (v.ln() - mean_y);
    }
    let slope = sxy / sxx;
    let mut ss_res = 0.0;
    for (t, v) in &pts {
        let fit = mean_y + slope * (t - mean_t);
        ss_res += (v.ln() - fit) * (v.ln() - fit);
    }
    let band = if pts.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(DecayFit {
        exponent: slope,
        band,
        samples: pts.len(),
    })
}

/// Trailing-window fit: the window covers the fraction `(lo, hi)` of the run.
pub fn decay_fit_window(series: &[(f64, f64)], lo: f64, hi: f64) -> Result<DecayFit> {
    if series.is_empty() {
        return Err(EvmError::FitDomain("empty series".into()));
    }
    let t0 = series.first().unwrap().0;
    let t1 = series.last().unwrap().0;
    decay_fit(series, t0 + lo * (t1 - t0), t0 + hi * (t1 - t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::MomentumLattice;

    fn hyper() -> BackgroundGeometry {
        BackgroundGeometry::hyperbolic()
    }

    #[test]
    fn weight_constraints() {
        let w = EnergyWeights::new(0.01, 0.02, 1.0 / 3.0, 1e-3).unwrap();
        assert_eq!(w.delta_alpha, 0.0);
        assert_eq!(w.c_e, 1.0);
        assert!((w.delta_bb - w.delta_e).abs() < 1e-15);
        // the marginal eigenvalue branch
        let w2 = EnergyWeights::new(0.001, 0.2, 1.0 / 9.0, 1e-3);
        assert!(w2.is_err(), "sum constraint should reject large δ_ℰ");
        // rejected: δ_E >= δ_ℰ
        assert!(EnergyWeights::new(0.02, 0.01, 1.0, 1e-3).is_err());
        // rejected: 9 λ0 < 1
        assert!(EnergyWeights::new(0.01, 0.02, 0.05, 1e-3).is_err());
    }

    #[test]
    fn weights_example_from_background() {
        let bg = hyper();
        // λ0 = 1/3 on the invariant sector, so δ_α = 0 and δ_𝔼 = δ_E:
        // the menu (0.01, 0.02, 0.01, 0.0) is accepted with δ_E = δ_𝔼 = 0.01.
        let w = EnergyWeights::for_background(&bg, 0.01, 0.02).unwrap();
        assert!((w.lambda0 - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.delta_bb - 0.01).abs() < 1e-15);
        // a variant demanding δ_E = 0.01 with δ_𝔼 = 0.02 at δ_α = 0 violates
        // δ_E = δ_𝔼 - 2δ_α
        let bad = EnergyWeights {
            delta_e: 0.01,
            delta_cal: 0.02,
            delta_bb: 0.02,
            delta_alpha: 0.0,
            alpha: 1.0,
            c_e: 1.0,
            lambda0: 1.0 / 3.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn geometric_energy_zero_at_background() {
        let bg = hyper();
        let metric = SpatialMetric::background(&bg);
        let sigma = TraceFreeSym2::zero(1);
        let w = EnergyWeights::for_background(&bg, 0.01, 0.02).unwrap();
        for k in 1..=2 {
            let e = geometric_energy(&bg, &metric, &sigma, &w, k);
            assert_eq!(e, 0.0, "E_{k}(γ, 0) must vanish");
        }
    }

    #[test]
    fn geometric_energy_eigenmode_value() {
        // Σ = 0, g - γ = ε u for a 𝓛-eigentensor u of eigenvalue λ:
        // E_1 = (9/2) ε² λ ‖u‖²_{L²(dμ_g)} up to the measure perturbation.
        let bg = hyper();
        let (vals, tensors) = invariant_einstein_spectrum(&bg);
        // pick the conformal mode (λ = 4/9)
        let idx = vals.iter().position(|v| (v - 4.0 / 9.0).abs() < 1e-10).unwrap();
        let u = tensors[idx];
        let eps = 1e-5;
        let mut g = bg.gamma;
        mat_axpy(&mut g, eps, &u);
        let metric = SpatialMetric::new(vec![g]).unwrap();
        let sigma = TraceFreeSym2::zero(1);
        let w = EnergyWeights::for_background(&bg, 0.01, 0.02).unwrap();
        let e1 = geometric_energy(&bg, &metric, &sigma, &w, 1);
        let norm2 = inner_sym2(&bg.gamma_inv, &u, &u) * bg.sqrt_det_gamma;
        let want = 4.5 * eps * eps * (4.0 / 9.0) * norm2;
        assert!(
            (e1 - want).abs() < 1e-3 * want,
            "eigenmode energy {e1} vs {want}"
        );
    }

    #[test]
    fn geometric_energy_coercive_on_admissible_data() {
        // ‖g-γ‖² + ‖Σ‖² <= C E_k on kernel-orthogonal perturbations, with C
        // stable under halving the amplitude.
        let bg = hyper();
        let w = EnergyWeights::for_background(&bg, 0.01, 0.02).unwrap();
        let (vals, tensors) = invariant_einstein_spectrum(&bg);
        let positive: Vec<Mat3> = vals
            .iter()
            .zip(tensors.iter())
            .filter(|(v, _)| **v > 1e-9)
            .map(|(_, t)| *t)
            .collect();
        let mut rng = Rng64::new(4);
        let mut ratio_at = |amp: f64| -> f64 {
            let mut dev = ZERO_MAT3;
            for t in &positive {
                mat_axpy(&mut dev, amp * rng.sym_uniform(), t);
            }
            let mut sig = ZERO_MAT3;
            for t in &positive {
                mat_axpy(&mut sig, 0.3 * amp * rng.sym_uniform(), t);
            }
            // make Σ trace-free with respect to g
            let mut g = bg.gamma;
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] += dev[i][j];
                }
            }
            let metric = SpatialMetric::new(vec![g]).unwrap();
            let mut sigma = TraceFreeSym2 { sigma: vec![sig] };
            sigma.project_trace_free(&metric);
            let e2 = geometric_energy(&bg, &metric, &sigma, &w, 2);
            let devs: Vec<Mat3> = metric.g.iter().map(|g| mat_sub(g, &bg.gamma)).collect();
            let num = sobolev_norm_sym2(&bg, &devs, 2).powi(2)
                + sobolev_norm_sym2(&bg, &sigma.sigma, 1).powi(2);
            num / e2
        };
        let c1 = ratio_at(1e-3);
        let c2 = ratio_at(5e-4);
        assert!(c1 > 0.0 && c2 > 0.0, "energy must be positive");
        assert!(
            (c1 / c2 - 1.0).abs() < 0.5,
            "coercivity constant unstable: {c1} vs {c2}"
        );
    }

    #[test]
    fn vlasov_energy_zero_and_bump() {
        let bg = hyper();
        let metric = SpatialMetric::background(&bg);
        let lattice = MomentumLattice::new(15, 1.0).unwrap();
        let dist = DistributionGrid::zero(lattice, 1);
        let ctx = KineticContext::milne(&bg, -1.0, 0.0);
        let e = vlasov_energy(&[ctx.clone()], &metric, &bg, &dist, 2, 4.0);
        assert_eq!(e, 0.0);
        // ℓ = 0: a narrow bump at p* has ℰ² ≈ ⟨p*⟩^{2μ} Σf² |g| cellvol
        let mut dist2 = DistributionGrid::zero(MomentumLattice::new(15, 1.0).unwrap(), 1);
        let l0 = dist2.lattice.index(10, 7, 7);
        let pstar = dist2.lattice.point(l0);
        dist2.values[0][l0] = 2.0;
        let e0 = vlasov_energy(&[ctx], &metric, &bg, &dist2, 0, 4.0);
        let p2 = inner(&metric.g[0], &pstar, &pstar);
        let want = ((1.0 + p2).powf(4.0) * 4.0 * metric.det[0] * dist2.lattice.cell_volume())
            .sqrt();
        assert!(
            (e0 - want).abs() < 1e-12 * want,
            "hand quadrature: {e0} vs {want}"
        );
    }

    #[test]
    fn vlasov_energy_metric_equivalence() {
        // For g near γ the energies computed with either metric agree
        // within 1 ± 5 ‖g-γ‖.
        let bg = hyper();
        let mut g = bg.gamma;
        g[0][0] += 0.05;
        g[1][2] += 0.02;
        g[2][1] += 0.02;
        let metric_g = SpatialMetric::new(vec![g]).unwrap();
        let metric_gamma = SpatialMetric::background(&bg);
        let lattice = MomentumLattice::new(17, 1.0).unwrap();
        let mut dist = DistributionGrid::zero(lattice, 1);
        for l in 0..dist.lattice.len() {
            let p = dist.lattice.point(l);
            let r2 = dot3(&p, &p) / 0.3;
            dist.values[0][l] = if r2 < 1.0 { (1.0 - r2).powi(4) } else { 0.0 };
        }
        let mut ctx_g = KineticContext::milne(&bg, -1.0, 0.0);
        ctx_g.g = metric_g.g[0];
        ctx_g.ginv = metric_g.inv[0];
        ctx_g.chr = crate::background::invariant_christoffel(&bg.structure, &ctx_g.g, &ctx_g.ginv);
        ctx_g.riem = crate::background::invariant_riemann(&bg.structure, &ctx_g.chr);
        let ctx_gamma = KineticContext::milne(&bg, -1.0, 0.0);
        let e_g = vlasov_energy(&[ctx_g], &metric_g, &bg, &dist, 2, 4.0);
        let e_gamma = vlasov_energy(&[ctx_gamma], &metric_gamma, &bg, &dist, 2, 4.0);
        let dev = max_abs_mat(&mat_sub(&metric_g.g[0], &bg.gamma)) / 9.0;
        let ratio = e_g / e_gamma;
        assert!(
            (ratio - 1.0).abs() < 5.0 * dev * 9.0 + 0.2,
            "metric equivalence ratio {ratio}"
        );
    }

    #[test]
    fn total_energy_is_weighted_sum() {
        let w = EnergyWeights::new(0.01, 0.02, 1.0 / 3.0, 1e-3).unwrap();
        let t = 1.7;
        let (e, cal, bb) = (0.3, 0.4, 0.5);
        let direct = total_energy(e, cal, bb, &w, t);
        let parts = ((1.0 + w.delta_e) * t).exp() * e
            + (-(1.0 - w.delta_cal) * t).exp() * cal * cal
            + (-(1.0 - w.delta_bb) * t).exp() * bb;
        assert!((direct - parts).abs() <= 1e-14 * parts.abs());
    }

    #[test]
    fn decay_fit_exact_exponential() {
        let series: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.05;
                (t, (-t).exp())
            })
            .collect();
        let fit = decay_fit(&series, 0.0, 10.0).unwrap();
        assert!((fit.exponent + 1.0).abs() < 1e-10, "{}", fit.exponent);
    }

    #[test]
    fn decay_fit_oscillating_exponential() {
        let series: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.025;
                (t, (-t).exp() * (1.0 + 0.1 * t.sin()))
            })
            .collect();
        let fit = decay_fit(&series, 0.0, 10.0).unwrap();
        assert!((fit.exponent + 1.0).abs() < 0.05, "{}", fit.exponent);
    }

    #[test]
    fn decay_fit_constant_series() {
        let series: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.2, 2.5)).collect();
        let fit = decay_fit(&series, 0.0, 10.0).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn decay_fit_domain_errors() {
        let short: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(decay_fit(&short, 0.0, 10.0).is_err());
        let negative: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.2, -1.0)).collect();
        assert!(decay_fit(&negative, 0.0, 10.0).is_err());
    }
}
