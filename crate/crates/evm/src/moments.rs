//! Rescaled source quantities assembled from the Vlasov and Maxwell
//! sectors.
//!
//! All moments are defined through the displayed integrals over the
//! positive momentum measure `dμ_p = sqrt|g| d³p`, which makes the energy
//! densities nonnegative. With that choice the odd powers of the (negative)
//! mean curvature in the raw rescalings become `|τ|` factors; equivalently
//! the couplings into the Einstein and Maxwell equations carry one sign
//! flip each relative to the raw signed-`τ` bookkeeping. The continuity
//! identities are form-invariant under this convention.

use crate::algebra::*;
use crate::error::Result;
use crate::geometry::{LapseShift, SpatialMetric};
use crate::kinetic::{momentum_kinematics, DistributionGrid, KineticContext};
use crate::maxwell::MaxwellStress;

#[derive(Clone, Debug)]
pub struct VlasovMoments {
    /// `ρ_V = 4π N² ∫ f (p0)²/p̂ dμ_p`.
    pub rho: Vec<f64>,
    /// `j_V^a = 8π N ∫ f p0 p^a/p̂ dμ_p` (raised index).
    pub j_up: Vec<Vec3>,
    /// `η̄_V = 4π ∫ f |p + τ^{-1} p0 X|²/p̂ dμ_p`.
    pub eta_bar: Vec<f64>,
    /// `T_V^{ab} = 8π ∫ f p^a p^b / p̂ dμ_p`.
    pub t_up: Vec<Mat3>,
    /// `∫ f 𝒫_a 𝒫_b p̂ dμ_p`, used by the spatial stress.
    pub pp_hat: Vec<Mat3>,
    /// `∫ f / p̂ dμ_p`, the mass-term integral of the spatial stress.
    pub inv_hat: Vec<f64>,
}

pub fn vlasov_moments(
    contexts: &[KineticContext],
    metric: &SpatialMetric,
    dist: &DistributionGrid,
    tau: f64,
) -> Result<VlasovMoments> {
    let count = metric.len();
    let mut out = VlasovMoments {
        rho: vec![0.0; count],
        j_up: vec![ZERO_VEC3; count],
        eta_bar: vec![0.0; count],
        t_up: vec![ZERO_MAT3; count],
        pp_hat: vec![ZERO_MAT3; count],
        inv_hat: vec![0.0; count],
    };
    let cell = dist.lattice.cell_volume();
    let four_pi = 4.0 * std::f64::consts::PI;
    for s in 0..count {
        let ctx = &contexts[s];
        let n = ctx.lapse;
        let mu = metric.sqrt_det[s] * cell;
        let mut rho = 0.0;
        let mut j = ZERO_VEC3;
        let mut eta = 0.0;
        let mut t = ZERO_MAT3;
        let mut pp = ZERO_MAT3;
        let mut inv_hat = 0.0;
        for (l, &fv) in dist.values[s].iter().enumerate() {
            if fv == 0.0 {
                continue;
            }
            let p = dist.lattice.point(l);
            let kin = momentum_kinematics(ctx, &p)?;
            rho += fv * kin.p0 * kin.p0 / kin.p_hat;
            for a in 0..3 {
                j[a] += fv * kin.p0 * p[a] / kin.p_hat;
                for b in 0..3 {
                    t[a][b] += fv * p[a] * p[b] / kin.p_hat;
                    pp[a][b] += fv * kin.script_p[a] * kin.script_p[b] * kin.p_hat;
                }
            }
            let mut w = ZERO_VEC3;
            for i in 0..3 {
                w[i] = p[i] + kin.p0 * ctx.shift[i] / tau;
            }
            eta += fv * inner(&ctx.g, &w, &w) / kin.p_hat;
            inv_hat += fv / kin.p_hat;
        }
        out.rho[s] = four_pi * n * n * rho * mu;
        for a in 0..3 {
            out.j_up[s][a] = 2.0 * four_pi * n * j[a] * mu;
            for b in 0..3 {
                out.t_up[s][a][b] = 2.0 * four_pi * t[a][b] * mu;
                out.pp_hat[s][a][b] = pp[a][b] * mu;
            }
        }
        out.eta_bar[s] = four_pi * eta * mu;
        out.inv_hat[s] = inv_hat * mu;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MaxwellMoments {
    pub rho: Vec<f64>,
    pub j_up: Vec<Vec3>,
    pub eta_bar: Vec<f64>,
    /// `T_M^{ab}` with the same `8π |τ|^{-7}` normalization as the Vlasov
    /// sector.
    pub t_up: Vec<Mat3>,
}

/// Contractions of the Maxwell stress components into the rescaled source
/// quantities. `τ < 0`; the moments are positive-measure normalized.
pub fn maxwell_moments(
    stress: &MaxwellStress,
    metric: &SpatialMetric,
    lapse_shift: &LapseShift,
    tau: f64,
) -> MaxwellMoments {
    let count = metric.len();
    let four_pi = 4.0 * std::f64::consts::PI;
    let abs_tau = tau.abs();
    let mut out = MaxwellMoments {
        rho: vec![0.0; count],
        j_up: vec![ZERO_VEC3; count],
        eta_bar: vec![0.0; count],
        t_up: vec![ZERO_MAT3; count],
    };
    for s in 0..count {
        let n = lapse_shift.lapse[s];
        let x = lapse_shift.shift[s];
        let xh = lapse_shift.x_hat(s);
        let ginv = &metric.inv[s];
        let mut h_up = *ginv;
        for i in 0..3 {
            for j in 0..3 {
                h_up[i][j] -= x[i] * x[j] / (n * n);
            }
        }
        // ρ_M = 4π |τ| N^{-2} [T_00 - 2 τ^{-1} X^i T_{0i} + τ^{-2} X^i X^j T_{ij}]
        let mut bracket = stress.t00[s];
        for i in 0..3 {
            bracket -= 2.0 / tau * x[i] * stress.t0i[s][i];
            for j in 0..3 {
                bracket += x[i] * x[j] * stress.tij[s][i][j] / (tau * tau);
            }
        }
        out.rho[s] = four_pi * abs_tau / (n * n) * bracket;
        // j̃_i = Ñ^{-1}(-T_{0i} + X̃^j T_{ji}); raised and normalized:
        // j_M^i = 8π (N |τ|)^{-1} g^{ij} (-T_{0j} + τ^{-1} X^k T_{kj})
        let _ = (&xh, &h_up);
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                let mut low = -stress.t0i[s][j];
                for k in 0..3 {
                    low += x[k] * stress.tij[s][k][j] / tau;
                }
                acc += ginv[i][j] * low;
            }
            out.j_up[s][i] = 2.0 * four_pi / (n * abs_tau) * acc;
        }
        // η̄_M = 4π |τ|^{-3} g^{ij} T_{ij}
        let mut tr = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                tr += ginv[i][j] * stress.tij[s][i][j];
            }
        }
        out.eta_bar[s] = four_pi / (abs_tau * abs_tau * abs_tau) * tr;
        // T_M^{ab} = 8π |τ|^{-3} [h^{ai} h^{bj} T_{ij}
        //            + τ (X^a h^{bj} T_{0j} + X^b h^{ai} T_{0i})/N²
        //            + τ² X^a X^b T_00 / N⁴]
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += h_up[a][i] * h_up[b][j] * stress.tij[s][i][j];
                    }
                }
                for j in 0..3 {
                    acc += tau * (x[a] * h_up[b][j] * stress.t0i[s][j]
                        + x[b] * h_up[a][j] * stress.t0i[s][j])
                        / (n * n);
                }
                acc += tau * tau * x[a] * x[b] * stress.t00[s] / (n * n * n * n);
                out.t_up[s][a][b] =
                    2.0 * four_pi / (abs_tau * abs_tau * abs_tau) * acc;
            }
        }
    }
    out
}

/// All rescaled sources at one time.
#[derive(Clone, Debug)]
pub struct SourceSet {
    pub rho: Vec<f64>,
    /// Raised matter current `j^a`.
    pub j_up: Vec<Vec3>,
    pub eta_bar: Vec<f64>,
    /// `η = ρ + τ² η̄`.
    pub eta: Vec<f64>,
    /// Spatial stress `S_{ij}` entering the Σ evolution.
    pub s_ab: Vec<Mat3>,
    /// Total `T^{ab}` (with the divergence-identity normalization).
    pub t_up: Vec<Mat3>,
    pub rho_v: Vec<f64>,
    pub rho_m: Vec<f64>,
    pub j_v: Vec<Vec3>,
    pub j_m: Vec<Vec3>,
    pub eta_bar_v: Vec<f64>,
    pub eta_bar_m: Vec<f64>,
}

impl SourceSet {
    pub fn vacuum(count: usize) -> Self {
        SourceSet {
            rho: vec![0.0; count],
            j_up: vec![ZERO_VEC3; count],
            eta_bar: vec![0.0; count],
            eta: vec![0.0; count],
            s_ab: vec![ZERO_MAT3; count],
            t_up: vec![ZERO_MAT3; count],
            rho_v: vec![0.0; count],
            rho_m: vec![0.0; count],
            j_v: vec![ZERO_VEC3; count],
            j_m: vec![ZERO_VEC3; count],
            eta_bar_v: vec![0.0; count],
            eta_bar_m: vec![0.0; count],
        }
    }
}

/// Sum the sector moments into the full source set, including the spatial
/// stress `S_{ij}` from the trace-corrected stress formula.
pub fn assemble_sources(
    vlasov: &VlasovMoments,
    maxwell: Option<(&MaxwellMoments, &MaxwellStress)>,
    contexts: &[KineticContext],
    metric: &SpatialMetric,
    tau: f64,
) -> SourceSet {
    let count = metric.len();
    let mut out = SourceSet::vacuum(count);
    let eight_pi = 8.0 * std::f64::consts::PI;
    let abs_tau = tau.abs();
    for s in 0..count {
        let n = contexts[s].lapse;
        out.rho_v[s] = vlasov.rho[s];
        out.j_v[s] = vlasov.j_up[s];
        out.eta_bar_v[s] = vlasov.eta_bar[s];
        // S_V = 8π [ τ² N² ∫f 𝒫_a 𝒫_b p̂ dμ_p + ½ g_{ab} ∫ f/p̂ dμ_p ]
        let mut sv = ZERO_MAT3;
        for a in 0..3 {
            for b in 0..3 {
                sv[a][b] = eight_pi
                    * (tau * tau * n * n * vlasov.pp_hat[s][a][b]
                        + 0.5 * metric.g[s][a][b] * vlasov.inv_hat[s]);
            }
        }
        out.s_ab[s] = sv;
        out.t_up[s] = vlasov.t_up[s];
        out.rho[s] = vlasov.rho[s];
        out.j_up[s] = vlasov.j_up[s];
        out.eta_bar[s] = vlasov.eta_bar[s];
        if let Some((mm, stress)) = maxwell {
            out.rho_m[s] = mm.rho[s];
            out.j_m[s] = mm.j_up[s];
            out.eta_bar_m[s] = mm.eta_bar[s];
            out.rho[s] += mm.rho[s];
            out.eta_bar[s] += mm.eta_bar[s];
            for a in 0..3 {
                out.j_up[s][a] += mm.j_up[s][a];
                for b in 0..3 {
                    out.t_up[s][a][b] += mm.t_up[s][a][b];
                    // S_M = 8π |τ|^{-1} T^M_{ab} (the Maxwell stress is
                    // trace-free in four dimensions)
                    out.s_ab[s][a][b] += eight_pi / abs_tau * stress.tij[s][a][b];
                }
            }
        }
        out.eta[s] = out.rho[s] + tau * tau * out.eta_bar[s];
    }
    out
}
