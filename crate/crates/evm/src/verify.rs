//! Randomized identity batteries: each suite draws random states, checks
//! the corresponding derivative or connection identities against their
//! independent oracles, and reports the maximum residual. The run harness
//! and the acceptance gate both call these.

use crate::algebra::*;
use crate::background::{invariant_christoffel, invariant_riemann, BackgroundGeometry};
use crate::commutator::{commutator_suite, CommutatorReport, PhaseTestData};
use crate::error::Result;
use crate::geometry::{christoffel, difference_tensor, SpatialMetric};
use crate::kinetic::{
    momentum_kinematics, momentum_time_derivatives, sasaki_coefficients, vertical_derivatives,
    GeometryRates, KineticContext,
};

fn random_invariant_metric(bg: &BackgroundGeometry, amp: f64, rng: &mut Rng64) -> Mat3 {
    let mut pert = ZERO_MAT3;
    for i in 0..3 {
        for j in i..3 {
            let v = amp * rng.sym_uniform();
            pert[i][j] = v;
            pert[j][i] = v;
        }
    }
    mat_add(&bg.gamma, &pert)
}

fn random_state(rng: &mut Rng64, with_fields: bool) -> KineticContext {
    let bg = BackgroundGeometry::hyperbolic();
    let g = random_invariant_metric(&bg, 0.4, rng);
    let ginv = inv3(&g).expect("invertible");
    let chr = invariant_christoffel(&bg.structure, &g, &ginv);
    let riem = invariant_riemann(&bg.structure, &chr);
    let mut ctx = KineticContext {
        g,
        ginv,
        chr,
        riem,
        lapse: 2.2 + rng.uniform(),
        shift: [
            0.2 * rng.sym_uniform(),
            0.2 * rng.sym_uniform(),
            0.2 * rng.sym_uniform(),
        ],
        sigma: ZERO_MAT3,
        tau: -0.4 - 1.5 * rng.uniform(),
        charge: 1.0,
        gamma_star: ZERO_VEC3,
        gamma_mix: ZERO_MAT3,
        f_0i: ZERO_VEC3,
        f_ij: ZERO_MAT3,
    };
    for i in 0..3 {
        for j in i..3 {
            let v = 0.1 * rng.sym_uniform();
            ctx.sigma[i][j] = v;
            ctx.sigma[j][i] = v;
        }
    }
    if with_fields {
        for i in 0..3 {
            ctx.f_0i[i] = 0.3 * rng.sym_uniform();
            ctx.gamma_star[i] = 0.1 * rng.sym_uniform();
            for j in 0..3 {
                ctx.gamma_mix[i][j] = 0.1 * rng.sym_uniform();
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let v = 0.3 * rng.sym_uniform();
                ctx.f_ij[i][j] = v;
                ctx.f_ij[j][i] = -v;
            }
        }
    }
    ctx
}

/// Difference-tensor identities: `Υ(g, r) = Γ[g] - Γ[r]` on random
/// invariant metric pairs.
pub fn suite_difference_tensor(seed: u64, checks: usize) -> Result<f64> {
    let bg = BackgroundGeometry::hyperbolic();
    let mut rng = Rng64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let g = SpatialMetric::new(vec![random_invariant_metric(&bg, 0.35, &mut rng)])?;
        let r = SpatialMetric::new(vec![random_invariant_metric(&bg, 0.35, &mut rng)])?;
        let chr_g = christoffel(&bg, &g);
        let chr_r = christoffel(&bg, &r);
        let ups = difference_tensor(&bg, &g, &chr_r);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    worst = worst
                        .max((ups[0][i][j][k] - (chr_g[0][i][j][k] - chr_r[0][i][j][k])).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Sasaki-table structure: exact zero families and the mixed-symmetry
/// relation on random states.
pub fn suite_sasaki(seed: u64, checks: usize) -> Result<f64> {
    let mut rng = Rng64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let ctx = random_state(&mut rng, false);
        let p = [rng.sym_uniform(), rng.sym_uniform(), rng.sym_uniform()];
        let s = sasaki_coefficients(&ctx, &p);
        for a in 0..3 {
            for bi in 3..6 {
                for ci in 3..6 {
                    worst = worst.max(s[a][bi][ci].abs());
                    worst = worst.max(s[bi][a][ci].abs());
                }
            }
            for b in 0..3 {
                for j in 3..6 {
                    worst = worst.max((s[a][j][b] - s[a][b][j]).abs());
                }
            }
        }
        for ii in 3..6 {
            for ji in 3..6 {
                for ki in 3..6 {
                    worst = worst.max(s[ii][ji][ki].abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Vertical-derivative identities: `B_a p0 = -τ² 𝒫_a` exactly, and the
/// displayed formulas against centered finite differences in `p`.
pub fn suite_vertical(seed: u64, checks: usize) -> Result<f64> {
    let mut rng = Rng64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let ctx = random_state(&mut rng, true);
        let p = [
            0.8 * rng.sym_uniform(),
            0.8 * rng.sym_uniform(),
            0.8 * rng.sym_uniform(),
        ];
        let kin = momentum_kinematics(&ctx, &p)?;
        let vd = vertical_derivatives(&ctx, &p)?;
        for a in 0..3 {
            let ident = (vd.dp0[a] + ctx.tau * ctx.tau * kin.script_p[a]).abs();
            worst = worst.max(ident / (1.0 + vd.dp0[a].abs()));
        }
        // Richardson-extrapolated finite differences
        let eps = 1e-4;
        for a in 0..3 {
            let fd = |h: f64| -> Result<(f64, f64)> {
                let mut pp = p;
                pp[a] += h;
                let mut pm = p;
                pm[a] -= h;
                let kp = momentum_kinematics(&ctx, &pp)?;
                let km = momentum_kinematics(&ctx, &pm)?;
                Ok((
                    (kp.p0 - km.p0) / (2.0 * h),
                    (kp.p_hat - km.p_hat) / (2.0 * h),
                ))
            };
            let (d0_c, dh_c) = fd(eps)?;
            let (d0_f, dh_f) = fd(0.5 * eps)?;
            let d0 = (4.0 * d0_f - d0_c) / 3.0;
            let dh = (4.0 * dh_f - dh_c) / 3.0;
            worst = worst.max((d0 - vd.dp0[a]).abs());
            worst = worst.max((dh - vd.dp_hat[a]).abs());
        }
    }
    Ok(worst)
}

/// Momentum-function time derivatives against the comoving differencing
/// oracle (fields on a linear path, momentum on the rescaling flow).
pub fn suite_time_derivatives(seed: u64, checks: usize) -> Result<f64> {
    let mut rng = Rng64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let ctx = random_state(&mut rng, true);
        let mut rates = GeometryRates::default();
        for i in 0..3 {
            rates.dx[i] = 0.1 * rng.sym_uniform();
            for j in i..3 {
                let v = 0.1 * rng.sym_uniform();
                rates.dg[i][j] = v;
                rates.dg[j][i] = v;
            }
        }
        rates.dn = 0.2 * rng.sym_uniform();
        let p = [
            0.7 * rng.sym_uniform(),
            0.7 * rng.sym_uniform(),
            0.7 * rng.sym_uniform(),
        ];
        let td = momentum_time_derivatives(&ctx, &rates, &p)?;
        let probe = |delta: f64| -> Result<(f64, f64)> {
            let mut c = ctx.clone();
            c.tau = ctx.tau * (-delta).exp();
            c.lapse = ctx.lapse + delta * rates.dn;
            for i in 0..3 {
                c.shift[i] = ctx.shift[i] + delta * rates.dx[i];
                for j in 0..3 {
                    c.g[i][j] = ctx.g[i][j] + delta * rates.dg[i][j];
                }
            }
            c.ginv = inv3(&c.g).expect("path metric");
            let q = [
                (2.0 * delta).exp() * p[0],
                (2.0 * delta).exp() * p[1],
                (2.0 * delta).exp() * p[2],
            ];
            let kin = momentum_kinematics(&c, &q)?;
            Ok((kin.p_hat, kin.p0))
        };
        // Richardson over two differencing steps
        let fd = |h: f64| -> Result<(f64, f64)> {
            let (hp, p0p) = probe(h)?;
            let (hm, p0m) = probe(-h)?;
            Ok(((hp - hm) / (2.0 * h), (p0p - p0m) / (2.0 * h)))
        };
        let (dh_c, d0_c) = fd(1e-4)?;
        let (dh_f, d0_f) = fd(5e-5)?;
        let dh = (4.0 * dh_f - dh_c) / 3.0;
        let d0 = (4.0 * d0_f - d0_c) / 3.0;
        let scale = 1.0 + td.dp_hat.abs().max(td.dp0.abs());
        worst = worst.max((dh - td.dp_hat).abs() / scale);
        worst = worst.max((d0 - td.dp0).abs() / scale);
    }
    Ok(worst)
}

/// Appendix-style commutator battery (randomized phase data).
pub fn suite_commutators(seed: u64, points: usize) -> CommutatorReport {
    commutator_suite(
        &PhaseTestData {
            metric_amp: 0.004,
            f_amp: 0.5,
            seed,
        },
        points,
    )
}

/// Moment identities: dual forms of `p0`, parity of the vector current,
/// linearity, and lattice-refinement agreement of the density quadrature.
pub fn suite_moments(seed: u64, checks: usize) -> Result<f64> {
    let bg = BackgroundGeometry::hyperbolic();
    let mut rng = Rng64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let ctx = random_state(&mut rng, true);
        let p = [rng.sym_uniform(), rng.sym_uniform(), rng.sym_uniform()];
        worst = worst.max(crate::kinetic::dual_p0_residual(&ctx, &p)?);
    }
    // refinement of the density quadrature on a smooth bump
    let metric = SpatialMetric::background(&bg);
    let tau = -0.8;
    let rho_at = |n: usize| -> Result<f64> {
        let lattice = crate::kinetic::MomentumLattice::new(n, 1.0)?;
        let mut dist = crate::kinetic::DistributionGrid::zero(lattice, 1);
        for l in 0..dist.lattice.len() {
            let p = dist.lattice.point(l);
            let r2 = inner(&bg.gamma, &p, &p) / (0.36 * 9.0);
            dist.values[0][l] = if r2 < 1.0 { (1.0 - r2).powi(4) } else { 0.0 };
        }
        let ctx = KineticContext::milne(&bg, tau, 0.0);
        Ok(crate::moments::vlasov_moments(&[ctx], &metric, &dist, tau)?.rho[0])
    };
    let coarse = rho_at(21)?;
    let mid = rho_at(41)?;
    let fine = rho_at(81)?;
    let e_mid = ((mid - fine) / fine).abs();
    let e_coarse = ((coarse - fine) / fine).abs();
    if e_mid > e_coarse {
        worst = worst.max(1.0);
    }
    worst = worst.max(e_mid);
    Ok(worst)
}
