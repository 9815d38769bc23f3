//! Shared oracles for the integration suites: analytic manufactured fields
//! on the flat torus with exact derivatives, used to measure the observed
//! order of the discrete constraint and continuity evaluators.

use evm::algebra::*;

pub const TAU_C: f64 = std::f64::consts::TAU;

/// Conformally flat manufactured geometry `g = e^{2φ} δ` with analytic
/// matter fields chosen to satisfy the constraint combinations exactly in
/// the continuum.
pub struct Manufactured {
    pub amp_phi: f64,
    pub amp_sigma: f64,
    pub amp_lapse: f64,
    pub amp_shift: f64,
    pub tau: f64,
}

impl Default for Manufactured {
    fn default() -> Self {
        Manufactured {
            amp_phi: 0.02,
            amp_sigma: 0.01,
            amp_lapse: 0.015,
            amp_shift: 0.01,
            tau: -1.0,
        }
    }
}

impl Manufactured {
    pub fn phi(&self, x: &Vec3) -> f64 {
        self.amp_phi * (TAU_C * x[0]).sin() * (TAU_C * x[1]).cos()
    }

    pub fn dphi(&self, x: &Vec3) -> Vec3 {
        [
            self.amp_phi * TAU_C * (TAU_C * x[0]).cos() * (TAU_C * x[1]).cos(),
            -self.amp_phi * TAU_C * (TAU_C * x[0]).sin() * (TAU_C * x[1]).sin(),
            0.0,
        ]
    }

    pub fn ddphi(&self, x: &Vec3) -> Mat3 {
        let a = self.amp_phi * TAU_C * TAU_C;
        let (sx, cx) = (TAU_C * x[0]).sin_cos();
        let (sy, cy) = (TAU_C * x[1]).sin_cos();
        let mut m = ZERO_MAT3;
        m[0][0] = -a * sx * cy;
        m[0][1] = -a * cx * sy;
        m[1][0] = m[0][1];
        m[1][1] = -a * sx * cy;
        m
    }

    pub fn metric(&self, x: &Vec3) -> Mat3 {
        mat_scale(&ident3(), (2.0 * self.phi(x)).exp())
    }

    /// Conformal Christoffels `Γ^c_{ab} = δ^c_a ∂_b φ + δ^c_b ∂_a φ - δ_{ab} ∂^c φ`.
    pub fn christoffel(&self, x: &Vec3) -> Con3 {
        let d = self.dphi(x);
        let mut c = ZERO_CON3;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut v = 0.0;
                    if i == j {
                        v += d[k];
                    }
                    if i == k {
                        v += d[j];
                    }
                    if j == k {
                        v -= d[i];
                    }
                    c[i][j][k] = v;
                }
            }
        }
        c
    }

    /// Scalar curvature `R = e^{-2φ}(-4 Δφ - 2 |∇φ|²)`.
    pub fn scalar_curvature(&self, x: &Vec3) -> f64 {
        let d = self.dphi(x);
        let dd = self.ddphi(x);
        let lap = dd[0][0] + dd[1][1] + dd[2][2];
        let grad2 = dot3(&d, &d);
        (-2.0 * self.phi(x)).exp() * (-4.0 * lap - 2.0 * grad2)
    }

    /// Symmetric seed for Σ before the trace projection.
    fn sigma_seed(&self, x: &Vec3) -> Mat3 {
        let a = self.amp_sigma;
        let mut m = ZERO_MAT3;
        m[0][1] = a * (TAU_C * x[2]).sin();
        m[1][0] = m[0][1];
        m[1][2] = a * (TAU_C * x[0]).cos();
        m[2][1] = m[1][2];
        m[0][0] = a * (TAU_C * x[1]).sin();
        m[1][1] = -0.5 * a * (TAU_C * x[1]).sin();
        m[2][2] = -0.5 * a * (TAU_C * x[1]).sin();
        m
    }

    fn sigma_seed_d(&self, x: &Vec3, axis: usize) -> Mat3 {
        let a = self.amp_sigma;
        let mut m = ZERO_MAT3;
        match axis {
            0 => {
                let v = -a * TAU_C * (TAU_C * x[0]).sin();
                m[1][2] = v;
                m[2][1] = v;
            }
            1 => {
                let v = a * TAU_C * (TAU_C * x[1]).cos();
                m[0][0] = v;
                m[1][1] = -0.5 * v;
                m[2][2] = -0.5 * v;
            }
            _ => {
                let v = a * TAU_C * (TAU_C * x[2]).cos();
                m[0][1] = v;
                m[1][0] = v;
            }
        }
        m
    }

    /// Trace-free (with respect to `g`) manufactured Σ: the seed is built
    /// trace-free with respect to δ, and the conformal factor preserves
    /// that (`tr_g Σ = e^{-2φ} tr_δ Σ`).
    pub fn sigma(&self, x: &Vec3) -> Mat3 {
        let mut s = self.sigma_seed(x);
        let tr = (s[0][0] + s[1][1] + s[2][2]) / 3.0;
        for i in 0..3 {
            s[i][i] -= tr;
        }
        s
    }

    pub fn sigma_d(&self, x: &Vec3, axis: usize) -> Mat3 {
        let mut s = self.sigma_seed_d(x, axis);
        let tr = (s[0][0] + s[1][1] + s[2][2]) / 3.0;
        for i in 0..3 {
            s[i][i] -= tr;
        }
        s
    }

    /// `|Σ|²_g` analytically.
    pub fn sigma_norm2(&self, x: &Vec3) -> f64 {
        let s = self.sigma(x);
        let e = (-4.0 * self.phi(x)).exp();
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += s[i][j] * s[i][j];
            }
        }
        e * acc
    }

    /// Energy density defined by the Hamiltonian combination:
    /// `ρ = (R - |Σ|² + 2/3) / (4 |τ|)`.
    pub fn rho(&self, x: &Vec3) -> f64 {
        (self.scalar_curvature(x) - self.sigma_norm2(x) + 2.0 / 3.0) / (4.0 * self.tau.abs())
    }

    /// Raised matter current defined by the momentum combination:
    /// `j^a = -(D^i Σ_i{}^a ... lowered form) / τ²`, computed analytically.
    pub fn current_up(&self, x: &Vec3) -> Vec3 {
        // (div Σ)_j = g^{ik} D_k Σ_{ij}
        let chr = self.christoffel(x);
        let s = self.sigma(x);
        let e2 = (-2.0 * self.phi(x)).exp();
        let mut div = ZERO_VEC3;
        for j in 0..3 {
            for k in 0..3 {
                // D_k Σ_{kj} with conformal connection, contracted with g^{ik} = e^{-2φ} δ^{ik}
                let ds = self.sigma_d(x, k);
                let mut v = ds[k][j];
                for c in 0..3 {
                    v -= chr[c][k][k] * s[c][j] + chr[c][k][j] * s[k][c];
                }
                div[j] += e2 * v;
            }
        }
        // momentum constraint: div_j + τ² g_{ja} j^a = 0  =>  j^a = -g^{aj} div_j / τ²
        let mut j_up = ZERO_VEC3;
        for a in 0..3 {
            j_up[a] = -e2 * div[a] / (self.tau * self.tau);
        }
        j_up
    }

    pub fn lapse(&self, x: &Vec3) -> f64 {
        3.0 * (1.0 - 0.1) + 3.0 * self.amp_lapse * (TAU_C * x[2]).cos()
    }

    pub fn dlapse(&self, x: &Vec3) -> Vec3 {
        [
            0.0,
            0.0,
            -3.0 * self.amp_lapse * TAU_C * (TAU_C * x[2]).sin(),
        ]
    }

    pub fn shift(&self, x: &Vec3) -> Vec3 {
        [self.amp_shift * (TAU_C * x[1]).sin(), 0.0, 0.0]
    }

    pub fn dshift(&self, x: &Vec3) -> Mat3 {
        // d[a][i] = ∂_a X^i
        let mut m = ZERO_MAT3;
        m[1][0] = self.amp_shift * TAU_C * (TAU_C * x[1]).cos();
        m
    }

    /// Analytic spatial stress `T^{ab}` (symmetric, smooth, small).
    pub fn stress_up(&self, x: &Vec3) -> Mat3 {
        let a = 0.01;
        let mut m = ZERO_MAT3;
        m[0][0] = a * (TAU_C * x[1]).cos();
        m[1][1] = a * (TAU_C * x[2]).sin();
        m[2][2] = a;
        m[0][2] = 0.5 * a * (TAU_C * x[0]).sin();
        m[2][0] = m[0][2];
        m
    }

    pub fn stress_up_d(&self, x: &Vec3, axis: usize) -> Mat3 {
        let a = 0.01;
        let mut m = ZERO_MAT3;
        match axis {
            0 => {
                m[0][2] = 0.5 * a * TAU_C * (TAU_C * x[0]).cos();
                m[2][0] = m[0][2];
            }
            1 => {
                m[0][0] = -a * TAU_C * (TAU_C * x[1]).sin();
            }
            _ => {
                m[1][1] = a * TAU_C * (TAU_C * x[2]).cos();
            }
        }
        m
    }

    pub fn drho_analytic(&self, x: &Vec3) -> f64 {
        // ∂_T ρ defined by the continuity identity evaluated analytically:
        // (3-N)ρ - X^a ∂_a ρ + ½ τ N^{-1} D_a(N² j^a)
        // - (1/6) τ² N g_{ab} T^{ab} - ½ τ² N Σ_{ab} T^{ab}
        let n = self.lapse(x);
        let tau = self.tau;
        let rho = self.rho(x);
        // ∂_a ρ by exact differentiation is unwieldy; use a tight central
        // difference of the closed form (machine-accurate at h = 1e-6).
        let mut adv = 0.0;
        let xv = self.shift(x);
        for a in 0..3 {
            let h = 1e-6;
            let mut xp = *x;
            xp[a] += h;
            let mut xm = *x;
            xm[a] -= h;
            adv += xv[a] * (self.rho(&xp) - self.rho(&xm)) / (2.0 * h);
        }
        // D_a (N² j^a) = ∂_a(N² j^a) + Γ^a_{ab} N² j^b, Γ^a_{ab} = 3 ∂_b φ
        let mut div_n2j = 0.0;
        {
            let h = 1e-6;
            for a in 0..3 {
                let mut xp = *x;
                xp[a] += h;
                let mut xm = *x;
                xm[a] -= h;
                let fp = self.lapse(&xp).powi(2) * self.current_up(&xp)[a];
                let fm = self.lapse(&xm).powi(2) * self.current_up(&xm)[a];
                div_n2j += (fp - fm) / (2.0 * h);
            }
            let d = self.dphi(x);
            let j = self.current_up(x);
            for b in 0..3 {
                div_n2j += 3.0 * d[b] * n * n * j[b];
            }
        }
        let g = self.metric(x);
        let s = self.sigma(x);
        let t = self.stress_up(x);
        let mut g_t = 0.0;
        let mut s_t = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                g_t += g[a][b] * t[a][b];
                s_t += s[a][b] * t[a][b];
            }
        }
        (3.0 - n) * rho - adv + 0.5 * tau / n * div_n2j
            - tau * tau * n * g_t / 6.0
            - 0.5 * tau * tau * n * s_t
    }

    pub fn dj_analytic(&self, x: &Vec3) -> Vec3 {
        // the vector continuity identity evaluated analytically (tight
        // central differences of closed forms where convenient)
        let n = self.lapse(x);
        let tau = self.tau;
        let j = self.current_up(x);
        let xv = self.shift(x);
        let h = 1e-6;
        let chr = self.christoffel(x);
        let mut out = ZERO_VEC3;
        let g = self.metric(x);
        let ginv = mat_scale(&ident3(), (-2.0 * self.phi(x)).exp());
        let s = self.sigma(x);
        let t = self.stress_up(x);
        let dn = self.dlapse(x);
        let dx = self.dshift(x);
        let rho = self.rho(x);
        for a in 0..3 {
            // X^b D_b j^a
            let mut adv = 0.0;
            for b in 0..3 {
                let mut xp = *x;
                xp[b] += h;
                let mut xm = *x;
                xm[b] -= h;
                let mut dj = (self.current_up(&xp)[a] - self.current_up(&xm)[a]) / (2.0 * h);
                for c in 0..3 {
                    dj += chr[a][b][c] * j[c] * 0.0; // covariant correction applied below
                }
                let mut cov = 0.0;
                for c in 0..3 {
                    cov += chr[a][b][c] * j[c];
                }
                adv += xv[b] * (dj + cov);
            }
            // j^b D^a X_b = j^b g^{ac} g_{bd} D_c X^d
            let mut jdx = 0.0;
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut dcx = dx[c][d];
                        for e in 0..3 {
                            dcx += chr[d][c][e] * xv[e] * 0.0;
                        }
                        let mut cov = 0.0;
                        for e in 0..3 {
                            cov += chr[d][c][e] * xv[e];
                        }
                        jdx += j[b] * ginv[a][c] * g[b][d] * (dcx + cov);
                    }
                }
            }
            // τ D_b (N T^{ab})
            let mut div_nt = 0.0;
            for b in 0..3 {
                let mut xp = *x;
                xp[b] += h;
                let mut xm = *x;
                xm[b] -= h;
                let fp = self.lapse(&xp) * self.stress_up(&xp)[a][b];
                let fm = self.lapse(&xm) * self.stress_up(&xm)[a][b];
                div_nt += (fp - fm) / (2.0 * h);
                for c in 0..3 {
                    div_nt +=
                        chr[a][b][c] * n * t[c][b] + chr[b][b][c] * n * t[a][c];
                }
            }
            // 2 N Σ^a_b j^b
            let mut sig_j = 0.0;
            for b in 0..3 {
                for c in 0..3 {
                    sig_j += ginv[a][c] * s[c][b] * j[b];
                }
            }
            let mut dn_up = 0.0;
            for c in 0..3 {
                dn_up += ginv[a][c] * dn[c];
            }
            out[a] = 5.0 / 3.0 * (3.0 - n) * j[a] - adv - jdx + tau * div_nt
                - 2.0 * n * sig_j
                + 2.0 / tau * rho * dn_up;
        }
        out
    }
}
