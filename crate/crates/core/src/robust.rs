//! Phase design for the omni-surface: jammer elimination by Cauchy-Schwarz,
//! a semidefinite relaxation of the lifted phase vector, successive convex
//! approximation of the rate objective, S-procedure robustification,
//! Gaussian randomization and coupled discrete local search.
//!
//! All quantities handed to the conic solver are normalized by the noise
//! power: desired powers by `σ²` and jamming terms by `σ² / c` with
//! `c = P̂_J / (1 - ε_PJ)`.

use std::f64::consts::{LN_2, TAU};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{ChannelSet, Side};
use crate::error::{Error, Result};
use crate::numerics::{
    solve_conic, BlockId, CMatrix, CVector, Complex, ConicProblem, ConicSolution, HermitianMatrix, Lmi, LmiTerm,
    SolveStatus, SolverOptions, Term,
};
use crate::precoder::Precoder;
use crate::surface::{desired_vector, effective_channel, jamming_vector, surface_response, Codebook, PhaseConfig};

/// Jammer power knowledge, per-user thresholds and CSI error radii.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustParams {
    /// Estimated jammer power in watts.
    pub p_hat_j: f64,
    /// Relative error bound on `p_hat_j`.
    pub eps_pj: f64,
    /// Jamming thresholds in watts; `f64::INFINITY` drops the constraint.
    pub tau: Vec<f64>,
    /// Radius of the direct jamming channel error ball.
    pub eps_direct: Vec<f64>,
    /// Frobenius radius of the cascaded jamming channel error.
    pub eps_cascade: Vec<f64>,
}

impl RobustParams {
    pub fn validate(&self, users: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps_pj) {
            return Err(Error::InvalidParameter(format!("jammer power error bound must be in [0, 1), got {}", self.eps_pj)));
        }
        if !(self.p_hat_j >= 0.0 && self.p_hat_j.is_finite()) {
            return Err(Error::InvalidParameter(format!("estimated jammer power must be finite and >= 0, got {}", self.p_hat_j)));
        }
        if self.tau.len() != users || self.eps_direct.len() != users || self.eps_cascade.len() != users {
            return Err(Error::Dimension(format!("robust parameters must list {users} users")));
        }
        if self.tau.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("jamming thresholds must be positive".into()));
        }
        if self.eps_direct.iter().chain(&self.eps_cascade).any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("uncertainty radii must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// `P̂_J / (1 - ε_PJ)`, the largest jammer power consistent with the estimate.
    pub fn jammer_power_bound(&self) -> f64 {
        self.p_hat_j / (1.0 - self.eps_pj)
    }

    pub fn radius_sq(&self, k: usize) -> f64 {
        self.eps_direct[k].powi(2) + self.eps_cascade[k].powi(2)
    }
}

/// What the designer may know about one user: exact data channels and the
/// estimated jamming channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedUser {
    pub side: Side,
    /// `M x N_b`
    pub bs_cascade: CMatrix,
    pub bs_direct: CVector,
    /// `M x N_j`
    pub jam_cascade: CMatrix,
    pub jam_direct: CVector,
}

pub fn estimated_users(set: &ChannelSet, sides: &[Side]) -> Result<Vec<EstimatedUser>> {
    if set.users.len() != sides.len() {
        return Err(Error::Dimension(format!("{} users but {} side tags", set.users.len(), sides.len())));
    }
    Ok(set
        .users
        .iter()
        .zip(sides)
        .map(|(u, &side)| EstimatedUser {
            side,
            bs_cascade: u.h_bs_cascade.clone(),
            bs_direct: u.h_bs_direct.clone(),
            jam_cascade: u.est_jam_cascade.clone(),
            jam_direct: u.est_jam_direct.clone(),
        })
        .collect())
}

/// Cauchy-Schwarz bound `P̂_J/(1-ε_PJ) ‖row‖²` on `|row^H v_J|²` over the jammer power ball.
pub fn jamming_upper_bound(row: &CVector, p_hat_j: f64, eps_pj: f64) -> Result<f64> {
    if !(eps_pj < 1.0) {
        return Err(Error::InvalidParameter(format!("jammer power error bound must be < 1, got {eps_pj}")));
    }
    Ok(p_hat_j / (1.0 - eps_pj) * row.norm_squared())
}

/// Worst case of the Cauchy-Schwarz bound over the channel error balls:
/// `c (‖ĥ + Ĥ^H g‖ + ε_d + ε_J ‖g‖)²`.
pub fn worst_case_jamming(user: &EstimatedUser, g_jam: &CVector, robust: &RobustParams, k: usize) -> Result<f64> {
    let eff = effective_channel(&user.jam_direct, &user.jam_cascade, g_jam)?;
    let r = eff.norm() + robust.eps_direct[k] + robust.eps_cascade[k] * g_jam.norm();
    Ok(robust.jammer_power_bound() * r * r)
}

/// Sound jamming bound of every user for the given phases.
pub fn jamming_bounds(users: &[EstimatedUser], cfg: &PhaseConfig, cb: &Codebook, robust: &RobustParams) -> Result<Vec<f64>> {
    let (g_r, g_t) = surface_response(cfg, cb);
    users
        .iter()
        .enumerate()
        .map(|(k, u)| worst_case_jamming(u, jamming_vector(u.side, &g_r, &g_t), robust, k))
        .collect()
}

/// Per-element rotation `d` with `q̃_t = diag(d) q̃_r`. With slope 1 it is
/// exact; otherwise it is exact only at the anchor phases.
fn coupling_diag(m: usize, slope: f64, intercept: f64, anchor: Option<&[f64]>) -> CVector {
    DVector::from_fn(m + 1, |i, _| {
        if i == m {
            Complex::new(1.0, 0.0)
        } else {
            let a = anchor.map_or(0.0, |a| a[i]);
            Complex::from_polar(1.0, -((slope - 1.0) * a + intercept))
        }
    })
}

/// Entrywise multiplier `C` with `Ξ_t = C ∘ Ξ_r` for the lifted vectors.
pub fn coupling_matrix(m: usize, slope: f64, intercept: f64) -> Result<CMatrix> {
    if (slope - 1.0).abs() > 1e-12 {
        return Err(Error::UnsupportedCoupling(slope));
    }
    let d = coupling_diag(m, slope, intercept, None);
    Ok(&d * d.adjoint())
}

/// `q̃ = [q; 1]` with `q[m] = e^{-jφ_m}`.
pub fn lifted_vector(phi: &[f64]) -> CVector {
    DVector::from_fn(phi.len() + 1, |i, _| if i == phi.len() { Complex::new(1.0, 0.0) } else { Complex::from_polar(1.0, -phi[i]) })
}

/// Reflection phases of a lifted vector after fixing its last entry to 1.
pub fn phases_of(q: &CVector) -> Vec<f64> {
    let n = q.len() - 1;
    let rot = if q[n].norm() > 0.0 { q[n].conj() / q[n].norm() } else { Complex::new(1.0, 0.0) };
    (0..n).map(|m| (-(q[m] * rot).arg()).rem_euclid(TAU)).collect()
}

/// Lifted channels of one user in the reflection frame.
#[derive(Clone, Debug)]
struct LiftedUser {
    /// Desired power is `f^H Ξ f`, normalized by `σ²`.
    desired: CVector,
    /// Jamming bound is `tr(F Ξ F^H)`, normalized by `σ²/c`.
    jam: CMatrix,
    radius_sq: f64,
    tau: f64,
}

/// Everything the phase design sees, with the precoder held fixed.
#[derive(Clone, Debug)]
pub struct AnalogModel<'a> {
    pub users: &'a [EstimatedUser],
    pub precoder: &'a Precoder,
    pub codebook: &'a Codebook,
    pub robust: &'a RobustParams,
    /// Noise power `σ²` in watts.
    pub noise: f64,
}

impl<'a> AnalogModel<'a> {
    pub fn new(
        users: &'a [EstimatedUser],
        precoder: &'a Precoder,
        codebook: &'a Codebook,
        robust: &'a RobustParams,
        noise: f64,
    ) -> Result<Self> {
        robust.validate(users.len())?;
        codebook.validate()?;
        if !(noise > 0.0) {
            return Err(Error::InvalidParameter(format!("noise power must be positive, got {noise}")));
        }
        if precoder.beams.ncols() != users.len() {
            return Err(Error::Dimension(format!("precoder serves {} users, model has {}", precoder.beams.ncols(), users.len())));
        }
        let m = users.first().map_or(0, |u| u.bs_cascade.nrows());
        for u in users {
            if u.bs_cascade.nrows() != m || u.jam_cascade.nrows() != m {
                return Err(Error::Dimension("users disagree on the element count".into()));
            }
            if u.bs_cascade.ncols() != precoder.beams.nrows() || u.bs_direct.len() != precoder.beams.nrows() {
                return Err(Error::Dimension("BS channel does not match the precoder".into()));
            }
            if u.jam_cascade.ncols() != u.jam_direct.len() {
                return Err(Error::Dimension("jammer channel shapes disagree".into()));
            }
        }
        Ok(Self { users, precoder, codebook, robust, noise })
    }

    pub fn elements(&self) -> usize {
        self.users[0].bs_cascade.nrows()
    }

    pub fn jammer_antennas(&self) -> usize {
        self.users[0].jam_direct.len()
    }

    /// `c / σ²`
    fn jam_scale(&self) -> f64 {
        self.robust.jammer_power_bound() / self.noise
    }

    fn gamma(&self, via_reflection: bool) -> f64 {
        if via_reflection {
            self.codebook.gamma_r
        } else {
            self.codebook.gamma_t
        }
    }

    /// Lifted channels with the refraction frame mapped through `d`.
    fn lift(&self, d: &CVector) -> Vec<LiftedUser> {
        let m = self.elements();
        let sigma = self.noise.sqrt();
        let js = self.jam_scale().sqrt();
        self.users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let beam = self.precoder.beams.column(k);
                let reflect_desired = u.side == Side::R;
                let a = &u.bs_cascade * beam;
                let b = (u.bs_direct.adjoint() * beam)[(0, 0)];
                let gd = self.gamma(reflect_desired);
                let mut f = DVector::from_fn(m + 1, |i, _| if i == m { b } else { a[i] * gd });
                if !reflect_desired {
                    f = d.map(|x| x.conj()).component_mul(&f);
                }
                f /= Complex::new(sigma, 0.0);

                let gj = self.gamma(!reflect_desired);
                let mut jam = CMatrix::zeros(u.jam_direct.len(), m + 1);
                for n in 0..u.jam_direct.len() {
                    for i in 0..m {
                        jam[(n, i)] = u.jam_cascade[(i, n)].conj() * gj;
                    }
                    jam[(n, m)] = u.jam_direct[n];
                }
                // The jamming path of an R-side user runs through refraction.
                if reflect_desired {
                    for i in 0..=m {
                        let di = d[i];
                        jam.column_mut(i).iter_mut().for_each(|z| *z *= di);
                    }
                }
                jam *= Complex::new(js, 0.0);
                LiftedUser {
                    desired: f,
                    jam,
                    radius_sq: self.robust.radius_sq(k) * self.jam_scale(),
                    tau: self.robust.tau[k] / self.noise,
                }
            })
            .collect()
    }

    /// Desired powers `|h_eff^H v_k|²` in watts.
    pub fn desired_powers(&self, cfg: &PhaseConfig) -> Result<Vec<f64>> {
        let (g_r, g_t) = surface_response(cfg, self.codebook);
        self.users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let h = effective_channel(&u.bs_direct, &u.bs_cascade, desired_vector(u.side, &g_r, &g_t))?;
                Ok((h.adjoint() * self.precoder.beams.column(k))[(0, 0)].norm_sqr())
            })
            .collect()
    }

    pub fn jamming_bounds(&self, cfg: &PhaseConfig) -> Result<Vec<f64>> {
        jamming_bounds(self.users, cfg, self.codebook, self.robust)
    }

    /// `Σ log₂(1 + d_k / (J̄_k + σ²))` with the sound jamming bound and no
    /// inter-user interference, the objective the phase design maximizes.
    pub fn sum_rate(&self, cfg: &PhaseConfig) -> Result<f64> {
        let d = self.desired_powers(cfg)?;
        let j = self.jamming_bounds(cfg)?;
        Ok(d.iter().zip(&j).map(|(d, j)| (1.0 + d / (j + self.noise)).log2()).sum())
    }

    /// Largest relative threshold excess `(J̄_k - τ_k)/τ_k`; `<= 0` means feasible.
    pub fn max_violation(&self, cfg: &PhaseConfig) -> Result<f64> {
        let j = self.jamming_bounds(cfg)?;
        Ok(j.iter()
            .zip(&self.robust.tau)
            .filter(|(_, t)| t.is_finite())
            .map(|(j, t)| (j - t) / t)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn config_of(&self, q: &CVector) -> PhaseConfig {
        PhaseConfig::continuous(self.codebook, phases_of(q))
    }
}

/// One SCA iterate. Jamming slacks `upsilon` and multipliers `rho` are in
/// the normalized units of the subproblem.
#[derive(Clone, Debug)]
pub struct SdrIterate {
    pub xi_r: HermitianMatrix,
    pub xi_t: HermitianMatrix,
    pub u: Vec<f64>,
    pub t: Vec<f64>,
    pub upsilon: Vec<Option<HermitianMatrix>>,
    pub rho: Vec<Option<f64>>,
    pub iteration: usize,
}

/// Tangent points of `log₂(1+u)` used in every subproblem besides the previous iterate.
fn cut_grid() -> Vec<f64> {
    (0..=60).map(|i| 10f64.powf(-3.0 + 9.0 * i as f64 / 60.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Sca,
    /// Minimize the total threshold excess.
    Elastic,
}

/// A built subproblem together with its decision handles. Per-user
/// variables are normalized by the previous iterate; read them back through
/// the accessor methods.
#[derive(Clone, Debug)]
pub struct ScaSubproblem {
    pub problem: ConicProblem,
    pub xi: BlockId,
    pub upsilon: Vec<Option<BlockId>>,
    pub rho: Vec<Option<BlockId>>,
    pub u: Vec<Option<BlockId>>,
    pub t: Vec<Option<BlockId>>,
    pub excess: Vec<Option<BlockId>>,
    /// Largest block or LMI dimension in the problem.
    pub max_dim: usize,
    d: CVector,
    u_scale: Vec<f64>,
    t_scale: Vec<f64>,
    rho_scale: Vec<f64>,
}

impl ScaSubproblem {
    pub fn u_value(&self, sol: &ConicSolution, k: usize) -> Option<f64> {
        self.u[k].map(|b| sol.scalar(b) * self.u_scale[k])
    }

    pub fn t_value(&self, sol: &ConicSolution, k: usize) -> Option<f64> {
        self.t[k].map(|b| sol.scalar(b) * self.t_scale[k])
    }

    /// Jamming slack `Υ_k` in normalized units.
    pub fn upsilon_value(&self, sol: &ConicSolution, k: usize) -> Option<HermitianMatrix> {
        self.upsilon[k].map(|b| HermitianMatrix::symmetrized(sol.block(b).as_matrix() * Complex::new(self.t_scale[k], 0.0)))
    }

    pub fn rho_value(&self, sol: &ConicSolution, k: usize) -> Option<f64> {
        self.rho[k].map(|b| sol.scalar(b) * self.rho_scale[k])
    }
}

fn neg_outer(f: &CVector) -> HermitianMatrix {
    HermitianMatrix::symmetrized(f * f.adjoint() * Complex::new(-1.0, 0.0))
}

fn gram(f: &CMatrix) -> HermitianMatrix {
    HermitianMatrix::symmetrized(f.adjoint() * f)
}

/// Anchor phases for the frozen-argument coupling: `-arg Ξ(m, M)`.
fn anchor_of(xi: &HermitianMatrix) -> Vec<f64> {
    let n = xi.dim() - 1;
    (0..n).map(|m| -xi[(m, n)].arg()).collect()
}

fn frame(model: &AnalogModel, prev: &HermitianMatrix, fixed_point: bool) -> Result<CVector> {
    let cb = model.codebook;
    let m = model.elements();
    if (cb.slope - 1.0).abs() <= 1e-12 {
        Ok(coupling_diag(m, 1.0, cb.intercept, None))
    } else if fixed_point {
        Ok(coupling_diag(m, cb.slope, cb.intercept, Some(&anchor_of(prev))))
    } else {
        Err(Error::UnsupportedCoupling(cb.slope))
    }
}

/// Adds `Υ ⪰ 0`, `ρ >= 0` and the S-procedure LMI tying them to `Ξ` with
/// every jamming quantity divided by `t0`. Returns the handles and the LMI
/// dimension.
fn add_robust_lmi(p: &mut ConicProblem, xi: BlockId, lu: &LiftedUser, t0: f64) -> (BlockId, BlockId, usize) {
    let (nj, m1) = (lu.jam.nrows(), lu.jam.ncols());
    let ups = p.add_block(nj, crate::numerics::Cone::Psd);
    let rho = p.add_scalar(true);
    let n = nj + m1;
    // congruence diag(I/√t0, I) of the plain LMI, ρ replaced by ρ/radius²
    let mut g = CMatrix::zeros(n, m1);
    g.view_mut((0, 0), (nj, m1)).copy_from(&(&lu.jam / Complex::new(t0.sqrt(), 0.0)));
    for i in 0..m1 {
        g[(nj + i, i)] = Complex::new(1.0, 0.0);
    }
    let mut lift_ups = CMatrix::zeros(n, nj);
    for i in 0..nj {
        lift_ups[(i, i)] = Complex::new(1.0, 0.0);
    }
    let rho_coef = DMatrix::from_fn(n, n, |i, j| {
        if i != j {
            Complex::new(0.0, 0.0)
        } else if i < nj {
            Complex::new(-lu.radius_sq / t0, 0.0)
        } else {
            Complex::new(1.0, 0.0)
        }
    });
    p.add_lmi(Lmi {
        constant: HermitianMatrix::zeros(n),
        terms: vec![
            LmiTerm::Congruence { block: xi, map: Some(g), scale: -1.0 },
            LmiTerm::Congruence { block: ups, map: Some(lift_ups), scale: 1.0 },
            LmiTerm::Scaled { block: rho, coef: HermitianMatrix::symmetrized(rho_coef) },
        ],
    });
    (ups, rho, n)
}

fn build(model: &AnalogModel, prev: &SdrIterate, mode: Mode, nominal_ok: bool, fixed_point: bool) -> Result<ScaSubproblem> {
    let m = model.elements();
    let nj = model.jammer_antennas();
    let d = frame(model, &prev.xi_r, fixed_point)?;
    let lifted = model.lift(&d);
    let jam_on = model.robust.p_hat_j > 0.0;
    if jam_on && !nominal_ok && lifted.iter().any(|u| u.radius_sq == 0.0) {
        return Err(Error::ZeroRadii);
    }

    let mut p = ConicProblem::new();
    let xi = p.add_block(m + 1, crate::numerics::Cone::Psd);
    for i in 0..=m {
        p.fix_entry(xi, i, i, Complex::new(1.0, 0.0));
    }
    let mut max_dim = m + 1;
    let k_users = lifted.len();
    let mut sub = ScaSubproblem {
        problem: ConicProblem::new(),
        xi,
        upsilon: vec![None; k_users],
        rho: vec![None; k_users],
        u: vec![None; k_users],
        t: vec![None; k_users],
        excess: vec![None; k_users],
        max_dim: 0,
        d,
        u_scale: vec![1.0; k_users],
        t_scale: vec![1.0; k_users],
        rho_scale: vec![1.0; k_users],
    };
    let cuts = cut_grid();

    for (k, lu) in lifted.iter().enumerate() {
        // Jamming quantities are divided by t0 so that every variable stays O(1).
        let t0 = if mode == Mode::Sca { prev.t[k] } else { 1.0 };
        sub.t_scale[k] = t0;
        // a user without a beam has rate zero whatever the phases
        let idle = lu.desired.iter().all(|z| z.norm_sqr() == 0.0);
        let rated = mode == Mode::Sca && !idle;
        if !rated && !(jam_on && lu.tau.is_finite()) {
            continue;
        }
        // Jamming bound over t0 as a list of terms.
        let mut jam_terms = Vec::new();
        if jam_on {
            if lu.radius_sq > 0.0 {
                let (ups, rho, n) = add_robust_lmi(&mut p, xi, lu, t0);
                max_dim = max_dim.max(n);
                jam_terms.push(Term::Trace(ups, HermitianMatrix::identity(nj)));
                sub.upsilon[k] = Some(ups);
                sub.rho[k] = Some(rho);
                sub.rho_scale[k] = lu.radius_sq;
            } else {
                jam_terms.push(Term::Trace(xi, gram(&(&lu.jam / Complex::new(t0.sqrt(), 0.0)))));
            }
        }

        match mode {
            Mode::Elastic => {
                if jam_on && lu.tau.is_finite() {
                    let e = p.add_scalar(true);
                    let mut terms = jam_terms.clone();
                    terms.push(Term::scalar(e, -1.0));
                    p.add_inequality(terms, lu.tau);
                    p.maximize(Term::scalar(e, -1.0 / lu.tau));
                    sub.excess[k] = Some(e);
                }
            }
            Mode::Sca => {
                if jam_on && lu.tau.is_finite() {
                    p.add_inequality(jam_terms.clone(), lu.tau / t0);
                }
                if idle {
                    continue;
                }
                // t = t0 t̂, u = u0 û, s = u0 t0 ŝ
                let u0 = prev.u[k];
                sub.u_scale[k] = u0;
                let t = p.add_scalar(true);
                let u = p.add_scalar(true);
                let s = p.add_scalar(true);
                let w = p.add_scalar(false);
                // t >= 1 + jamming
                let mut terms = jam_terms;
                terms.push(Term::scalar(t, -1.0));
                p.add_inequality(terms, -1.0 / t0);
                // s <= f^H Ξ f
                let fs = &lu.desired / Complex::new((u0 * t0).sqrt(), 0.0);
                p.add_inequality(vec![Term::scalar(s, 1.0), Term::Trace(xi, neg_outer(&fs))], 0.0);
                // s >= a t² + b u² with a = u0/(2 t0), b = t0/(2 u0)
                let ra = 0.5f64.sqrt();
                let rb = ra;
                let e = |i: usize, j: usize, v: f64| {
                    HermitianMatrix::symmetrized(DMatrix::from_fn(3, 3, |a, b| {
                        if (a, b) == (i, j) || (a, b) == (j, i) {
                            Complex::new(v, 0.0)
                        } else {
                            Complex::new(0.0, 0.0)
                        }
                    }))
                };
                let mut constant = DMatrix::zeros(3, 3);
                constant[(1, 1)] = Complex::new(1.0, 0.0);
                constant[(2, 2)] = Complex::new(1.0, 0.0);
                p.add_lmi(Lmi {
                    constant: HermitianMatrix::symmetrized(constant),
                    terms: vec![
                        LmiTerm::Scaled { block: s, coef: e(0, 0, 1.0) },
                        LmiTerm::Scaled { block: t, coef: e(0, 1, ra) },
                        LmiTerm::Scaled { block: u, coef: e(0, 2, rb) },
                    ],
                });
                // w <= log₂(1+u) through tangent cuts
                for &x in cuts.iter().chain(std::iter::once(&u0)) {
                    let slope = 1.0 / ((1.0 + x) * LN_2);
                    p.add_inequality(vec![Term::scalar(w, 1.0), Term::scalar(u, -slope * u0)], (1.0 + x).log2() - slope * x);
                }
                p.maximize(Term::scalar(w, 1.0));
                sub.t[k] = Some(t);
                sub.u[k] = Some(u);
            }
        }
    }
    sub.problem = p;
    sub.max_dim = max_dim;
    Ok(sub)
}

/// The convex subproblem around `prev`: lifted phases `Ξ_r` with unit
/// diagonal, jamming slacks `Υ_k` tied to `Ξ` by the S-procedure LMI, the
/// linearized rate constraint and a cut model of `Σ log₂(1+u_k)`.
///
/// Errors with [`Error::ZeroRadii`] when the jammer is active and some user
/// has no channel uncertainty; that user needs the nominal path taken by
/// [`solve_phase_sdr`].
pub fn build_sca_subproblem(model: &AnalogModel, prev: &SdrIterate) -> Result<ScaSubproblem> {
    if prev.u.iter().chain(&prev.t).any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidParameter("previous SCA iterate needs positive u and t".into()));
    }
    build(model, prev, Mode::Sca, false, false)
}

/// One SCA record: iteration, objective, largest normalized constraint
/// violation and solver status.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub status: SolveStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalogOptions {
    pub sca_tol: f64,
    pub sca_max_iters: usize,
    pub randomization_trials: usize,
    /// Top-two eigenvalue ratio above which the principal eigenvector is used directly.
    pub eigen_ratio: f64,
    /// Freeze the phase arguments between SCA iterations when the coupling slope is not 1.
    pub fixed_point: bool,
    pub local_search_passes: usize,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for AnalogOptions {
    fn default() -> Self {
        Self {
            sca_tol: 1e-4,
            sca_max_iters: 30,
            randomization_trials: 100,
            eigen_ratio: 1e4,
            fixed_point: false,
            local_search_passes: 1,
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdrOutcome {
    /// Continuous phases recovered from the final `Ξ_r`.
    pub config: PhaseConfig,
    /// Surrogate sum rate of `config`.
    pub rate: f64,
    /// Whether `config` satisfies every finite threshold under the sound bound.
    pub feasible: bool,
    pub trace: Vec<ScaRecord>,
    pub iterate: SdrIterate,
}

fn solver_options(opts: &AnalogOptions, sub: &ScaSubproblem) -> SolverOptions {
    let mut s = opts.solver.clone();
    s.max_block_dim = s.max_block_dim.max(sub.max_dim);
    s
}

/// Minimum normalized `tr Υ` allowed by the LMI at a rank-one `Ξ = q̃ q̃^H`:
/// `(‖F q̃‖ + ε √((M+1) N_j))²`.
fn rank_one_jamming(lu: &LiftedUser, q: &CVector) -> f64 {
    let e = (&lu.jam * q).norm();
    if lu.radius_sq > 0.0 {
        let r = (lu.radius_sq * q.norm_squared() * lu.jam.nrows() as f64).sqrt();
        (e + r).powi(2)
    } else {
        e * e
    }
}

fn solution_jamming(sub: &ScaSubproblem, sol: &ConicSolution, lu: &LiftedUser, k: usize) -> f64 {
    match sub.upsilon_value(sol, k) {
        Some(u) => u.trace(),
        None => gram(&lu.jam).inner(sol.block(sub.xi)),
    }
}

/// Solves the elastic problem and returns the users whose thresholds
/// cannot be met, plus the minimizing `Ξ` and normalized jamming levels.
fn elastic(model: &AnalogModel, prev: &SdrIterate, opts: &AnalogOptions) -> Result<(Vec<usize>, HermitianMatrix, Vec<f64>)> {
    let sub = build(model, prev, Mode::Elastic, true, opts.fixed_point)?;
    let lifted = model.lift(&sub.d);
    if sub.excess.iter().all(Option::is_none) {
        let jam = (0..lifted.len()).map(|_| 0.0).collect();
        return Ok((Vec::new(), prev.xi_r.clone(), jam));
    }
    let sol = solve_conic(&sub.problem, &solver_options(opts, &sub))?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Solver("elastic threshold problem reported infeasible".into()));
    }
    let violators = sub
        .excess
        .iter()
        .enumerate()
        .filter_map(|(k, e)| e.and_then(|e| (sol.scalar(e) > 1e-6 * lifted[k].tau).then_some(k)))
        .collect();
    let jam = lifted.iter().enumerate().map(|(k, lu)| solution_jamming(&sub, &sol, lu, k)).collect();
    Ok((violators, sol.block(sub.xi).clone(), jam))
}

fn objective(u: &[f64]) -> f64 {
    u.iter().map(|u| (1.0 + u).log2()).sum()
}

/// Largest `θ ∈ [0,1]` step toward `to` maximizing the concave `Σ log₂(1+u)`.
fn line_search(from: &[f64], to: &[f64]) -> f64 {
    let f = |th: f64| objective(&from.iter().zip(to).map(|(a, b)| a + th * (b - a)).collect::<Vec<_>>());
    if f(1.0) >= f(0.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let th = 0.5 * (lo + hi);
    if f(th) >= f(0.0) {
        th
    } else {
        0.0
    }
}

fn blend(a: &HermitianMatrix, b: &HermitianMatrix, th: f64) -> HermitianMatrix {
    HermitianMatrix::symmetrized(a.as_matrix() * Complex::new(1.0 - th, 0.0) + b.as_matrix() * Complex::new(th, 0.0))
}

fn violation_of(lifted: &[LiftedUser], jam: &[f64]) -> f64 {
    lifted
        .iter()
        .zip(jam)
        .filter(|(lu, _)| lu.tau.is_finite())
        .map(|(lu, j)| (j - lu.tau) / lu.tau)
        .fold(0.0, f64::max)
}

/// Runs the SCA iterations from `init` and recovers continuous phases.
pub fn solve_phase_sdr(model: &AnalogModel, init: &PhaseConfig, opts: &AnalogOptions) -> Result<SdrOutcome> {
    let m = model.elements();
    if init.len() != m {
        return Err(Error::Dimension(format!("initial configuration has {} elements, model has {m}", init.len())));
    }
    let q0 = lifted_vector(&init.phi_r);
    let xi0 = HermitianMatrix::outer(&q0);
    let k_users = model.users.len();
    let mut prev = SdrIterate {
        xi_t: xi0.clone(),
        xi_r: xi0,
        u: vec![1.0; k_users],
        t: vec![1.0; k_users],
        upsilon: vec![None; k_users],
        rho: vec![None; k_users],
        iteration: 0,
    };
    let d = frame(model, &prev.xi_r, opts.fixed_point)?;
    let lifted = model.lift(&d);
    let jam_on = model.robust.p_hat_j > 0.0;
    let mut jam: Vec<f64> = lifted.iter().map(|lu| if jam_on { rank_one_jamming(lu, &q0) } else { 0.0 }).collect();
    if violation_of(&lifted, &jam) > 0.0 {
        let (violators, xi, j) = elastic(model, &prev, opts)?;
        if !violators.is_empty() {
            return Err(Error::Infeasible { users: violators });
        }
        prev.xi_r = xi;
        jam = j;
    }
    for (k, lu) in lifted.iter().enumerate() {
        let t0 = 1.0 + jam[k].max(0.0);
        let d0 = lu.desired.dotc(&(prev.xi_r.as_matrix() * &lu.desired)).re.max(0.0);
        prev.t[k] = t0;
        prev.u[k] = (d0 / t0).max(1e-12);
    }
    let mut obj = objective(&prev.u);
    let mut trace = vec![ScaRecord { iteration: 0, objective: obj, max_violation: violation_of(&lifted, &jam), status: SolveStatus::Optimal }];

    for it in 1..=opts.sca_max_iters {
        let sub = build(model, &prev, Mode::Sca, true, opts.fixed_point)?;
        let sol = solve_conic(&sub.problem, &solver_options(opts, &sub))?;
        match sol.status {
            SolveStatus::Infeasible => {
                let (violators, _, _) = elastic(model, &prev, opts)?;
                if violators.is_empty() {
                    return Err(Error::Solver("SCA subproblem infeasible at a feasible start".into()));
                }
                return Err(Error::Infeasible { users: violators });
            }
            SolveStatus::MaxIterations if sol.primal_residual > 1e-5 => {
                trace.push(ScaRecord { iteration: it, objective: obj, max_violation: sol.primal_residual, status: sol.status });
                break;
            }
            _ => {}
        }
        let lifted = model.lift(&sub.d);
        let u_new: Vec<f64> = (0..k_users).map(|k| sub.u_value(&sol, k).unwrap_or(0.0)).collect();
        let th = line_search(&prev.u, &u_new);
        if th == 0.0 {
            trace.push(ScaRecord { iteration: it, objective: obj, max_violation: 0.0, status: sol.status });
            break;
        }
        let mix = |a: f64, b: f64| a + th * (b - a);
        let xi_new = blend(&prev.xi_r, sol.block(sub.xi), th);
        let mut next = SdrIterate {
            xi_t: HermitianMatrix::symmetrized(DMatrix::from_diagonal(&sub.d) * xi_new.as_matrix() * DMatrix::from_diagonal(&sub.d).adjoint()),
            xi_r: xi_new,
            u: prev.u.iter().zip(&u_new).map(|(a, b)| mix(*a, *b)).collect(),
            t: (0..k_users).map(|k| mix(prev.t[k], sub.t_value(&sol, k).unwrap_or(prev.t[k]))).collect(),
            upsilon: (0..k_users).map(|k| sub.upsilon_value(&sol, k)).collect(),
            rho: (0..k_users).map(|k| sub.rho_value(&sol, k)).collect(),
            iteration: it,
        };
        for u in &mut next.u {
            *u = u.max(1e-12);
        }
        let jam: Vec<f64> = lifted.iter().enumerate().map(|(k, lu)| if jam_on { solution_jamming(&sub, &sol, lu, k) } else { 0.0 }).collect();
        let new_obj = objective(&next.u);
        trace.push(ScaRecord { iteration: it, objective: new_obj, max_violation: violation_of(&lifted, &jam).max(sol.primal_residual), status: sol.status });
        let change = (new_obj - obj).abs() / obj.abs().max(1e-12);
        prev = next;
        obj = new_obj;
        if change < opts.sca_tol {
            break;
        }
    }

    let (config, rate, feasible) = recover(model, &prev.xi_r, opts)?;
    Ok(SdrOutcome { config, rate, feasible, trace, iterate: prev })
}

/// Rank-one recovery: principal eigenvector when `Ξ` is numerically rank
/// one, Gaussian randomization otherwise. Falls back to the least-violating
/// candidate when none meets the thresholds.
fn recover(model: &AnalogModel, xi: &HermitianMatrix, opts: &AnalogOptions) -> Result<(PhaseConfig, f64, bool)> {
    let (vals, vecs) = xi.eigh();
    let n = vals.len();
    let top = vecs.column(n - 1).into_owned();
    let ratio = if n > 1 && vals[n - 2] > 0.0 { vals[n - 1] / vals[n - 2] } else { f64::INFINITY };
    let eig_cfg = model.config_of(&unit_modulus(&top));
    let eig_rate = model.sum_rate(&eig_cfg)?;
    let eig_ok = model.max_violation(&eig_cfg)? <= 0.0;
    if ratio > opts.eigen_ratio && eig_ok {
        return Ok((eig_cfg, eig_rate, true));
    }
    let rate = |q: &CVector| model.sum_rate(&model.config_of(q)).unwrap_or(f64::NEG_INFINITY);
    let ok = |q: &CVector| model.max_violation(&model.config_of(q)).map(|v| v <= 0.0).unwrap_or(false);
    match randomize_rank_one(xi, opts.randomization_trials, opts.seed, rate, ok) {
        Ok(q) => {
            let cfg = model.config_of(&q);
            let r = model.sum_rate(&cfg)?;
            if eig_ok && eig_rate >= r {
                Ok((eig_cfg, eig_rate, true))
            } else {
                Ok((cfg, r, true))
            }
        }
        Err(Error::NoFeasibleCandidate { .. }) if eig_ok => Ok((eig_cfg, eig_rate, true)),
        Err(Error::NoFeasibleCandidate { .. }) => {
            let mut best = (eig_cfg.clone(), model.max_violation(&eig_cfg)?);
            for q in gaussian_candidates(xi, opts.randomization_trials, opts.seed) {
                let cfg = model.config_of(&q);
                let v = model.max_violation(&cfg)?;
                if v < best.1 {
                    best = (cfg, v);
                }
            }
            let r = model.sum_rate(&best.0)?;
            Ok((best.0, r, false))
        }
        Err(e) => Err(e),
    }
}

/// Entrywise projection onto the unit circle with the last entry rotated to 1.
pub fn unit_modulus(q: &CVector) -> CVector {
    let n = q.len();
    let rot = if q[n - 1].norm() > 0.0 { q[n - 1].conj() / q[n - 1].norm() } else { Complex::new(1.0, 0.0) };
    q.map(|z| {
        let z = z * rot;
        if z.norm() > 0.0 {
            z / z.norm()
        } else {
            Complex::new(1.0, 0.0)
        }
    })
}

/// Candidate `i` is drawn from its own stream so any prefix of the
/// candidate list is reproducible on its own.
fn gaussian_candidates(xi: &HermitianMatrix, trials: usize, seed: u64) -> impl Iterator<Item = CVector> {
    let (vals, vecs) = xi.eigh();
    let n = vals.len();
    let root = vecs * DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|v| Complex::new(v.max(0.0).sqrt(), 0.0))));
    (0..trials).map(move |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let z = DVector::from_fn(n, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        unit_modulus(&(&root * z))
    })
}

/// Draws `trials` vectors from `CN(0, Ξ)`, projects each to unit modulus and
/// returns the best feasible one under `objective`.
pub fn randomize_rank_one<F, G>(xi: &HermitianMatrix, trials: usize, seed: u64, objective: F, feasible: G) -> Result<CVector>
where
    F: Fn(&CVector) -> f64,
    G: Fn(&CVector) -> bool,
{
    if !xi.is_psd(1e-8) {
        return Err(Error::Domain("randomization needs a positive semidefinite matrix".into()));
    }
    let mut best: Option<(f64, CVector)> = None;
    for q in gaussian_candidates(xi, trials, seed) {
        if !feasible(&q) {
            continue;
        }
        let v = objective(&q);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, q));
        }
    }
    best.map(|(_, q)| q).ok_or(Error::NoFeasibleCandidate { trials })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalSearchOutcome {
    pub config: PhaseConfig,
    /// Set when the final configuration exceeds some threshold.
    pub violated: bool,
    /// Elements committed without any threshold-satisfying option.
    pub fallback_elements: Vec<usize>,
}

/// Element-by-element choice between the two codebook entries bracketing
/// each continuous reflection phase. Elements not yet visited keep their
/// continuous phases; committed ones stay fixed. `violation` returns the
/// largest threshold excess, `<= 0` when every threshold holds.
pub fn discretize_local_search<F, G>(
    cfg: &PhaseConfig,
    cb: &Codebook,
    passes: usize,
    rate: F,
    violation: G,
) -> Result<LocalSearchOutcome>
where
    F: Fn(&PhaseConfig) -> f64,
    G: Fn(&PhaseConfig) -> f64,
{
    let m = cfg.len();
    let brackets: Vec<(usize, usize)> = cfg
        .phi_r
        .iter()
        .map(|&p| {
            let (lo, hi) = cb.bracket(p);
            let off = (p - cb.entries[lo].0).rem_euclid(TAU);
            // a phase sitting on a codebook entry has nothing to choose
            if off.min(TAU - off) < 1e-12 {
                (lo, lo)
            } else {
                (lo, hi)
            }
        })
        .collect();
    let mut work = PhaseConfig { phi_r: cfg.phi_r.clone(), phi_t: cfg.phi_t.clone(), indices: None };
    let mut chosen = vec![0usize; m];
    let mut fallback = Vec::new();
    for _ in 0..passes.max(1) {
        fallback.clear();
        for el in 0..m {
            let (lo, hi) = brackets[el];
            let mut best: Option<(bool, f64, usize)> = None;
            for idx in [lo, hi] {
                work.phi_r[el] = cb.entries[idx].0;
                work.phi_t[el] = cb.entries[idx].1;
                let v = violation(&work);
                let ok = v <= 0.0;
                let score = if ok { rate(&work) } else { -v };
                let better = match best {
                    None => true,
                    Some((bok, bs, _)) => (ok && !bok) || (ok == bok && score > bs),
                };
                if better {
                    best = Some((ok, score, idx));
                }
            }
            let (ok, _, idx) = best.expect("two candidates");
            if !ok {
                fallback.push(el);
            }
            chosen[el] = idx;
            work.phi_r[el] = cb.entries[idx].0;
            work.phi_t[el] = cb.entries[idx].1;
        }
    }
    if !fallback.is_empty() || violation(&PhaseConfig::from_indices(cb, chosen.clone())?) > 0.0 {
        repair(cb, &brackets, &mut chosen, &rate, &violation)?;
    }
    let config = PhaseConfig::from_indices(cb, chosen)?;
    let violated = violation(&config) > 0.0;
    Ok(LocalSearchOutcome { config, violated, fallback_elements: fallback })
}

/// Runs when the greedy pass ends above some threshold. Coordinate passes
/// over the bracket choices first drive the largest violation down; once
/// feasible, one more pass raises the rate without leaving feasibility.
fn repair<F, G>(cb: &Codebook, brackets: &[(usize, usize)], chosen: &mut [usize], rate: &F, violation: &G) -> Result<()>
where
    F: Fn(&PhaseConfig) -> f64,
    G: Fn(&PhaseConfig) -> f64,
{
    const MAX_PASSES: usize = 10;
    let eval = |idx: &[usize]| -> Result<(f64, f64)> {
        let c = PhaseConfig::from_indices(cb, idx.to_vec())?;
        Ok((violation(&c), rate(&c)))
    };
    let (mut v, mut r) = eval(chosen)?;
    for _ in 0..MAX_PASSES {
        if v <= 0.0 {
            break;
        }
        let flip = |c: &mut [usize], el: usize| c[el] = if c[el] == brackets[el].0 { brackets[el].1 } else { brackets[el].0 };
        let mut moved = false;
        for el in 0..chosen.len() {
            flip(chosen, el);
            let (v2, r2) = eval(chosen)?;
            if v2 < v || (v2 == v && r2 > r) {
                (v, r, moved) = (v2, r2, true);
            } else {
                flip(chosen, el);
            }
        }
        if !moved {
            // the largest violation is a max over users; a single flip can
            // help one user only by hurting another
            'pairs: for a in 0..chosen.len() {
                for b in a + 1..chosen.len() {
                    flip(chosen, a);
                    flip(chosen, b);
                    let (v2, r2) = eval(chosen)?;
                    if v2 < v {
                        (v, r, moved) = (v2, r2, true);
                        break 'pairs;
                    }
                    flip(chosen, a);
                    flip(chosen, b);
                }
            }
        }
        if !moved {
            break;
        }
    }
    if v <= 0.0 {
        for el in 0..chosen.len() {
            let (lo, hi) = brackets[el];
            let keep = chosen[el];
            chosen[el] = if keep == lo { hi } else { lo };
            let (v2, r2) = eval(chosen)?;
            if v2 <= 0.0 && r2 > r {
                r = r2;
            } else {
                chosen[el] = keep;
            }
        }
    }
    Ok(())
}

/// Rounds every element to its nearest codebook entry.
pub fn nearest_config(cfg: &PhaseConfig, cb: &Codebook) -> Result<PhaseConfig> {
    PhaseConfig::from_indices(cb, cfg.phi_r.iter().map(|&p| cb.nearest(p)).collect())
}
