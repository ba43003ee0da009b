//! Zero-forcing precoding with water-filling power allocation at the BS.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, Complex};

pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// ZF directions, per-user received powers and the assembled beamformer.
#[derive(Clone, Debug, PartialEq)]
pub struct Precoder {
    /// `N_b x K` zero-forcing directions.
    pub directions: CMatrix,
    pub powers: Vec<f64>,
    /// `directions * diag(sqrt(powers))`
    pub beams: CMatrix,
}

impl Precoder {
    pub fn total_power(&self) -> f64 {
        self.beams.norm_squared()
    }
}

/// `H^H (H H^H)^{-1}` for a `K x N_b` channel with `K <= N_b`.
pub fn zero_forcing(h: &CMatrix, condition_cap: f64) -> Result<CMatrix> {
    let (k, n) = h.shape();
    if k == 0 || k > n {
        return Err(Error::Dimension(format!("zero forcing needs 0 < K <= N_b, got K={k}, N_b={n}")));
    }
    let sv = h.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || smax / smin > condition_cap {
        return Err(Error::IllConditioned(format!(
            "channel condition number {:e} exceeds cap {condition_cap:e}",
            smax / smin
        )));
    }
    let gram = h * h.adjoint();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("H H^H is not positive definite".into()))?;
    Ok(h.adjoint() * chol.inverse())
}

/// Diagonal of `V^H V`: the power cost of one unit of received power per user.
pub fn power_costs(directions: &CMatrix) -> Vec<f64> {
    (0..directions.ncols()).map(|k| directions.column(k).norm_squared()).collect()
}

/// Water-filling over `p_k = max(1/μ - ν_k n_k, 0) / ν_k` with
/// `Σ ν_k p_k = P_T`, where `n_k` is the interference-plus-noise power.
///
/// `μ` is bracketed and bisected to 1e-10 relative, which fixes the active set;
/// the water level is then solved in closed form on that set so the budget is
/// met to rounding.
pub fn water_filling(nu: &[f64], noise: &[f64], p_total: f64) -> Result<Vec<f64>> {
    if nu.len() != noise.len() || nu.is_empty() {
        return Err(Error::Dimension("water filling needs equal, nonempty ν and noise lists".into()));
    }
    if !(p_total > 0.0 && p_total.is_finite()) {
        return Err(Error::InvalidParameter(format!("total power must be positive, got {p_total}")));
    }
    if nu.iter().chain(noise).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("ν and noise must be positive".into()));
    }
    let floor: Vec<f64> = nu.iter().zip(noise).map(|(a, b)| a * b).collect();
    let used = |mu: f64| floor.iter().map(|w| (1.0 / mu - w).max(0.0)).sum::<f64>();
    let wmax = floor.iter().copied().fold(0.0, f64::max);
    let wmin = floor.iter().copied().fold(f64::INFINITY, f64::min);
    let numax = nu.iter().copied().fold(0.0, f64::max);
    let mut lo = 1.0 / (wmax + p_total * numax);
    let mut hi = 1.0 / wmin;
    while used(lo) < p_total {
        lo *= 0.5;
    }
    while used(hi) > p_total {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if used(mid) > p_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = 1.0 / (0.5 * (lo + hi));
    let mut active: Vec<bool> = floor.iter().map(|&w| w < level).collect();
    // closed-form level on the active set, shrinking it if a floor ends up above
    let level = loop {
        let count = active.iter().filter(|&&a| a).count().max(1);
        let sum: f64 = floor.iter().zip(&active).filter(|(_, &a)| a).map(|(w, _)| w).sum();
        let l = (p_total + sum) / count as f64;
        match (0..floor.len()).filter(|&k| active[k] && floor[k] >= l).max_by(|&a, &b| floor[a].total_cmp(&floor[b])) {
            Some(k) if count > 1 => active[k] = false,
            _ => break l,
        }
    };
    Ok(floor
        .iter()
        .zip(nu)
        .zip(&active)
        .map(|((w, n), &a)| if a { (level - w).max(0.0) / n } else { 0.0 })
        .collect())
}

pub fn assemble_precoder(directions: CMatrix, powers: Vec<f64>) -> Result<Precoder> {
    if directions.ncols() != powers.len() {
        return Err(Error::Dimension(format!("{} directions but {} powers", directions.ncols(), powers.len())));
    }
    if powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidParameter("powers must be nonnegative".into()));
    }
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        powers.len(),
        powers.iter().map(|p| Complex::new(p.sqrt(), 0.0)),
    ));
    let beams = &directions * scale;
    Ok(Precoder { directions, powers, beams })
}

/// ZF directions for `h` with powers water-filled against `noise`.
pub fn design(h: &CMatrix, noise: &[f64], p_total: f64, condition_cap: f64) -> Result<Precoder> {
    let dirs = zero_forcing(h, condition_cap)?;
    let p = water_filling(&power_costs(&dirs), noise, p_total)?;
    assemble_precoder(dirs, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channel(rng: &mut ChaCha8Rng, k: usize, n: usize) -> CMatrix {
        DMatrix::from_fn(k, n, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rate(p: &[f64], noise: &[f64]) -> f64 {
        p.iter().zip(noise).map(|(p, n)| (1.0 + p / n).log2()).sum()
    }

    #[test]
    fn identity_channel() {
        let v = zero_forcing(&DMatrix::identity(3, 3), DEFAULT_CONDITION_CAP).unwrap();
        assert!((v - CMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn orthonormal_rows_give_adjoint() {
        let s = 0.5f64.sqrt();
        let h = DMatrix::from_row_slice(2, 2, &[Complex::new(s, 0.0), Complex::new(0.0, s), Complex::new(s, 0.0), Complex::new(0.0, -s)]);
        let v = zero_forcing(&h, DEFAULT_CONDITION_CAP).unwrap();
        assert!((v - h.adjoint()).norm() < 1e-14);
    }

    #[test]
    fn random_zf_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_channel(&mut rng, 2, 4);
        let v = zero_forcing(&h, DEFAULT_CONDITION_CAP).unwrap();
        assert!((&h * v - CMatrix::identity(2, 2)).norm() <= 1e-9);
    }

    #[test]
    fn rank_deficient_channel_fails_loudly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = random_channel(&mut rng, 1, 4);
        let h = DMatrix::from_fn(2, 4, |_, j| row[(0, j)]);
        assert!(matches!(zero_forcing(&h, DEFAULT_CONDITION_CAP), Err(Error::IllConditioned(_))));
        assert!(matches!(zero_forcing(&random_channel(&mut rng, 5, 4), DEFAULT_CONDITION_CAP), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_user_takes_everything() {
        assert_eq!(water_filling(&[1.0], &[0.3], 2.5).unwrap(), vec![2.5]);
    }

    #[test]
    fn symmetric_users_split_evenly() {
        let p = water_filling(&[1.5, 1.5], &[0.2, 0.2], 3.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_mu_grid_oracle() {
        let (nu, noise, pt) = ([1.0, 2.0], [0.1, 0.1], 1.0);
        let p = water_filling(&nu, &noise, pt).unwrap();
        // grid over the water level 1/μ; every point is a feasible allocation
        let floors = [nu[0] * noise[0], nu[1] * noise[1]];
        let hi_level = floors[1] + pt;
        let mut best = f64::NEG_INFINITY;
        for i in 0..1_000_000 {
            let level = hi_level * i as f64 / 999_999.0;
            let q: Vec<f64> = (0..2).map(|k| (level - floors[k]).max(0.0) / nu[k]).collect();
            if q[0] * nu[0] + q[1] * nu[1] <= pt * (1.0 + 1e-12) {
                best = best.max(rate(&q, &noise));
            }
        }
        assert!((rate(&p, &noise) - best).abs() < 1e-4);
        assert!(rate(&p, &noise) >= best - 1e-12);
    }

    #[test]
    fn budget_validation() {
        assert!(matches!(water_filling(&[1.0], &[1.0], 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(water_filling(&[1.0], &[1.0], -2.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn zero_power_gives_zero_beams() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dirs = zero_forcing(&random_channel(&mut rng, 2, 4), DEFAULT_CONDITION_CAP).unwrap();
        let pc = assemble_precoder(dirs, vec![0.0, 0.0]).unwrap();
        assert_eq!(pc.beams.norm(), 0.0);
    }

    #[test]
    fn isometry_power() {
        let s = 0.5f64.sqrt();
        let h = DMatrix::from_row_slice(2, 2, &[Complex::new(s, 0.0), Complex::new(s, 0.0), Complex::new(s, 0.0), Complex::new(-s, 0.0)]);
        let pc = assemble_precoder(zero_forcing(&h, DEFAULT_CONDITION_CAP).unwrap(), vec![1.0, 1.0]).unwrap();
        assert!((pc.total_power() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn received_power_equals_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_channel(&mut rng, 3, 5);
        let pc = design(&h, &[0.2, 0.5, 0.1], 4.0, DEFAULT_CONDITION_CAP).unwrap();
        for k in 0..3 {
            let g = (h.row(k) * pc.beams.column(k))[(0, 0)].norm_sqr();
            assert!((g - pc.powers[k]).abs() <= 1e-8 * pc.powers[k].max(1e-300));
        }
        assert!(pc.total_power() <= 4.0 + 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn zf_cancels_interference(seed in 0u64..5000, k in 1usize..5, extra in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_channel(&mut rng, k, k + extra);
            let pc = design(&h, &vec![0.3; k], 2.0, DEFAULT_CONDITION_CAP).unwrap();
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        let leak = (h.row(a) * pc.beams.column(b))[(0, 0)].norm();
                        proptest::prop_assert!(leak <= 1e-8 * h.row(a).norm() * pc.beams.column(b).norm());
                    }
                }
            }
        }

        #[test]
        fn water_filling_kkt(seed in 0u64..5000, k in 1usize..8, pt in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nu: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..5.0)).collect();
            let noise: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..3.0)).collect();
            let p = water_filling(&nu, &noise, pt).unwrap();
            let level = (0..k).filter(|&i| p[i] > 0.0).map(|i| nu[i] * (noise[i] + p[i])).next().unwrap();
            for i in 0..k {
                if p[i] > 0.0 {
                    proptest::prop_assert!((level - nu[i] * (noise[i] + p[i])).abs() <= 1e-8 * level.max(1.0));
                } else {
                    proptest::prop_assert!(level <= nu[i] * noise[i] + 1e-8 * level.max(1.0));
                }
            }
            let spent: f64 = (0..k).map(|i| nu[i] * p[i]).sum();
            proptest::prop_assert!((spent - pt).abs() <= 1e-8 * pt.max(1.0));
        }
    }
}
