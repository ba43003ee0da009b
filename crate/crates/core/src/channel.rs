//! Geometric Rician channels for the BS and jammer links, direct and via the
//! surface, plus bounded-error estimates of the jamming channels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Complex};

pub type Point = [f64; 3];

/// Which side of the surface a user sits on. `R` shares the BS side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    R,
    T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propagation {
    pub wavelength: f64,
    /// Exponent of the direct links.
    pub alpha: f64,
    /// Per-hop exponent of the surface cascade.
    pub alpha_surface: f64,
    pub alpha_nlos: f64,
    pub rician_k: f64,
    /// Multiply direct links by the free-space reference loss `(λ/4π)^2`.
    pub direct_reference_loss: bool,
    pub bs_gain: f64,
    pub jammer_gain: f64,
    pub user_gain: f64,
    /// Element pattern gain towards either terminal.
    pub element_gain: f64,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            wavelength: 299_792_458.0 / 28e9,
            alpha: 3.0,
            alpha_surface: 1.0,
            alpha_nlos: 3.5,
            rician_k: 4.0,
            direct_reference_loss: true,
            bs_gain: 1.0,
            jammer_gain: 1.0,
            user_gain: 1.0,
            element_gain: 1.0,
        }
    }
}

impl Propagation {
    /// Settings that evaluate the closed forms exactly as written: a single
    /// exponent for every hop and no direct-link reference loss.
    pub fn literal() -> Self {
        Self { alpha_surface: 3.0, direct_reference_loss: false, ..Self::default() }
    }

    fn direct_scale(&self) -> f64 {
        if self.direct_reference_loss {
            self.wavelength / (4.0 * PI)
        } else {
            1.0
        }
    }

    /// NLoS exponent of one cascade hop: the LoS hop exponent raised by the
    /// same excess that separates NLoS from LoS on the direct link.
    fn alpha_surface_nlos(&self) -> f64 {
        self.alpha_surface + (self.alpha_nlos - self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.wavelength, self.bs_gain, self.jammer_gain, self.user_gain, self.element_gain];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("wavelength and gains must be positive".into()));
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::InvalidParameter(format!("Rician factor must be >= 0, got {}", self.rician_k)));
        }
        if [self.alpha, self.alpha_surface, self.alpha_nlos].iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidParameter("path-loss exponents must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_distance(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("link distance must be positive, got {d}")))
    }
}

/// LoS coefficient of one transmitter-element-receiver path.
/// `gain` is the product of the four power gains.
pub fn cascaded_los_gain(wavelength: f64, alpha: f64, gain: f64, d1: f64, d2: f64) -> Result<Complex> {
    check_distance(d1)?;
    check_distance(d2)?;
    let mag = wavelength * gain.sqrt() / ((4.0 * PI).powf(1.5) * d1.powf(alpha) * d2.powf(alpha));
    Ok(Complex::from_polar(mag, -2.0 * PI * (d1 + d2) / wavelength))
}

/// LoS coefficient of a direct path; `gain` is `G F G`.
pub fn direct_los_gain(wavelength: f64, alpha: f64, gain: f64, d: f64) -> Result<Complex> {
    check_distance(d)?;
    Ok(Complex::from_polar((gain * d.powf(-alpha)).sqrt(), -2.0 * PI * d / wavelength))
}

/// `pl * h` with `h ~ CN(0, 1)`.
pub fn nlos_gain<R: Rng + ?Sized>(pl: f64, rng: &mut R) -> Complex {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(re, im) * (pl / 2f64.sqrt())
}

/// Path loss of a scattered cascade path (the LoS form with unit gains).
pub fn cascaded_nlos_pl(wavelength: f64, alpha_n: f64, d1: f64, d2: f64) -> Result<f64> {
    Ok(cascaded_los_gain(wavelength, alpha_n, 1.0, d1, d2)?.norm())
}

/// Path loss of a scattered direct path (the LoS form with unit gains).
pub fn direct_nlos_pl(alpha_n: f64, d: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(d.powf(-alpha_n / 2.0))
}

fn rician(k: f64, los: Complex, nlos: Complex) -> Complex {
    if k.is_infinite() {
        return los;
    }
    los * (k / (1.0 + k)).sqrt() + nlos * (1.0 / (1.0 + k)).sqrt()
}

/// Positions of every terminal and element. The surface lies in the plane
/// `y = 0`; users with `y > 0` are on side R together with the BS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_antennas: Vec<Point>,
    pub jammer_antennas: Vec<Point>,
    pub elements: Vec<Point>,
    pub users: Vec<Point>,
    pub sides: Vec<Side>,
    pub propagation: Propagation,
}

impl Geometry {
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn side_of(p: &Point) -> Side {
        if p[1] > 0.0 {
            Side::R
        } else {
            Side::T
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        if self.bs_antennas.is_empty() || self.jammer_antennas.is_empty() || self.elements.is_empty() || self.users.is_empty() {
            return Err(Error::InvalidParameter("geometry needs at least one antenna, element and user of each kind".into()));
        }
        if self.sides.len() != self.users.len() {
            return Err(Error::Dimension("one side tag per user".into()));
        }
        for (k, (u, s)) in self.users.iter().zip(&self.sides).enumerate() {
            if u[1] == 0.0 || Self::side_of(u) != *s {
                return Err(Error::InvalidParameter(format!("user {k} side tag {s:?} does not match its position")));
            }
        }
        Ok(())
    }

    /// LoS coefficient from BS antenna `n` via element `m` to user `k`.
    pub fn bs_cascade_los(&self, m: usize, n: usize, k: usize) -> Result<Complex> {
        let p = &self.propagation;
        let g = p.bs_gain * p.user_gain * p.element_gain * p.element_gain;
        cascaded_los_gain(
            p.wavelength,
            p.alpha_surface,
            g,
            distance(&self.bs_antennas[n], &self.elements[m]),
            distance(&self.elements[m], &self.users[k]),
        )
    }

    pub fn jammer_cascade_los(&self, m: usize, n: usize, k: usize) -> Result<Complex> {
        let p = &self.propagation;
        let g = p.jammer_gain * p.user_gain * p.element_gain * p.element_gain;
        cascaded_los_gain(
            p.wavelength,
            p.alpha_surface,
            g,
            distance(&self.jammer_antennas[n], &self.elements[m]),
            distance(&self.elements[m], &self.users[k]),
        )
    }

    pub fn bs_direct_los(&self, n: usize, k: usize) -> Result<Complex> {
        let p = &self.propagation;
        let los = direct_los_gain(p.wavelength, p.alpha, p.bs_gain * p.user_gain, distance(&self.bs_antennas[n], &self.users[k]))?;
        Ok(los * p.direct_scale())
    }

    pub fn jammer_direct_los(&self, n: usize, k: usize) -> Result<Complex> {
        let p = &self.propagation;
        let los = direct_los_gain(p.wavelength, p.alpha, p.jammer_gain * p.user_gain, distance(&self.jammer_antennas[n], &self.users[k]))?;
        Ok(los * p.direct_scale())
    }
}

/// Channels seen by one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserChannels {
    /// BS to surface to user, `M x N_b`.
    pub h_bs_cascade: CMatrix,
    /// BS to user, length `N_b`.
    pub h_bs_direct: CVector,
    /// Jammer to surface to user, `M x N_j`.
    pub h_jam_cascade: CMatrix,
    /// Jammer to user, length `N_j`.
    pub h_jam_direct: CVector,
    pub est_jam_cascade: CMatrix,
    pub est_jam_direct: CVector,
    /// Radius of the ball around `est_jam_direct` containing the truth.
    pub eps_direct: f64,
    /// Frobenius radius around `est_jam_cascade`.
    pub eps_cascade: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub users: Vec<UserChannels>,
}

fn sample_cascade<R: Rng + ?Sized>(geo: &Geometry, k: usize, jammer: bool, rng: &mut R) -> Result<CMatrix> {
    let p = &geo.propagation;
    let tx = if jammer { &geo.jammer_antennas } else { &geo.bs_antennas };
    let mut out = DMatrix::zeros(geo.elements.len(), tx.len());
    for m in 0..geo.elements.len() {
        for n in 0..tx.len() {
            let los = if jammer { geo.jammer_cascade_los(m, n, k)? } else { geo.bs_cascade_los(m, n, k)? };
            let d1 = distance(&tx[n], &geo.elements[m]);
            let d2 = distance(&geo.elements[m], &geo.users[k]);
            let pl = cascaded_nlos_pl(p.wavelength, p.alpha_surface_nlos(), d1, d2)?;
            out[(m, n)] = rician(p.rician_k, los, nlos_gain(pl, rng));
        }
    }
    Ok(out)
}

fn sample_direct<R: Rng + ?Sized>(geo: &Geometry, k: usize, jammer: bool, rng: &mut R) -> Result<CVector> {
    let p = &geo.propagation;
    let tx = if jammer { &geo.jammer_antennas } else { &geo.bs_antennas };
    let mut out = DVector::zeros(tx.len());
    for n in 0..tx.len() {
        let los = if jammer { geo.jammer_direct_los(n, k)? } else { geo.bs_direct_los(n, k)? };
        let pl = direct_nlos_pl(p.alpha_nlos, distance(&tx[n], &geo.users[k]))? * p.direct_scale();
        out[n] = rician(p.rician_k, los, nlos_gain(pl, rng));
    }
    Ok(out)
}

/// Draws the true channels of every user. Estimates equal the truth and the
/// radii are zero until [`apply_csi_uncertainty`] is called.
pub fn sample_channel_set<R: Rng + ?Sized>(geo: &Geometry, rng: &mut R) -> Result<ChannelSet> {
    geo.validate()?;
    let mut users = Vec::with_capacity(geo.num_users());
    for k in 0..geo.num_users() {
        let h_bs_cascade = sample_cascade(geo, k, false, rng)?;
        let h_bs_direct = sample_direct(geo, k, false, rng)?;
        let h_jam_cascade = sample_cascade(geo, k, true, rng)?;
        let h_jam_direct = sample_direct(geo, k, true, rng)?;
        users.push(UserChannels {
            est_jam_cascade: h_jam_cascade.clone(),
            est_jam_direct: h_jam_direct.clone(),
            h_bs_cascade,
            h_bs_direct,
            h_jam_cascade,
            h_jam_direct,
            eps_direct: 0.0,
            eps_cascade: 0.0,
        });
    }
    Ok(ChannelSet { users })
}

/// A point drawn uniformly from the complex ball of the given radius with
/// `len` complex coordinates.
pub fn uniform_in_ball<R: Rng + ?Sized>(len: usize, radius: f64, rng: &mut R) -> Vec<Complex> {
    let mut v: Vec<Complex> = (0..len)
        .map(|_| Complex::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / (2 * len) as f64);
    for z in &mut v {
        *z *= r / norm;
    }
    v
}

const MAX_CSI_ATTEMPTS: usize = 10_000;

/// Perturbs `truth` to an estimate whose normalized error stays within `zeta`
/// of the estimate's own norm. Returns `(estimate, radius)`.
fn perturb<R: Rng + ?Sized>(truth: &[Complex], zeta: f64, rng: &mut R) -> Result<(Vec<Complex>, f64)> {
    if zeta == 0.0 {
        return Ok((truth.to_vec(), 0.0));
    }
    let tnorm = truth.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for _ in 0..MAX_CSI_ATTEMPTS {
        let delta = uniform_in_ball(truth.len(), zeta * tnorm, rng);
        let est: Vec<Complex> = truth.iter().zip(&delta).map(|(t, d)| t - d).collect();
        let radius = zeta * est.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let dnorm = delta.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if dnorm <= radius {
            return Ok((est, radius));
        }
    }
    Err(Error::Domain(format!("no admissible CSI error found for zeta = {zeta}")))
}

/// Synthesizes estimated jamming channels with normalized error radii
/// `zeta_d` (direct, 2-norm) and `zeta_j` (cascade, Frobenius).
pub fn apply_csi_uncertainty<R: Rng + ?Sized>(set: &mut ChannelSet, zeta_d: f64, zeta_j: f64, rng: &mut R) -> Result<()> {
    if !(zeta_d >= 0.0 && zeta_j >= 0.0) {
        return Err(Error::InvalidParameter("uncertainty levels must be >= 0".into()));
    }
    for u in &mut set.users {
        let (est, eps) = perturb(u.h_jam_direct.as_slice(), zeta_d, rng)?;
        u.est_jam_direct = DVector::from_vec(est);
        u.eps_direct = eps;
        let (est, eps) = perturb(u.h_jam_cascade.as_slice(), zeta_j, rng)?;
        u.est_jam_cascade = DMatrix::from_vec(u.h_jam_cascade.nrows(), u.h_jam_cascade.ncols(), est);
        u.eps_cascade = eps;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wrap(x: f64) -> f64 {
        x.rem_euclid(2.0 * PI)
    }

    fn small_geometry(k: f64) -> Geometry {
        let lambda = 0.0107;
        Geometry {
            bs_antennas: vec![[50.0, 86.6, 0.0], [50.0 + lambda / 2.0, 86.6, 0.0]],
            jammer_antennas: vec![[-50.0, -86.6, 0.0]],
            elements: vec![[0.0, 0.0, 0.0], [0.005, 0.0, 0.0], [0.0, 0.0, 0.005]],
            users: vec![[10.0, 20.0, 0.0], [-15.0, -30.0, 0.0]],
            sides: vec![Side::R, Side::T],
            propagation: Propagation { wavelength: lambda, rician_k: k, ..Propagation::literal() },
        }
    }

    #[test]
    fn cascade_phase_is_path_length() {
        let (l, d1, d2) = (0.0107, 100.0, 50.0);
        let h = cascaded_los_gain(l, 3.0, 1.0, d1, d2).unwrap();
        let want = wrap(-2.0 * PI * (d1 + d2) / l);
        let got = wrap(h.arg());
        assert!((got - want).abs() < 1e-6 || (got - want).abs() > 2.0 * PI - 1e-6);
    }

    #[test]
    fn cascade_magnitude_matches_closed_form() {
        // independent evaluation with logarithms
        let (l, d1, d2, a) = (0.0107f64, 100.0f64, 50.0f64, 3.0f64);
        let log_mag = l.ln() - 1.5 * (4.0 * PI).ln() - a * d1.ln() - a * d2.ln();
        let h = cascaded_los_gain(l, a, 1.0, d1, d2).unwrap();
        assert!((h.norm().ln() - log_mag).abs() < 1e-12);
    }

    #[test]
    fn doubling_first_hop_scales_by_an_eighth() {
        let a = cascaded_los_gain(0.0107, 3.0, 1.0, 40.0, 25.0).unwrap().norm();
        let b = cascaded_los_gain(0.0107, 3.0, 1.0, 80.0, 25.0).unwrap().norm();
        assert!((b / a - 0.125).abs() < 1e-14);
    }

    #[test]
    fn direct_examples() {
        assert!((direct_los_gain(0.0107, 3.0, 1.0, 1.0).unwrap().norm() - 1.0).abs() < 1e-15);
        assert!((direct_los_gain(0.0107, 3.0, 1.0, 100.0).unwrap().norm() - 1e-3).abs() < 1e-15);
        let h = direct_los_gain(0.0107, 3.0, 1.0, 0.0107).unwrap();
        assert!((h.arg().abs()) < 1e-9 || (h.arg().abs() - PI * 2.0).abs() < 1e-9);
        assert!((h.re - 0.0107f64.powf(-1.5)).abs() < 1e-6 * h.norm());
    }

    #[test]
    fn zero_distance_is_rejected() {
        assert!(matches!(direct_los_gain(0.01, 3.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(cascaded_los_gain(0.01, 3.0, 1.0, 0.0, 5.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nlos_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pl = 0.37;
        let n = 100_000;
        let draws: Vec<Complex> = (0..n).map(|_| nlos_gain(pl, &mut rng)).collect();
        let power = draws.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        assert!((power / (pl * pl) - 1.0).abs() < 0.02);
        let mean = draws.iter().sum::<Complex>() / n as f64;
        let sigma = pl / (2.0 * n as f64).sqrt();
        assert!(mean.re.abs() < 3.0 * sigma && mean.im.abs() < 3.0 * sigma);
    }

    #[test]
    fn nlos_is_seed_deterministic() {
        let a = nlos_gain(1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = nlos_gain(1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn huge_rician_factor_gives_los() {
        let geo = small_geometry(1e9);
        let set = sample_channel_set(&geo, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..2 {
            for m in 0..3 {
                for n in 0..2 {
                    let los = geo.bs_cascade_los(m, n, k).unwrap();
                    assert!((set.users[k].h_bs_cascade[(m, n)] - los).norm() <= 1e-4 * los.norm());
                }
                let los = geo.jammer_cascade_los(m, 0, k).unwrap();
                assert!((set.users[k].h_jam_cascade[(m, 0)] - los).norm() <= 1e-4 * los.norm());
            }
            let los = geo.bs_direct_los(0, k).unwrap();
            assert!((set.users[k].h_bs_direct[0] - los).norm() <= 1e-4 * los.norm());
        }
    }

    #[test]
    fn zero_rician_factor_is_zero_mean() {
        let geo = small_geometry(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4000;
        let mut mean = Complex::new(0.0, 0.0);
        let mut power = 0.0;
        for _ in 0..n {
            let z = sample_channel_set(&geo, &mut rng).unwrap().users[0].h_bs_direct[0];
            mean += z;
            power += z.norm_sqr();
        }
        mean /= n as f64;
        let sd = (power / n as f64).sqrt();
        assert!(mean.norm() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn rician_random_part_variance() {
        let geo = small_geometry(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let los = geo.bs_direct_los(1, 0).unwrap() * (4.0f64 / 5.0).sqrt();
        let pl = direct_nlos_pl(geo.propagation.alpha_nlos, distance(&geo.bs_antennas[1], &geo.users[0])).unwrap();
        let var = (0..n)
            .map(|_| (sample_channel_set(&geo, &mut rng).unwrap().users[0].h_bs_direct[1] - los).norm_sqr())
            .sum::<f64>()
            / n as f64;
        let want = pl * pl / 5.0;
        assert!((var / want - 1.0).abs() < 0.03, "{var} vs {want}");
    }

    #[test]
    fn zero_uncertainty_keeps_truth() {
        let geo = small_geometry(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut set = sample_channel_set(&geo, &mut rng).unwrap();
        apply_csi_uncertainty(&mut set, 0.0, 0.0, &mut rng).unwrap();
        for u in &set.users {
            assert_eq!(u.est_jam_direct, u.h_jam_direct);
            assert_eq!(u.est_jam_cascade, u.h_jam_cascade);
            assert_eq!((u.eps_direct, u.eps_cascade), (0.0, 0.0));
        }
    }

    #[test]
    fn normalized_error_within_paper_level() {
        let geo = small_geometry(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zeta = 0.1f64.sqrt();
        let mut set = sample_channel_set(&geo, &mut rng).unwrap();
        apply_csi_uncertainty(&mut set, zeta, zeta, &mut rng).unwrap();
        for u in &set.users {
            let ratio = (&u.h_jam_direct - &u.est_jam_direct).norm() / u.est_jam_direct.norm();
            assert!(ratio <= zeta);
            assert!((u.eps_direct / u.est_jam_direct.norm() - zeta).abs() < 1e-12);
        }
    }

    #[test]
    fn channels_are_bit_identical_per_seed() {
        let geo = small_geometry(4.0);
        let a = sample_channel_set(&geo, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample_channel_set(&geo, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounds_hold_over_many_draws() {
        let geo = small_geometry(4.0);
        let zeta = 0.1f64.sqrt();
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut set = sample_channel_set(&geo, &mut rng).unwrap();
            apply_csi_uncertainty(&mut set, zeta, zeta, &mut rng).unwrap();
            for u in &set.users {
                assert!((&u.h_jam_direct - &u.est_jam_direct).norm() <= u.eps_direct);
                assert!((&u.h_jam_cascade - &u.est_jam_cascade).norm() <= u.eps_cascade);
            }
        }
    }

    #[test]
    fn side_mismatch_is_rejected() {
        let mut geo = small_geometry(4.0);
        geo.sides[0] = Side::T;
        assert!(geo.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn los_decreases_with_distance(d1 in 0.1f64..500.0, d2 in 0.1f64..500.0, f in 1.01f64..3.0, a in 0.5f64..4.0) {
            let base = cascaded_los_gain(0.0107, a, 1.0, d1, d2).unwrap().norm();
            proptest::prop_assert!(cascaded_los_gain(0.0107, a, 1.0, d1 * f, d2).unwrap().norm() < base);
            proptest::prop_assert!(cascaded_los_gain(0.0107, a, 1.0, d1, d2 * f).unwrap().norm() < base);
            proptest::prop_assert!(direct_los_gain(0.0107, a, 1.0, d1 * f).unwrap().norm() < direct_los_gain(0.0107, a, 1.0, d1).unwrap().norm());
        }

        #[test]
        fn ball_samples_stay_inside(len in 1usize..20, radius in 0.0f64..10.0, seed in 0u64..1000) {
            let v = uniform_in_ball(len, radius, &mut ChaCha8Rng::seed_from_u64(seed));
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            proptest::prop_assert!(norm <= radius * (1.0 + 1e-12));
        }
    }
}
