//! Ground-truth link evaluation: the jammer's beam, realized jamming power,
//! per-user SINR and rates on the true channels.

use crate::channel::{distance, ChannelSet, Point, Side, UserChannels};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Complex};
use crate::surface::{desired_vector, effective_channel, jamming_vector};

/// Surface vectors seen by each user: the one on its desired path and the
/// one on its jamming path. A zero vector stands for an absent surface path.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePaths {
    pub desired: Vec<CVector>,
    pub jamming: Vec<CVector>,
}

impl SurfacePaths {
    /// Omni-surface paths: reflection and refraction picked by side.
    pub fn omni(sides: &[Side], g_r: &CVector, g_t: &CVector) -> Self {
        Self {
            desired: sides.iter().map(|&s| desired_vector(s, g_r, g_t).clone()).collect(),
            jamming: sides.iter().map(|&s| jamming_vector(s, g_r, g_t).clone()).collect(),
        }
    }

    pub fn none(users: usize, elements: usize) -> Self {
        Self { desired: vec![CVector::zeros(elements); users], jamming: vec![CVector::zeros(elements); users] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkReport {
    pub sinr: Vec<f64>,
    /// `log₂(1 + SINR_k)` in bits/s/Hz.
    pub rates: Vec<f64>,
    /// Realized jamming power per user in watts.
    pub jamming: Vec<f64>,
    pub noise: f64,
    pub desired: Vec<f64>,
    /// Residual inter-user interference per user in watts.
    pub interference: Vec<f64>,
}

impl LinkReport {
    pub fn sum_rate(&self) -> f64 {
        sum_rate(&self.sinr)
    }
}

pub fn sum_rate(sinr: &[f64]) -> f64 {
    sinr.iter().map(|s| (1.0 + s).log2()).sum()
}

/// Matched-filter beam of power `p_j` toward the user closest to `jammer`,
/// built from that user's estimated direct channel.
pub fn jammer_beamformer(est_direct: &[CVector], users: &[Point], jammer: &Point, p_j: f64) -> Result<CVector> {
    if !(p_j > 0.0) {
        return Err(Error::InvalidParameter(format!("jammer power must be positive, got {p_j}")));
    }
    if users.is_empty() || users.len() != est_direct.len() {
        return Err(Error::Dimension(format!("{} users with {} channels", users.len(), est_direct.len())));
    }
    let near = (0..users.len())
        .min_by(|&a, &b| distance(&users[a], jammer).total_cmp(&distance(&users[b], jammer)))
        .expect("nonempty");
    let h = &est_direct[near];
    let n = h.norm();
    if !(n > 0.0) {
        return Err(Error::Domain(format!("estimated channel of nearest user {near} is zero")));
    }
    Ok(h * Complex::new(p_j.sqrt() / n, 0.0))
}

/// Centroid of an antenna array.
pub fn array_center(antennas: &[Point]) -> Point {
    let n = antennas.len().max(1) as f64;
    let mut c = [0.0; 3];
    for a in antennas {
        for i in 0..3 {
            c[i] += a[i] / n;
        }
    }
    c
}

/// `|(h_J + H_J^H g)^H v_J|²` on the true jamming channels.
pub fn received_jamming_power(user: &UserChannels, g_jam: &CVector, v_j: &CVector) -> Result<f64> {
    let h = effective_channel(&user.h_jam_direct, &user.h_jam_cascade, g_jam)?;
    if h.len() != v_j.len() {
        return Err(Error::Dimension(format!("jammer beam has {} entries, channel {}", v_j.len(), h.len())));
    }
    Ok(h.dotc(v_j).norm_sqr())
}

/// Effective BS channels stacked as rows, `K x N_b`.
pub fn effective_bs_channels(set: &ChannelSet, paths: &SurfacePaths) -> Result<CMatrix> {
    let k = set.users.len();
    let nb = set.users.first().map_or(0, |u| u.h_bs_direct.len());
    let mut h = CMatrix::zeros(k, nb);
    for (i, (u, g)) in set.users.iter().zip(&paths.desired).enumerate() {
        let row = effective_channel(&u.h_bs_direct, &u.h_bs_cascade, g)?;
        h.row_mut(i).copy_from(&row.adjoint());
    }
    Ok(h)
}

/// SINR of user `k` with beams `beams` (`N_b x K`).
pub fn user_sinr(
    set: &ChannelSet,
    paths: &SurfacePaths,
    beams: &CMatrix,
    v_j: &CVector,
    noise: f64,
    k: usize,
) -> Result<f64> {
    let r = evaluate_link(set, paths, beams, v_j, noise)?;
    Ok(r.sinr[k])
}

pub fn evaluate_link(set: &ChannelSet, paths: &SurfacePaths, beams: &CMatrix, v_j: &CVector, noise: f64) -> Result<LinkReport> {
    let k_users = set.users.len();
    if paths.desired.len() != k_users || paths.jamming.len() != k_users || beams.ncols() != k_users {
        return Err(Error::Dimension("surface paths, beams and users disagree".into()));
    }
    let h = effective_bs_channels(set, paths)?;
    if h.ncols() != beams.nrows() {
        return Err(Error::Dimension(format!("beams have {} rows, channels {} antennas", beams.nrows(), h.ncols())));
    }
    let gains = &h * beams;
    let mut report = LinkReport {
        sinr: Vec::with_capacity(k_users),
        rates: Vec::with_capacity(k_users),
        jamming: Vec::with_capacity(k_users),
        noise,
        desired: Vec::with_capacity(k_users),
        interference: Vec::with_capacity(k_users),
    };
    for k in 0..k_users {
        let desired = gains[(k, k)].norm_sqr();
        let interference: f64 = (0..k_users).filter(|&j| j != k).map(|j| gains[(k, j)].norm_sqr()).sum();
        let jam = received_jamming_power(&set.users[k], &paths.jamming[k], v_j)?;
        let sinr = desired / (interference + jam + noise);
        report.desired.push(desired);
        report.interference.push(interference);
        report.jamming.push(jam);
        report.sinr.push(sinr);
        report.rates.push((1.0 + sinr).log2());
    }
    Ok(report)
}

/// Removes the direct BS link of every T-side user.
pub fn apply_blockage(set: &mut ChannelSet, sides: &[Side]) {
    for (u, s) in set.users.iter_mut().zip(sides) {
        if *s == Side::T {
            u.h_bs_direct.fill(Complex::new(0.0, 0.0));
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}
