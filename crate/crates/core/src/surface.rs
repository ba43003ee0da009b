//! Omni-surface element model: the coupled reflect/refract codebook, the
//! per-element response vectors and the resulting end-to-end channels.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::channel::Side;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Complex};

/// Allowed deviation from the linear coupling for externally supplied pairs.
const COUPLING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub bits: u32,
    /// `(phi_r, phi_t)` in radians.
    pub entries: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub gamma_r: f64,
    pub gamma_t: f64,
}

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Uniform reflection grid with `phi_t = s phi_r + v (mod 2π)` and a lossless
/// amplitude split with `(Γr/Γt)^2 = power_ratio`.
pub fn build_codebook(bits: u32, slope: f64, intercept: f64, power_ratio: f64) -> Result<Codebook> {
    if bits == 0 || bits > 16 {
        return Err(Error::InvalidParameter(format!("codebook bits must be in 1..=16, got {bits}")));
    }
    if !(power_ratio > 0.0 && power_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("power ratio must be positive, got {power_ratio}")));
    }
    let n = 1usize << bits;
    let entries = (0..n)
        .map(|l| {
            let r = TAU * l as f64 / n as f64;
            (r, wrap(slope * r + intercept))
        })
        .collect();
    Ok(Codebook {
        bits,
        entries,
        slope,
        intercept,
        gamma_r: (power_ratio / (1.0 + power_ratio)).sqrt(),
        gamma_t: (1.0 / (1.0 + power_ratio)).sqrt(),
    })
}

impl Codebook {
    /// Checks entry count, coupling and energy conservation.
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 || self.entries.len() != 1usize << self.bits {
            return Err(Error::InvalidParameter(format!(
                "codebook with {} bits must list {} pairs, found {}",
                self.bits,
                1usize << self.bits.min(16),
                self.entries.len()
            )));
        }
        for (l, &(r, t)) in self.entries.iter().enumerate() {
            if circ_dist(t, self.slope * r + self.intercept) > COUPLING_TOL {
                return Err(Error::InvalidParameter(format!("codebook entry {l} violates the phase coupling")));
            }
        }
        if self.gamma_r < 0.0 || self.gamma_t < 0.0 || self.gamma_r.powi(2) + self.gamma_t.powi(2) > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter("amplitudes must satisfy Γr² + Γt² <= 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Codebook indices sorted by reflection phase.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| wrap(self.entries[a].0).total_cmp(&wrap(self.entries[b].0)));
        idx
    }

    /// The two entries whose reflection phases enclose `phi_r` on the circle,
    /// lower one first. They are neighbours in the cyclic phase order.
    pub fn bracket(&self, phi_r: f64) -> (usize, usize) {
        let order = self.order();
        let p = wrap(phi_r);
        let n = order.len();
        for w in 0..n {
            let lo = order[w];
            let hi = order[(w + 1) % n];
            let a = wrap(self.entries[lo].0);
            let span = (wrap(self.entries[hi].0) - a).rem_euclid(TAU);
            if (p - a).rem_euclid(TAU) < span {
                return (lo, hi);
            }
        }
        (order[n - 1], order[0])
    }

    /// Entry closest to `phi_r` on the circle.
    pub fn nearest(&self, phi_r: f64) -> usize {
        let (a, b) = self.bracket(phi_r);
        if circ_dist(self.entries[a].0, phi_r) <= circ_dist(self.entries[b].0, phi_r) {
            a
        } else {
            b
        }
    }
}

/// Per-element phases; `indices` is set when every element uses a codebook entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phi_r: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub indices: Option<Vec<usize>>,
}

impl PhaseConfig {
    pub fn from_indices(cb: &Codebook, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= cb.len()) {
            return Err(Error::InvalidParameter(format!("codebook index {bad} out of range")));
        }
        Ok(Self {
            phi_r: indices.iter().map(|&i| cb.entries[i].0).collect(),
            phi_t: indices.iter().map(|&i| cb.entries[i].1).collect(),
            indices: Some(indices),
        })
    }

    /// Continuous phases with the refraction phase following the coupling line.
    pub fn continuous(cb: &Codebook, phi_r: Vec<f64>) -> Self {
        let phi_t = phi_r.iter().map(|&p| wrap(cb.slope * p + cb.intercept)).collect();
        Self { phi_r: phi_r.into_iter().map(wrap).collect(), phi_t, indices: None }
    }

    pub fn len(&self) -> usize {
        self.phi_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_r.is_empty()
    }

    pub fn is_discrete(&self) -> bool {
        self.indices.is_some()
    }
}

/// Element-wise responses `g_r[m] = Γr e^{-jφr_m}` and `g_t[m] = Γt e^{-jφt_m}`.
pub fn surface_response(cfg: &PhaseConfig, cb: &Codebook) -> (CVector, CVector) {
    let g_r = CVector::from_iterator(cfg.len(), cfg.phi_r.iter().map(|&p| Complex::from_polar(cb.gamma_r, -p)));
    let g_t = CVector::from_iterator(cfg.len(), cfg.phi_t.iter().map(|&p| Complex::from_polar(cb.gamma_t, -p)));
    (g_r, g_t)
}

/// `(direct^H + g^H cascade)^H`, i.e. `direct + cascade^H g`.
pub fn effective_channel(direct: &CVector, cascade: &CMatrix, g: &CVector) -> Result<CVector> {
    if cascade.ncols() != direct.len() || cascade.nrows() != g.len() {
        return Err(Error::Dimension(format!(
            "cascade is {}x{}, direct has {} entries, surface vector has {}",
            cascade.nrows(),
            cascade.ncols(),
            direct.len(),
            g.len()
        )));
    }
    Ok(direct + cascade.adjoint() * g)
}

/// Surface vector that carries the BS signal to a user on `side`.
pub fn desired_vector<'a>(side: Side, g_r: &'a CVector, g_t: &'a CVector) -> &'a CVector {
    match side {
        Side::R => g_r,
        Side::T => g_t,
    }
}

/// Surface vector that carries the jammer signal to a user on `side`.
pub fn jamming_vector<'a>(side: Side, g_r: &'a CVector, g_t: &'a CVector) -> &'a CVector {
    match side {
        Side::R => g_t,
        Side::T => g_r,
    }
}

/// Default codebook phase offset between refraction and reflection.
pub const DEFAULT_INTERCEPT: f64 = PI / 2.0;
