//! Experiment configuration, read from JSON. Every field has a default so a
//! config file only needs the values it changes.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::Propagation;
use crate::error::{Error, Result};
use crate::link::dbm_to_watts;
use crate::numerics::SolverOptions;
use crate::robust::AnalogOptions;
use crate::surface::{build_codebook, Codebook, DEFAULT_INTERCEPT};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ios,
    IrsSignal,
    IrsJam,
    NoRis,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Ios, Scheme::IrsSignal, Scheme::IrsJam, Scheme::NoRis];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ios => "ios",
            Scheme::IrsSignal => "irs_signal",
            Scheme::IrsJam => "irs_jam",
            Scheme::NoRis => "no_ris",
        }
    }

    /// Parses a scheme name or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Scheme>> {
        if s == "all" {
            Ok(Self::ALL.to_vec())
        } else {
            Ok(vec![s.parse()?])
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// Path-loss model; the wavelength follows `carrier_hz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLoss {
    pub alpha: f64,
    pub alpha_surface: f64,
    pub alpha_nlos: f64,
    pub rician_k: f64,
    pub direct_reference_loss: bool,
    pub bs_gain: f64,
    pub jammer_gain: f64,
    pub user_gain: f64,
    pub element_gain: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        let p = Propagation::default();
        Self {
            alpha: p.alpha,
            alpha_surface: p.alpha_surface,
            alpha_nlos: p.alpha_nlos,
            rician_k: p.rician_k,
            direct_reference_loss: p.direct_reference_loss,
            bs_gain: p.bs_gain,
            jammer_gain: p.jammer_gain,
            user_gain: p.user_gain,
            element_gain: p.element_gain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_antennas: usize,
    pub jammer_antennas: usize,
    /// Users on the BS side of the surface.
    pub users_r: usize,
    /// Users on the far side.
    pub users_t: usize,
    pub elements: usize,
    /// Phase resolution; `null` runs with continuous phases.
    pub bits: Option<u32>,
    /// Coupling `φ_t = slope φ_r + intercept`.
    pub slope: f64,
    pub intercept: f64,
    /// Reflected over refracted power.
    pub power_ratio: f64,
    /// Explicit `(φ_r, φ_t)` pairs; overrides `bits`, `slope`, `intercept` and `power_ratio`.
    pub codebook: Option<Codebook>,
    pub element_spacing: f64,
    pub carrier_hz: f64,
    pub bs_distance: f64,
    pub bs_azimuth_deg: f64,
    pub jammer_distance: f64,
    pub jammer_azimuth_deg: f64,
    pub user_radius: f64,
    /// Users closer than this to the surface center are redrawn.
    pub min_user_distance: f64,
    /// Remove the direct BS link of far-side users.
    pub blockage: bool,
    pub path_loss: PathLoss,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bs_antennas: 8,
            jammer_antennas: 4,
            users_r: 2,
            users_t: 2,
            elements: 16,
            bits: Some(3),
            slope: 1.0,
            intercept: DEFAULT_INTERCEPT,
            power_ratio: 1.0,
            codebook: None,
            element_spacing: 0.005,
            carrier_hz: 28e9,
            bs_distance: 100.0,
            bs_azimuth_deg: 60.0,
            jammer_distance: 100.0,
            jammer_azimuth_deg: -120.0,
            user_radius: 50.0,
            min_user_distance: 1.0,
            blockage: false,
            path_loss: PathLoss::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn users(&self) -> usize {
        self.users_r + self.users_t
    }

    pub fn propagation(&self) -> Propagation {
        let p = &self.path_loss;
        Propagation {
            wavelength: self.wavelength(),
            alpha: p.alpha,
            alpha_surface: p.alpha_surface,
            alpha_nlos: p.alpha_nlos,
            rician_k: p.rician_k,
            direct_reference_loss: p.direct_reference_loss,
            bs_gain: p.bs_gain,
            jammer_gain: p.jammer_gain,
            user_gain: p.user_gain,
            element_gain: p.element_gain,
        }
    }

    /// Codebook used by the surface. Continuous runs still carry a 1-bit
    /// codebook for the coupling line and amplitudes.
    pub fn codebook(&self) -> Result<Codebook> {
        if let Some(cb) = &self.codebook {
            cb.validate()?;
            return Ok(cb.clone());
        }
        build_codebook(self.bits.unwrap_or(1), self.slope, self.intercept, self.power_ratio)
    }

    /// Bits written to the CSV, 0 for continuous phases.
    pub fn bits_label(&self) -> u32 {
        match (&self.codebook, self.bits) {
            (Some(cb), _) => cb.bits,
            (None, Some(b)) => b,
            (None, None) => 0,
        }
    }

    pub fn continuous(&self) -> bool {
        self.codebook.is_none() && self.bits.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub bs_dbm: f64,
    pub jammer_dbm: f64,
    /// Estimated jammer power; defaults to the true power.
    pub jammer_estimate_dbm: Option<f64>,
    /// Relative error bound on the jammer power estimate.
    pub eps_pj: f64,
    pub noise_dbm: f64,
    /// `τ_k = tau_ratio · τ_{d,k}`.
    pub tau_ratio: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self { bs_dbm: 40.0, jammer_dbm: 40.0, jammer_estimate_dbm: None, eps_pj: 0.1, noise_dbm: -96.0, tau_ratio: 0.3 }
    }
}

impl PowerConfig {
    pub fn bs_watts(&self) -> f64 {
        dbm_to_watts(self.bs_dbm)
    }

    pub fn jammer_watts(&self) -> f64 {
        dbm_to_watts(self.jammer_dbm)
    }

    pub fn jammer_estimate_watts(&self) -> f64 {
        dbm_to_watts(self.jammer_estimate_dbm.unwrap_or(self.jammer_dbm))
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }
}

/// Normalized CSI error levels `ζ² = ε²/‖ĥ‖²` of the jamming channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub zeta_d_sq: f64,
    pub zeta_j_sq: f64,
}

/// Desk default. The field-scale value 0.1 leaves the robust threshold
/// constraints infeasible for every user at the desk geometry.
pub const DESK_ZETA_SQ: f64 = 1e-4;

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { zeta_d_sq: DESK_ZETA_SQ, zeta_j_sq: DESK_ZETA_SQ }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub sca_tol: f64,
    pub sca_max_iters: usize,
    pub randomization_trials: usize,
    pub eigen_ratio: f64,
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    pub local_search_passes: usize,
    /// Frozen-argument coupling for slopes other than 1.
    pub fixed_point: bool,
    /// Passes of the coordinate search used by the reflect-only baselines.
    pub baseline_passes: usize,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub condition_cap: f64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            sca_tol: 1e-4,
            sca_max_iters: 30,
            randomization_trials: 100,
            eigen_ratio: 1e4,
            outer_tol: 1e-3,
            outer_max_iters: 20,
            local_search_passes: 1,
            fixed_point: false,
            baseline_passes: 10,
            solver_tol: 1e-7,
            solver_max_iters: 200,
            condition_cap: crate::precoder::DEFAULT_CONDITION_CAP,
        }
    }
}

impl AlgorithmConfig {
    pub fn analog_options(&self, seed: u64) -> AnalogOptions {
        AnalogOptions {
            sca_tol: self.sca_tol,
            sca_max_iters: self.sca_max_iters,
            randomization_trials: self.randomization_trials,
            eigen_ratio: self.eigen_ratio,
            fixed_point: self.fixed_point,
            local_search_passes: self.local_search_passes,
            solver: SolverOptions {
                feasibility_tol: self.solver_tol,
                gap_tol: self.solver_tol * 10.0,
                max_iterations: self.solver_max_iters,
                ..SolverOptions::default()
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { schemes: vec![Scheme::Ios], trials: 20, seed: 1, output: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub power: PowerConfig,
    pub uncertainty: UncertaintyConfig,
    pub algorithm: AlgorithmConfig,
    pub run: RunConfig,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        for (name, n) in [("bs_antennas", s.bs_antennas), ("jammer_antennas", s.jammer_antennas), ("elements", s.elements)] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if s.users() == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if s.users() > s.bs_antennas {
            return Err(Error::Config(format!("zero forcing needs users ({}) <= BS antennas ({})", s.users(), s.bs_antennas)));
        }
        for (name, v) in [
            ("element_spacing", s.element_spacing),
            ("carrier_hz", s.carrier_hz),
            ("bs_distance", s.bs_distance),
            ("jammer_distance", s.jammer_distance),
            ("user_radius", s.user_radius),
            ("power_ratio", s.power_ratio),
        ] {
            positive(name, v)?;
        }
        if !(s.min_user_distance >= 0.0 && s.min_user_distance < s.user_radius) {
            return Err(Error::Config("min_user_distance must be in [0, user_radius)".into()));
        }
        s.codebook()?;
        s.propagation().validate()?;
        let p = &self.power;
        for (name, v) in [("bs_dbm", p.bs_dbm), ("jammer_dbm", p.jammer_dbm), ("noise_dbm", p.noise_dbm)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(p.tau_ratio > 0.0 && p.tau_ratio <= 1.0) {
            return Err(Error::Config(format!("tau_ratio must be in (0, 1], got {}", p.tau_ratio)));
        }
        if !(0.0..1.0).contains(&p.eps_pj) {
            return Err(Error::Config(format!("eps_pj must be in [0, 1), got {}", p.eps_pj)));
        }
        let truth = p.jammer_watts();
        if (truth - p.jammer_estimate_watts()).abs() > p.eps_pj * truth * (1.0 + 1e-12) {
            return Err(Error::Config("jammer power estimate lies outside the eps_pj bound".into()));
        }
        let u = &self.uncertainty;
        if !(u.zeta_d_sq >= 0.0 && u.zeta_j_sq >= 0.0 && u.zeta_d_sq < 1.0 && u.zeta_j_sq < 1.0) {
            return Err(Error::Config("uncertainty levels must be in [0, 1)".into()));
        }
        let a = &self.algorithm;
        positive("sca_tol", a.sca_tol)?;
        positive("outer_tol", a.outer_tol)?;
        positive("solver_tol", a.solver_tol)?;
        positive("eigen_ratio", a.eigen_ratio)?;
        positive("condition_cap", a.condition_cap)?;
        if a.sca_max_iters == 0 || a.outer_max_iters == 0 || a.randomization_trials == 0 || a.solver_max_iters == 0 {
            return Err(Error::Config("iteration and trial counts must be at least 1".into()));
        }
        if (s.slope - 1.0).abs() > 1e-12 && !a.fixed_point && s.codebook.is_none() {
            return Err(Error::UnsupportedCoupling(s.slope));
        }
        if self.run.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.run.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        Ok(())
    }
}

pub fn deg(x: f64) -> f64 {
    x * PI / 180.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.scenario.users(), 4);
        assert!((c.power.noise_watts() - 10f64.powf(-12.6)).abs() < 1e-25);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.scenario.elements = 36;
        c.run.schemes = Scheme::ALL.to_vec();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn explicit_codebook_pairs_are_accepted() {
        let cb = build_codebook(2, 1.0, 0.3, 1.0).unwrap();
        let json = format!(r#"{{"scenario": {{"codebook": {}}}}}"#, serde_json::to_string(&cb).unwrap());
        let c = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(c.scenario.codebook().unwrap(), cb);
        assert_eq!(c.scenario.bits_label(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"scenario": {"elements": 0}}"#,
            r#"{"scenario": {"users_r": 5, "users_t": 5}}"#,
            r#"{"power": {"tau_ratio": 1.5}}"#,
            r#"{"power": {"eps_pj": 1.0}}"#,
            r#"{"run": {"trials": 0}}"#,
            r#"{"scenario": {"colour": 3}}"#,
            r#"{"run": {"schemes": ["mirror"]}}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario": {"slope": 2.0}}"#), Err(Error::UnsupportedCoupling(_))));
    }

    #[test]
    fn scheme_names() {
        assert_eq!("irs_jam".parse::<Scheme>().unwrap(), Scheme::IrsJam);
        assert_eq!(Scheme::parse_list("all").unwrap().len(), 4);
        assert!(matches!("x".parse::<Scheme>(), Err(Error::UnknownScheme(_))));
    }
}
