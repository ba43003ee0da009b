//! Monte-Carlo experiments: scenario synthesis, the alternating
//! precoder/phase optimization, reflect-only baselines, evaluation on the
//! true channels and CSV output.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_csi_uncertainty, sample_channel_set, ChannelSet, Geometry, Point, Side};
use crate::config::{deg, ExperimentConfig, ScenarioConfig, Scheme};
use crate::error::{Error, Result};
use crate::link::{
    apply_blockage, array_center, effective_bs_channels, evaluate_link, jammer_beamformer, received_jamming_power,
    watts_to_dbm, LinkReport, SurfacePaths,
};
use crate::numerics::{CVector, Complex};
use crate::precoder::{self, Precoder};
use crate::robust::{
    discretize_local_search, estimated_users, jamming_bounds, solve_phase_sdr, worst_case_jamming, AnalogModel,
    EstimatedUser, RobustParams, ScaRecord,
};
use crate::surface::{surface_response, Codebook, PhaseConfig};

/// Independent random streams of one trial.
mod stream {
    pub const LAYOUT: u64 = 0;
    pub const CHANNELS: u64 = 1;
    pub const CSI: u64 = 2;
    pub const INIT: u64 = 3;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Half-wavelength array along x centered at `center`.
fn ula(center: Point, n: usize, wavelength: f64) -> Vec<Point> {
    (0..n)
        .map(|i| [center[0] + (i as f64 - (n as f64 - 1.0) / 2.0) * wavelength / 2.0, center[1], center[2]])
        .collect()
}

/// Elements on a near-square grid in the `y = 0` plane, centered at the origin.
pub fn element_grid(m: usize, spacing: f64) -> Vec<Point> {
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    (0..m)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [(c as f64 - (cols as f64 - 1.0) / 2.0) * spacing, 0.0, (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing]
        })
        .collect()
}

fn polar(d: f64, az_deg: f64) -> Point {
    [d * deg(az_deg).cos(), d * deg(az_deg).sin(), 0.0]
}

/// Users uniform in the half-disk on their side, at least `min_user_distance`
/// from the surface center.
pub fn place_users<R: Rng + ?Sized>(sc: &ScenarioConfig, rng: &mut R) -> (Vec<Point>, Vec<Side>) {
    let mut users = Vec::with_capacity(sc.users());
    let mut sides = Vec::with_capacity(sc.users());
    for (side, count, offset) in [(Side::R, sc.users_r, 0.0), (Side::T, sc.users_t, PI)] {
        for _ in 0..count {
            loop {
                let r = sc.user_radius * rng.random::<f64>().sqrt();
                let th = offset + PI * rng.random::<f64>();
                let p = [r * th.cos(), r * th.sin(), 0.0];
                if r >= sc.min_user_distance && p[1].abs() > 1e-9 && Geometry::side_of(&p) == side {
                    users.push(p);
                    sides.push(side);
                    break;
                }
            }
        }
    }
    (users, sides)
}

pub fn build_geometry(sc: &ScenarioConfig, users: Vec<Point>, sides: Vec<Side>) -> Geometry {
    let lambda = sc.wavelength();
    Geometry {
        bs_antennas: ula(polar(sc.bs_distance, sc.bs_azimuth_deg), sc.bs_antennas, lambda),
        jammer_antennas: ula(polar(sc.jammer_distance, sc.jammer_azimuth_deg), sc.jammer_antennas, lambda),
        elements: element_grid(sc.elements, sc.element_spacing),
        users,
        sides,
        propagation: sc.propagation(),
    }
}

/// Everything shared by the schemes of one trial.
#[derive(Clone, Debug)]
pub struct Trial {
    pub seed: u64,
    pub geometry: Geometry,
    /// True channels with the designer's estimates and radii.
    pub channels: ChannelSet,
    pub sides: Vec<Side>,
    pub estimated: Vec<EstimatedUser>,
    /// Realized jammer beam.
    pub v_j: CVector,
    /// Jamming received without any surface, in watts.
    pub tau_direct: Vec<f64>,
    pub robust: RobustParams,
    pub codebook: Codebook,
    pub noise: f64,
    pub bs_power: f64,
    pub init: PhaseConfig,
}

pub fn prepare_trial(cfg: &ExperimentConfig, seed: u64) -> Result<Trial> {
    let sc = &cfg.scenario;
    let (users, sides) = place_users(sc, &mut rng_for(seed, stream::LAYOUT));
    let geometry = build_geometry(sc, users, sides.clone());
    let mut channels = sample_channel_set(&geometry, &mut rng_for(seed, stream::CHANNELS))?;
    if sc.blockage {
        apply_blockage(&mut channels, &sides);
    }
    apply_csi_uncertainty(&mut channels, cfg.uncertainty.zeta_d_sq.sqrt(), cfg.uncertainty.zeta_j_sq.sqrt(), &mut rng_for(seed, stream::CSI))?;
    let est_direct: Vec<CVector> = channels.users.iter().map(|u| u.est_jam_direct.clone()).collect();
    let v_j = jammer_beamformer(&est_direct, &geometry.users, &array_center(&geometry.jammer_antennas), cfg.power.jammer_watts())?;
    let zero = CVector::zeros(sc.elements);
    let tau_direct = channels.users.iter().map(|u| received_jamming_power(u, &zero, &v_j)).collect::<Result<Vec<_>>>()?;
    let robust = RobustParams {
        p_hat_j: cfg.power.jammer_estimate_watts(),
        eps_pj: cfg.power.eps_pj,
        tau: tau_direct.iter().map(|t| cfg.power.tau_ratio * t).collect(),
        eps_direct: channels.users.iter().map(|u| u.eps_direct).collect(),
        eps_cascade: channels.users.iter().map(|u| u.eps_cascade).collect(),
    };
    let codebook = sc.codebook()?;
    let mut rng = rng_for(seed, stream::INIT);
    // one continuous draw per seed, snapped to the codebook, so runs that
    // differ only in resolution start from the same phases
    let phases: Vec<f64> = (0..sc.elements).map(|_| rng.random::<f64>() * TAU).collect();
    let init = if sc.continuous() {
        PhaseConfig::continuous(&codebook, phases)
    } else {
        PhaseConfig::from_indices(&codebook, phases.iter().map(|&p| codebook.nearest(p)).collect())?
    };
    Ok(Trial {
        seed,
        estimated: estimated_users(&channels, &sides)?,
        geometry,
        channels,
        sides,
        v_j,
        tau_direct,
        robust,
        codebook,
        noise: cfg.power.noise_watts(),
        bs_power: cfg.power.bs_watts(),
        init,
    })
}

/// ZF directions with powers water-filled against the sound jamming bound.
fn design_precoder(cfg: &ExperimentConfig, trial: &Trial, paths: &SurfacePaths, jam: &[f64]) -> Result<Precoder> {
    let h = effective_bs_channels(&trial.channels, paths)?;
    let noise: Vec<f64> = jam.iter().map(|j| j + trial.noise).collect();
    precoder::design(&h, &noise, trial.bs_power, cfg.algorithm.condition_cap)
}

/// Rate the designer expects from a ZF precoder: `Σ log₂(1 + p_k/(J̄_k + σ²))`.
fn predicted_rate(pre: &Precoder, jam: &[f64], noise: f64) -> f64 {
    pre.powers.iter().zip(jam).map(|(p, j)| (1.0 + p / (j + noise)).log2()).sum()
}

fn omni_paths(trial: &Trial, cfg: &PhaseConfig) -> SurfacePaths {
    let (g_r, g_t) = surface_response(cfg, &trial.codebook);
    SurfacePaths::omni(&trial.sides, &g_r, &g_t)
}

#[derive(Clone, Debug)]
pub struct AltOutcome {
    pub config: PhaseConfig,
    pub precoder: Precoder,
    /// Predicted sum rate of the evaluated configuration after each outer
    /// iteration, starting with the initial draw.
    pub rate_trace: Vec<f64>,
    /// Surrogate sum rate of the continuous phases of each accepted outer iteration.
    pub continuous_trace: Vec<f64>,
    pub sca_traces: Vec<Vec<ScaRecord>>,
    pub outer_iters: usize,
    /// Users whose thresholds were dropped as unattainable.
    pub dropped: Vec<usize>,
    /// Whether the outer loop met its tolerance.
    pub converged: bool,
}

/// Alternates ZF/water-filling with the robust phase design until the
/// predicted sum rate settles. A continuous-phase step that lowers the
/// surrogate rate ends the loop and is discarded.
pub fn alternate_optimize(cfg: &ExperimentConfig, trial: &Trial) -> Result<AltOutcome> {
    let alg = &cfg.algorithm;
    let mut robust = trial.robust.clone();
    let mut dropped = Vec::new();
    let mut phases = trial.init.clone();
    let mut jam = jamming_bounds(&trial.estimated, &phases, &trial.codebook, &robust)?;
    let mut pre = design_precoder(cfg, trial, &omni_paths(trial, &phases), &jam)?;
    let mut rate = predicted_rate(&pre, &jam, trial.noise);
    let mut best = (phases.clone(), pre.clone(), rate);
    let mut out = AltOutcome {
        config: phases.clone(),
        precoder: pre.clone(),
        rate_trace: vec![rate],
        continuous_trace: Vec::new(),
        sca_traces: Vec::new(),
        outer_iters: 0,
        dropped: Vec::new(),
        converged: false,
    };
    for outer in 1..=alg.outer_max_iters {
        let opts = alg.analog_options(trial.seed.wrapping_mul(1_000_003).wrapping_add(outer as u64));
        let sdr = loop {
            let model = AnalogModel::new(&trial.estimated, &pre, &trial.codebook, &robust, trial.noise)?;
            match solve_phase_sdr(&model, &phases, &opts) {
                Ok(s) => break s,
                Err(Error::Infeasible { users }) if !users.is_empty() => {
                    for u in users {
                        robust.tau[u] = f64::INFINITY;
                        dropped.push(u);
                    }
                }
                Err(e) => return Err(e),
            }
        };
        out.outer_iters = outer;
        if let Some(&prev) = out.continuous_trace.last() {
            if sdr.rate < prev - 1e-6 {
                out.sca_traces.push(sdr.trace);
                out.converged = true;
                break;
            }
        }
        out.continuous_trace.push(sdr.rate);
        out.sca_traces.push(sdr.trace);
        let model = AnalogModel::new(&trial.estimated, &pre, &trial.codebook, &robust, trial.noise)?;
        let next = if cfg.scenario.continuous() {
            sdr.config
        } else {
            let r = |c: &PhaseConfig| model.sum_rate(c).unwrap_or(f64::NEG_INFINITY);
            let v = |c: &PhaseConfig| model.max_violation(c).unwrap_or(f64::INFINITY);
            discretize_local_search(&sdr.config, &trial.codebook, alg.local_search_passes, r, v)?.config
        };
        jam = jamming_bounds(&trial.estimated, &next, &trial.codebook, &robust)?;
        let next_pre = design_precoder(cfg, trial, &omni_paths(trial, &next), &jam)?;
        let next_rate = predicted_rate(&next_pre, &jam, trial.noise);
        out.rate_trace.push(next_rate);
        if next_rate > best.2 {
            best = (next.clone(), next_pre.clone(), next_rate);
        }
        let change = (next_rate - rate).abs() / rate.abs().max(1e-12);
        phases = next;
        pre = next_pre;
        rate = next_rate;
        if change < alg.outer_tol {
            out.converged = true;
            break;
        }
    }
    dropped.sort_unstable();
    out.config = best.0;
    out.precoder = best.1;
    out.dropped = dropped;
    Ok(out)
}

/// Per-user surface paths of a reflect-only surface with unit amplitude.
fn irs_paths(trial: &Trial, scheme: Scheme, g: &CVector) -> SurfacePaths {
    let m = g.len();
    let mut p = SurfacePaths::none(trial.sides.len(), m);
    for (k, s) in trial.sides.iter().enumerate() {
        match (scheme, s) {
            (Scheme::IrsSignal, Side::R) => p.desired[k] = g.clone(),
            (Scheme::IrsJam, Side::T) => p.jamming[k] = g.clone(),
            _ => {}
        }
    }
    p
}

fn unit_vector(levels: usize, idx: &[usize]) -> CVector {
    CVector::from_iterator(idx.len(), idx.iter().map(|&l| Complex::from_polar(1.0, -TAU * l as f64 / levels as f64)))
}

/// Cyclic coordinate ascent over `levels` uniform phases per element.
fn coordinate_ascent<F: Fn(&[usize]) -> f64>(mut idx: Vec<usize>, levels: usize, passes: usize, score: F) -> Vec<usize> {
    let mut best = score(&idx);
    for _ in 0..passes.max(1) {
        let mut improved = false;
        for m in 0..idx.len() {
            let keep = idx[m];
            let mut choice = keep;
            for l in 0..levels {
                if l == keep {
                    continue;
                }
                idx[m] = l;
                let s = score(&idx);
                if s > best * (1.0 + 1e-12) + 1e-15 {
                    best = s;
                    choice = l;
                    improved = true;
                }
            }
            idx[m] = choice;
        }
        if !improved {
            break;
        }
    }
    idx
}

fn jam_bounds_for(trial: &Trial, paths: &SurfacePaths) -> Result<Vec<f64>> {
    trial
        .estimated
        .iter()
        .enumerate()
        .map(|(k, u)| worst_case_jamming(u, &paths.jamming[k], &trial.robust, k))
        .collect()
}

fn desired_powers(trial: &Trial, paths: &SurfacePaths, pre: &Precoder) -> Result<Vec<f64>> {
    let h = effective_bs_channels(&trial.channels, paths)?;
    let g = h * &pre.beams;
    Ok((0..pre.powers.len()).map(|k| g[(k, k)].norm_sqr()).collect())
}

struct BaselineOutcome {
    paths: SurfacePaths,
    precoder: Precoder,
    outer_iters: usize,
}

fn run_irs(cfg: &ExperimentConfig, trial: &Trial, scheme: Scheme) -> Result<BaselineOutcome> {
    let alg = &cfg.algorithm;
    let levels = if cfg.scenario.continuous() { 256 } else { trial.codebook.len() };
    let mut idx: Vec<usize> = trial
        .init
        .phi_r
        .iter()
        .map(|&p| ((p / TAU * levels as f64).round() as usize) % levels)
        .collect();
    if scheme == Scheme::IrsJam {
        let t_users: Vec<usize> = (0..trial.sides.len()).filter(|&k| trial.sides[k] == Side::T).collect();
        idx = coordinate_ascent(idx, levels, alg.baseline_passes, |ix| {
            let g = unit_vector(levels, ix);
            -t_users
                .iter()
                .map(|&k| worst_case_jamming(&trial.estimated[k], &g, &trial.robust, k).unwrap_or(f64::INFINITY))
                .sum::<f64>()
        });
        let paths = irs_paths(trial, scheme, &unit_vector(levels, &idx));
        let jam = jam_bounds_for(trial, &paths)?;
        let precoder = design_precoder(cfg, trial, &paths, &jam)?;
        return Ok(BaselineOutcome { paths, precoder, outer_iters: 1 });
    }

    let mut paths = irs_paths(trial, scheme, &unit_vector(levels, &idx));
    let jam = jam_bounds_for(trial, &paths)?;
    let mut pre = design_precoder(cfg, trial, &paths, &jam)?;
    let mut rate = predicted_rate(&pre, &jam, trial.noise);
    let mut best = (paths.clone(), pre.clone(), rate);
    let mut iters = 0;
    for outer in 1..=alg.outer_max_iters {
        iters = outer;
        let fixed = pre.clone();
        idx = coordinate_ascent(idx, levels, alg.baseline_passes, |ix| {
            let p = irs_paths(trial, scheme, &unit_vector(levels, ix));
            match desired_powers(trial, &p, &fixed) {
                Ok(d) => d.iter().zip(&jam).map(|(d, j)| (1.0 + d / (j + trial.noise)).log2()).sum(),
                Err(_) => f64::NEG_INFINITY,
            }
        });
        paths = irs_paths(trial, scheme, &unit_vector(levels, &idx));
        pre = design_precoder(cfg, trial, &paths, &jam)?;
        let next = predicted_rate(&pre, &jam, trial.noise);
        if next > best.2 {
            best = (paths.clone(), pre.clone(), next);
        }
        let change = (next - rate).abs() / rate.abs().max(1e-12);
        rate = next;
        if change < alg.outer_tol {
            break;
        }
    }
    Ok(BaselineOutcome { paths: best.0, precoder: best.1, outer_iters: iters })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub rate: f64,
    pub sinr: f64,
    /// Realized jamming power in watts.
    pub jam_power: f64,
    pub tau: f64,
    /// The design certifies `J_k <= τ_k` for this user under every admissible
    /// channel error and jammer power.
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub seed: u64,
    pub scheme: Scheme,
    pub m: usize,
    pub b: u32,
    pub outer_iters: usize,
    pub sum_rate: f64,
    pub users: Vec<UserRecord>,
    pub wall_ms: f64,
    /// Omni-surface phases, set for the `ios` scheme.
    pub config: Option<PhaseConfig>,
    pub precoder: Precoder,
    /// Outer and inner traces, set for the `ios` scheme.
    pub traces: Option<AltOutcome>,
}

fn user_records(trial: &Trial, report: &LinkReport, certified: &[bool]) -> Vec<UserRecord> {
    (0..report.sinr.len())
        .map(|k| UserRecord {
            user_id: k,
            rate: report.rates[k],
            sinr: report.sinr[k],
            jam_power: report.jamming[k],
            tau: trial.robust.tau[k],
            converged: certified[k],
        })
        .collect()
}

/// Runs one scheme on a prepared trial and evaluates it on the true channels.
pub fn run_scheme(cfg: &ExperimentConfig, trial: &Trial, scheme: Scheme) -> Result<TrialRecord> {
    let start = Instant::now();
    let wrap = |e: Error| Error::Trial { seed: trial.seed, scheme: scheme.name().into(), source: Box::new(e) };
    let k_users = trial.sides.len();
    let (paths, precoder, outer_iters, config, traces, certified) = match scheme {
        Scheme::Ios => {
            let alt = alternate_optimize(cfg, trial).map_err(wrap)?;
            let paths = omni_paths(trial, &alt.config);
            let jam = jamming_bounds(&trial.estimated, &alt.config, &trial.codebook, &trial.robust).map_err(wrap)?;
            let certified: Vec<bool> =
                (0..k_users).map(|k| !alt.dropped.contains(&k) && jam[k] <= trial.robust.tau[k]).collect();
            (paths, alt.precoder.clone(), alt.outer_iters, Some(alt.config.clone()), Some(alt), certified)
        }
        Scheme::NoRis => {
            let paths = SurfacePaths::none(k_users, cfg.scenario.elements);
            let jam = jam_bounds_for(trial, &paths).map_err(wrap)?;
            let pre = design_precoder(cfg, trial, &paths, &jam).map_err(wrap)?;
            let certified = (0..k_users).map(|k| jam[k] <= trial.robust.tau[k]).collect();
            (paths, pre, 0, None, None, certified)
        }
        Scheme::IrsSignal | Scheme::IrsJam => {
            let b = run_irs(cfg, trial, scheme).map_err(wrap)?;
            let jam = jam_bounds_for(trial, &b.paths).map_err(wrap)?;
            let certified = (0..k_users).map(|k| jam[k] <= trial.robust.tau[k]).collect();
            (b.paths, b.precoder, b.outer_iters, None, None, certified)
        }
    };
    let report = evaluate_link(&trial.channels, &paths, &precoder.beams, &trial.v_j, trial.noise).map_err(wrap)?;
    Ok(TrialRecord {
        seed: trial.seed,
        scheme,
        m: cfg.scenario.elements,
        b: cfg.scenario.bits_label(),
        outer_iters,
        sum_rate: report.sum_rate(),
        users: user_records(trial, &report, &certified),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        config,
        precoder,
        traces,
    })
}

/// All configured schemes on the trial with seed `seed`, sharing one channel draw.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    let trial = prepare_trial(cfg, seed)?;
    cfg.run.schemes.iter().map(|&s| run_scheme(cfg, &trial, s)).collect()
}

/// Worker count from `OMNIBEAM_THREADS`, if set.
pub fn thread_override() -> Result<Option<usize>> {
    std::env::var("OMNIBEAM_THREADS").ok().map(|v| parse_threads(&v)).transpose()
}

pub fn parse_threads(v: &str) -> Result<usize> {
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Config(format!("OMNIBEAM_THREADS must be a positive integer, got '{v}'"))),
    }
}

#[cfg(feature = "parallel")]
fn map_trials<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(seeds: Vec<u64>, threads: Option<usize>, f: F) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let run = || seeds.into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_trials<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(seeds: Vec<u64>, _threads: Option<usize>, f: F) -> Result<Vec<T>> {
    seeds.into_iter().map(f).collect()
}

/// Runs trials sequentially regardless of the `parallel` feature.
pub fn monte_carlo_sequential(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for t in 0..cfg.run.trials {
        out.extend(run_trial(cfg, cfg.run.seed + t as u64)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub trials: usize,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    /// Realized per-user jamming powers in watts, for CDFs.
    pub jamming: Vec<f64>,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SchemeSummary> {
    let mut out = Vec::new();
    for scheme in Scheme::ALL {
        let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.scheme == scheme).collect();
        if rs.is_empty() {
            continue;
        }
        let n = rs.len() as f64;
        let mean = rs.iter().map(|r| r.sum_rate).sum::<f64>() / n;
        let var = if rs.len() > 1 { rs.iter().map(|r| (r.sum_rate - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        out.push(SchemeSummary {
            scheme,
            trials: rs.len(),
            mean_sum_rate: mean,
            std_sum_rate: var.sqrt(),
            jamming: rs.iter().flat_map(|r| r.users.iter().map(|u| u.jam_power)).collect(),
        });
    }
    out
}

#[derive(Clone, Debug)]
pub struct MonteCarloOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SchemeSummary>,
}

/// Trial `t` uses seed `run.seed + t`. Trials run on the rayon pool when
/// the `parallel` feature is on; records come back in trial order either
/// way. Writes the CSV when `run.output` is set.
pub fn monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloOutput> {
    monte_carlo_with_threads(cfg, thread_override()?)
}

/// [`monte_carlo`] on a pool of `threads` workers, or rayon's default pool.
pub fn monte_carlo_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<MonteCarloOutput> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.run.trials as u64).map(|t| cfg.run.seed + t).collect();
    let per_trial = map_trials(seeds, threads, |s| run_trial(cfg, s))?;
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    if let Some(path) = &cfg.run.output {
        write_csv(path, &records)?;
    }
    let summary = summarize(&records);
    Ok(MonteCarloOutput { records, summary })
}

pub const CSV_HEADER: [&str; 13] =
    ["seed", "scheme", "M", "b", "outer_iters", "sum_rate", "user_id", "rate", "sinr_db", "jam_power_dbm", "tau_dbm", "converged", "wall_ms"];

/// One CSV line per (trial, scheme, user).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub m: usize,
    pub b: u32,
    pub outer_iters: usize,
    pub sum_rate: f64,
    pub user_id: usize,
    pub rate: f64,
    pub sinr_db: f64,
    pub jam_power_dbm: f64,
    pub tau_dbm: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

pub fn csv_rows(records: &[TrialRecord]) -> Vec<CsvRow> {
    records
        .iter()
        .flat_map(|r| {
            r.users.iter().map(move |u| CsvRow {
                seed: r.seed,
                scheme: r.scheme,
                m: r.m,
                b: r.b,
                outer_iters: r.outer_iters,
                sum_rate: r.sum_rate,
                user_id: u.user_id,
                rate: u.rate,
                sinr_db: 10.0 * u.sinr.log10(),
                jam_power_dbm: watts_to_dbm(u.jam_power),
                tau_dbm: watts_to_dbm(u.tau),
                converged: u.converged,
                wall_ms: (r.wall_ms * 1e3).round() / 1e3,
            })
        })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_rows(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_rows(path, &csv_rows(records))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("{}: unexpected CSV header {:?}", path.display(), header)));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Right-continuous empirical CDF: one `(value, fraction <= value)` point
/// per distinct sample.
pub fn empirical_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Empty("CDF of no samples".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("CDF samples contain NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    Ok(out)
}

/// Evaluates a step CDF at `x`.
pub fn cdf_at(cdf: &[(f64, f64)], x: f64) -> f64 {
    cdf.iter().take_while(|(v, _)| *v <= x).last().map_or(0.0, |p| p.1)
}

/// Columns of the results CSV that can be turned into a CDF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdfColumn {
    /// `jam_power_dbm`
    JammingPower,
    Rate,
    SinrDb,
}

impl std::str::FromStr for CdfColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jamming_power" | "jam_power_dbm" => Ok(Self::JammingPower),
            "rate" => Ok(Self::Rate),
            "sinr_db" => Ok(Self::SinrDb),
            other => Err(Error::Config(format!("no CDF for column '{other}'; use jamming_power, rate or sinr_db"))),
        }
    }
}

impl CdfColumn {
    fn value(self, row: &CsvRow) -> f64 {
        match self {
            Self::JammingPower => row.jam_power_dbm,
            Self::Rate => row.rate,
            Self::SinrDb => row.sinr_db,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub scheme: Scheme,
    pub value: f64,
    pub fraction: f64,
}

/// Per-scheme empirical CDF of one CSV column, schemes in their canonical order.
pub fn cdf_by_scheme(rows: &[CsvRow], column: CdfColumn) -> Result<Vec<CdfPoint>> {
    if rows.is_empty() {
        return Err(Error::Empty("no rows to build a CDF from".into()));
    }
    let mut out = Vec::new();
    for scheme in Scheme::ALL {
        let samples: Vec<f64> = rows.iter().filter(|r| r.scheme == scheme).map(|r| column.value(r)).collect();
        if samples.is_empty() {
            continue;
        }
        out.extend(empirical_cdf(&samples)?.into_iter().map(|(value, fraction)| CdfPoint { scheme, value, fraction }));
    }
    Ok(out)
}

pub fn write_cdf(path: &Path, points: &[CdfPoint]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for p in points {
        w.serialize(p).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::CMatrix;
    use crate::surface::effective_channel;

    fn small_config(m: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.elements = m;
        cfg.run.schemes = Scheme::ALL.to_vec();
        cfg.run.trials = 2;
        cfg
    }

    #[test]
    fn element_grid_is_centered_with_requested_spacing() {
        let g = element_grid(6, 0.005);
        assert_eq!(g.len(), 6);
        let cx: f64 = g.iter().map(|p| p[0]).sum::<f64>() / 6.0;
        let cz: f64 = g.iter().map(|p| p[2]).sum::<f64>() / 6.0;
        assert!(cx.abs() < 1e-15 && cz.abs() < 1e-15);
        assert!(g.iter().all(|p| p[1] == 0.0));
        assert!(((g[1][0] - g[0][0]) - 0.005).abs() < 1e-15);
        assert_eq!(element_grid(1, 0.005), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn users_land_on_their_side_inside_the_disk() {
        let sc = ScenarioConfig { users_r: 5, users_t: 3, ..ScenarioConfig::default() };
        let (users, sides) = place_users(&sc, &mut rng_for(4, stream::LAYOUT));
        assert_eq!(sides.iter().filter(|s| **s == Side::R).count(), 5);
        for (p, s) in users.iter().zip(&sides) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(r <= sc.user_radius && r >= sc.min_user_distance);
            assert_eq!(Geometry::side_of(p), *s);
        }
    }

    #[test]
    fn cdf_examples() {
        let c = empirical_cdf(&[3.0, 1.0, 2.0]).unwrap();
        assert!((cdf_at(&c, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cdf_at(&c, 0.5), 0.0);
        assert_eq!(empirical_cdf(&[4.0; 5]).unwrap(), vec![(4.0, 1.0)]);
        assert!(matches!(empirical_cdf(&[]), Err(Error::Empty(_))));
        assert!(matches!(empirical_cdf(&[1.0, f64::NAN]), Err(Error::Domain(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        assert!((cdf_at(&empirical_cdf(&u).unwrap(), 0.5) - 0.5).abs() < 0.05);
    }

    #[test]
    fn cdf_per_scheme() {
        let cfg = small_config(4);
        let rows = csv_rows(&run_trial(&cfg, 2).unwrap());
        let pts = cdf_by_scheme(&rows, "jamming_power".parse().unwrap()).unwrap();
        for scheme in Scheme::ALL {
            let last = pts.iter().rfind(|p| p.scheme == scheme).unwrap();
            assert_eq!(last.fraction, 1.0);
        }
        assert!(matches!("tau".parse::<CdfColumn>(), Err(Error::Config(_))));
        assert!(matches!(cdf_by_scheme(&[], CdfColumn::Rate), Err(Error::Empty(_))));
    }

    #[test]
    fn thread_counts_parse() {
        assert_eq!(parse_threads(" 3 ").unwrap(), 3);
        for bad in ["0", "-1", "two", ""] {
            assert!(matches!(parse_threads(bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn csv_round_trips_with_fixed_header() {
        let cfg = small_config(4);
        let recs = run_trial(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let rows = read_csv(&path).unwrap();
        assert_eq!(rows, csv_rows(&recs));
        assert_eq!(rows.len(), 4 * cfg.scenario.users());

        let empty = dir.path().join("empty.csv");
        write_rows(&empty, &[]).unwrap();
        assert!(read_csv(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "seed,scheme\n1,ios\n").unwrap();
        assert!(matches!(read_csv(&bad), Err(Error::Config(_))));
        assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn schemes_share_one_draw_and_repeat_exactly() {
        let cfg = small_config(4);
        let a = run_trial(&cfg, 3).unwrap();
        let b = run_trial(&cfg, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sum_rate, y.sum_rate);
            assert_eq!(x.users, y.users);
        }
        let direct: Vec<f64> = prepare_trial(&cfg, 3).unwrap().tau_direct;
        for r in &a {
            for u in &r.users {
                assert_eq!(u.tau, cfg.power.tau_ratio * direct[u.user_id]);
            }
        }
    }

    #[test]
    fn no_ris_without_jammer_is_zf_water_filling() {
        let cfg = small_config(4);
        let mut trial = prepare_trial(&cfg, 5).unwrap();
        trial.v_j = CVector::zeros(cfg.scenario.jammer_antennas);
        trial.robust.p_hat_j = 0.0;
        let rec = run_scheme(&cfg, &trial, Scheme::NoRis).unwrap();
        let h = CMatrix::from_fn(4, cfg.scenario.bs_antennas, |k, n| trial.channels.users[k].h_bs_direct[n].conj());
        let dirs = precoder::zero_forcing(&h, 1e8).unwrap();
        let nu = precoder::power_costs(&dirs);
        let p = precoder::water_filling(&nu, &[trial.noise; 4], trial.bs_power).unwrap();
        let want: f64 = p.iter().map(|p| (1.0 + p / trial.noise).log2()).sum();
        assert!((rec.sum_rate - want).abs() < 1e-9 * want, "{} vs {want}", rec.sum_rate);
    }

    #[test]
    fn reflect_only_surface_cannot_reach_far_side() {
        let mut cfg = small_config(4);
        cfg.scenario.users_r = 0;
        cfg.scenario.users_t = 3;
        let trial = prepare_trial(&cfg, 6).unwrap();
        let sig = run_scheme(&cfg, &trial, Scheme::IrsSignal).unwrap();
        let none = run_scheme(&cfg, &trial, Scheme::NoRis).unwrap();
        assert_eq!(sig.sum_rate, none.sum_rate);
    }

    #[test]
    fn single_element_without_jammer_aligns_phase() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.elements = 1;
        cfg.scenario.bs_antennas = 1;
        cfg.scenario.users_r = 1;
        cfg.scenario.users_t = 0;
        cfg.scenario.bits = None;
        for seed in 1..4 {
            let mut trial = prepare_trial(&cfg, seed).unwrap();
            trial.v_j = CVector::zeros(cfg.scenario.jammer_antennas);
            trial.robust.p_hat_j = 0.0;
            trial.robust.tau = vec![f64::INFINITY];
            let alt = alternate_optimize(&cfg, &trial).unwrap();
            let u = &trial.channels.users[0];
            let rate_at = |phi: f64| {
                let (g, _) = surface_response(&PhaseConfig::continuous(&trial.codebook, vec![phi]), &trial.codebook);
                let h = effective_channel(&u.h_bs_direct, &u.h_bs_cascade, &g).unwrap();
                (1.0 + trial.bs_power * h.norm_squared() / trial.noise).log2()
            };
            let grid = (0..360).map(|i| rate_at(TAU * i as f64 / 360.0)).fold(f64::MIN, f64::max);
            let got = rate_at(alt.config.phi_r[0]);
            assert!(got >= 0.98 * grid, "seed {seed}: {got} vs {grid}");
            for w in alt.continuous_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6);
            }
        }
    }
}
