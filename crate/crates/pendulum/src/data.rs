//! Dataset generation: PID-tracked demonstrations on the reference pendulum
//! and open-loop excitation of the target pendulum.
//!
//! Every episode draws from its own ChaCha stream (`seed`, stream = episode
//! + 1), so datasets are reproducible and independent of thread scheduling.

use dfpd_core::grid::UniformGrid;
use dfpd_core::trajectory::TrajectoryRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::PendulumParams;
use crate::error::{Error, Result};
use crate::plan::{time_law, PhasePlanePlan, PlanClass, Setpoint, START};

fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode + 1);
    rng
}

/// Computed-torque PID gains: `τ = M (a_d + kp e + kd ė + ki ∫e) + G + F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub class: Option<PlanClass>,
    pub steps: usize,
    /// Tracking error exceeded the divergence threshold at some point.
    pub diverged: bool,
    pub rms_tracking_error: f64,
    pub max_tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<TrajectoryRecord>,
    pub episodes: Vec<EpisodeSummary>,
    /// Torque that maps to `u = 1`.
    pub input_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    pub params: PendulumParams,
    pub episodes: usize,
    /// Share of one-switching-point plans; the count is rounded, not sampled.
    pub one_point_fraction: f64,
    pub peak_velocity: (f64, f64),
    pub min_velocity: f64,
    pub hold_time: f64,
    pub gains: PidGains,
    /// Position error (rad) above which an episode is flagged as diverged.
    pub divergence_threshold: f64,
    /// Normalization torque; `None` uses the largest observed |τ|.
    pub input_scale: Option<f64>,
}

/// One tracked episode: `(state, torque)` per tick plus error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    pub states: Vec<[f64; 2]>,
    pub torques: Vec<f64>,
    pub rms_error: f64,
    pub max_error: f64,
    pub diverged: bool,
}

/// Tracks the setpoint sequence on the (noisy) plant from the start state.
pub fn track(
    params: &PendulumParams,
    gains: PidGains,
    law: &[Setpoint],
    divergence_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tracked> {
    let mut x = START;
    let mut integral = 0.0;
    let mut states = Vec::with_capacity(law.len());
    let mut torques = Vec::with_capacity(law.len());
    let (mut sq, mut max_error) = (0.0, 0.0f64);
    for (k, s) in law.iter().enumerate() {
        let e = s.x1 - x[0];
        let de = s.x2 - x[1];
        integral += e * params.dt;
        let tau = params.inertia() * (s.accel + gains.kp * e + gains.kd * de + gains.ki * integral)
            + params.gravity_torque(x[0])
            + params.friction_torque(x[1]);
        let tau = tau.clamp(-params.max_torque, params.max_torque);
        states.push(x);
        torques.push(tau);
        sq += e * e;
        max_error = max_error.max(e.abs());
        x = params
            .step(x, tau, rng)
            .map_err(|_| Error::Divergence { step: k + 1 })?;
    }
    Ok(Tracked {
        rms_error: (sq / law.len().max(1) as f64).sqrt(),
        diverged: max_error > divergence_threshold,
        max_error,
        states,
        torques,
    })
}

pub fn generate_reference_dataset(cfg: &ReferenceConfig, seed: u64) -> Result<Dataset> {
    cfg.params.validate()?;
    if !(0.0..=1.0).contains(&cfg.one_point_fraction) {
        return Err(Error::Params("one_point_fraction must be in [0, 1]".into()));
    }
    let ones = (cfg.one_point_fraction * cfg.episodes as f64).round() as usize;
    let mut classes: Vec<PlanClass> = (0..cfg.episodes)
        .map(|e| {
            if e < ones {
                PlanClass::OnePoint
            } else {
                PlanClass::ThreePoint
            }
        })
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut order_rng);

    let episodes: Vec<(Tracked, PlanClass)> = classes
        .par_iter()
        .enumerate()
        .map(|(e, &class)| {
            let mut rng = episode_rng(seed, e as u64);
            let plan = PhasePlanePlan::sample(class, cfg.peak_velocity, &mut rng)?;
            let law = time_law(&plan, cfg.params.dt, cfg.min_velocity, cfg.hold_time)?;
            let tracked = track(&cfg.params, cfg.gains, &law, cfg.divergence_threshold, &mut rng)?;
            Ok((tracked, class))
        })
        .collect::<Result<_>>()?;

    let observed = episodes
        .iter()
        .flat_map(|(t, _)| t.torques.iter())
        .fold(0.0f64, |m, t| m.max(t.abs()));
    let input_scale = match cfg.input_scale {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Params(format!("input scale must be positive, got {s}"))),
        None if observed > 0.0 => observed,
        None => cfg.params.max_torque,
    };

    let mut records = Vec::new();
    let mut summaries = Vec::with_capacity(episodes.len());
    for (e, (t, class)) in episodes.into_iter().enumerate() {
        for (k, (x, tau)) in t.states.iter().zip(&t.torques).enumerate() {
            records.push(TrajectoryRecord {
                episode: e as u64,
                t: k as f64 * cfg.params.dt,
                x1: x[0],
                x2: x[1],
                u: (tau / input_scale).clamp(-1.0, 1.0),
                tau: *tau,
            });
        }
        summaries.push(EpisodeSummary {
            episode: e as u64,
            class: Some(class),
            steps: t.states.len(),
            diverged: t.diverged,
            rms_tracking_error: t.rms_error,
            max_tracking_error: t.max_error,
        });
    }
    Ok(Dataset {
        records,
        episodes: summaries,
        input_scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    pub params: PendulumParams,
    pub episodes: usize,
    /// Range of the hold time of each random torque level, s.
    pub segment_duration: (f64, f64),
    pub max_duration: f64,
    /// Box for initial states; an episode ends when the state leaves it.
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

/// Piecewise-constant random inputs `u ~ U[-1, 1]` from random initial states.
pub fn generate_target_excitation(cfg: &ExcitationConfig, seed: u64) -> Result<Dataset> {
    cfg.params.validate()?;
    let (smin, smax) = cfg.segment_duration;
    if !(smin > 0.0 && smax >= smin) || !(cfg.max_duration > 0.0) {
        return Err(Error::Params("invalid excitation segment or episode duration".into()));
    }
    if (0..2).any(|d| !(cfg.upper[d] > cfg.lower[d])) {
        return Err(Error::Params("excitation box must have upper > lower".into()));
    }
    let dt = cfg.params.dt;
    let max_steps = (cfg.max_duration / dt).round().max(1.0) as usize;
    let inside = |x: &[f64; 2]| (0..2).all(|d| x[d] >= cfg.lower[d] && x[d] <= cfg.upper[d]);
    let scale = cfg.params.max_torque;

    let episodes: Vec<Vec<TrajectoryRecord>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = episode_rng(seed, e as u64);
            let mut x = [
                rng.random_range(cfg.lower[0]..=cfg.upper[0]),
                rng.random_range(cfg.lower[1]..=cfg.upper[1]),
            ];
            let mut out = Vec::new();
            let mut u = 0.0;
            let mut remaining = 0usize;
            for k in 0..max_steps {
                if remaining == 0 {
                    u = rng.random_range(-1.0..=1.0);
                    let hold = if smax > smin {
                        rng.random_range(smin..=smax)
                    } else {
                        smin
                    };
                    remaining = (hold / dt).round().max(1.0) as usize;
                }
                remaining -= 1;
                out.push(TrajectoryRecord {
                    episode: e as u64,
                    t: k as f64 * dt,
                    x1: x[0],
                    x2: x[1],
                    u,
                    tau: u * scale,
                });
                let next = cfg.params.step(x, u * scale, &mut rng)?;
                if !inside(&next) {
                    break;
                }
                x = next;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let summaries = episodes
        .iter()
        .enumerate()
        .map(|(e, r)| EpisodeSummary {
            episode: e as u64,
            class: None,
            steps: r.len(),
            diverged: false,
            rms_tracking_error: 0.0,
            max_tracking_error: 0.0,
        })
        .collect();
    Ok(Dataset {
        records: episodes.into_iter().flatten().collect(),
        episodes: summaries,
        input_scale: scale,
    })
}

/// Fraction of grid cells containing at least one record.
pub fn cell_coverage(records: &[TrajectoryRecord], grid: &UniformGrid) -> dfpd_core::Result<f64> {
    let mut seen = vec![false; grid.len()];
    for r in records {
        seen[grid.quantize(&r.state())?] = true;
    }
    Ok(seen.iter().filter(|&&s| s).count() as f64 / grid.len() as f64)
}
