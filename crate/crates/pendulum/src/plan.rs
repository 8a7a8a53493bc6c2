//! Phase-plane swing-up plans and their time parametrization.
//!
//! A plan is a polyline in the `(x1, x2)` plane from the hanging rest state
//! `(-π/2, 0)` to the upright rest state `(π/2, 0)` through one or three
//! switching points with increasing `x1` and positive velocity. Along the
//! path `x2 = v(x1)`, so time follows from `dx1/dt = v(x1)` and the desired
//! acceleration is `v · dv/dx1`.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::error::{Error, Result};

pub const START: [f64; 2] = [-FRAC_PI_2, 0.0];
pub const GOAL: [f64; 2] = [FRAC_PI_2, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanClass {
    OnePoint,
    ThreePoint,
}

impl PlanClass {
    pub fn switching_points(self) -> usize {
        match self {
            PlanClass::OnePoint => 1,
            PlanClass::ThreePoint => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlanClass::OnePoint => "one-point",
            PlanClass::ThreePoint => "three-point",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlanePlan {
    class: PlanClass,
    /// Vertices including start and goal.
    points: Vec<[f64; 2]>,
}

impl PhasePlanePlan {
    pub fn new(class: PlanClass, switching: &[[f64; 2]]) -> Result<Self> {
        if switching.len() != class.switching_points() {
            return Err(Error::Plan(format!(
                "{} plan needs {} switching points, got {}",
                class.name(),
                class.switching_points(),
                switching.len()
            )));
        }
        let mut points = Vec::with_capacity(switching.len() + 2);
        points.push(START);
        points.extend_from_slice(switching);
        points.push(GOAL);
        if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::Plan(
                "switching points must have strictly increasing x1 inside (-π/2, π/2)".into(),
            ));
        }
        if switching.iter().any(|p| !(p[1] > 0.0 && p[1].is_finite())) {
            return Err(Error::Plan("switching velocities must be positive".into()));
        }
        Ok(Self { class, points })
    }

    /// Samples switching positions uniformly in `(-π/2, π/2)` (sorted) and
    /// velocities uniformly in `peak_velocity`.
    pub fn sample<R: Rng + ?Sized>(class: PlanClass, peak_velocity: (f64, f64), rng: &mut R) -> Result<Self> {
        let (lo, hi) = peak_velocity;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Plan(format!("invalid peak velocity range [{lo}, {hi}]")));
        }
        loop {
            let mut xs: Vec<f64> = (0..class.switching_points())
                .map(|_| rng.random_range(-FRAC_PI_2..FRAC_PI_2))
                .collect();
            xs.sort_by(f64::total_cmp);
            let switching: Vec<[f64; 2]> = xs
                .iter()
                .map(|&x| [x, if hi > lo { rng.random_range(lo..=hi) } else { lo }])
                .collect();
            // exact ties have probability zero but would make a degenerate segment
            if let Ok(plan) = Self::new(class, &switching) {
                return Ok(plan);
            }
        }
    }

    pub fn class(&self) -> PlanClass {
        self.class
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn switching_points(&self) -> &[[f64; 2]] {
        &self.points[1..self.points.len() - 1]
    }

    fn segment(&self, x1: f64) -> usize {
        let last = self.points.len() - 2;
        (0..=last).find(|&s| x1 <= self.points[s + 1][0]).unwrap_or(last)
    }

    /// Path velocity `v(x1)`, zero outside `[-π/2, π/2]`.
    pub fn velocity_at(&self, x1: f64) -> f64 {
        if x1 <= START[0] || x1 >= GOAL[0] {
            return 0.0;
        }
        let s = self.segment(x1);
        let (a, b) = (self.points[s], self.points[s + 1]);
        a[1] + (b[1] - a[1]) * (x1 - a[0]) / (b[0] - a[0])
    }

    /// `dv/dx1` of the segment containing `x1`.
    pub fn slope_at(&self, x1: f64) -> f64 {
        let s = self.segment(x1.clamp(START[0], GOAL[0]));
        let (a, b) = (self.points[s], self.points[s + 1]);
        (b[1] - a[1]) / (b[0] - a[0])
    }
}

/// Desired position, velocity and acceleration at one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub x1: f64,
    pub x2: f64,
    pub accel: f64,
}

/// Samples the plan at period `dt`, then holds the goal for `hold_time`.
///
/// The path velocity vanishes at both rest states, so the time law uses
/// `max(v, min_velocity)`; where the floor is active the desired
/// acceleration is zero.
pub fn time_law(plan: &PhasePlanePlan, dt: f64, min_velocity: f64, hold_time: f64) -> Result<Vec<Setpoint>> {
    if !(dt > 0.0) || !(min_velocity > 0.0) || !(hold_time >= 0.0) {
        return Err(Error::Plan(
            "time law needs dt > 0, min_velocity > 0, hold_time >= 0".into(),
        ));
    }
    const SUBSTEPS: usize = 4;
    let speed = |x: f64| plan.velocity_at(x).max(min_velocity);
    let mut out = Vec::new();
    let mut x = START[0];
    // generous cap: the floor alone reaches the goal in π / min_velocity
    let max_ticks = (std::f64::consts::PI / min_velocity / dt).ceil() as usize + 1;
    while x < GOAL[0] && out.len() < max_ticks {
        let v = plan.velocity_at(x);
        let (x2, accel) = if v > min_velocity {
            (v, v * plan.slope_at(x))
        } else {
            (min_velocity, 0.0)
        };
        out.push(Setpoint { x1: x, x2, accel });
        let h = dt / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            let k1 = speed(x);
            let k2 = speed(x + 0.5 * h * k1);
            let k3 = speed(x + 0.5 * h * k2);
            let k4 = speed(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    let hold = (hold_time / dt).round() as usize;
    out.extend(std::iter::repeat_n(
        Setpoint {
            x1: GOAL[0],
            x2: 0.0,
            accel: 0.0,
        },
        hold.max(1),
    ));
    Ok(out)
}
