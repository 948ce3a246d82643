//! Event-driven hybrid simulation: integrate flight until touchdown, apply
//! the impact map, integrate stance until lift-off, repeat for n hops.
//!
//! The continuous plant runs on the adaptive integrator; the discrete
//! controller runs on an exact 1 kHz grid and its voltage command is held
//! between ticks. Integration steps never cross a tick, so the zero-order
//! hold is exact. Guards (foot height in flight, vertical contact force in
//! stance) are scanned on the dense output of every accepted step and
//! localized with Brent's method.

use nalgebra::{SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::effective_joint_torque;
use crate::control::{sense, Controller, ControllerConfig, ControlError};
use crate::dynamics::{
    flight_accel, impact_map, stance_solve, voltage_input_torque, DynamicsError,
};
use crate::integrator::{brent_root, DenseOutput, Dopri5, IntegratorError, StepError};
use crate::kinematics::{chain, contact_frame_from_foot, holonomic_jacobian, KinematicsError};
use crate::model::{ContactFrame, DerivMode, JointVec, Phase, RobotModel};

/// Post-liftoff window in which the touchdown guard stays disarmed,
/// suppressing re-contact chatter [s].
pub const MIN_FLIGHT: f64 = 1e-3;

/// Holonomic velocity drift that aborts a stance as numerically broken.
pub const DRIFT_LIMIT: f64 = 1e-5;

/// Interior dense-output samples per step when scanning a guard.
const GUARD_SAMPLES: usize = 4;

type StateVec = SVector<f64, 8>;

fn pack(q: &JointVec, qd: &JointVec) -> StateVec {
    let mut y = StateVec::zeros();
    y.fixed_rows_mut::<4>(0).copy_from(q);
    y.fixed_rows_mut::<4>(4).copy_from(qd);
    y
}

fn unpack(y: &StateVec) -> (JointVec, JointVec) {
    (y.fixed_rows::<4>(0).into(), y.fixed_rows::<4>(4).into())
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Stance-to-flight transitions to simulate; 0 stops at first touchdown.
    pub n_hops: u32,
    /// Hard time limit [s].
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Guard localization tolerance (meters for touchdown, newtons for
    /// lift-off).
    pub event_tol: f64,
    /// Initial configuration (yaw, pitch, hip, knee) [rad]; flight phase.
    pub q0: [f64; 4],
    /// Initial joint rates [rad/s].
    pub qd0: [f64; 4],
    pub controller_enabled: bool,
    /// Keep back-EMF damping active in the stance dynamics.
    pub stance_back_emf: bool,
    pub deriv_mode: DerivMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_hops: 15,
            t_max: 30.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            event_tol: 1e-9,
            q0: [0.0, 0.08, 0.55, -1.1],
            qd0: [0.0; 4],
            controller_enabled: true,
            stance_back_emf: true,
            deriv_mode: DerivMode::Analytic,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimErrorKind> {
        let positives = [
            ("sim.t_max", self.t_max),
            ("sim.rel_tol", self.rel_tol),
            ("sim.abs_tol", self.abs_tol),
            ("sim.event_tol", self.event_tol),
        ];
        for (key, value) in positives {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimErrorKind::BadConfig { key, value });
            }
        }
        for v in self.q0.iter().chain(self.qd0.iter()) {
            if !v.is_finite() {
                return Err(SimErrorKind::BadConfig {
                    key: "sim.q0/qd0",
                    value: *v,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Touchdown,
    Liftoff,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EventKind::Touchdown => "touchdown",
            EventKind::Liftoff => "liftoff",
        })
    }
}

/// Event instant with the pre-event state, for continuity checks against
/// the post-event trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub kind: EventKind,
    pub t: f64,
    pub q_pre: [f64; 4],
    pub qd_pre: [f64; 4],
}

/// One sampled instant. Tick rows carry the command applied from that tick
/// on; event rows carry the post-event state under the currently held
/// command.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: [f64; 4],
    pub qd: [f64; 4],
    pub phase: Phase,
    /// Applied motor voltages (hip, knee) [V].
    pub v: [f64; 2],
    /// Delivered joint torques from the electrical model [N m].
    pub tau: [f64; 2],
    /// Contact force (Y, Z) in the contact frame; `None` in flight [N].
    pub f_grf: Option<[f64; 2]>,
    /// World foot position [m].
    pub foot: [f64; 3],
    pub event: Option<EventKind>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub events: Vec<EventRecord>,
    /// Per-row: any saturation flag active in the held command.
    pub saturated: Vec<bool>,
}

impl SimTrace {
    pub fn end_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// (touchdown, lift-off-or-end) intervals, for shading stance in plots.
    pub fn stance_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut open: Option<f64> = None;
        for e in &self.events {
            match e.kind {
                EventKind::Touchdown => open = Some(e.t),
                EventKind::Liftoff => {
                    if let Some(td) = open.take() {
                        out.push((td, e.t));
                    }
                }
            }
        }
        if let Some(td) = open {
            out.push((td, self.end_time()));
        }
        out
    }
}

/// Aggregates the quantities the acceptance checks and the sweep need.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub touchdowns: usize,
    pub liftoffs: usize,
    pub mean_stance_duration: Option<f64>,
    /// Mean hip tangential speed over the last five hop cycles [m/s].
    pub steady_speed: Option<f64>,
    /// Fraction of rows with any saturation flag set.
    pub saturation_fraction: f64,
    pub max_abs_pitch: f64,
}

pub fn compute_metrics(model: &RobotModel, trace: &SimTrace) -> Metrics {
    let lift_times: Vec<f64> = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Liftoff)
        .map(|e| e.t)
        .collect();
    let stances = trace.stance_intervals();
    let mean_stance_duration = if stances.is_empty() {
        None
    } else {
        Some(stances.iter().map(|(a, b)| b - a).sum::<f64>() / stances.len() as f64)
    };
    let steady_speed = if lift_times.len() >= 6 {
        let (t0, t1) = (
            lift_times[lift_times.len() - 6],
            lift_times[lift_times.len() - 1],
        );
        let speeds: Vec<f64> = trace
            .rows
            .iter()
            .filter(|r| r.t >= t0 && r.t <= t1)
            .map(|r| r.qd[0] * model.gantry.boom_length * r.q[1].cos())
            .collect();
        Some(speeds.iter().sum::<f64>() / speeds.len() as f64)
    } else {
        None
    };
    let saturation_fraction = if trace.saturated.is_empty() {
        0.0
    } else {
        trace.saturated.iter().filter(|&&s| s).count() as f64 / trace.saturated.len() as f64
    };
    Metrics {
        touchdowns: trace.count(EventKind::Touchdown),
        liftoffs: trace.count(EventKind::Liftoff),
        mean_stance_duration,
        steady_speed,
        saturation_fraction,
        max_abs_pitch: trace
            .rows
            .iter()
            .map(|r| r.q[1].abs())
            .fold(0.0, f64::max),
    }
}

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimErrorKind {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("holonomic drift {drift:.3e} at t = {t:.6} s; tighten integrator tolerances")]
    ConstraintDrift { t: f64, drift: f64 },
    #[error("{key} is invalid: {value}")]
    BadConfig { key: &'static str, value: f64 },
}

/// Simulation failure carrying whatever trace existed when it happened.
#[derive(Debug, Clone, Error)]
#[error("{kind}")]
pub struct SimFailure {
    pub kind: SimErrorKind,
    pub trace: SimTrace,
}

fn from_step(err: StepError<DynamicsError>) -> SimErrorKind {
    match err {
        StepError::Integrator(e) => SimErrorKind::Integrator(e),
        StepError::Rhs(e) => SimErrorKind::Dynamics(e),
    }
}

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

enum SegmentEnd {
    Event(f64),
    Timeout,
}

pub struct Simulator {
    model: RobotModel,
    cfg: SimConfig,
    controller: Option<Controller>,
    solver: Dopri5,
    trace: SimTrace,
    t: f64,
    q: JointVec,
    qd: JointVec,
    /// Voltage held since the last control tick.
    held_v: Vector2<f64>,
    held_sat: bool,
    tick: u64,
    hops: u32,
}

impl Simulator {
    pub fn new(
        model: RobotModel,
        ctl_cfg: &ControllerConfig,
        sim_cfg: SimConfig,
    ) -> Result<Self, SimErrorKind> {
        model.validate()?;
        sim_cfg.validate()?;
        let controller = if sim_cfg.controller_enabled {
            Some(Controller::new(ctl_cfg.clone())?)
        } else {
            ctl_cfg.validate()?;
            None
        };
        Ok(Self {
            solver: Dopri5::new(sim_cfg.rel_tol, sim_cfg.abs_tol),
            t: 0.0,
            q: JointVec::from_column_slice(&sim_cfg.q0),
            qd: JointVec::from_column_slice(&sim_cfg.qd0),
            held_v: Vector2::zeros(),
            held_sat: false,
            tick: 0,
            hops: 0,
            trace: SimTrace::default(),
            controller,
            model,
            cfg: sim_cfg,
        })
    }

    fn period(&self) -> f64 {
        self.controller
            .as_ref()
            .map_or(1e-3, |c| c.config.control_period)
    }

    /// Plant input torque under the held voltages at configuration `q`.
    fn input_torque(model: &RobotModel, held_v: &Vector2<f64>, q: &JointVec) -> JointVec {
        let mut tau = voltage_input_torque(model, held_v);
        tau[3] += model.spring_torque(q[3]);
        tau
    }

    fn foot_z(&self, q: &JointVec) -> f64 {
        chain(&self.model, q).p_foot().z
    }

    fn foot_velocity_z(&self, q: &JointVec, qd: &JointVec) -> f64 {
        crate::kinematics::foot_jacobian_world(&self.model, q).row(2).transpose().dot(qd)
    }

    /// Vertical contact force under the held command at one state.
    fn stance_fz(
        &self,
        q: &JointVec,
        qd: &JointVec,
        frame: &ContactFrame,
    ) -> Result<f64, DynamicsError> {
        let tau = Self::input_torque(&self.model, &self.held_v, q);
        let sol = stance_solve(
            &self.model,
            q,
            qd,
            &tau,
            frame,
            self.cfg.deriv_mode,
            self.cfg.stance_back_emf,
        )?;
        Ok(sol.f_grf.y)
    }

    fn record_row(&mut self, phase: Phase, frame: Option<&ContactFrame>, event: Option<EventKind>) {
        let qd_leg = Vector2::new(self.qd[2], self.qd[3]);
        let tau = effective_joint_torque(&self.model.motor, &self.held_v, &qd_leg);
        let f_grf = frame.and_then(|fr| {
            self.stance_fz_pair(fr).ok()
        });
        let foot = chain(&self.model, &self.q).p_foot();
        self.trace.rows.push(TraceRow {
            t: self.t,
            q: self.q.into(),
            qd: self.qd.into(),
            phase,
            v: self.held_v.into(),
            tau: tau.into(),
            f_grf,
            foot: foot.into(),
            event,
        });
        self.trace.saturated.push(self.held_sat);
    }

    fn stance_fz_pair(&self, frame: &ContactFrame) -> Result<[f64; 2], DynamicsError> {
        let tau = Self::input_torque(&self.model, &self.held_v, &self.q);
        let sol = stance_solve(
            &self.model,
            &self.q,
            &self.qd,
            &tau,
            frame,
            self.cfg.deriv_mode,
            self.cfg.stance_back_emf,
        )?;
        Ok(sol.f_grf.into())
    }

    /// Runs the controller at the current instant and holds its output.
    fn control_tick(&mut self, phase: Phase) -> Result<(), SimErrorKind> {
        if let Some(ctl) = self.controller.as_mut() {
            let reading = sense(
                &self.model,
                &ctl.config,
                &self.q,
                phase == Phase::Stance,
                self.t,
            );
            let cmd = ctl.step(&self.model, &reading);
            self.held_v = cmd.v;
            self.held_sat = cmd.saturated();
        }
        Ok(())
    }

    fn next_tick_time(&self) -> f64 {
        self.tick as f64 * self.period()
    }

    /// True when the current time sits on the tick grid (within snap).
    fn at_tick(&self) -> bool {
        (self.t - self.next_tick_time()).abs() < 1e-12
    }

    // -- flight ------------------------------------------------------------

    /// Integrates flight until touchdown or `t_max`. `armed_at` disarms the
    /// guard up to that time (anti-chatter after lift-off).
    fn integrate_flight(&mut self, armed_at: f64) -> Result<SegmentEnd, SimErrorKind> {
        // immediate event: guard already met at (or after) arming
        if self.t >= armed_at
            && self.foot_z(&self.q) <= 0.0
            && self.foot_velocity_z(&self.q, &self.qd) < 0.0
        {
            return Ok(SegmentEnd::Event(self.t));
        }

        let mut y = pack(&self.q, &self.qd);
        let mut last_g: Option<(f64, f64)> = {
            let g = self.foot_z(&self.q);
            (g > 0.0).then_some((self.t, g))
        };

        loop {
            if self.at_tick() {
                self.t = self.next_tick_time();
                self.control_tick(Phase::Flight)?;
                self.record_row(Phase::Flight, None, None);
                self.tick += 1;
            }
            if self.t >= self.cfg.t_max - 1e-12 {
                return Ok(SegmentEnd::Timeout);
            }
            let h_max = (self.next_tick_time() - self.t).min(self.cfg.t_max - self.t);

            let (model, cfg, held_v) = (&self.model, &self.cfg, self.held_v);
            let mut rhs = |_t: f64, y: &StateVec| -> Result<StateVec, DynamicsError> {
                let (q, qd) = unpack(y);
                let tau = Self::input_torque(model, &held_v, &q);
                let qdd = flight_accel(model, &q, &qd, &tau, cfg.deriv_mode)?;
                Ok(pack(&qd, &qdd))
            };
            let f0 = rhs(self.t, &y).map_err(SimErrorKind::Dynamics)?;
            let step = self
                .solver
                .step(&mut rhs, self.t, &y, &f0, h_max)
                .map_err(from_step)?;

            // scan the dense output for a descending zero crossing
            let dense = &step.dense;
            for i in 1..=GUARD_SAMPLES {
                let ts = dense.t0 + dense.h * i as f64 / GUARD_SAMPLES as f64;
                let ys = if i == GUARD_SAMPLES { step.y } else { dense.eval(ts) };
                let (qs, _) = unpack(&ys);
                let g = self.foot_z(&qs);
                if ts < armed_at {
                    // keep the tracker honest but do not fire
                    last_g = (g > 0.0).then_some((ts, g));
                    continue;
                }
                if let Some((t_prev, _)) = last_g {
                    if g <= 0.0 {
                        let t_lo = t_prev.max(armed_at.min(ts));
                        let t_event = self.localize_touchdown(dense, t_lo, ts);
                        let y_event = dense.eval(t_event);
                        let (qe, qde) = unpack(&y_event);
                        let vz = self.foot_velocity_z(&qe, &qde);
                        if vz < 0.0 {
                            self.t = t_event;
                            self.q = qe;
                            self.qd = qde;
                            return Ok(SegmentEnd::Event(t_event));
                        }
                        last_g = None;
                        continue;
                    }
                }
                last_g = (g > 0.0).then_some((ts, g));
            }

            self.t = step.t;
            y = step.y;
            (self.q, self.qd) = unpack(&y);
            if self.next_tick_time() - self.t < 1e-12 {
                self.t = self.next_tick_time();
            }
        }
    }

    fn localize_touchdown(&self, dense: &DenseOutput<8>, a: f64, b: f64) -> f64 {
        let model = &self.model;
        let mut g = |t: f64| {
            let (q, _) = unpack(&dense.eval(t));
            chain(model, &q).p_foot().z
        };
        if g(a) <= 0.0 {
            return a;
        }
        brent_root(&mut g, a, b, 1e-13)
    }

    // -- stance ------------------------------------------------------------

    /// Integrates stance until the vertical contact force crosses zero
    /// downward, or `t_max`.
    fn integrate_stance(&mut self, frame: &ContactFrame) -> Result<SegmentEnd, SimErrorKind> {
        self.check_drift(frame)?;
        if self.stance_fz(&self.q, &self.qd, frame)? <= 0.0 {
            return Ok(SegmentEnd::Event(self.t));
        }

        let mut y = pack(&self.q, &self.qd);

        loop {
            if self.at_tick() {
                self.t = self.next_tick_time();
                self.control_tick(Phase::Stance)?;
                self.record_row(Phase::Stance, Some(frame), None);
                self.tick += 1;
                // the held command jumped; the guard may have jumped with it
                if self.stance_fz(&self.q, &self.qd, frame)? <= 0.0 {
                    return Ok(SegmentEnd::Event(self.t));
                }
            }
            if self.t >= self.cfg.t_max - 1e-12 {
                return Ok(SegmentEnd::Timeout);
            }
            let h_max = (self.next_tick_time() - self.t).min(self.cfg.t_max - self.t);

            let (model, cfg, held_v) = (&self.model, &self.cfg, self.held_v);
            let mut rhs = |_t: f64, y: &StateVec| -> Result<StateVec, DynamicsError> {
                let (q, qd) = unpack(y);
                let tau = Self::input_torque(model, &held_v, &q);
                let sol = stance_solve(model, &q, &qd, &tau, frame, cfg.deriv_mode, cfg.stance_back_emf)?;
                Ok(pack(&qd, &sol.qdd))
            };
            let f0 = rhs(self.t, &y).map_err(SimErrorKind::Dynamics)?;
            let step = self
                .solver
                .step(&mut rhs, self.t, &y, &f0, h_max)
                .map_err(from_step)?;

            let dense = &step.dense;
            let mut prev = (dense.t0, self.stance_fz(&self.q, &self.qd, frame)?);
            for i in 1..=GUARD_SAMPLES {
                let ts = dense.t0 + dense.h * i as f64 / GUARD_SAMPLES as f64;
                let ys = if i == GUARD_SAMPLES { step.y } else { dense.eval(ts) };
                let (qs, qds) = unpack(&ys);
                let fz = self.stance_fz(&qs, &qds, frame)?;
                if prev.1 > 0.0 && fz <= 0.0 {
                    let t_event = self.localize_liftoff(dense, frame, prev.0, ts)?;
                    let y_event = dense.eval(t_event);
                    self.t = t_event;
                    (self.q, self.qd) = unpack(&y_event);
                    self.check_drift(frame)?;
                    return Ok(SegmentEnd::Event(t_event));
                }
                prev = (ts, fz);
            }

            self.t = step.t;
            y = step.y;
            (self.q, self.qd) = unpack(&y);
            self.check_drift(frame)?;
            if self.next_tick_time() - self.t < 1e-12 {
                self.t = self.next_tick_time();
            }
        }
    }

    fn localize_liftoff(
        &self,
        dense: &DenseOutput<8>,
        frame: &ContactFrame,
        a: f64,
        b: f64,
    ) -> Result<f64, SimErrorKind> {
        let mut failed: Option<DynamicsError> = None;
        let t = {
            let mut g = |t: f64| {
                let (q, qd) = unpack(&dense.eval(t));
                match self.stance_fz(&q, &qd, frame) {
                    Ok(fz) => fz,
                    Err(e) => {
                        failed = Some(e);
                        0.0
                    }
                }
            };
            brent_root(&mut g, a, b, 1e-13)
        };
        match failed {
            Some(e) => Err(SimErrorKind::Dynamics(e)),
            None => Ok(t),
        }
    }

    fn check_drift(&self, frame: &ContactFrame) -> Result<(), SimErrorKind> {
        let j = holonomic_jacobian(&self.model, &self.q, frame);
        let drift = (j * self.qd).norm();
        if drift > DRIFT_LIMIT {
            return Err(SimErrorKind::ConstraintDrift { t: self.t, drift });
        }
        Ok(())
    }

    // -- top level ----------------------------------------------------------

    /// Runs the full hybrid loop and hands back the trace; on failure the
    /// partial trace rides along in the error.
    pub fn run(mut self) -> Result<SimTrace, Box<SimFailure>> {
        match self.run_inner() {
            Ok(()) => Ok(self.trace),
            Err(kind) => Err(Box::new(SimFailure {
                kind,
                trace: self.trace,
            })),
        }
    }

    fn run_inner(&mut self) -> Result<(), SimErrorKind> {
        let mut armed_at = self.t;
        loop {
            match self.integrate_flight(armed_at)? {
                SegmentEnd::Timeout => return Ok(()),
                SegmentEnd::Event(t_td) => {
                    let q_pre: [f64; 4] = self.q.into();
                    let qd_pre: [f64; 4] = self.qd.into();
                    let foot = chain(&self.model, &self.q).p_foot();
                    let frame = contact_frame_from_foot(&foot)?;
                    let imp = impact_map(&self.model, &self.q, &self.qd, &frame)?;
                    self.qd = imp.qd_plus;
                    self.solver.reset();
                    self.trace.events.push(EventRecord {
                        kind: EventKind::Touchdown,
                        t: t_td,
                        q_pre,
                        qd_pre,
                    });
                    self.record_row(Phase::Stance, Some(&frame), Some(EventKind::Touchdown));
                    if self.hops == self.cfg.n_hops {
                        return Ok(());
                    }
                    match self.integrate_stance(&frame)? {
                        SegmentEnd::Timeout => return Ok(()),
                        SegmentEnd::Event(t_lo) => {
                            self.hops += 1;
                            self.solver.reset();
                            self.trace.events.push(EventRecord {
                                kind: EventKind::Liftoff,
                                t: t_lo,
                                q_pre: self.q.into(),
                                qd_pre: self.qd.into(),
                            });
                            self.record_row(Phase::Flight, None, Some(EventKind::Liftoff));
                            if self.hops == self.cfg.n_hops {
                                return Ok(());
                            }
                            armed_at = t_lo + MIN_FLIGHT;
                        }
                    }
                }
            }
        }
    }
}

/// Convenience wrapper: build a [`Simulator`] and run it.
pub fn run(
    model: &RobotModel,
    ctl_cfg: &ControllerConfig,
    sim_cfg: &SimConfig,
) -> Result<SimTrace, Box<SimFailure>> {
    let sim = Simulator::new(model.clone(), ctl_cfg, sim_cfg.clone()).map_err(|kind| {
        Box::new(SimFailure {
            kind,
            trace: SimTrace::default(),
        })
    })?;
    sim.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::gravity_vector;
    use crate::kinematics::{foot_jacobian_world, make_contact_frame};

    fn passive_model() -> RobotModel {
        let mut model = RobotModel::default();
        model.motor.speed_constant = 0.0;
        model.spring.stiffness = 0.0;
        model
    }

    fn passive_sim(n_hops: u32) -> SimConfig {
        SimConfig {
            n_hops,
            controller_enabled: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn ballistic_drop_touchdown_matches_constant_accel_oracle() {
        let model = passive_model();
        let cfg = passive_sim(0);
        let q0 = JointVec::from_column_slice(&cfg.q0);
        let g0 = chain(&model, &q0).p_foot().z;
        assert!(g0 > 0.005, "default pose must start airborne, foot at {g0}");
        let qdd0 = flight_accel(&model, &q0, &JointVec::zeros(), &JointVec::zeros(), DerivMode::Analytic).unwrap();
        let az = foot_jacobian_world(&model, &q0).row(2).transpose().dot(&qdd0);
        assert!(az < 0.0);
        let t_pred = (2.0 * g0 / az.abs()).sqrt();

        let trace = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        assert_eq!(trace.count(EventKind::Touchdown), 1);
        assert_eq!(trace.count(EventKind::Liftoff), 0);
        let td = &trace.events[0];
        assert!(
            (td.t - t_pred).abs() < 0.01 * t_pred,
            "touchdown {} vs predicted {}",
            td.t,
            t_pred
        );
        // event row carries the touchdown state; foot pinned at the root
        let row = trace.rows.last().unwrap();
        assert_eq!(row.event, Some(EventKind::Touchdown));
        assert!(row.foot[2].abs() <= 1e-8, "foot z {}", row.foot[2]);
    }

    #[test]
    fn touchdown_is_immediate_when_guard_already_met() {
        let model = passive_model();
        // posture with the foot exactly on the floor: solve pitch
        let (th3, th4) = (0.55, -1.1);
        let foot_z = |th2: f64| chain(&model, &JointVec::new(0.0, th2, th3, th4)).p_foot().z;
        let (mut lo, mut hi) = (-0.5, 0.5);
        assert!(foot_z(lo) < 0.0 && foot_z(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if foot_z(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let th2 = 0.5 * (lo + hi);
        let cfg = SimConfig {
            q0: [0.0, th2, th3, th4],
            qd0: [0.0, -0.4, 0.0, 0.0], // pitching down: foot moving down
            ..passive_sim(0)
        };
        let trace = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].t, 0.0);
    }

    /// Posture with the foot on the floor plus the torque that holds it
    /// statically; the spring is retuned to supply the knee torque and the
    /// hip posture is solved so no hip torque is needed.
    fn static_stance_setup() -> (RobotModel, JointVec) {
        let mut model = passive_model();
        let th4 = -1.0;
        // solve th3 so the required hip torque at static equilibrium is 0
        let tau3_needed = |th3: f64, model: &RobotModel| {
            let th2 = solve_pitch_for_contact(model, th3, th4);
            let q = JointVec::new(0.0, th2, th3, th4);
            let frame = make_contact_frame(model, &q).unwrap();
            let g = gravity_vector(model, &q);
            let j = holonomic_jacobian(model, &q, &frame);
            let jt = j.transpose();
            let a = nalgebra::Matrix2::new(jt[(0, 0)], jt[(0, 1)], jt[(1, 0)], jt[(1, 1)]);
            let f = a.lu().solve(&Vector2::new(g[0], g[1])).unwrap();
            g[2] - jt[(2, 0)] * f.x - jt[(2, 1)] * f.y
        };
        let (mut lo, mut hi) = (0.2, 0.9);
        assert!(
            tau3_needed(lo, &model) * tau3_needed(hi, &model) < 0.0,
            "no hip-equilibrium bracket: {} {}",
            tau3_needed(lo, &model),
            tau3_needed(hi, &model)
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tau3_needed(lo, &model) * tau3_needed(mid, &model) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let th3 = 0.5 * (lo + hi);
        let th2 = solve_pitch_for_contact(&model, th3, th4);
        let q = JointVec::new(0.0, th2, th3, th4);

        // knee torque from the spring: rest angle set to deliver it exactly
        let frame = make_contact_frame(&model, &q).unwrap();
        let g = gravity_vector(&model, &q);
        let j = holonomic_jacobian(&model, &q, &frame);
        let jt = j.transpose();
        let a = nalgebra::Matrix2::new(jt[(0, 0)], jt[(0, 1)], jt[(1, 0)], jt[(1, 1)]);
        let f = a.lu().solve(&Vector2::new(g[0], g[1])).unwrap();
        assert!(f.y > 0.0, "static contact must bear weight, F_Z = {}", f.y);
        let tau4 = g[3] - jt[(3, 0)] * f.x - jt[(3, 1)] * f.y;
        model.spring.stiffness = 14.0;
        model.spring.rest_angle = th4 + tau4 / model.spring.stiffness;
        (model, q)
    }

    fn solve_pitch_for_contact(model: &RobotModel, th3: f64, th4: f64) -> f64 {
        let foot_z = |th2: f64| chain(model, &JointVec::new(0.0, th2, th3, th4)).p_foot().z;
        let (mut lo, mut hi) = (-0.6, 0.6);
        assert!(foot_z(lo) < 0.0 && foot_z(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if foot_z(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn static_stance_holds_without_liftoff() {
        let (model, q) = static_stance_setup();
        let cfg = SimConfig {
            t_max: 0.3,
            ..passive_sim(5)
        };
        let mut sim =
            Simulator::new(model.clone(), &ControllerConfig::default(), cfg).unwrap();
        sim.q = q;
        sim.qd = JointVec::zeros();
        let frame = make_contact_frame(&model, &q).unwrap();
        let fz0 = sim.stance_fz(&sim.q, &sim.qd, &frame).unwrap();
        assert!(fz0 > 0.0);
        match sim.integrate_stance(&frame).unwrap() {
            SegmentEnd::Timeout => {}
            SegmentEnd::Event(t) => panic!("unexpected lift-off at t = {t}"),
        }
        // state never moved, force never changed
        assert!((sim.q - q).norm() < 1e-6, "drifted to {:?}", sim.q);
        assert!(sim.qd.norm() < 1e-5);
        for row in &sim.trace.rows {
            let f = row.f_grf.expect("stance rows carry forces");
            assert!((f[1] - fz0).abs() < 1e-5 * fz0.max(1.0));
        }
    }

    #[test]
    fn overdriven_stance_lifts_off_with_small_force_residual() {
        let (mut model, q) = static_stance_setup();
        // crank the spring rest angle: strong leg extension torque
        model.spring.rest_angle += 0.8;
        let cfg = SimConfig {
            t_max: 2.0,
            ..passive_sim(5)
        };
        let mut sim =
            Simulator::new(model.clone(), &ControllerConfig::default(), cfg).unwrap();
        sim.q = q;
        sim.qd = JointVec::zeros();
        let frame = make_contact_frame(&model, &q).unwrap();
        match sim.integrate_stance(&frame).unwrap() {
            SegmentEnd::Event(t) => {
                let fz = sim.stance_fz(&sim.q, &sim.qd, &frame).unwrap();
                assert!(fz.abs() <= 1e-6, "liftoff force residual {fz} at t = {t}");
                // constraint held to the end
                let j = holonomic_jacobian(&model, &sim.q, &frame);
                assert!((j * sim.qd).norm() <= 1e-6);
            }
            SegmentEnd::Timeout => panic!("expected lift-off"),
        }
    }

    #[test]
    fn default_scenario_hops_and_alternates() {
        let model = RobotModel::default();
        let cfg = SimConfig {
            n_hops: 3,
            ..SimConfig::default()
        };
        let trace = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        assert_eq!(trace.count(EventKind::Touchdown), 3, "events: {:?}", trace.events.iter().map(|e| (e.kind, e.t)).collect::<Vec<_>>());
        assert_eq!(trace.count(EventKind::Liftoff), 3);
        // alternation
        for pair in trace.events.windows(2) {
            assert_ne!(pair[0].kind, pair[1].kind);
        }
        assert_eq!(trace.events[0].kind, EventKind::Touchdown);
        // q continuous across every event; qd continuous across lift-off
        for e in &trace.events {
            let row = trace
                .rows
                .iter()
                .find(|r| r.t == e.t && r.event == Some(e.kind))
                .expect("event row");
            for i in 0..4 {
                assert!((row.q[i] - e.q_pre[i]).abs() < 1e-12);
                if e.kind == EventKind::Liftoff {
                    assert!((row.qd[i] - e.qd_pre[i]).abs() < 1e-12);
                }
            }
        }
        // impacts dissipate
        for e in trace.events.iter().filter(|e| e.kind == EventKind::Touchdown) {
            let row = trace
                .rows
                .iter()
                .find(|r| r.t == e.t && r.event == Some(e.kind))
                .unwrap();
            let q = JointVec::from_column_slice(&row.q);
            let before = crate::dynamics::kinetic_energy(&model, &q, &JointVec::from_column_slice(&e.qd_pre));
            let after = crate::dynamics::kinetic_energy(&model, &q, &JointVec::from_column_slice(&row.qd));
            assert!(after <= before * (1.0 + 1e-12));
        }
        let m = compute_metrics(&model, &trace);
        assert_eq!(m.liftoffs, 3);
        assert!(m.max_abs_pitch < 1.0, "pitch excursion {}", m.max_abs_pitch);
    }

    #[test]
    fn stance_rows_satisfy_constraint_bound() {
        let model = RobotModel::default();
        let cfg = SimConfig {
            n_hops: 2,
            ..SimConfig::default()
        };
        let trace = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        let mut checked = 0;
        for row in trace.rows.iter().filter(|r| r.phase == Phase::Stance) {
            let q = JointVec::from_column_slice(&row.q);
            let qd = JointVec::from_column_slice(&row.qd);
            let frame = make_contact_frame(&model, &q).unwrap();
            let j = holonomic_jacobian(&model, &q, &frame);
            assert!((j * qd).norm() <= 1e-6, "drift at t = {}", row.t);
            checked += 1;
        }
        assert!(checked > 50, "too few stance rows ({checked})");
    }

    #[test]
    fn zero_hops_stops_at_first_touchdown() {
        let model = RobotModel::default();
        let cfg = SimConfig {
            n_hops: 0,
            ..SimConfig::default()
        };
        let trace = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].kind, EventKind::Touchdown);
        assert_eq!(trace.rows.last().unwrap().event, Some(EventKind::Touchdown));
    }

    #[test]
    fn touchdown_time_converges_under_tolerance_refinement() {
        let model = passive_model();
        let base = passive_sim(0);
        let tight = SimConfig {
            rel_tol: base.rel_tol / 2.0,
            abs_tol: base.abs_tol / 2.0,
            ..base.clone()
        };
        let t1 = run(&model, &ControllerConfig::default(), &base).unwrap().events[0].t;
        let t2 = run(&model, &ControllerConfig::default(), &tight).unwrap().events[0].t;
        assert!(
            (t1 - t2).abs() < 10.0 * base.event_tol,
            "touchdown times {t1} vs {t2}"
        );
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let model = RobotModel::default();
        let cfg = SimConfig {
            n_hops: 2,
            ..SimConfig::default()
        };
        let a = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        let b = run(&model, &ControllerConfig::default(), &cfg).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.t.to_bits(), rb.t.to_bits());
            for i in 0..4 {
                assert_eq!(ra.q[i].to_bits(), rb.q[i].to_bits());
                assert_eq!(ra.qd[i].to_bits(), rb.qd[i].to_bits());
            }
            assert_eq!(ra.v[0].to_bits(), rb.v[0].to_bits());
            assert_eq!(ra.f_grf.map(|f| f[1].to_bits()), rb.f_grf.map(|f| f[1].to_bits()));
        }
    }
}
