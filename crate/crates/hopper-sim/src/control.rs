//! Discrete hopping controller: task-space PD in flight, a Bezier ground
//! force profile in stance, and a linear blend across touchdown, all run at
//! a fixed control rate on quantized encoder readings.
//!
//! The controller never sees plant internals. It consumes [`SensorReading`]s
//! (coarse leg angles, a contact flag, a timestamp), estimates joint speeds
//! with a filtered derivative, and emits a [`MotorCommand`] that the
//! simulator holds constant until the next tick.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::actuation::{torque_to_voltage, MotorCommand};
use crate::kinematics::{contact_jacobian, foot_in_hip};
use crate::model::{JointVec, RobotModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("{key} must be positive, got {value}")]
    NonPositive { key: &'static str, value: f64 },
    #[error("{key} must be non-negative, got {value}")]
    Negative { key: &'static str, value: f64 },
    #[error("{key} must be finite")]
    NonFinite { key: &'static str },
    #[error("force profile needs at least two control points, got {count}")]
    ProfileTooShort { count: usize },
    #[error("force profile maximum must be positive, got {max}")]
    ProfileNotPositive { max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Diagonal task-space stiffness, (Y, Z) hip-frame axes [N/m].
    pub k_p: [f64; 2],
    /// Diagonal task-space damping [N s/m].
    pub k_d: [f64; 2],
    /// Flight-phase foot setpoint in the hip frame [m].
    pub p_ref_hip: [f64; 2],
    /// Projected stance duration [s].
    pub stance_duration: f64,
    /// Peak (horizontal, vertical) ground force over a stance [N].
    pub f_peak: [f64; 2],
    /// Touchdown blend window [s].
    pub blend_time: f64,
    /// Control period [s].
    pub control_period: f64,
    /// Filtered-derivative bandwidth [1/s].
    pub lambda: f64,
    /// Speed constant the voltage map compensates with [V s/rad]; the plant
    /// keeps its true value regardless.
    pub k_v_assumed: f64,
    /// Encoder counts per motor revolution.
    pub encoder_cpr: f64,
    /// Ticks the raw contact flag must persist before the controller
    /// believes it; 0 trusts it immediately.
    pub contact_debounce: u32,
    /// Bezier control points of the stance force shape; rescaled so the
    /// profile maximum equals `f_peak` per axis.
    pub bezier_points: Vec<f64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_p: [500.0, 500.0],
            k_d: [50.0, 50.0],
            p_ref_hip: [0.0, -0.27],
            stance_duration: 0.15,
            f_peak: [4.0, 80.0],
            blend_time: 0.010,
            control_period: 0.001,
            lambda: 10.0,
            k_v_assumed: 0.0,
            encoder_cpr: 4096.0,
            contact_debounce: 0,
            bezier_points: vec![0.0, 0.8, 1.0, 0.95, 0.85],
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let positives = [
            ("controller.stance_duration", self.stance_duration),
            ("controller.blend_time", self.blend_time),
            ("controller.control_period", self.control_period),
            ("controller.lambda", self.lambda),
            ("controller.encoder_cpr", self.encoder_cpr),
        ];
        for (key, value) in positives {
            if !value.is_finite() {
                return Err(ControlError::NonFinite { key });
            }
            if value <= 0.0 {
                return Err(ControlError::NonPositive { key, value });
            }
        }
        let non_negatives = [
            ("controller.k_p[0]", self.k_p[0]),
            ("controller.k_p[1]", self.k_p[1]),
            ("controller.k_d[0]", self.k_d[0]),
            ("controller.k_d[1]", self.k_d[1]),
            ("controller.k_v_assumed", self.k_v_assumed),
        ];
        for (key, value) in non_negatives {
            if !value.is_finite() {
                return Err(ControlError::NonFinite { key });
            }
            if value < 0.0 {
                return Err(ControlError::Negative { key, value });
            }
        }
        for (i, v) in self
            .p_ref_hip
            .iter()
            .chain(self.f_peak.iter())
            .chain(self.bezier_points.iter())
            .enumerate()
        {
            if !v.is_finite() {
                let _ = i;
                return Err(ControlError::NonFinite {
                    key: "controller.p_ref_hip/f_peak/bezier_points",
                });
            }
        }
        profile_peak(&self.bezier_points)?;
        Ok(())
    }

    fn gains(&self) -> (Matrix2<f64>, Matrix2<f64>) {
        (
            Matrix2::from_diagonal(&Vector2::new(self.k_p[0], self.k_p[1])),
            Matrix2::from_diagonal(&Vector2::new(self.k_d[0], self.k_d[1])),
        )
    }
}

// ---------------------------------------------------------------------------
// sensing emulation
// ---------------------------------------------------------------------------

/// What the controller is allowed to know at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    /// Quantized leg joint angles (hip, knee) [rad].
    pub theta_leg: Vector2<f64>,
    pub contact: bool,
    pub t: f64,
}

/// Rounds a joint angle to the nearest encoder count. The quantum is one
/// motor-side count divided through the gearbox.
pub fn quantize_angle(theta: f64, cpr: f64, gear: f64) -> f64 {
    let delta = std::f64::consts::TAU / (cpr * gear);
    (theta / delta).round() * delta
}

/// Builds the reading the controller would get from the plant state.
pub fn sense(
    model: &RobotModel,
    config: &ControllerConfig,
    q: &JointVec,
    contact: bool,
    t: f64,
) -> SensorReading {
    SensorReading {
        theta_leg: Vector2::new(
            quantize_angle(q[2], config.encoder_cpr, model.motor.gear_hip),
            quantize_angle(q[3], config.encoder_cpr, model.motor.gear_knee),
        ),
        contact,
        t,
    }
}

// ---------------------------------------------------------------------------
// filtered derivative
// ---------------------------------------------------------------------------

/// Backward-difference realization of the washout filter `lambda s / (lambda + s)`:
/// `y_k = (lambda (theta_k - theta_{k-1}) + y_{k-1}) / (1 + lambda T)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FilteredDerivative {
    prev: Option<f64>,
    y: f64,
}

impl FilteredDerivative {
    /// Advances the filter one sample and returns the speed estimate. The
    /// first sample initializes the history, so the estimate starts at zero
    /// instead of spiking.
    pub fn step(&mut self, theta: f64, period: f64, lambda: f64) -> f64 {
        let prev = self.prev.unwrap_or(theta);
        self.y = (lambda * (theta - prev) + self.y) / (1.0 + lambda * period);
        self.prev = Some(theta);
        self.y
    }

    pub fn estimate(&self) -> f64 {
        self.y
    }
}

// ---------------------------------------------------------------------------
// control laws
// ---------------------------------------------------------------------------

/// Flight-phase task-space PD: `tau = J_c^T (K_p (p_ref - p) - K_d pdot)`.
/// Uses the Jacobian transpose, so it stays finite at the straight-knee
/// singularity.
pub fn aerial_torque(
    config: &ControllerConfig,
    model: &RobotModel,
    theta_leg: &Vector2<f64>,
    thetadot_est: &Vector2<f64>,
) -> Vector2<f64> {
    let q = JointVec::new(0.0, 0.0, theta_leg.x, theta_leg.y);
    let jc = contact_jacobian(model, &q);
    let p = foot_in_hip(model, theta_leg.x, theta_leg.y);
    let p_ref = Vector2::new(config.p_ref_hip[0], config.p_ref_hip[1]);
    let (kp, kd) = config.gains();
    jc.transpose() * (kp * (p_ref - p) - kd * (jc * thetadot_est))
}

/// Stance-phase force map: `tau = J_c^T f`. `f` is the force the foot
/// presses with; the ground reacts with `-f` on the robot, so a controller
/// wanting an upward reaction passes a downward `f`.
pub fn stance_torque(
    model: &RobotModel,
    theta_leg: &Vector2<f64>,
    f_dgrf: &Vector2<f64>,
) -> Vector2<f64> {
    let q = JointVec::new(0.0, 0.0, theta_leg.x, theta_leg.y);
    contact_jacobian(model, &q).transpose() * f_dgrf
}

/// Evaluates a Bezier curve with the given control points by de Casteljau.
pub fn bezier_scalar(points: &[f64], s: f64) -> f64 {
    let mut work: Vec<f64> = points.to_vec();
    for round in (1..work.len()).rev() {
        for i in 0..round {
            work[i] += s * (work[i + 1] - work[i]);
        }
    }
    work[0]
}

/// Maximum of the Bezier shape over `s` in [0,1]: dense scan plus
/// golden-section refinement around the best sample.
fn profile_peak(points: &[f64]) -> Result<f64, ControlError> {
    if points.len() < 2 {
        return Err(ControlError::ProfileTooShort {
            count: points.len(),
        });
    }
    const GRID: usize = 4096;
    let f = |s: f64| bezier_scalar(points, s);
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=GRID {
        let v = f(i as f64 / GRID as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut a = (best_i.saturating_sub(1)) as f64 / GRID as f64;
    let mut b = ((best_i + 1).min(GRID)) as f64 / GRID as f64;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let max = best.max(fc).max(fd);
    if max <= 0.0 {
        return Err(ControlError::ProfileNotPositive { max });
    }
    Ok(max)
}

/// Stance force shape with per-axis peaks baked in. Caches the profile
/// normalization so the hot control path never rescans the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceProfile {
    points: Vec<f64>,
    scale: f64,
}

impl ForceProfile {
    pub fn new(config: &ControllerConfig) -> Result<Self, ControlError> {
        Ok(Self {
            points: config.bezier_points.clone(),
            scale: profile_peak(&config.bezier_points)?,
        })
    }

    /// Unit-peak shape value at normalized stance time `s`.
    pub fn shape(&self, s: f64) -> f64 {
        bezier_scalar(&self.points, s.clamp(0.0, 1.0)) / self.scale
    }
}

/// Desired ground-force profile at normalized stance time `s`, per-axis
/// peak equal to `config.f_peak`.
pub fn bezier_force(config: &ControllerConfig, s: f64) -> Result<Vector2<f64>, ControlError> {
    let profile = ForceProfile::new(config)?;
    let shape = profile.shape(s);
    Ok(Vector2::new(
        config.f_peak[0] * shape,
        config.f_peak[1] * shape,
    ))
}

/// Linear touchdown blend `u = alpha u_stance + (1 - alpha) u_aerial` with
/// `alpha = clamp(t / blend_time, 0, 1)`.
pub fn blend(
    u_stance: &Vector2<f64>,
    u_aerial: &Vector2<f64>,
    t_since_touchdown: f64,
    blend_time: f64,
) -> Vector2<f64> {
    let alpha = (t_since_touchdown / blend_time).clamp(0.0, 1.0);
    alpha * u_stance + (1.0 - alpha) * u_aerial
}

// ---------------------------------------------------------------------------
// the discrete controller
// ---------------------------------------------------------------------------

/// Stateful 1 kHz controller. Holds the derivative filters, the debounced
/// contact belief, the elapsed stance clock, and the blend weight.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    profile: ForceProfile,
    diff: [FilteredDerivative; 2],
    contact_belief: bool,
    contact_run: u32,
    stance_elapsed: Option<f64>,
    alpha: f64,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self, ControlError> {
        config.validate()?;
        let profile = ForceProfile::new(&config)?;
        Ok(Self {
            config,
            profile,
            diff: [FilteredDerivative::default(); 2],
            contact_belief: false,
            contact_run: 0,
            stance_elapsed: None,
            alpha: 0.0,
        })
    }

    /// Current blend weight (1 = pure stance command).
    pub fn blend_weight(&self) -> f64 {
        self.alpha
    }

    fn debounce(&mut self, raw: bool) -> bool {
        if raw == self.contact_belief {
            self.contact_run = 0;
        } else {
            self.contact_run += 1;
            if self.contact_run >= self.config.contact_debounce {
                self.contact_belief = raw;
                self.contact_run = 0;
            }
        }
        self.contact_belief
    }

    /// One control tick. Call at the fixed period; the returned command is
    /// held by the plant until the next tick.
    pub fn step(&mut self, model: &RobotModel, reading: &SensorReading) -> MotorCommand {
        let period = self.config.control_period;
        let lambda = self.config.lambda;
        let contact = if self.config.contact_debounce == 0 {
            self.contact_belief = reading.contact;
            reading.contact
        } else {
            self.debounce(reading.contact)
        };

        let thetadot_est = Vector2::new(
            self.diff[0].step(reading.theta_leg.x, period, lambda),
            self.diff[1].step(reading.theta_leg.y, period, lambda),
        );

        self.stance_elapsed = if contact {
            Some(self.stance_elapsed.map_or(0.0, |t| t + period))
        } else {
            None
        };

        let tau_aerial = aerial_torque(&self.config, model, &reading.theta_leg, &thetadot_est);

        // Press into the ground along -profile so the reaction tracks
        // +profile. Past the projected stance the force command is zero and
        // the blend ramps back to the aerial hold.
        let s = self
            .stance_elapsed
            .map(|t| t / self.config.stance_duration)
            .unwrap_or(f64::INFINITY);
        let f_dgrf = if s <= 1.0 {
            let shape = self.profile.shape(s);
            -Vector2::new(self.config.f_peak[0] * shape, self.config.f_peak[1] * shape)
        } else {
            Vector2::zeros()
        };
        let tau_stance = stance_torque(model, &reading.theta_leg, &f_dgrf);

        let target = if contact && s <= 1.0 { 1.0 } else { 0.0 };
        let rate = period / self.config.blend_time;
        self.alpha += (target - self.alpha).clamp(-rate, rate);

        let k_v_assumed = self.config.k_v_assumed;
        let cmd_st = torque_to_voltage(&model.motor, &tau_stance, &thetadot_est, k_v_assumed);
        let cmd_ae = torque_to_voltage(&model.motor, &tau_aerial, &thetadot_est, k_v_assumed);
        let a = self.alpha;
        let mix = |s: &Vector2<f64>, ae: &Vector2<f64>| a * s + (1.0 - a) * ae;
        MotorCommand {
            v: mix(&cmd_st.v, &cmd_ae.v),
            tau_requested: mix(&cmd_st.tau_requested, &cmd_ae.tau_requested),
            tau_limited: mix(&cmd_st.tau_limited, &cmd_ae.tau_limited),
            current_est: mix(&cmd_st.current_est, &cmd_ae.current_est),
            current_limited: [
                (a > 0.0 && cmd_st.current_limited[0]) || (a < 1.0 && cmd_ae.current_limited[0]),
                (a > 0.0 && cmd_st.current_limited[1]) || (a < 1.0 && cmd_ae.current_limited[1]),
            ],
            voltage_limited: [
                (a > 0.0 && cmd_st.voltage_limited[0]) || (a < 1.0 && cmd_ae.voltage_limited[0]),
                (a > 0.0 && cmd_st.voltage_limited[1]) || (a < 1.0 && cmd_ae.voltage_limited[1]),
            ],
        }
    }
}
