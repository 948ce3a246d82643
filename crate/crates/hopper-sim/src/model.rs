//! Robot parameters, simulation state, and parameter validation.
//!
//! Joint coordinates `q = (th1, th2, th3, th4)`:
//! - `th1` gantry yaw about the world Z axis (passive),
//! - `th2` gantry boom pitch (passive, positive raises the hip),
//! - `th3` hip, `th4` knee (geared DC motors; `th4 = 0` is the straight knee).
//!
//! World frame 0 sits at the gantry base on the floor, Z up. The boom pivot is
//! at height `post_height`; the hip rides the boom tip at radius `boom_length`.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joint-space vector (one entry per joint).
pub type JointVec = Vector4<f64>;

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

/// Rigid-body parameters of one link, expressed in that link's body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyParams {
    /// Mass [kg].
    pub mass: f64,
    /// Center of mass in the body frame [m].
    pub com: [f64; 3],
    /// Rotational inertia about the center of mass, body frame [kg m^2].
    pub inertia: [[f64; 3]; 3],
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            mass: 0.1,
            com: [0.0; 3],
            inertia: [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]],
        }
    }
}

impl BodyParams {
    pub fn com_vec(&self) -> Vector3<f64> {
        Vector3::from(self.com)
    }

    pub fn inertia_mat(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GantryGeometry {
    /// Height of the boom pivot above the floor [m].
    pub post_height: f64,
    /// Pivot-to-hip boom length [m].
    pub boom_length: f64,
}

impl Default for GantryGeometry {
    fn default() -> Self {
        Self {
            post_height: 0.30,
            boom_length: 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    /// Hip-to-knee length [m].
    pub thigh_length: f64,
    /// Knee-to-foot length [m].
    pub shank_length: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            thigh_length: 0.163,
            shank_length: 0.160,
        }
    }
}

/// Point mass hung on the boom on the far side of the pitch pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counterweight {
    /// Mass [kg].
    pub mass: f64,
    /// Distance from the pitch pivot, measured away from the leg [m].
    pub lever_arm: f64,
}

impl Default for Counterweight {
    fn default() -> Self {
        Self {
            mass: 2.3,
            lever_arm: 0.25,
        }
    }
}

/// Identical hip and knee motors; only the gear ratios differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorParams {
    /// Winding resistance [ohm].
    pub resistance: f64,
    /// Torque constant [N m / A].
    pub torque_constant: f64,
    /// Back-EMF constant [V s / rad].
    pub speed_constant: f64,
    /// Rotor inertia at the motor shaft [kg m^2].
    pub rotor_inertia: f64,
    /// Hip gear reduction (motor revs per joint rev).
    pub gear_hip: f64,
    /// Knee gear reduction.
    pub gear_knee: f64,
    /// Supply voltage bound [V].
    pub max_voltage: f64,
    /// Driver current bound [A].
    pub max_current: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            resistance: 1.2,
            torque_constant: 0.018,
            speed_constant: 0.018,
            rotor_inertia: 1.0e-5,
            gear_hip: 26.9,
            gear_knee: 28.8,
            max_voltage: 12.0,
            max_current: 30.0,
        }
    }
}

/// Linear torsional spring in parallel with the knee joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringParams {
    /// Stiffness [N m / rad].
    pub stiffness: f64,
    /// Unloaded knee angle [rad].
    pub rest_angle: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self {
            stiffness: 26.0,
            rest_angle: -1.15,
        }
    }
}

/// Full plant description. `Default` is the shipped reference robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    /// Gravitational acceleration, acting along -Z [m/s^2].
    pub gravity: f64,
    pub gantry: GantryGeometry,
    pub leg: LegGeometry,
    /// Yaw column, body frame at the boom pivot (origin height `post_height`).
    pub post: BodyParams,
    /// Boom plus hip housing and motor stators, body frame at the hip.
    pub boom: BodyParams,
    /// Thigh link, body frame at the knee (hip at z = +thigh_length).
    pub thigh: BodyParams,
    /// Shank link, body frame at the foot (knee at z = +shank_length).
    pub shank: BodyParams,
    pub counterweight: Counterweight,
    pub motor: MotorParams,
    pub spring: SpringParams,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            gantry: GantryGeometry::default(),
            leg: LegGeometry::default(),
            post: BodyParams {
                mass: 0.25,
                com: [0.0, 0.0, -0.15],
                inertia: diag(2.0e-3, 2.0e-3, 5.0e-4),
            },
            // boom rod plus both motor stators and the hip housing, hence
            // the mass concentration near the hip end
            boom: BodyParams {
                mass: 2.50,
                com: [-0.05, 0.0, 0.0],
                inertia: diag(2.0e-3, 0.05, 0.05),
            },
            thigh: BodyParams {
                mass: 0.18,
                com: [0.0, 0.0, 0.08],
                inertia: diag(4.0e-4, 4.0e-4, 5.0e-5),
            },
            shank: BodyParams {
                mass: 0.12,
                com: [0.0, 0.0, 0.09],
                inertia: diag(2.6e-4, 2.6e-4, 2.0e-5),
            },
            counterweight: Counterweight::default(),
            motor: MotorParams::default(),
            spring: SpringParams::default(),
        }
    }
}

fn diag(x: f64, y: f64, z: f64) -> [[f64; 3]; 3] {
    [[x, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, z]]
}

impl RobotModel {
    /// Torque the knee spring applies on `th4`: `-stiffness * (th4 - rest)`.
    pub fn spring_torque(&self, th4: f64) -> f64 {
        -self.spring.stiffness * (th4 - self.spring.rest_angle)
    }

    /// Total mass including the counterweight [kg].
    pub fn total_mass(&self) -> f64 {
        self.post.mass
            + self.boom.mass
            + self.thigh.mass
            + self.shank.mass
            + self.counterweight.mass
    }

    /// Checks every parameter, naming the offending configuration key.
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("model.gravity", self.gravity)?;
        positive("model.gantry.post_height", self.gantry.post_height)?;
        positive("model.gantry.boom_length", self.gantry.boom_length)?;
        positive("model.leg.thigh_length", self.leg.thigh_length)?;
        positive("model.leg.shank_length", self.leg.shank_length)?;
        for (key, body) in [
            ("model.post", &self.post),
            ("model.boom", &self.boom),
            ("model.thigh", &self.thigh),
            ("model.shank", &self.shank),
        ] {
            validate_body(key, body)?;
        }
        positive("model.counterweight.mass", self.counterweight.mass)?;
        non_negative("model.counterweight.lever_arm", self.counterweight.lever_arm)?;
        positive("model.motor.resistance", self.motor.resistance)?;
        positive("model.motor.torque_constant", self.motor.torque_constant)?;
        non_negative("model.motor.speed_constant", self.motor.speed_constant)?;
        non_negative("model.motor.rotor_inertia", self.motor.rotor_inertia)?;
        positive("model.motor.gear_hip", self.motor.gear_hip)?;
        positive("model.motor.gear_knee", self.motor.gear_knee)?;
        positive("model.motor.max_voltage", self.motor.max_voltage)?;
        positive("model.motor.max_current", self.motor.max_current)?;
        non_negative("model.spring.stiffness", self.spring.stiffness)?;
        finite("model.spring.rest_angle", self.spring.rest_angle)?;
        Ok(())
    }
}

fn validate_body(key: &str, body: &BodyParams) -> Result<(), ModelError> {
    positive(&format!("{key}.mass"), body.mass)?;
    for v in body.com {
        finite(&format!("{key}.com"), v)?;
    }
    let inertia = body.inertia_mat();
    let scale = inertia.abs().max().max(1e-12);
    let asym = (inertia - inertia.transpose()).abs().max();
    if asym > 1e-9 * scale {
        return Err(ModelError::AsymmetricInertia {
            key: format!("{key}.inertia"),
            asymmetry: asym,
        });
    }
    let min_eig = inertia
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-12 * scale {
        return Err(ModelError::IndefiniteInertia {
            key: format!("{key}.inertia"),
            eigenvalue: min_eig,
        });
    }
    Ok(())
}

fn finite(key: &str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            key: key.to_string(),
        })
    }
}

fn positive(key: &str, value: f64) -> Result<(), ModelError> {
    finite(key, value)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositive {
            key: key.to_string(),
            value,
        })
    }
}

fn non_negative(key: &str, value: f64) -> Result<(), ModelError> {
    finite(key, value)?;
    if value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositive {
            key: key.to_string(),
            value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{key}: expected a positive value, got {value}")]
    NonPositive { key: String, value: f64 },
    #[error("{key}: value must be finite")]
    NonFinite { key: String },
    #[error("{key}: inertia tensor is not symmetric (max asymmetry {asymmetry:.3e})")]
    AsymmetricInertia { key: String, asymmetry: f64 },
    #[error("{key}: inertia tensor is indefinite (min eigenvalue {eigenvalue:.3e})")]
    IndefiniteInertia { key: String, eigenvalue: f64 },
}

// ---------------------------------------------------------------------------
// state
// ---------------------------------------------------------------------------

/// How configuration-dependent derivatives (mass-matrix partials, Jacobian
/// rates) are evaluated. Both routes must agree; the analytic one is the
/// default, the finite-difference one is kept as a cross-check and fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Flight,
    Stance,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Flight => write!(f, "flight"),
            Phase::Stance => write!(f, "stance"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flight" => Ok(Phase::Flight),
            "stance" => Ok(Phase::Stance),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

/// Foothold frame fixed at touchdown. Columns of `rot` are the frame axes in
/// world coordinates; the Z column is always world up, X points horizontally
/// from the gantry base axis toward the foothold, Y = Z x X is the travel
/// (tangential) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactFrame {
    /// Foothold position in world coordinates [m].
    pub origin: Vector3<f64>,
    /// World-from-contact rotation, columns (X, Y, Z).
    pub rot: Matrix3<f64>,
}

impl ContactFrame {
    pub fn x_axis(&self) -> Vector3<f64> {
        self.rot.column(0).into()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.rot.column(1).into()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.rot.column(2).into()
    }

    /// Max deviation of `rot` from a right-handed orthonormal basis.
    pub fn orthonormal_error(&self) -> f64 {
        let eye_err = (self.rot.transpose() * self.rot - Matrix3::identity())
            .abs()
            .max();
        let hand_err = (self.x_axis().cross(&self.y_axis()) - self.z_axis())
            .abs()
            .max();
        eye_err.max(hand_err)
    }
}

/// Full simulator state between integration steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub q: JointVec,
    pub qd: JointVec,
    pub phase: Phase,
    /// Present exactly while `phase == Stance`.
    pub contact: Option<ContactFrame>,
}

impl SystemState {
    pub fn flight(t: f64, q: JointVec, qd: JointVec) -> Self {
        Self {
            t,
            q,
            qd,
            phase: Phase::Flight,
            contact: None,
        }
    }
}
