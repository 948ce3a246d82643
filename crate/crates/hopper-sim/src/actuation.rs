//! Motor electrical model: torque/voltage maps, saturation, and the
//! achievable torque-speed region per joint.
//!
//! Back-EMF ownership: the plant applies back-EMF damping inside the
//! dynamics module ([`crate::dynamics::back_emf_matrix`]) and takes
//! `B_e * u` as its input torque. [`effective_joint_torque`] therefore
//! re-derives the delivered torque from voltage and speed for diagnostics
//! (trace columns, polygon checks) only; it never feeds the plant, so the
//! EMF term is not double-counted.

use nalgebra::Vector2;

use crate::model::MotorParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    Hip,
    Knee,
}

impl Joint {
    pub fn gear(self, motor: &MotorParams) -> f64 {
        match self {
            Joint::Hip => motor.gear_hip,
            Joint::Knee => motor.gear_knee,
        }
    }

    /// Index into (hip, knee) pairs.
    pub fn idx(self) -> usize {
        match self {
            Joint::Hip => 0,
            Joint::Knee => 1,
        }
    }

    pub const BOTH: [Joint; 2] = [Joint::Hip, Joint::Knee];
}

/// Voltage command for both leg motors plus saturation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorCommand {
    /// Applied voltages (hip, knee) after all clamps [V].
    pub v: Vector2<f64>,
    /// Torques the controller asked for [N m].
    pub tau_requested: Vector2<f64>,
    /// Torques after the current clamp [N m].
    pub tau_limited: Vector2<f64>,
    /// Winding current estimates after the clamp [A].
    pub current_est: Vector2<f64>,
    pub current_limited: [bool; 2],
    pub voltage_limited: [bool; 2],
}

impl MotorCommand {
    pub fn saturated(&self) -> bool {
        self.current_limited.iter().any(|&b| b) || self.voltage_limited.iter().any(|&b| b)
    }
}

/// Maps requested leg torques to motor voltages.
///
/// Per joint: estimate the winding current `i = tau / (k_T N)` and clamp it
/// to the driver limit (reducing the torque accordingly), then form
/// `V = R_w tau / (k_T N) + k_v_assumed N thetadot_est` and clamp to the bus
/// voltage. `k_v_assumed` is the controller's belief about the speed
/// constant, not necessarily the plant value; zero reproduces the
/// torque-only map.
pub fn torque_to_voltage(
    motor: &MotorParams,
    tau_leg: &Vector2<f64>,
    thetadot_est: &Vector2<f64>,
    k_v_assumed: f64,
) -> MotorCommand {
    let mut cmd = MotorCommand {
        v: Vector2::zeros(),
        tau_requested: *tau_leg,
        tau_limited: *tau_leg,
        current_est: Vector2::zeros(),
        current_limited: [false; 2],
        voltage_limited: [false; 2],
    };
    for joint in Joint::BOTH {
        let k = joint.idx();
        let n = joint.gear(motor);
        let ktn = motor.torque_constant * n;
        let mut i = tau_leg[k] / ktn;
        if i.abs() > motor.max_current {
            i = motor.max_current.copysign(i);
            cmd.current_limited[k] = true;
            cmd.tau_limited[k] = ktn * i;
        }
        cmd.current_est[k] = i;
        let v_raw = motor.resistance * i + k_v_assumed * n * thetadot_est[k];
        cmd.v[k] = v_raw.clamp(-motor.max_voltage, motor.max_voltage);
        cmd.voltage_limited[k] = v_raw.abs() > motor.max_voltage;
    }
    cmd
}

/// Torque actually delivered at the joint for an applied voltage and true
/// joint speed: `i = (V - k_v N thetadot) / R_w` clamped to the driver
/// limit, `tau = k_T N i`. Diagnostic only; see the module doc on EMF
/// ownership.
pub fn effective_joint_torque(
    motor: &MotorParams,
    v: &Vector2<f64>,
    thetadot: &Vector2<f64>,
) -> Vector2<f64> {
    Vector2::from_fn(|k, _| {
        let joint = Joint::BOTH[k];
        let n = joint.gear(motor);
        let i = (v[k] - motor.speed_constant * n * thetadot[k]) / motor.resistance;
        motor.torque_constant * n * i.clamp(-motor.max_current, motor.max_current)
    })
}

/// Achievable torque-speed region of one geared motor: the intersection of
/// the voltage strip `|R_w tau / (k_T N) + k_v N thetadot| <= V_max` with
/// the current cap `|tau| <= k_T N I_max`. A parallelogram, point-symmetric
/// about the origin, wider in the negative-work quadrants.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPolygon {
    pub joint: Joint,
    /// Torque at zero speed and full voltage [N m].
    pub tau_stall: f64,
    /// Speed where full voltage delivers zero torque [rad/s].
    pub omega_no_load: f64,
    /// Current-limit torque cap [N m].
    pub tau_current_cap: f64,
    v_max: f64,
    /// `R_w / (k_T N)`, volts per joint newton-meter.
    tau_slope: f64,
    /// `k_v N`, volts per joint rad/s.
    kvn: f64,
}

pub fn operating_polygon(motor: &MotorParams, joint: Joint) -> OperatingPolygon {
    let n = joint.gear(motor);
    let ktn = motor.torque_constant * n;
    let kvn = motor.speed_constant * n;
    OperatingPolygon {
        joint,
        tau_stall: ktn * motor.max_voltage / motor.resistance,
        omega_no_load: motor.max_voltage / kvn,
        tau_current_cap: ktn * motor.max_current,
        v_max: motor.max_voltage,
        tau_slope: motor.resistance / ktn,
        kvn,
    }
}

impl OperatingPolygon {
    /// Voltage needed to hold `tau` at speed `omega`, ignoring limits.
    pub fn required_voltage(&self, tau: f64, omega: f64) -> f64 {
        self.tau_slope * tau + self.kvn * omega
    }

    /// Membership with relative slack on both bounding inequalities.
    /// Negative `rel_tol` shrinks the region, which turns this into a
    /// strict-interior test; a boundary point is inside at `+tol` and
    /// outside at `-tol`.
    pub fn contains(&self, tau: f64, omega: f64, rel_tol: f64) -> bool {
        tau.abs() <= self.tau_current_cap * (1.0 + rel_tol)
            && self.required_voltage(tau, omega).abs() <= self.v_max * (1.0 + rel_tol)
    }

    /// Corner points `[tau, omega]` in boundary order. The corners sit where
    /// the current cap meets each voltage line; at zero speed constant the
    /// strip never closes, so this requires `k_v > 0`.
    pub fn vertices(&self) -> [[f64; 2]; 4] {
        assert!(self.kvn > 0.0, "polygon is unbounded at zero speed constant");
        let omega_at = |tau: f64, v: f64| (v - self.tau_slope * tau) / self.kvn;
        let tc = self.tau_current_cap;
        [
            [tc, omega_at(tc, self.v_max)],
            [-tc, omega_at(-tc, self.v_max)],
            [-tc, omega_at(-tc, -self.v_max)],
            [tc, omega_at(tc, -self.v_max)],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn motor() -> MotorParams {
        crate::model::RobotModel::default().motor
    }

    #[test]
    fn zero_request_gives_zero_voltage() {
        let cmd = torque_to_voltage(&motor(), &Vector2::zeros(), &Vector2::zeros(), 0.0);
        assert_eq!(cmd.v, Vector2::zeros());
        assert!(!cmd.saturated());
    }

    #[test]
    fn zero_assumed_kv_makes_voltage_speed_independent() {
        let m = motor();
        let tau = Vector2::new(1.0, -0.7);
        let a = torque_to_voltage(&m, &tau, &Vector2::new(0.0, 0.0), 0.0);
        let b = torque_to_voltage(&m, &tau, &Vector2::new(7.0, -11.0), 0.0);
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn stall_torque_and_no_load_speed() {
        let m = motor();
        for joint in Joint::BOTH {
            let n = joint.gear(&m);
            let poly = operating_polygon(&m, joint);
            let v_full = Vector2::from_element(m.max_voltage);

            let tau = effective_joint_torque(&m, &v_full, &Vector2::zeros());
            let stall = m.max_voltage * n * m.torque_constant / m.resistance;
            assert_relative_eq!(tau[joint.idx()], stall, max_relative = 1e-12);
            assert_relative_eq!(poly.tau_stall, stall, max_relative = 1e-12);

            let w_nl = m.max_voltage / (m.speed_constant * n);
            let omega = Vector2::from_fn(|k, _| if k == joint.idx() { w_nl } else { 0.0 });
            let tau_nl = effective_joint_torque(&m, &v_full, &omega);
            assert!(tau_nl[joint.idx()].abs() < 1e-12);
            assert_relative_eq!(poly.omega_no_load, w_nl, max_relative = 1e-12);
        }
        // hip numbers for the default motor
        let hip = operating_polygon(&m, Joint::Hip);
        assert_relative_eq!(hip.tau_stall, 4.842, max_relative = 1e-12);
        assert_relative_eq!(hip.tau_current_cap, 14.526, max_relative = 1e-12);
    }

    #[test]
    fn shorted_winding_brakes() {
        let tau = effective_joint_torque(&motor(), &Vector2::zeros(), &Vector2::new(3.0, 5.0));
        assert!(tau.x < 0.0 && tau.y < 0.0);
    }

    #[test]
    fn braking_quadrant_hits_current_cap() {
        // Full forward voltage against fast reverse spin: the unclamped
        // current exceeds the driver limit, torque pegs at the cap.
        let m = motor();
        let v = Vector2::from_element(m.max_voltage);
        let omega = Vector2::from_element(-200.0);
        let tau = effective_joint_torque(&m, &v, &omega);
        for joint in Joint::BOTH {
            let cap = operating_polygon(&m, joint).tau_current_cap;
            assert_relative_eq!(tau[joint.idx()], cap, max_relative = 1e-12);
        }
    }

    #[test]
    fn voltage_map_round_trips_through_torque() {
        let m = motor();
        let kv = m.speed_constant;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..200 {
            let tau = Vector2::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let omega = Vector2::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let cmd = torque_to_voltage(&m, &tau, &omega, kv);
            assert!(!cmd.saturated(), "sample range must stay unsaturated");
            let back = effective_joint_torque(&m, &cmd.v, &omega);
            assert!((back - tau).norm() < 1e-12 * tau.norm().max(1.0));
        }
    }

    #[test]
    fn clamp_flags_fire_separately() {
        let m = motor();
        // enormous torque: current clamp, and the resulting voltage demand
        // still exceeds the bus, so both flags
        let big = torque_to_voltage(&m, &Vector2::new(100.0, 0.0), &Vector2::zeros(), 0.0);
        assert!(big.current_limited[0] && big.voltage_limited[0]);
        assert!(!big.current_limited[1] && !big.voltage_limited[1]);
        assert!(big.tau_limited[0] < big.tau_requested[0]);
        assert_relative_eq!(big.current_est[0], m.max_current, max_relative = 1e-12);

        // modest torque, huge assumed EMF compensation: voltage clamp only
        let fast = torque_to_voltage(&m, &Vector2::new(0.5, 0.0), &Vector2::new(80.0, 0.0), m.speed_constant);
        assert!(!fast.current_limited[0] && fast.voltage_limited[0]);
        assert_eq!(fast.v[0], m.max_voltage);

        for cmd in [&big, &fast] {
            assert!(cmd.v.amax() <= m.max_voltage);
        }
    }

    #[test]
    fn anchor_points_sit_on_the_boundary() {
        let m = motor();
        for joint in Joint::BOTH {
            let p = operating_polygon(&m, joint);
            for (tau, omega) in [(p.tau_stall, 0.0), (0.0, p.omega_no_load)] {
                assert!(p.contains(tau, omega, 1e-9), "{joint:?} ({tau},{omega})");
                assert!(!p.contains(tau, omega, -1e-9), "{joint:?} ({tau},{omega})");
            }
        }
    }

    #[test]
    fn negative_work_quadrant_is_wider() {
        let m = motor();
        for joint in Joint::BOTH {
            let p = operating_polygon(&m, joint);
            let tau = 0.5 * p.tau_stall;
            let omega = 0.8 * p.omega_no_load;
            assert!(p.contains(tau, -omega, 0.0));
            assert!(!p.contains(tau, omega, 0.0));
        }
    }

    #[test]
    fn region_is_point_symmetric() {
        let m = motor();
        let p = operating_polygon(&m, Joint::Knee);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..500 {
            let tau = rng.random_range(-20.0..20.0);
            let omega = rng.random_range(-120.0..120.0);
            assert_eq!(p.contains(tau, omega, 0.0), p.contains(-tau, -omega, 0.0));
        }
        let v = p.vertices();
        for i in 0..4 {
            let a = v[i];
            let b = v[(i + 2) % 4];
            assert_relative_eq!(a[0], -b[0], max_relative = 1e-12);
            assert_relative_eq!(a[1], -b[1], max_relative = 1e-12);
        }
    }

    #[test]
    fn vertices_lie_on_boundary_and_are_convex() {
        let m = motor();
        for joint in Joint::BOTH {
            let p = operating_polygon(&m, joint);
            let v = p.vertices();
            for [tau, omega] in v {
                assert_relative_eq!(tau.abs(), p.tau_current_cap, max_relative = 1e-12);
                assert_relative_eq!(
                    p.required_voltage(tau, omega).abs(),
                    12.0,
                    max_relative = 1e-12
                );
            }
            // consistent turning direction around the quadrilateral
            let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
                (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            };
            let signs: Vec<f64> = (0..4)
                .map(|i| cross(v[i], v[(i + 1) % 4], v[(i + 2) % 4]))
                .collect();
            assert!(signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0));
        }
    }

    #[test]
    fn post_saturation_samples_stay_inside() {
        // Any voltage within the bus and any speed below the current-cap
        // corner speeds maps to a torque sample inside the region. (Beyond
        // the corners a current-clamped drive rides the torque cap outside
        // the voltage strip; hopping never gets near those speeds.)
        let m = motor();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..1000 {
            let v = Vector2::from_fn(|_, _| rng.random_range(-m.max_voltage..m.max_voltage));
            let omega = Vector2::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let tau = effective_joint_torque(&m, &v, &omega);
            for joint in Joint::BOTH {
                let p = operating_polygon(&m, joint);
                let k = joint.idx();
                assert!(
                    p.contains(tau[k], omega[k], 1e-9),
                    "{joint:?} tau {} omega {}",
                    tau[k],
                    omega[k]
                );
            }
        }
    }
}
