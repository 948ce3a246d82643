//! Frames, forward kinematics, Jacobians, and the contact frame.
//!
//! Frame chain (world frame 0 at the gantry base on the floor, Z up):
//!
//! ```text
//! T0_B = Rz(th1) * Trans(0, 0, post_height)          boom pivot, yaws with th1
//! TB_H = Ry(-th2) * Trans(boom_length, 0, 0)         hip at the boom tip
//! TH_K = Rx(th3) * Trans(0, 0, -thigh_length)        knee
//! TK_F = Rx(th4) * Trans(0, 0, -shank_length)        foot
//! ```
//!
//! Positive `th2` raises the hip. The hip frame X axis is the hip/knee joint
//! axis (radial, along the boom); the leg moves in the hip-frame Y-Z plane, Y
//! being the tangential travel direction. `th4 = 0` is the straight knee.

use nalgebra::{Matrix2, Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::model::{ContactFrame, DerivMode, JointVec, RobotModel};

/// Matrix with one row per contact direction (Y_hc, Z_hc), one column per joint.
pub type ContactJacobian = nalgebra::SMatrix<f64, 2, 4>;
/// World-frame point Jacobian, one column per joint.
pub type PointJacobian = nalgebra::SMatrix<f64, 3, 4>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    /// The foot sits on the gantry base axis; no radial direction exists.
    #[error("foot is {radius:.3e} m from the gantry base axis; contact frame undefined")]
    DegenerateFrame { radius: f64 },
}

fn rot_z(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

fn rot_y(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix()
}

fn rot_x(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

/// Homogeneous transform from the boom-pivot frame B to world.
pub fn htm_0_b(model: &RobotModel, th1: f64) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_z(th1));
    t[(2, 3)] = model.gantry.post_height;
    t
}

// ---------------------------------------------------------------------------
// chain snapshot
// ---------------------------------------------------------------------------

/// World-frame pose of every moving body plus the joint screw data, evaluated
/// at one configuration. Body index order: boom pivot column (B), boom/hip
/// (H), thigh (K), shank (F).
#[derive(Debug, Clone)]
pub struct ChainState {
    /// World-from-body rotations.
    pub r: [Matrix3<f64>; 4],
    /// Body frame origins: boom pivot, hip, knee, foot.
    pub origin: [Vector3<f64>; 4],
    /// Joint axes in world coordinates.
    pub axis: [Vector3<f64>; 4],
    /// A point on each joint axis.
    pub axis_point: [Vector3<f64>; 4],
}

impl ChainState {
    pub fn p_hip(&self) -> Vector3<f64> {
        self.origin[1]
    }

    pub fn p_knee(&self) -> Vector3<f64> {
        self.origin[2]
    }

    pub fn p_foot(&self) -> Vector3<f64> {
        self.origin[3]
    }
}

/// Forward kinematics for the whole chain.
pub fn chain(model: &RobotModel, q: &JointVec) -> ChainState {
    let (th1, th2, th3, th4) = (q[0], q[1], q[2], q[3]);
    let pivot = Vector3::new(0.0, 0.0, model.gantry.post_height);

    let r_b = rot_z(th1);
    let r_h = r_b * rot_y(-th2);
    let r_k = r_h * rot_x(th3);
    let r_f = r_k * rot_x(th4);

    let hip = pivot + r_h * Vector3::new(model.gantry.boom_length, 0.0, 0.0);
    let knee = hip + r_k * Vector3::new(0.0, 0.0, -model.leg.thigh_length);
    let foot = knee + r_f * Vector3::new(0.0, 0.0, -model.leg.shank_length);

    ChainState {
        r: [r_b, r_h, r_k, r_f],
        origin: [pivot, hip, knee, foot],
        axis: [
            Vector3::z(),
            r_b * Vector3::new(0.0, -1.0, 0.0),
            r_h * Vector3::x(),
            r_k * Vector3::x(),
        ],
        axis_point: [Vector3::zeros(), pivot, hip, knee],
    }
}

/// Highest joint index (0-based) that moves each body frame.
/// Body j is carried by joints 0..=j.
pub(crate) const BODY_LAST_JOINT: [usize; 4] = [0, 1, 2, 3];

/// Geometric Jacobian of a point rigidly attached to `body` (0-based chain
/// index) at world position `p`.
pub(crate) fn point_jacobian(chain: &ChainState, body: usize, p: &Vector3<f64>) -> PointJacobian {
    let mut j = PointJacobian::zeros();
    for k in 0..=BODY_LAST_JOINT[body] {
        let col = chain.axis[k].cross(&(p - chain.axis_point[k]));
        j.set_column(k, &col);
    }
    j
}

/// World-frame foot Jacobian: `v_foot = J * qd`.
pub fn foot_jacobian_world(model: &RobotModel, q: &JointVec) -> PointJacobian {
    let ch = chain(model, q);
    point_jacobian(&ch, 3, &ch.p_foot())
}

/// Foot velocity by propagating body twists down the chain. Independent of the
/// geometric-column construction in [`foot_jacobian_world`]; the two must
/// agree to machine precision.
pub fn foot_velocity_recursive(model: &RobotModel, q: &JointVec, qd: &JointVec) -> Vector3<f64> {
    let ch = chain(model, q);
    let mut omega = Vector3::zeros();
    let mut v = Vector3::zeros(); // velocity of the previous joint point
    let mut point = ch.axis_point[0];
    for j in 0..4 {
        v += omega.cross(&(ch.axis_point[j] - point));
        point = ch.axis_point[j];
        omega += ch.axis[j] * qd[j];
    }
    v + omega.cross(&(ch.p_foot() - point))
}

// ---------------------------------------------------------------------------
// leg-local kinematics (used by the controller, which senses only th3/th4)
// ---------------------------------------------------------------------------

/// Foot position in the hip frame, (Y, Z) components. X is identically zero.
pub fn foot_in_hip(model: &RobotModel, th3: f64, th4: f64) -> Vector2<f64> {
    let l3 = model.leg.thigh_length;
    let l4 = model.leg.shank_length;
    Vector2::new(
        l3 * th3.sin() + l4 * (th3 + th4).sin(),
        -l3 * th3.cos() - l4 * (th3 + th4).cos(),
    )
}

/// Leg Jacobian d(foot_in_hip)/d(th3, th4). Depends only on the leg joints;
/// gantry coordinates in `q` are ignored, so the controller may evaluate it
/// without gantry sensing.
pub fn contact_jacobian(model: &RobotModel, q: &JointVec) -> Matrix2<f64> {
    let (th3, th4) = (q[2], q[3]);
    let l3 = model.leg.thigh_length;
    let l4 = model.leg.shank_length;
    let s3 = th3.sin();
    let c3 = th3.cos();
    let s34 = (th3 + th4).sin();
    let c34 = (th3 + th4).cos();
    Matrix2::new(
        l3 * c3 + l4 * c34,
        l4 * c34,
        l3 * s3 + l4 * s34,
        l4 * s34,
    )
}

// ---------------------------------------------------------------------------
// contact frame and holonomic constraint
// ---------------------------------------------------------------------------

/// Contact frame for a foothold at `p_foot`: Z up, X the horizontal unit
/// vector from the gantry base axis to the foothold, Y = Z x X.
pub fn contact_frame_from_foot(p_foot: &Vector3<f64>) -> Result<ContactFrame, KinematicsError> {
    let radius = p_foot.xy().norm();
    if radius <= 1e-9 {
        return Err(KinematicsError::DegenerateFrame { radius });
    }
    let x = Vector3::new(p_foot.x / radius, p_foot.y / radius, 0.0);
    let z = Vector3::z();
    let y = z.cross(&x);
    Ok(ContactFrame {
        origin: *p_foot,
        rot: Matrix3::from_columns(&[x, y, z]),
    })
}

/// Contact frame at the current foot position.
pub fn make_contact_frame(
    model: &RobotModel,
    q: &JointVec,
) -> Result<ContactFrame, KinematicsError> {
    contact_frame_from_foot(&chain(model, q).p_foot())
}

/// Holonomic constraint Jacobian: rows are the foot world velocity projected
/// on the contact Y (tangential) and Z (vertical) axes.
pub fn holonomic_jacobian(
    model: &RobotModel,
    q: &JointVec,
    frame: &ContactFrame,
) -> ContactJacobian {
    let jw = foot_jacobian_world(model, q);
    project_rows(&jw, frame)
}

fn project_rows(jw: &PointJacobian, frame: &ContactFrame) -> ContactJacobian {
    let mut j = ContactJacobian::zeros();
    j.set_row(0, &(frame.y_axis().transpose() * jw));
    j.set_row(1, &(frame.z_axis().transpose() * jw));
    j
}

/// Time derivative of the world foot Jacobian along `(q, qd)`.
pub fn foot_jacobian_world_dot(
    model: &RobotModel,
    q: &JointVec,
    qd: &JointVec,
    mode: DerivMode,
) -> PointJacobian {
    match mode {
        DerivMode::Analytic => foot_jacobian_dot_analytic(model, q, qd),
        DerivMode::FiniteDifference => foot_jacobian_dot_fd(model, q, qd),
    }
}

fn foot_jacobian_dot_analytic(model: &RobotModel, q: &JointVec, qd: &JointVec) -> PointJacobian {
    let ch = chain(model, q);
    let p = ch.p_foot();
    let jw = point_jacobian(&ch, 3, &p);
    let pdot = jw * qd;

    // Velocity of each axis point and rate of each axis direction. Axis k and
    // its point are carried by joints 0..k only.
    let mut jdot = PointJacobian::zeros();
    let mut omega_prefix = Vector3::zeros();
    for j in 0..4 {
        let mut odot = Vector3::zeros();
        for k in 0..j {
            odot += qd[k] * ch.axis[k].cross(&(ch.axis_point[j] - ch.axis_point[k]));
        }
        let adot = omega_prefix.cross(&ch.axis[j]);
        let col = adot.cross(&(p - ch.axis_point[j])) + ch.axis[j].cross(&(pdot - odot));
        jdot.set_column(j, &col);
        omega_prefix += ch.axis[j] * qd[j];
    }
    jdot
}

fn foot_jacobian_dot_fd(model: &RobotModel, q: &JointVec, qd: &JointVec) -> PointJacobian {
    let speed = qd.norm();
    if speed == 0.0 {
        return PointJacobian::zeros();
    }
    let h = 1e-6 / speed.max(1.0);
    let jp = foot_jacobian_world(model, &(q + qd * h));
    let jm = foot_jacobian_world(model, &(q - qd * h));
    (jp - jm) / (2.0 * h)
}

/// Time derivative of the holonomic Jacobian (contact axes are fixed during
/// a stance, so only the foot Jacobian rate contributes).
pub fn holonomic_jacobian_dot(
    model: &RobotModel,
    q: &JointVec,
    qd: &JointVec,
    frame: &ContactFrame,
    mode: DerivMode,
) -> ContactJacobian {
    project_rows(&foot_jacobian_world_dot(model, q, qd, mode), frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut ChaCha8Rng) -> JointVec {
        JointVec::from_fn(|_, _| rng.random_range(-1.5..1.5))
    }

    fn random_qd(rng: &mut ChaCha8Rng) -> JointVec {
        JointVec::from_fn(|_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn htm_at_zero_is_pure_lift() {
        let model = RobotModel::default();
        let t = htm_0_b(&model, 0.0);
        let mut expected = Matrix4::identity();
        expected[(2, 3)] = model.gantry.post_height;
        assert!((t - expected).abs().max() < 1e-15);
    }

    #[test]
    fn htm_quarter_turn_sends_x_to_y() {
        let model = RobotModel::default();
        let t = htm_0_b(&model, std::f64::consts::FRAC_PI_2);
        let x_world = t.fixed_view::<3, 3>(0, 0) * Vector3::x();
        assert!((x_world - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn htm_is_periodic_in_yaw() {
        let model = RobotModel::default();
        let a = htm_0_b(&model, 0.7);
        let b = htm_0_b(&model, 0.7 + 2.0 * std::f64::consts::PI);
        assert!((a - b).abs().max() < 1e-12);
    }

    #[test]
    fn chain_matches_homogeneous_product() {
        // Same kinematics built from explicit 4x4 products; guards the
        // hand-expanded chain() against convention slips.
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let ch = chain(&model, &q);

            let hom = |r: Matrix3<f64>, d: Vector3<f64>| {
                let mut t = Matrix4::identity();
                t.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
                t.fixed_view_mut::<3, 1>(0, 3).copy_from(&d);
                t
            };
            let t_b = htm_0_b(&model, q[0]);
            let t_h = t_b
                * hom(rot_y(-q[1]), Vector3::zeros())
                * hom(
                    Matrix3::identity(),
                    Vector3::new(model.gantry.boom_length, 0.0, 0.0),
                );
            let t_k = t_h
                * hom(rot_x(q[2]), Vector3::zeros())
                * hom(
                    Matrix3::identity(),
                    Vector3::new(0.0, 0.0, -model.leg.thigh_length),
                );
            let t_f = t_k
                * hom(rot_x(q[3]), Vector3::zeros())
                * hom(
                    Matrix3::identity(),
                    Vector3::new(0.0, 0.0, -model.leg.shank_length),
                );

            for (t, p) in [(t_h, ch.p_hip()), (t_k, ch.p_knee()), (t_f, ch.p_foot())] {
                let d: Vector3<f64> = t.fixed_view::<3, 1>(0, 3).into();
                assert!((d - p).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hip_stays_on_the_boom_sphere() {
        // Rigid boom: the hip is always boom_length from the pivot. Its
        // horizontal radius shrinks with pitch as boom_length * cos(th2).
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pivot = Vector3::new(0.0, 0.0, model.gantry.post_height);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let hip = chain(&model, &q).p_hip();
            assert!(((hip - pivot).norm() - model.gantry.boom_length).abs() < 1e-12);
            let expected_radius = model.gantry.boom_length * q[1].cos().abs();
            assert!((hip.xy().norm() - expected_radius).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_knee_spans_full_leg_length() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let mut q = random_q(&mut rng);
            q[3] = 0.0;
            let ch = chain(&model, &q);
            let reach = (ch.p_foot() - ch.p_hip()).norm();
            assert!((reach - model.leg.thigh_length - model.leg.shank_length).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_shift_rotates_all_points() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let mut q2 = q;
            let d = rng.random_range(-2.0..2.0);
            q2[0] += d;
            let a = chain(&model, &q);
            let b = chain(&model, &q2);
            let rz = rot_z(d);
            for i in 0..4 {
                assert!((rz * a.origin[i] - b.origin[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn foot_in_hip_matches_world_chain() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let ch = chain(&model, &q);
            let local = ch.r[1].transpose() * (ch.p_foot() - ch.p_hip());
            let yz = foot_in_hip(&model, q[2], q[3]);
            assert!(local.x.abs() < 1e-12, "leg left its plane: {}", local.x);
            assert!((local.y - yz.x).abs() < 1e-12);
            assert!((local.z - yz.y).abs() < 1e-12);
        }
    }

    #[test]
    fn contact_jacobian_matches_finite_differences() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let h = 1e-6;
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let j = contact_jacobian(&model, &q);
            for col in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[2 + col] += h;
                qm[2 + col] -= h;
                let fd = (foot_in_hip(&model, qp[2], qp[3]) - foot_in_hip(&model, qm[2], qm[3]))
                    / (2.0 * h);
                let err = (j.column(col) - fd).norm() / j.column(col).norm().max(1.0);
                assert!(err < 1e-6, "column {col} err {err}");
            }
        }
    }

    #[test]
    fn contact_jacobian_determinant_vanishes_at_straight_knee() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut q = random_q(&mut rng);
            q[3] = 0.0;
            let det = contact_jacobian(&model, &q).determinant();
            assert!(det.abs() < 1e-12);
            // analytic determinant everywhere
            q[3] = rng.random_range(-1.5..1.5);
            let det = contact_jacobian(&model, &q).determinant();
            let expected = model.leg.thigh_length * model.leg.shank_length * q[3].sin();
            assert!((det - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn contact_jacobian_ignores_gantry_joints() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let mut q2 = q;
            q2[0] += rng.random_range(-2.0..2.0);
            q2[1] += rng.random_range(-2.0..2.0);
            let d = (contact_jacobian(&model, &q) - contact_jacobian(&model, &q2))
                .abs()
                .max();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn foot_jacobian_matches_finite_differences() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let h = 1e-6;
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let j = foot_jacobian_world(&model, &q);
            for col in 0..4 {
                let mut qp = q;
                let mut qm = q;
                qp[col] += h;
                qm[col] -= h;
                let fd =
                    (chain(&model, &qp).p_foot() - chain(&model, &qm).p_foot()) / (2.0 * h);
                let err = (j.column(col) - fd).norm() / fd.norm().max(1.0);
                assert!(err < 1e-6, "column {col} err {err}");
            }
        }
    }

    #[test]
    fn recursive_velocity_agrees_with_jacobian() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let qd = random_qd(&mut rng);
            let v_j = foot_jacobian_world(&model, &q) * qd;
            let v_r = foot_velocity_recursive(&model, &q, &qd);
            assert!((v_j - v_r).norm() < 1e-12 * v_j.norm().max(1.0));
        }
    }

    #[test]
    fn jacobian_dot_modes_agree() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let qd = random_qd(&mut rng);
            let a = foot_jacobian_world_dot(&model, &q, &qd, DerivMode::Analytic);
            let f = foot_jacobian_world_dot(&model, &q, &qd, DerivMode::FiniteDifference);
            let err = (a - f).abs().max() / a.abs().max().max(1.0);
            assert!(err < 1e-6, "mode mismatch {err}");
        }
    }

    #[test]
    fn jacobian_dot_is_zero_at_rest() {
        let model = RobotModel::default();
        let q = JointVec::new(0.3, -0.2, 0.8, -1.1);
        let frame = make_contact_frame(&model, &q).unwrap();
        let jdot =
            holonomic_jacobian_dot(&model, &q, &JointVec::zeros(), &frame, DerivMode::Analytic);
        assert_eq!((jdot * JointVec::zeros()).norm(), 0.0);
        assert!(jdot.abs().max() < 1e-15);
    }

    #[test]
    fn holonomic_rows_project_foot_velocity() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let qd = random_qd(&mut rng);
            let frame = make_contact_frame(&model, &q).unwrap();
            let j = holonomic_jacobian(&model, &q, &frame);
            let v = foot_velocity_recursive(&model, &q, &qd);
            let lhs = j * qd;
            assert!((lhs.x - frame.y_axis().dot(&v)).abs() < 1e-12 * v.norm().max(1.0));
            assert!((lhs.y - frame.z_axis().dot(&v)).abs() < 1e-12 * v.norm().max(1.0));
        }
    }

    #[test]
    fn contact_frame_examples() {
        let f = contact_frame_from_foot(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((f.x_axis() - Vector3::x()).norm() < 1e-15);
        assert!((f.z_axis() - Vector3::z()).norm() < 1e-15);

        let f = contact_frame_from_foot(&Vector3::new(0.0, 2.0, 0.0)).unwrap();
        assert!((f.x_axis() - Vector3::y()).norm() < 1e-15);
        assert!((f.y_axis() - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.5..0.5),
            );
            if p.xy().norm() <= 1e-9 {
                continue;
            }
            let f = contact_frame_from_foot(&p).unwrap();
            assert!(f.orthonormal_error() < 1e-14);
            assert!((f.z_axis() - Vector3::z()).norm() == 0.0);
        }
    }

    #[test]
    fn contact_frame_degenerates_on_the_base_axis() {
        match contact_frame_from_foot(&Vector3::new(0.0, 0.0, 0.3)) {
            Err(KinematicsError::DegenerateFrame { radius }) => assert_eq!(radius, 0.0),
            other => panic!("expected DegenerateFrame, got {other:?}"),
        }
    }

    #[test]
    fn default_geometry_cannot_reach_the_base_axis() {
        // The leg is much shorter than the boom, so make_contact_frame never
        // degenerates for the shipped model.
        let model = RobotModel::default();
        let reach = model.leg.thigh_length + model.leg.shank_length;
        assert!(model.gantry.boom_length > reach + 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            make_contact_frame(&model, &q).expect("frame must exist");
        }
    }
}
