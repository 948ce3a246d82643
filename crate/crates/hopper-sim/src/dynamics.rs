//! Rigid-body dynamics of the 4-DoF chain plus actuator augmentation.
//!
//! Unconstrained flight obeys `M(q) qdd + C(q, qd) qd + G(q) = tau`. Voltage
//! drive through the gear trains adds a constant reflected rotor inertia
//! `M_r` and a back-EMF damping matrix `B_emf` on the leg joints, giving
//!
//! ```text
//! (M + M_r) qdd + (C + B_emf) qd + G = tau
//! ```
//!
//! where `tau` carries the voltage input term and the knee spring. Stance
//! adds the bilateral no-slip foot constraint through a KKT system; touchdown
//! is an instantaneous inelastic impact with the same constraint.
//!
//! `C` is assembled from Christoffel symbols of the mass-matrix partials, so
//! `d/dt M - 2 C` is skew-symmetric by construction for whichever partials
//! route ([`DerivMode`]) is selected.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::kinematics::{
    chain, holonomic_jacobian, holonomic_jacobian_dot, point_jacobian, ChainState, PointJacobian,
};
use crate::model::{ContactFrame, DerivMode, JointVec, RobotModel};

pub type JointMat = Matrix4<f64>;

/// Conditioning guard for the flight mass matrix and the stance KKT block.
pub const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("augmented mass matrix is ill-conditioned (cond ~ {cond:.3e})")]
    SingularMass { cond: f64 },
    #[error("stance KKT block is ill-conditioned (cond ~ {cond:.3e})")]
    SingularKkt { cond: f64 },
}

// ---------------------------------------------------------------------------
// mass distribution
// ---------------------------------------------------------------------------

struct MassItem {
    /// Chain body index the item rides on (0 post, 1 boom, 2 thigh, 3 shank).
    body: usize,
    mass: f64,
    /// Attachment point in the body frame.
    com: Vector3<f64>,
    /// Rotational inertia about the attachment point's frame; `None` for
    /// point masses.
    inertia: Option<Matrix3<f64>>,
}

fn mass_items(model: &RobotModel) -> [MassItem; 5] {
    let cw_x = -(model.gantry.boom_length + model.counterweight.lever_arm);
    [
        MassItem {
            body: 0,
            mass: model.post.mass,
            com: model.post.com_vec(),
            inertia: Some(model.post.inertia_mat()),
        },
        MassItem {
            body: 1,
            mass: model.boom.mass,
            com: model.boom.com_vec(),
            inertia: Some(model.boom.inertia_mat()),
        },
        MassItem {
            body: 2,
            mass: model.thigh.mass,
            com: model.thigh.com_vec(),
            inertia: Some(model.thigh.inertia_mat()),
        },
        MassItem {
            body: 3,
            mass: model.shank.mass,
            com: model.shank.com_vec(),
            inertia: Some(model.shank.inertia_mat()),
        },
        // Counterweight: point mass on the boom, opposite side of the pivot.
        MassItem {
            body: 1,
            mass: model.counterweight.mass,
            com: Vector3::new(cw_x, 0.0, 0.0),
            inertia: None,
        },
    ]
}

fn angular_jacobian(ch: &ChainState, body: usize) -> PointJacobian {
    let mut j = PointJacobian::zeros();
    for k in 0..=body {
        j.set_column(k, &ch.axis[k]);
    }
    j
}

// ---------------------------------------------------------------------------
// M, C, G
// ---------------------------------------------------------------------------

/// Unaugmented mass matrix of the five-body chain.
pub fn mass_matrix(model: &RobotModel, q: &JointVec) -> JointMat {
    let ch = chain(model, q);
    let mut m = JointMat::zeros();
    for item in mass_items(model) {
        let p = ch.r[item.body] * item.com + ch.origin[item.body];
        let jv = point_jacobian(&ch, item.body, &p);
        m += item.mass * jv.transpose() * jv;
        if let Some(i_local) = item.inertia {
            let e = ch.r[item.body] * i_local * ch.r[item.body].transpose();
            let jw = angular_jacobian(&ch, item.body);
            m += jw.transpose() * e * jw;
        }
    }
    m
}

/// Mass matrix together with its configuration partials `dM/dq_k`.
pub fn mass_matrix_and_partials(
    model: &RobotModel,
    q: &JointVec,
    mode: DerivMode,
) -> (JointMat, [JointMat; 4]) {
    match mode {
        DerivMode::Analytic => mass_partials_analytic(model, q),
        DerivMode::FiniteDifference => {
            let h = 1e-6;
            let mut dm = [JointMat::zeros(); 4];
            for k in 0..4 {
                let mut qp = *q;
                let mut qm = *q;
                qp[k] += h;
                qm[k] -= h;
                dm[k] = (mass_matrix(model, &qp) - mass_matrix(model, &qm)) / (2.0 * h);
            }
            (mass_matrix(model, q), dm)
        }
    }
}

fn mass_partials_analytic(model: &RobotModel, q: &JointVec) -> (JointMat, [JointMat; 4]) {
    let ch = chain(model, q);
    let mut m = JointMat::zeros();
    let mut dm = [JointMat::zeros(); 4];

    for item in mass_items(model) {
        let b = item.body;
        let p = ch.r[b] * item.com + ch.origin[b];
        let jv = point_jacobian(&ch, b, &p);
        m += item.mass * jv.transpose() * jv;

        let rot = item.inertia.map(|i_local| {
            let e = ch.r[b] * i_local * ch.r[b].transpose();
            let jw = angular_jacobian(&ch, b);
            m += jw.transpose() * e * jw;
            (e, jw)
        });

        // d/dq_k of everything attached to body b vanishes for k > b.
        for k in 0..=b {
            let ak = ch.axis[k];
            let dp: Vector3<f64> = jv.column(k).into();
            let mut djv = PointJacobian::zeros();
            for j in 0..=b {
                let (da_j, daq_j) = if k < j {
                    (
                        ak.cross(&ch.axis[j]),
                        ak.cross(&(ch.axis_point[j] - ch.axis_point[k])),
                    )
                } else {
                    (Vector3::zeros(), Vector3::zeros())
                };
                let col = da_j.cross(&(p - ch.axis_point[j]))
                    + ch.axis[j].cross(&(dp - daq_j));
                djv.set_column(j, &col);
            }
            dm[k] += item.mass * (djv.transpose() * jv + jv.transpose() * djv);

            if let Some((e, jw)) = rot {
                let ak_cross = skew(&ak);
                let de = ak_cross * e - e * ak_cross;
                let mut djw = PointJacobian::zeros();
                for j in (k + 1)..=b {
                    djw.set_column(j, &ak.cross(&ch.axis[j]));
                }
                dm[k] += djw.transpose() * e * jw
                    + jw.transpose() * de * jw
                    + jw.transpose() * e * djw;
            }
        }
    }
    (m, dm)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Coriolis/centrifugal matrix from Christoffel symbols of `dM/dq`.
pub fn coriolis_from_partials(dm: &[JointMat; 4], qd: &JointVec) -> JointMat {
    JointMat::from_fn(|i, j| {
        let mut cij = 0.0;
        for k in 0..4 {
            cij += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
        }
        cij
    })
}

/// Gravity vector `G = dV/dq`.
pub fn gravity_vector(model: &RobotModel, q: &JointVec) -> JointVec {
    let ch = chain(model, q);
    let mut g = JointVec::zeros();
    for item in mass_items(model) {
        let p = ch.r[item.body] * item.com + ch.origin[item.body];
        let jv = point_jacobian(&ch, item.body, &p);
        g += model.gravity * item.mass * jv.row(2).transpose();
    }
    g
}

/// Gravitational potential, zero level at the floor.
pub fn potential_energy(model: &RobotModel, q: &JointVec) -> f64 {
    let ch = chain(model, q);
    mass_items(model)
        .iter()
        .map(|item| {
            let p = ch.r[item.body] * item.com + ch.origin[item.body];
            model.gravity * item.mass * p.z
        })
        .sum()
}

/// Kinetic energy including the reflected rotor inertia.
pub fn kinetic_energy(model: &RobotModel, q: &JointVec, qd: &JointVec) -> f64 {
    0.5 * qd.dot(&((mass_matrix(model, q) + rotor_inertia_matrix(model)) * qd))
}

/// `M + V` with rotor inertia included; conserved in passive flight.
pub fn total_energy(model: &RobotModel, q: &JointVec, qd: &JointVec) -> f64 {
    kinetic_energy(model, q, qd) + potential_energy(model, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub m: JointMat,
    pub c: JointMat,
    pub g: JointVec,
}

/// Unaugmented `M`, `C`, `G` at one state.
pub fn dynamics_terms(
    model: &RobotModel,
    q: &JointVec,
    qd: &JointVec,
    mode: DerivMode,
) -> DynamicsTerms {
    let (m, dm) = mass_matrix_and_partials(model, q, mode);
    DynamicsTerms {
        m,
        c: coriolis_from_partials(&dm, qd),
        g: gravity_vector(model, q),
    }
}

// ---------------------------------------------------------------------------
// actuator augmentation
// ---------------------------------------------------------------------------

/// Reflected rotor inertia `I_r * diag(0, 0, N_H^2, N_K^2)`.
pub fn rotor_inertia_matrix(model: &RobotModel) -> JointMat {
    let mt = &model.motor;
    JointMat::from_diagonal(&JointVec::new(
        0.0,
        0.0,
        mt.rotor_inertia * mt.gear_hip * mt.gear_hip,
        mt.rotor_inertia * mt.gear_knee * mt.gear_knee,
    ))
}

/// Back-EMF damping `(k_v k_T / R_w) * diag(0, 0, N_H^2, N_K^2)`.
pub fn back_emf_matrix(model: &RobotModel) -> JointMat {
    let mt = &model.motor;
    let k = mt.speed_constant * mt.torque_constant / mt.resistance;
    JointMat::from_diagonal(&JointVec::new(
        0.0,
        0.0,
        k * mt.gear_hip * mt.gear_hip,
        k * mt.gear_knee * mt.gear_knee,
    ))
}

/// Generalized torque from motor voltages: `B_e * u`, nonzero on the leg
/// joints only. The back-EMF part lives in [`back_emf_matrix`], never here.
pub fn voltage_input_torque(model: &RobotModel, u: &Vector2<f64>) -> JointVec {
    let mt = &model.motor;
    let k = mt.torque_constant / mt.resistance;
    JointVec::new(0.0, 0.0, k * mt.gear_hip * u.x, k * mt.gear_knee * u.y)
}

fn l1_norm<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> f64 {
    (0..N)
        .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn cond_l1<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> Option<f64> {
    m.try_inverse().map(|inv| l1_norm(m) * l1_norm(&inv))
}

// ---------------------------------------------------------------------------
// flight
// ---------------------------------------------------------------------------

/// Flight acceleration `(M + M_r)^-1 (tau - (C + B_emf) qd - G)`.
///
/// `tau` must already contain the voltage input and spring contributions;
/// the passive gantry entries are expected to be zero upstream.
pub fn flight_accel(
    model: &RobotModel,
    q: &JointVec,
    qd: &JointVec,
    tau: &JointVec,
    mode: DerivMode,
) -> Result<JointVec, DynamicsError> {
    let terms = dynamics_terms(model, q, qd, mode);
    let a = terms.m + rotor_inertia_matrix(model);
    let cond = cond_l1(&a).unwrap_or(f64::INFINITY);
    if !(cond <= COND_LIMIT) {
        return Err(DynamicsError::SingularMass { cond });
    }
    let rhs = tau - (terms.c + back_emf_matrix(model)) * qd - terms.g;
    Ok(a.lu().solve(&rhs).expect("conditioned matrix must solve"))
}

// ---------------------------------------------------------------------------
// stance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct StanceSolution {
    pub qdd: JointVec,
    /// Ground reaction force on the foot, contact (Y, Z) components [N].
    pub f_grf: Vector2<f64>,
}

/// Solves the stance KKT block
///
/// ```text
/// [ M + M_r   -J_hc^T ] [ qdd   ]   [ tau - (C (+ B_emf)) qd - G ]
/// [ J_hc       0      ] [ F_grf ] = [ -Jdot_hc qd                ]
/// ```
///
/// `with_emf` keeps the back-EMF damping active during stance (default in the
/// simulator; switchable for comparison runs).
pub fn stance_solve(
    model: &RobotModel,
    q: &JointVec,
    qd: &JointVec,
    tau: &JointVec,
    frame: &ContactFrame,
    mode: DerivMode,
    with_emf: bool,
) -> Result<StanceSolution, DynamicsError> {
    let terms = dynamics_terms(model, q, qd, mode);
    let a = terms.m + rotor_inertia_matrix(model);
    let mut c = terms.c;
    if with_emf {
        c += back_emf_matrix(model);
    }
    let j = holonomic_jacobian(model, q, frame);
    let jdot = holonomic_jacobian_dot(model, q, qd, frame, mode);

    let mut kkt = Matrix6::zeros();
    kkt.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    kkt.fixed_view_mut::<4, 2>(0, 4).copy_from(&(-j.transpose()));
    kkt.fixed_view_mut::<2, 4>(4, 0).copy_from(&j);

    let mut rhs = Vector6::zeros();
    rhs.fixed_rows_mut::<4>(0)
        .copy_from(&(tau - c * qd - terms.g));
    rhs.fixed_rows_mut::<2>(4).copy_from(&(-(jdot * qd)));

    let sol = solve_kkt(&kkt, &rhs)?;
    Ok(StanceSolution {
        qdd: sol.fixed_rows::<4>(0).into(),
        f_grf: sol.fixed_rows::<2>(4).into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactResult {
    pub qd_plus: JointVec,
    /// Contact impulse, (Y, Z) components [N s].
    pub impulse: Vector2<f64>,
    pub ke_before: f64,
    pub ke_after: f64,
}

/// Inelastic touchdown impact: `q` is unchanged, the post-impact velocity
/// satisfies `J_hc qd+ = 0` while momentum is preserved against the impulse.
pub fn impact_map(
    model: &RobotModel,
    q: &JointVec,
    qd_minus: &JointVec,
    frame: &ContactFrame,
) -> Result<ImpactResult, DynamicsError> {
    let a = mass_matrix(model, q) + rotor_inertia_matrix(model);
    let j = holonomic_jacobian(model, q, frame);

    let mut kkt = Matrix6::zeros();
    kkt.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    kkt.fixed_view_mut::<4, 2>(0, 4).copy_from(&(-j.transpose()));
    kkt.fixed_view_mut::<2, 4>(4, 0).copy_from(&j);

    let mut rhs = Vector6::zeros();
    rhs.fixed_rows_mut::<4>(0).copy_from(&(a * qd_minus));

    let sol = solve_kkt(&kkt, &rhs)?;
    let qd_plus: JointVec = sol.fixed_rows::<4>(0).into();
    Ok(ImpactResult {
        qd_plus,
        impulse: sol.fixed_rows::<2>(4).into(),
        ke_before: 0.5 * qd_minus.dot(&(a * qd_minus)),
        ke_after: 0.5 * qd_plus.dot(&(a * qd_plus)),
    })
}

fn solve_kkt(kkt: &Matrix6<f64>, rhs: &Vector6<f64>) -> Result<Vector6<f64>, DynamicsError> {
    let cond = cond_l1(kkt).unwrap_or(f64::INFINITY);
    if !(cond <= COND_LIMIT) {
        return Err(DynamicsError::SingularKkt { cond });
    }
    Ok(kkt.lu().solve(rhs).expect("conditioned matrix must solve"))
}
