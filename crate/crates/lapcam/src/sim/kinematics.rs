//! Serial-arm kinematics for the laparoscope holder: standard DH chains,
//! geometric Jacobians at the scope endpoints, and the trocar-constrained
//! RCM point with its augmented Jacobian.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One standard DH row: `T = Rz(theta + offset) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

/// The robot plus the rigidly attached laparoscope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmModel {
    pub dh_rows: Vec<DhRow>,
    pub joint_limits: Vec<(f64, f64)>,
    /// Per-joint velocity limits, rad/s.
    pub velocity_limits: Vec<f64>,
    /// Shaft length from proximal mount to camera tip, meters.
    pub scope_length: f64,
    /// Fixed transform from the end-effector to the scope proximal end,
    /// as (translation xyz, rotation rpy).
    pub attach_translation: [f64; 3],
    pub attach_rpy: [f64; 3],
}

impl ArmModel {
    pub fn n(&self) -> usize {
        self.dh_rows.len()
    }

    pub fn attach_frame(&self) -> Isometry3<f64> {
        let t = Translation3::new(
            self.attach_translation[0],
            self.attach_translation[1],
            self.attach_translation[2],
        );
        let r = UnitQuaternion::from_euler_angles(
            self.attach_rpy[0],
            self.attach_rpy[1],
            self.attach_rpy[2],
        );
        Isometry3::from_parts(t, r)
    }

    pub fn check(&self) -> Result<()> {
        if self.dh_rows.is_empty() {
            return Err(Error::config("arm needs at least one joint"));
        }
        if self.joint_limits.len() != self.n() || self.velocity_limits.len() != self.n() {
            return Err(Error::config("joint/velocity limit counts must match joints"));
        }
        for (i, (lo, hi)) in self.joint_limits.iter().enumerate() {
            if lo >= hi {
                return Err(Error::config(format!("joint {i} limits not ordered")));
            }
        }
        if !(self.scope_length > 0.0) {
            return Err(Error::config("scope length must be positive"));
        }
        Ok(())
    }

    /// A generic 7-DoF chain with the scope mounted along the flange axis.
    pub fn default_7dof() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let rows = vec![
            DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.34, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: FRAC_PI_2, d: 0.0, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: FRAC_PI_2, d: 0.40, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.0, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.40, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: FRAC_PI_2, d: 0.0, theta_offset: 0.0 },
            DhRow { a: 0.0, alpha: 0.0, d: 0.126, theta_offset: 0.0 },
        ];
        ArmModel {
            joint_limits: vec![(-2.9, 2.9); rows.len()],
            velocity_limits: vec![1.5; rows.len()],
            dh_rows: rows,
            scope_length: 0.35,
            attach_translation: [0.0, 0.0, 0.05],
            attach_rpy: [0.0, 0.0, 0.0],
        }
    }
}

fn dh_transform(row: &DhRow, q: f64) -> Isometry3<f64> {
    let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + row.theta_offset);
    let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), row.alpha);
    Isometry3::from_parts(Translation3::new(0.0, 0.0, row.d), rz)
        * Isometry3::from_parts(Translation3::new(row.a, 0.0, 0.0), rx)
}

/// Forward-kinematics snapshot at a configuration.
#[derive(Debug, Clone)]
pub struct FkResult {
    /// Frame after each joint, world-based (index i = frame of link i+1).
    pub link_frames: Vec<Isometry3<f64>>,
    pub ee: Isometry3<f64>,
    /// Scope proximal mount frame.
    pub scope: Isometry3<f64>,
    /// Scope proximal endpoint (attached to the EE side).
    pub p_i: Point3<f64>,
    /// Scope distal endpoint (camera tip).
    pub p_ip1: Point3<f64>,
    /// Camera frame: origin at the distal tip, z along the shaft.
    pub camera: Isometry3<f64>,
}

pub fn forward_kinematics(arm: &ArmModel, q: &DVector<f64>) -> Result<FkResult> {
    if q.len() != arm.n() {
        return Err(Error::config(format!(
            "configuration has {} joints, arm has {}",
            q.len(),
            arm.n()
        )));
    }
    let mut t = Isometry3::identity();
    let mut link_frames = Vec::with_capacity(arm.n());
    for (row, &qi) in arm.dh_rows.iter().zip(q.iter()) {
        t *= dh_transform(row, qi);
        link_frames.push(t);
    }
    let ee = t;
    let scope = ee * arm.attach_frame();
    let p_i = Point3::from(scope.translation.vector);
    let axis = scope.rotation * Vector3::z();
    let p_ip1 = p_i + axis * arm.scope_length;
    let camera = Isometry3::from_parts(Translation3::from(p_ip1.coords), scope.rotation);
    Ok(FkResult {
        link_frames,
        ee,
        scope,
        p_i,
        p_ip1,
        camera,
    })
}

/// Joint axes and origins used by the geometric Jacobian columns.
fn joint_axes(arm: &ArmModel, fk: &FkResult) -> Vec<(Vector3<f64>, Point3<f64>)> {
    let mut out = Vec::with_capacity(arm.n());
    let mut prev = Isometry3::identity();
    for i in 0..arm.n() {
        // Joint i rotates about the z-axis of the preceding frame.
        let z = prev.rotation * Vector3::z();
        let o = Point3::from(prev.translation.vector);
        out.push((z, o));
        prev = fk.link_frames[i];
    }
    out
}

/// Geometric position Jacobian (3 x n) of a world point rigidly attached to
/// the end-effector.
pub fn point_jacobian(arm: &ArmModel, fk: &FkResult, point: &Point3<f64>) -> DMatrix<f64> {
    let axes = joint_axes(arm, fk);
    let mut j = DMatrix::zeros(3, arm.n());
    for (col, (z, o)) in axes.iter().enumerate() {
        let lin = z.cross(&(point - o));
        for r in 0..3 {
            j[(r, col)] = lin[r];
        }
    }
    j
}

/// Geometric twist Jacobian (6 x n) at the end-effector origin, world frame:
/// rows 0..3 linear, rows 3..6 angular.
pub fn ee_jacobian(arm: &ArmModel, fk: &FkResult) -> DMatrix<f64> {
    let axes = joint_axes(arm, fk);
    let p = Point3::from(fk.ee.translation.vector);
    let mut j = DMatrix::zeros(6, arm.n());
    for (col, (z, o)) in axes.iter().enumerate() {
        let lin = z.cross(&(p - o));
        for r in 0..3 {
            j[(r, col)] = lin[r];
            j[(r + 3, col)] = z[r];
        }
    }
    j
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// All Jacobians the controller needs at one configuration.
#[derive(Debug, Clone)]
pub struct Jacobians {
    /// Scope proximal endpoint, 3 x n.
    pub j_i: DMatrix<f64>,
    /// Scope distal endpoint, 3 x n.
    pub j_ip1: DMatrix<f64>,
    /// Camera twist in the camera frame, 6 x n.
    pub j_c: DMatrix<f64>,
}

pub fn jacobians(arm: &ArmModel, fk: &FkResult) -> Jacobians {
    let j_i = point_jacobian(arm, fk, &fk.p_i);
    let j_ip1 = point_jacobian(arm, fk, &fk.p_ip1);
    // Camera twist: express the world-frame EE twist in the EE frame, then
    // shift it to the camera frame through the fixed mount transform.
    let j_r = ee_jacobian(arm, fk);
    let r_we = fk.ee.rotation.to_rotation_matrix();
    let r_we_t = r_we.matrix().transpose();
    let t_ec = fk.ee.inverse() * fk.camera;
    let r_ec_t = t_ec.rotation.to_rotation_matrix().matrix().transpose();
    let p_ec = t_ec.translation.vector;
    let mut xform = DMatrix::zeros(6, 6);
    let top_right = -r_ec_t * skew(&p_ec);
    for r in 0..3 {
        for c in 0..3 {
            xform[(r, c)] = r_ec_t[(r, c)];
            xform[(r, c + 3)] = top_right[(r, c)];
            xform[(r + 3, c + 3)] = r_ec_t[(r, c)];
        }
    }
    let mut world_to_ee = DMatrix::zeros(6, 6);
    for r in 0..3 {
        for c in 0..3 {
            world_to_ee[(r, c)] = r_we_t[(r, c)];
            world_to_ee[(r + 3, c + 3)] = r_we_t[(r, c)];
        }
    }
    let j_c = xform * world_to_ee * &j_r;
    Jacobians { j_i, j_ip1, j_c }
}

/// RCM point along the shaft: `p_i + lambda (p_ip1 - p_i)`.
pub fn rcm_point(p_i: &Point3<f64>, p_ip1: &Point3<f64>, lambda: f64) -> Point3<f64> {
    p_i + (p_ip1 - p_i) * lambda
}

/// RCM Jacobian (3 x (n+1)): q columns `J_i + lambda (J_ip1 - J_i)`, final
/// column `p_ip1 - p_i` for the lambda rate.
pub fn rcm_jacobian(
    j_i: &DMatrix<f64>,
    j_ip1: &DMatrix<f64>,
    p_i: &Point3<f64>,
    p_ip1: &Point3<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let n = j_i.ncols();
    let mut j = DMatrix::zeros(3, n + 1);
    for c in 0..n {
        for r in 0..3 {
            j[(r, c)] = j_i[(r, c)] + lambda * (j_ip1[(r, c)] - j_i[(r, c)]);
        }
    }
    let axis = p_ip1 - p_i;
    for r in 0..3 {
        j[(r, n)] = axis[r];
    }
    j
}

/// Central-difference position Jacobian used as the validation oracle.
pub fn fd_point_jacobian<F>(arm: &ArmModel, q: &DVector<f64>, step: f64, point_of: F) -> DMatrix<f64>
where
    F: Fn(&FkResult) -> Point3<f64>,
{
    let n = arm.n();
    let mut j = DMatrix::zeros(3, n);
    for c in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[c] += step;
        qm[c] -= step;
        let fp = forward_kinematics(arm, &qp).unwrap();
        let fm = forward_kinematics(arm, &qm).unwrap();
        let d = (point_of(&fp) - point_of(&fm)) / (2.0 * step);
        for r in 0..3 {
            j[(r, c)] = d[r];
        }
    }
    j
}
