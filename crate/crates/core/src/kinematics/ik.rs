use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArmModel, JointVector, KinematicsError, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    /// Damping factor.
    pub lambda: f64,
    /// Position tolerance, meters.
    pub tol_pos: f64,
    /// Orientation tolerance, radians.
    pub tol_rot: f64,
    pub max_iters: u32,
    /// Per-iteration cap on the joint step norm, radians.
    pub max_step: f64,
    /// Extra attempts from seeded random starts after the first one fails.
    pub restarts: u32,
    pub seed: u64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            tol_pos: 1e-3,
            tol_rot: 0.5_f64.to_radians(),
            max_iters: 200,
            max_step: 0.5,
            restarts: 8,
            seed: 0,
        }
    }
}

struct Attempt {
    q: JointVector,
    pos_err: f64,
    rot_err: f64,
    converged: bool,
}

fn error_twist(current: &Pose, target: &Pose) -> Vector6<f64> {
    let dp = target.position - current.position;
    let dr = (target.orientation * current.orientation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn solve_from(arm: &ArmModel, q0: JointVector, target: &Pose, p: &IkParams) -> Result<Attempt, KinematicsError> {
    let mut q = q0;
    let damp = Matrix6::identity() * (p.lambda * p.lambda);
    let mut best = None::<Attempt>;
    for _ in 0..=p.max_iters {
        let pose = arm.fk(&q)?;
        let pos_err = pose.position_error(target);
        let rot_err = pose.rotation_error(target);
        let converged = pos_err < p.tol_pos && rot_err < p.tol_rot;
        let better = best
            .as_ref()
            .is_none_or(|b| pos_err + rot_err * 0.1 < b.pos_err + b.rot_err * 0.1);
        if better || converged {
            best = Some(Attempt {
                q: q.clone(),
                pos_err,
                rot_err,
                converged,
            });
        }
        if converged {
            break;
        }
        let e = error_twist(&pose, target);
        let jac = arm.jacobian(&q)?;
        let jjt = &jac * jac.transpose() + damp;
        let Some(chol) = jjt.cholesky() else { break };
        let mut dq = jac.transpose() * chol.solve(&e);
        let n = dq.norm();
        if n > p.max_step {
            dq *= p.max_step / n;
        }
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        q = arm.clamp_to_limits(&q);
    }
    Ok(best.expect("at least one iteration"))
}

/// Damped-least-squares IK. Deterministic: restarts draw from an RNG seeded by `params.seed`.
pub fn ik_dls(
    arm: &ArmModel,
    q0: &JointVector,
    target: &Pose,
    params: &IkParams,
) -> Result<JointVector, KinematicsError> {
    arm.check_len(q0)?;
    if !arm.within_limits(q0) {
        return Err(KinematicsError::OutOfLimits);
    }
    if !(params.lambda >= 0.0 && params.tol_pos > 0.0 && params.tol_rot > 0.0 && params.max_step > 0.0) {
        return Err(KinematicsError::InvalidParameter(format!("{params:?}")));
    }
    if target.position.norm() > arm.total_reach() {
        return Err(KinematicsError::Unreachable {
            best_pos_error: target.position.norm() - arm.total_reach(),
            best_rot_error: f64::NAN,
        });
    }
    let mut best = solve_from(arm, q0.clone(), target, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..params.restarts {
        if best.converged {
            break;
        }
        let start = JointVector(arm.joints().iter().map(|j| rng.gen_range(j.min..=j.max)).collect());
        let a = solve_from(arm, start, target, params)?;
        if a.converged || a.pos_err < best.pos_err {
            best = a;
        }
    }
    if best.converged {
        Ok(best.q)
    } else {
        Err(KinematicsError::Unreachable {
            best_pos_error: best.pos_err,
            best_rot_error: best.rot_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::test_arms::planar2;
    use nalgebra::Vector3;

    #[test]
    fn fixed_point_converges_immediately() {
        let arm = ArmModel::bundled("arm6").unwrap();
        let q0 = arm.home().clone();
        let target = arm.fk(&q0).unwrap();
        let q = ik_dls(&arm, &q0, &target, &IkParams::default()).unwrap();
        assert!(q.max_abs_diff(&q0) < 1e-9);
    }

    #[test]
    fn beyond_reach_rejected() {
        let arm = ArmModel::bundled("arm6").unwrap();
        let far = Pose::from_translation(arm.total_reach() * 1.5, 0.0, 0.0);
        assert!(matches!(
            ik_dls(&arm, arm.home(), &far, &IkParams::default()),
            Err(KinematicsError::Unreachable { .. })
        ));
    }

    #[test]
    fn out_of_limit_start_rejected() {
        let arm = planar2();
        let t = arm.fk(&vec![0.1, 0.1].into()).unwrap();
        assert_eq!(
            ik_dls(&arm, &vec![5.0, 0.0].into(), &t, &IkParams::default()),
            Err(KinematicsError::OutOfLimits)
        );
    }

    #[test]
    fn round_trip_from_home() {
        let arm = ArmModel::bundled("arm6").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q: JointVector = arm
                .joints()
                .iter()
                .zip(arm.home().iter())
                .map(|(j, h)| (h + rng.gen_range(-0.4..0.4)).clamp(j.min, j.max))
                .collect::<Vec<_>>()
                .into();
            let target = arm.fk(&q).unwrap();
            let sol = ik_dls(&arm, arm.home(), &target, &IkParams::default()).unwrap();
            let got = arm.fk(&sol).unwrap();
            assert!(got.position_error(&target) < 1e-3);
            assert!(arm.within_limits(&sol));
        }
    }

    #[test]
    fn deterministic() {
        let arm = ArmModel::bundled("arm7").unwrap();
        let target = Pose::downward(Vector3::new(0.35, 0.1, 0.1), 0.2);
        let a = ik_dls(&arm, arm.home(), &target, &IkParams::default());
        let b = ik_dls(&arm, arm.home(), &target, &IkParams::default());
        assert_eq!(a, b);
    }
}
