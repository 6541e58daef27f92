use super::{ArmModel, JointVector, KinematicsError};

pub const DEFAULT_PLANNER_DT: f64 = 0.01;
pub const DEFAULT_ACCEL_LIMIT: f64 = 4.0;

/// Time-sampled joint path. Samples are `dt` apart except possibly the last,
/// which lands exactly at `duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub dt: f64,
    pub samples: Vec<JointVector>,
    pub duration: f64,
}

impl JointTrajectory {
    pub fn start(&self) -> &JointVector {
        &self.samples[0]
    }

    pub fn goal(&self) -> &JointVector {
        self.samples.last().unwrap()
    }

    /// Sample in effect `elapsed` seconds into playback (held at the goal afterwards).
    pub fn sample_at(&self, elapsed: f64) -> &JointVector {
        let k = (elapsed / self.dt + 1e-9).floor();
        let k = if k.is_finite() && k > 0.0 { k as usize } else { 0 };
        &self.samples[k.min(self.samples.len() - 1)]
    }

    pub fn is_finished(&self, elapsed: f64) -> bool {
        elapsed + 1e-12 >= self.duration
    }
}

/// Peak speed and duration of one rest-to-rest move.
#[derive(Debug, Clone, Copy)]
struct Profile {
    distance: f64,
    peak: f64,
    accel: f64,
    duration: f64,
}

impl Profile {
    fn min_time(distance: f64, vmax: f64, accel: f64) -> f64 {
        if distance <= 0.0 {
            0.0
        } else if distance <= vmax * vmax / accel {
            2.0 * (distance / accel).sqrt()
        } else {
            distance / vmax + vmax / accel
        }
    }

    /// Stretches the move to exactly `duration` (>= its minimum time).
    fn with_duration(distance: f64, accel: f64, duration: f64) -> Self {
        let peak = if distance <= 0.0 {
            0.0
        } else {
            let disc = (accel * accel * duration * duration - 4.0 * accel * distance).max(0.0);
            (accel * duration - disc.sqrt()) / 2.0
        };
        Self {
            distance,
            peak,
            accel,
            duration,
        }
    }

    fn position(&self, t: f64) -> f64 {
        if self.distance <= 0.0 {
            return 0.0;
        }
        let ta = self.peak / self.accel;
        if t <= 0.0 {
            0.0
        } else if t >= self.duration {
            self.distance
        } else if t < ta {
            0.5 * self.accel * t * t
        } else if t <= self.duration - ta {
            0.5 * self.accel * ta * ta + self.peak * (t - ta)
        } else {
            let r = self.duration - t;
            self.distance - 0.5 * self.accel * r * r
        }
    }
}

/// Per-joint trapezoidal profiles synchronized to the slowest joint.
pub fn plan_joint_trajectory(
    arm: &ArmModel,
    start: &JointVector,
    goal: &JointVector,
    dt: f64,
    accel_limit: f64,
) -> Result<JointTrajectory, KinematicsError> {
    arm.check_len(start)?;
    arm.check_len(goal)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KinematicsError::InvalidParameter(format!("dt = {dt}")));
    }
    if !(accel_limit > 0.0 && accel_limit.is_finite()) {
        return Err(KinematicsError::InvalidParameter(format!(
            "accel limit = {accel_limit}"
        )));
    }
    if !arm.within_limits(start) || !arm.within_limits(goal) {
        return Err(KinematicsError::OutOfLimits);
    }
    let deltas: Vec<f64> = goal.iter().zip(start.iter()).map(|(g, s)| g - s).collect();
    let duration = deltas
        .iter()
        .zip(arm.joints())
        .map(|(d, j)| Profile::min_time(d.abs(), j.vel_limit, accel_limit))
        .fold(0.0, f64::max);
    if duration == 0.0 {
        return Ok(JointTrajectory {
            dt,
            samples: vec![start.clone()],
            duration: 0.0,
        });
    }
    let profiles: Vec<Profile> = deltas
        .iter()
        .map(|d| Profile::with_duration(d.abs(), accel_limit, duration))
        .collect();
    let steps = (duration / dt - 1e-9).ceil() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let t = k as f64 * dt;
        samples.push(JointVector(
            start
                .iter()
                .zip(&deltas)
                .zip(&profiles)
                .map(|((s, d), p)| s + d.signum() * p.position(t))
                .collect(),
        ));
    }
    samples.push(goal.clone());
    Ok(JointTrajectory { dt, samples, duration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::test_arms::planar2;
    use proptest::prelude::*;

    #[test]
    fn zero_move_is_single_sample() {
        let arm = planar2();
        let q: JointVector = vec![0.3, -0.2].into();
        let t = plan_joint_trajectory(&arm, &q, &q, 0.01, 4.0).unwrap();
        assert_eq!(t.duration, 0.0);
        assert_eq!(t.samples.len(), 1);
    }

    #[test]
    fn trapezoid_duration_matches_closed_form() {
        // d/v + v/a with d = 1, v = 1, a = 4
        let arm = planar2();
        let t = plan_joint_trajectory(&arm, &vec![0.0, 0.0].into(), &vec![1.0, 0.0].into(), 0.01, 4.0).unwrap();
        assert!((t.duration - 1.25).abs() < 1e-12);
        assert_eq!(t.samples.len(), 126);
        assert_eq!(t.goal().0, vec![1.0, 0.0]);
    }

    #[test]
    fn triangular_profile_duration() {
        // d = 0.1 < v^2/a = 0.25: t = 2 sqrt(d/a)
        let arm = planar2();
        let t = plan_joint_trajectory(&arm, &vec![0.0, 0.0].into(), &vec![0.1, 0.0].into(), 0.01, 4.0).unwrap();
        assert!((t.duration - 2.0 * (0.1f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn joints_finish_together() {
        let arm = planar2();
        let t = plan_joint_trajectory(&arm, &vec![0.0, 0.0].into(), &vec![1.0, 0.1].into(), 0.01, 4.0).unwrap();
        assert!((t.duration - 1.25).abs() < 1e-12);
        let before = &t.samples[t.samples.len() - 2];
        assert!(before[0] < 1.0 && before[1] < 0.1);
        // the short joint is still moving close to the end, so it was stretched
        let mid = t.sample_at(0.625);
        assert!((mid[1] - 0.05).abs() < 1e-3, "{}", mid[1]);
    }

    #[test]
    fn out_of_limits_rejected() {
        let arm = planar2();
        assert_eq!(
            plan_joint_trajectory(&arm, &vec![0.0, 0.0].into(), &vec![3.5, 0.0].into(), 0.01, 4.0),
            Err(KinematicsError::OutOfLimits)
        );
    }

    proptest! {
        #[test]
        fn velocity_bound_holds(
            a in proptest::collection::vec(-3.0f64..3.0, 2),
            b in proptest::collection::vec(-3.0f64..3.0, 2),
            dt in 0.001f64..0.05,
        ) {
            let arm = planar2();
            let (a, b): (JointVector, JointVector) = (a.into(), b.into());
            let t = plan_joint_trajectory(&arm, &a, &b, dt, 4.0).unwrap();
            prop_assert_eq!(t.start(), &a);
            prop_assert_eq!(t.goal(), &b);
            for w in t.samples.windows(2) {
                for (i, j) in arm.joints().iter().enumerate() {
                    prop_assert!((w[1][i] - w[0][i]).abs() <= j.vel_limit * dt + 1e-9);
                }
            }
        }
    }
}
