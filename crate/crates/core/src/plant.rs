//! Sagittal-plane rigid-body model of a standing robot on a tilting support.
//!
//! The body is a chain of 1 to 4 links (shank, thigh, pelvis, trunk)
//! hinged at the ankle, knee, hip, and pelvis joints. The support surface
//! rotates about the ankle axis under kinematic control, so the tilt never
//! enters the link dynamics directly; it shifts the proprioceptive ankle
//! angle and the passive torques computed by the controller.
//!
//! Dynamics use absolute segment angles internally. With `a_ki` the lever
//! of segment angle `i` on the COM of segment `k` (full length below the
//! segment, COM offset on it, zero above), the equations of motion are
//!
//! ```text
//! sum_j M_ij(q) q''_j + sum_j mu_ij sin(q_i - q_j) q'_j^2 - g h_i sin q_i = Q_i
//! M_ij = mu_ij cos(q_i - q_j) + delta_ij I_i,   mu_ij = sum_k m_k a_ki a_kj
//! h_i  = m_i c_i + l_i sum_{k>i} m_k,           Q_i = tau_i - tau_{i+1}
//! ```
//!
//! advanced by a fixed-step fourth-order Runge-Kutta integrator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default fall guard on the absolute COM sway angle, radians.
pub const DEFAULT_FALL_THRESHOLD_RAD: f64 = 0.5;

/// Longest accepted integrator step, seconds.
pub const MAX_STEP_S: f64 = 0.01;

/// One rigid segment of the chain, described in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    pub mass_kg: f64,
    /// Joint-to-joint length (the top segment's length ends at the head).
    pub length_m: f64,
    /// COM position along the segment, measured from the proximal joint.
    pub com_m: f64,
    /// Rotational inertia about the segment COM.
    pub inertia_kg_m2: f64,
}

impl SegmentParams {
    /// Segment with uniform thin-rod inertia `m L^2 / 12`.
    pub fn thin_rod(mass_kg: f64, length_m: f64, com_m: f64) -> Self {
        SegmentParams {
            mass_kg,
            length_m,
            com_m,
            inertia_kg_m2: mass_kg * length_m * length_m / 12.0,
        }
    }
}

/// Full plant description: segments from the ankle up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub segments: Vec<SegmentParams>,
    pub gravity_m_s2: f64,
    /// Foot length, carried only into exported metadata.
    pub foot_length_m: f64,
    /// Absolute COM sway (rad) above which a trial counts as a fall;
    /// `None` disables the guard (used by conservation audits).
    pub fall_threshold_rad: Option<f64>,
}

impl Default for PlantParams {
    /// Desk-scale humanoid defaults: 15.30 kg total, 1.52 m from the ankle
    /// to the head, whole-body COM 0.68 m above the ankle, 9.50 kg above
    /// the hip. The trunk COM offset is solved from the whole-body COM
    /// constraint; the other offsets are measured values.
    fn default() -> Self {
        let shank = SegmentParams::thin_rod(3.00, 0.37, 0.32);
        let thigh = SegmentParams::thin_rod(2.80, 0.33, 0.31);
        let pelvis = SegmentParams::thin_rod(7.50, 0.12, 0.05);
        let trunk_mass = 2.00;
        let trunk_length = 0.70;

        let body_com = 0.68;
        let total_mass = shank.mass_kg + thigh.mass_kg + pelvis.mass_kg + trunk_mass;
        let below_trunk = shank.mass_kg * shank.com_m
            + thigh.mass_kg * (shank.length_m + thigh.com_m)
            + pelvis.mass_kg * (shank.length_m + thigh.length_m + pelvis.com_m);
        let trunk_base = shank.length_m + thigh.length_m + pelvis.length_m;
        let trunk_com = (total_mass * body_com - below_trunk) / trunk_mass - trunk_base;
        let trunk = SegmentParams::thin_rod(trunk_mass, trunk_length, trunk_com);

        PlantParams {
            segments: vec![shank, thigh, pelvis, trunk],
            gravity_m_s2: 9.81,
            foot_length_m: 0.20,
            fall_threshold_rad: Some(DEFAULT_FALL_THRESHOLD_RAD),
        }
    }
}

impl PlantParams {
    /// Whole body collapsed into a single rigid link.
    pub fn single_link() -> Self {
        PlantParams::default()
            .merged(1)
            .expect("default parameters merge cleanly")
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn total_mass_kg(&self) -> f64 {
        self.segments.iter().map(|s| s.mass_kg).sum()
    }

    pub fn total_height_m(&self) -> f64 {
        self.segments.iter().map(|s| s.length_m).sum()
    }

    /// Whole-body COM height above the ankle in the upright posture.
    pub fn com_height_m(&self) -> f64 {
        let mut base = 0.0;
        let mut moment = 0.0;
        for s in &self.segments {
            moment += s.mass_kg * (base + s.com_m);
            base += s.length_m;
        }
        moment / self.total_mass_kg()
    }

    /// Small-angle gravitational stiffness m·g·h of the body above each
    /// joint about that joint, N·m/rad, ankle first.
    pub fn gravity_levers_nm_per_rad(&self) -> Vec<f64> {
        let n = self.segments.len();
        (0..n)
            .map(|j| {
                let lever: f64 = (j..n)
                    .map(|k| {
                        self.segments[k].mass_kg
                            * (self.segments[j..k].iter().map(|s| s.length_m).sum::<f64>()
                                + self.segments[k].com_m)
                    })
                    .sum();
                self.gravity_m_s2 * lever
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() || self.segments.len() > 4 {
            return Err(CoreError::Config(format!(
                "plant needs 1 to 4 segments, got {}",
                self.segments.len()
            )));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.mass_kg > 0.0 && s.mass_kg.is_finite()) {
                return Err(CoreError::Config(format!(
                    "segment {i}: mass must be positive, got {}",
                    s.mass_kg
                )));
            }
            if !(s.length_m > 0.0 && s.length_m.is_finite()) {
                return Err(CoreError::Config(format!(
                    "segment {i}: length must be positive, got {}",
                    s.length_m
                )));
            }
            if !(s.com_m >= 0.0 && s.com_m <= s.length_m) {
                return Err(CoreError::Config(format!(
                    "segment {i}: COM offset {} outside segment of length {}",
                    s.com_m, s.length_m
                )));
            }
            if !(s.inertia_kg_m2 > 0.0 && s.inertia_kg_m2.is_finite()) {
                return Err(CoreError::Config(format!(
                    "segment {i}: inertia must be positive, got {}",
                    s.inertia_kg_m2
                )));
            }
        }
        if !(self.gravity_m_s2 >= 0.0 && self.gravity_m_s2.is_finite()) {
            return Err(CoreError::Config(format!(
                "gravity must be non-negative, got {}",
                self.gravity_m_s2
            )));
        }
        if !(self.foot_length_m >= 0.0 && self.foot_length_m.is_finite()) {
            return Err(CoreError::Config(format!(
                "foot length must be non-negative, got {}",
                self.foot_length_m
            )));
        }
        if let Some(t) = self.fall_threshold_rad {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CoreError::Config(format!(
                    "fall threshold must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Locks the distal joints by rigidly merging all segments from index
    /// `n_links - 1` upward into one. Merging preserves total mass, length,
    /// COM position, and inertia, so the result is the exact constrained
    /// dynamics of the original chain with those joints frozen straight.
    pub fn merged(&self, n_links: usize) -> Result<PlantParams> {
        self.validate()?;
        if n_links == 0 || n_links > self.segments.len() {
            return Err(CoreError::Config(format!(
                "cannot merge {} segments down to {n_links} links",
                self.segments.len()
            )));
        }
        let mut out = self.clone();
        if n_links == self.segments.len() {
            return Ok(out);
        }
        let tail = &self.segments[n_links - 1..];
        let mass: f64 = tail.iter().map(|s| s.mass_kg).sum();
        let length: f64 = tail.iter().map(|s| s.length_m).sum();
        let mut base = 0.0;
        let mut moment = 0.0;
        for s in tail {
            moment += s.mass_kg * (base + s.com_m);
            base += s.length_m;
        }
        let com = moment / mass;
        let mut inertia = 0.0;
        let mut base2 = 0.0;
        for s in tail {
            let d = base2 + s.com_m - com;
            inertia += s.inertia_kg_m2 + s.mass_kg * d * d;
            base2 += s.length_m;
        }
        out.segments.truncate(n_links - 1);
        out.segments.push(SegmentParams {
            mass_kg: mass,
            length_m: length,
            com_m: com,
            inertia_kg_m2: inertia,
        });
        Ok(out)
    }
}

/// Commanded support-surface pose at the end of a step. The support is
/// kinematically driven, so these values are copied into the output state
/// sample-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SupportCommand {
    pub tilt_rad: f64,
    pub tilt_vel_rad_s: f64,
}

/// Mechanical state of the chain. Joint angles are relative to the
/// proximal segment; the ankle angle is relative to the support surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub joint_angles_rad: Vec<f64>,
    pub joint_velocities_rad_s: Vec<f64>,
    pub support_tilt_rad: f64,
    pub support_tilt_vel_rad_s: f64,
    pub time_s: f64,
}

impl PlantState {
    /// Upright rest on a level support.
    pub fn upright(n_links: usize) -> Self {
        PlantState {
            joint_angles_rad: vec![0.0; n_links],
            joint_velocities_rad_s: vec![0.0; n_links],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        }
    }

    pub fn n_links(&self) -> usize {
        self.joint_angles_rad.len()
    }

    /// Absolute segment angles from vertical, ankle segment first.
    pub fn absolute_angles(&self) -> Vec<f64> {
        let mut acc = self.support_tilt_rad;
        self.joint_angles_rad
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect()
    }

    /// Absolute segment angular velocities.
    pub fn absolute_velocities(&self) -> Vec<f64> {
        let mut acc = self.support_tilt_vel_rad_s;
        self.joint_velocities_rad_s
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect()
    }
}

/// Additive Gaussian noise applied per sensor channel; zero disables a
/// channel without consuming randomness.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub joint_angle_std_rad: f64,
    pub joint_velocity_std_rad_s: f64,
    pub vestibular_angle_std_rad: f64,
    pub vestibular_velocity_std_rad_s: f64,
    pub torque_std_nm: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("joint_angle_std_rad", self.joint_angle_std_rad),
            ("joint_velocity_std_rad_s", self.joint_velocity_std_rad_s),
            ("vestibular_angle_std_rad", self.vestibular_angle_std_rad),
            (
                "vestibular_velocity_std_rad_s",
                self.vestibular_velocity_std_rad_s,
            ),
            ("torque_std_nm", self.torque_std_nm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Config(format!(
                    "noise {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One sample of the robot's internal sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReadout {
    /// Proprioceptive joint angles, ankle first (ankle is body-to-support).
    pub joint_angles_rad: Vec<f64>,
    pub joint_velocities_rad_s: Vec<f64>,
    /// Vestibular head-in-space angle (top segment, from vertical).
    pub head_angle_rad: f64,
    pub head_velocity_rad_s: f64,
    /// Measured external contact torque at the ankle, feeding the push
    /// compensation path; zero in simulated trials (no push stimulus).
    pub ankle_torque_nm: f64,
}

/// Precomputed dynamics of a parameter set.
#[derive(Debug, Clone)]
pub struct PlantModel {
    params: PlantParams,
    n: usize,
    /// mu[i][j] = sum_k m_k a_ki a_kj (configuration-independent).
    mu: DMatrix<f64>,
    /// Gravity levers h_i = m_i c_i + l_i sum_{k>i} m_k.
    h: DVector<f64>,
    inertia: DVector<f64>,
}

impl PlantModel {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        let n = params.segments.len();
        let lever = |i: usize, k: usize| -> f64 {
            if i < k {
                params.segments[i].length_m
            } else if i == k {
                params.segments[k].com_m
            } else {
                0.0
            }
        };
        let mu = DMatrix::from_fn(n, n, |i, j| {
            (j.max(i)..n)
                .map(|k| params.segments[k].mass_kg * lever(i, k) * lever(j, k))
                .sum()
        });
        let h = DVector::from_fn(n, |i, _| {
            let s = &params.segments[i];
            let above: f64 = params.segments[i + 1..].iter().map(|t| t.mass_kg).sum();
            s.mass_kg * s.com_m + s.length_m * above
        });
        let inertia = DVector::from_fn(n, |i, _| params.segments[i].inertia_kg_m2);
        Ok(PlantModel {
            params,
            n,
            mu,
            h,
            inertia,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn n_links(&self) -> usize {
        self.n
    }

    /// Acceleration of the absolute segment angles under the given joint
    /// torques (ankle first; torque i acts between segments i-1 and i).
    fn acceleration(
        &self,
        theta: &DVector<f64>,
        theta_dot: &DVector<f64>,
        torques: &[f64],
    ) -> Result<DVector<f64>> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.mu[(i, j)] * (theta[i] - theta[j]).cos();
            }
            m[(i, i)] += self.inertia[i];
            let coriolis: f64 = (0..n)
                .map(|j| self.mu[(i, j)] * (theta[i] - theta[j]).sin() * theta_dot[j].powi(2))
                .sum();
            let gravity = self.params.gravity_m_s2 * self.h[i] * theta[i].sin();
            let applied = torques[i] - torques.get(i + 1).copied().unwrap_or(0.0);
            rhs[i] = applied - coriolis + gravity;
        }
        m.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| CoreError::Statistics("mass matrix lost positive definiteness".into()))
    }

    /// Advances the chain by `dt` with the joint torques held constant,
    /// then pins the support pose to the command. Returns a fall event
    /// when the guard threshold is crossed.
    pub fn step(
        &self,
        state: &PlantState,
        joint_torques: &[f64],
        support: SupportCommand,
        dt: f64,
    ) -> Result<PlantState> {
        if state.n_links() != self.n || state.joint_velocities_rad_s.len() != self.n {
            return Err(CoreError::Dimension(format!(
                "state has {} joints, model has {}",
                state.n_links(),
                self.n
            )));
        }
        if joint_torques.len() != self.n {
            return Err(CoreError::Dimension(format!(
                "{} torques for {} joints",
                joint_torques.len(),
                self.n
            )));
        }
        if !(dt > 0.0 && dt <= MAX_STEP_S) {
            return Err(CoreError::Config(format!(
                "step must be in (0, {MAX_STEP_S}] s, got {dt}"
            )));
        }
        if joint_torques.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::Config("joint torques must be finite".into()));
        }
        if !(support.tilt_rad.is_finite() && support.tilt_vel_rad_s.is_finite()) {
            return Err(CoreError::Config("support command must be finite".into()));
        }

        let theta = DVector::from_vec(state.absolute_angles());
        let theta_dot = DVector::from_vec(state.absolute_velocities());

        let f = |th: &DVector<f64>, thd: &DVector<f64>| self.acceleration(th, thd, joint_torques);
        let k1v = f(&theta, &theta_dot)?;
        let k1q = theta_dot.clone();
        let k2v = f(
            &(&theta + &k1q * (dt / 2.0)),
            &(&theta_dot + &k1v * (dt / 2.0)),
        )?;
        let k2q = &theta_dot + &k1v * (dt / 2.0);
        let k3v = f(
            &(&theta + &k2q * (dt / 2.0)),
            &(&theta_dot + &k2v * (dt / 2.0)),
        )?;
        let k3q = &theta_dot + &k2v * (dt / 2.0);
        let k4v = f(&(&theta + &k3q * dt), &(&theta_dot + &k3v * dt))?;
        let k4q = &theta_dot + &k3v * dt;

        let theta_new = &theta + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
        let theta_dot_new = &theta_dot + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);

        let mut q = Vec::with_capacity(self.n);
        let mut qd = Vec::with_capacity(self.n);
        let mut prev = support.tilt_rad;
        let mut prev_d = support.tilt_vel_rad_s;
        for i in 0..self.n {
            q.push(theta_new[i] - prev);
            qd.push(theta_dot_new[i] - prev_d);
            prev = theta_new[i];
            prev_d = theta_dot_new[i];
        }

        let next = PlantState {
            joint_angles_rad: q,
            joint_velocities_rad_s: qd,
            support_tilt_rad: support.tilt_rad,
            support_tilt_vel_rad_s: support.tilt_vel_rad_s,
            time_s: state.time_s + dt,
        };

        if let Some(limit) = self.params.fall_threshold_rad {
            let sway = self.com_sway(&next);
            if !sway.is_finite() || sway.abs() >= limit {
                return Err(CoreError::Fall {
                    time_s: next.time_s,
                    sway_rad: sway,
                });
            }
            if next
                .joint_angles_rad
                .iter()
                .any(|a| !a.is_finite() || a.abs() >= std::f64::consts::FRAC_PI_2)
            {
                return Err(CoreError::Fall {
                    time_s: next.time_s,
                    sway_rad: sway,
                });
            }
        }
        Ok(next)
    }

    /// Space-referenced angle of the whole-body COM about the ankle joint.
    pub fn com_sway(&self, state: &PlantState) -> f64 {
        let theta = state.absolute_angles();
        let mut x = 0.0;
        let mut y = 0.0;
        let mut joint_x = 0.0;
        let mut joint_y = 0.0;
        for (s, th) in self.params.segments.iter().zip(&theta) {
            x += s.mass_kg * (joint_x + s.com_m * th.sin());
            y += s.mass_kg * (joint_y + s.com_m * th.cos());
            joint_x += s.length_m * th.sin();
            joint_y += s.length_m * th.cos();
        }
        f64::atan2(x, y)
    }

    /// Total mechanical energy: kinetic plus gravitational potential,
    /// referenced to the upright posture.
    pub fn total_energy(&self, state: &PlantState) -> f64 {
        let theta = state.absolute_angles();
        let theta_dot = DVector::from_vec(state.absolute_velocities());
        let n = self.n;
        let mut kinetic = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut m = self.mu[(i, j)] * (theta[i] - theta[j]).cos();
                if i == j {
                    m += self.inertia[i];
                }
                kinetic += 0.5 * m * theta_dot[i] * theta_dot[j];
            }
        }
        let potential: f64 = (0..n)
            .map(|i| self.params.gravity_m_s2 * self.h[i] * (theta[i].cos() - 1.0))
            .sum();
        kinetic + potential
    }

    /// Samples the internal sensors: proprioceptive joint angles and
    /// velocities, vestibular top-segment angle and velocity in space, and
    /// the external contact torque (zero without a push stimulus). Each
    /// channel with positive noise std draws one Gaussian sample per value,
    /// in field order.
    pub fn read_sensors(
        &self,
        state: &PlantState,
        noise: &NoiseConfig,
        rng: &mut impl Rng,
    ) -> Result<SensorReadout> {
        noise.validate()?;
        if state.n_links() != self.n {
            return Err(CoreError::Dimension(format!(
                "state has {} joints, model has {}",
                state.n_links(),
                self.n
            )));
        }
        let mut perturb = |values: &[f64], std: f64| -> Result<Vec<f64>> {
            if std == 0.0 {
                return Ok(values.to_vec());
            }
            let dist = Normal::new(0.0, std)
                .map_err(|e| CoreError::Config(format!("noise distribution: {e}")))?;
            Ok(values.iter().map(|v| v + dist.sample(rng)).collect())
        };
        let angles = perturb(&state.joint_angles_rad, noise.joint_angle_std_rad)?;
        let velocities = perturb(
            &state.joint_velocities_rad_s,
            noise.joint_velocity_std_rad_s,
        )?;
        let theta = state.absolute_angles();
        let theta_dot = state.absolute_velocities();
        let head = perturb(&[theta[self.n - 1]], noise.vestibular_angle_std_rad)?[0];
        let head_vel = perturb(
            &[theta_dot[self.n - 1]],
            noise.vestibular_velocity_std_rad_s,
        )?[0];
        let torque = perturb(&[0.0], noise.torque_std_nm)?[0];
        Ok(SensorReadout {
            joint_angles_rad: angles,
            joint_velocities_rad_s: velocities,
            head_angle_rad: head,
            head_velocity_rad_s: head_vel,
            ankle_torque_nm: torque,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_guard(mut params: PlantParams) -> PlantParams {
        params.fall_threshold_rad = None;
        params
    }

    #[test]
    fn defaults_reproduce_published_anthropometrics() {
        let p = PlantParams::default();
        p.validate().unwrap();
        assert_eq!(p.n_segments(), 4);
        assert_relative_eq!(p.total_mass_kg(), 15.30, max_relative = 1e-12);
        assert_relative_eq!(p.total_height_m(), 1.52, max_relative = 1e-12);
        assert_relative_eq!(p.com_height_m(), 0.68, max_relative = 1e-12);
        let upper: f64 = p.segments[2].mass_kg + p.segments[3].mass_kg;
        assert_relative_eq!(upper, 9.50, max_relative = 1e-12);
        assert_relative_eq!(p.segments[0].mass_kg, 3.00);
        assert_relative_eq!(p.segments[1].mass_kg, 2.80);
        assert_relative_eq!(p.segments[0].com_m, 0.32);
        assert_relative_eq!(p.segments[1].com_m, 0.31);
        for s in &p.segments {
            assert!(s.com_m <= s.length_m);
            assert_relative_eq!(
                s.inertia_kg_m2,
                s.mass_kg * s.length_m * s.length_m / 12.0,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn merging_preserves_bulk_properties() {
        let p = PlantParams::default();
        for n in 1..=4 {
            let m = p.merged(n).unwrap();
            assert_eq!(m.n_segments(), n);
            assert_relative_eq!(m.total_mass_kg(), p.total_mass_kg(), max_relative = 1e-12);
            assert_relative_eq!(m.total_height_m(), p.total_height_m(), max_relative = 1e-12);
            assert_relative_eq!(m.com_height_m(), p.com_height_m(), max_relative = 1e-12);
            m.validate().unwrap();
        }
        let single = PlantParams::single_link();
        assert_eq!(single.n_segments(), 1);
        assert_relative_eq!(single.segments[0].com_m, 0.68, max_relative = 1e-12);
        assert!(p.merged(0).is_err());
        assert!(p.merged(5).is_err());
    }

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let model = PlantModel::new(PlantParams::default()).unwrap();
        let mut state = PlantState::upright(4);
        for _ in 0..100 {
            state = model
                .step(&state, &[0.0; 4], SupportCommand::default(), 1e-3)
                .unwrap();
        }
        assert!(state.joint_angles_rad.iter().all(|&q| q == 0.0));
        assert!(state.joint_velocities_rad_s.iter().all(|&v| v == 0.0));
        assert_relative_eq!(state.time_s, 0.1, max_relative = 1e-9);
    }

    #[test]
    fn zero_gravity_rest_is_unchanged_in_any_posture() {
        let mut params = no_guard(PlantParams::default());
        params.gravity_m_s2 = 0.0;
        let model = PlantModel::new(params).unwrap();
        // Dyadic angles survive the relative/absolute round trip bit-exactly.
        let state = PlantState {
            joint_angles_rad: vec![0.25, -0.125, 0.0625, 0.5],
            joint_velocities_rad_s: vec![0.0; 4],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let next = model
            .step(&state, &[0.0; 4], SupportCommand::default(), 1e-3)
            .unwrap();
        assert_eq!(next.joint_angles_rad, state.joint_angles_rad);
        assert_eq!(next.joint_velocities_rad_s, state.joint_velocities_rad_s);
    }

    #[test]
    fn gravity_cancelling_torque_freezes_a_leaning_pendulum() {
        let params = PlantParams::single_link();
        let g = params.gravity_m_s2;
        let s = params.segments[0];
        let model = PlantModel::new(params).unwrap();
        let lean = 0.01f64;
        let torque = -g * s.mass_kg * s.com_m * lean.sin();
        let mut state = PlantState {
            joint_angles_rad: vec![lean],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        for _ in 0..1000 {
            state = model
                .step(&state, &[torque], SupportCommand::default(), 1e-3)
                .unwrap();
        }
        assert!((state.joint_angles_rad[0] - lean).abs() < 1e-12);
        assert!(state.joint_velocities_rad_s[0].abs() < 1e-12);
    }

    #[test]
    fn free_fall_matches_linearized_pendulum() {
        let params = no_guard(PlantParams::single_link());
        let g = params.gravity_m_s2;
        let s = params.segments[0];
        let j = s.inertia_kg_m2 + s.mass_kg * s.com_m * s.com_m;
        let omega = (s.mass_kg * g * s.com_m / j).sqrt();
        let model = PlantModel::new(params).unwrap();
        let theta0 = 0.01;
        let mut state = PlantState {
            joint_angles_rad: vec![theta0],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let dt = 1e-3;
        for i in 1..=500 {
            state = model
                .step(&state, &[0.0], SupportCommand::default(), dt)
                .unwrap();
            let expected = theta0 * (omega * i as f64 * dt).cosh();
            let got = state.joint_angles_rad[0];
            assert!(
                (got - expected).abs() / expected < 1e-3,
                "t={}: {got} vs {expected}",
                i as f64 * dt
            );
        }
    }

    #[test]
    fn free_pendulum_swing_conserves_energy() {
        let model = PlantModel::new(no_guard(PlantParams::single_link())).unwrap();
        let mut state = PlantState {
            joint_angles_rad: vec![0.2],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let e0 = model.total_energy(&state);
        assert!(e0.abs() > 1e-3, "audit needs a nonzero energy reference");
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            state = model
                .step(&state, &[0.0], SupportCommand::default(), 1e-3)
                .unwrap();
            let drift = (model.total_energy(&state) - e0).abs() / e0.abs();
            worst = worst.max(drift);
        }
        assert!(worst < 1e-3, "relative energy drift {worst}");
    }

    #[test]
    fn coasting_chain_conserves_energy() {
        let mut params = no_guard(PlantParams::default());
        params.gravity_m_s2 = 0.0;
        let model = PlantModel::new(params).unwrap();
        let mut state = PlantState {
            joint_angles_rad: vec![0.1, -0.2, 0.3, -0.1],
            joint_velocities_rad_s: vec![0.5, -0.4, 0.8, -0.6],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let e0 = model.total_energy(&state);
        assert!(e0 > 1e-3, "audit needs a nonzero energy reference");
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            state = model
                .step(&state, &[0.0; 4], SupportCommand::default(), 1e-3)
                .unwrap();
            let drift = (model.total_energy(&state) - e0).abs() / e0.abs();
            worst = worst.max(drift);
        }
        assert!(worst < 1e-3, "relative energy drift {worst}");
    }

    #[test]
    fn locked_chain_matches_scalar_pendulum_simulation() {
        let full = no_guard(PlantParams::default());
        let merged = full.merged(1).unwrap();
        let s = merged.segments[0];
        let g = merged.gravity_m_s2;
        let j = s.inertia_kg_m2 + s.mass_kg * s.com_m * s.com_m;
        let mgc = s.mass_kg * g * s.com_m;
        let model = PlantModel::new(merged).unwrap();

        // The torque sequence is computed once from the scalar simulation
        // state (a stabilizing PD around a moving setpoint) and fed
        // identically to both simulations, keeping the shared trajectory
        // bounded so rounding noise is not amplified by a free fall.
        let dt = 1e-3;
        let mut state = PlantState {
            joint_angles_rad: vec![0.02],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let (mut th, mut thd) = (0.02f64, 0.0f64);
        for i in 0..5000 {
            let setpoint = 0.05 * (1.5 * i as f64 * dt).sin();
            let tau = -2.5 * mgc * (th - setpoint) - 30.0 * thd;
            state = model
                .step(&state, &[tau], SupportCommand::default(), dt)
                .unwrap();

            let f = |th: f64, thd: f64| -> (f64, f64) { (thd, (mgc * th.sin() + tau) / j) };
            let (k1q, k1v) = f(th, thd);
            let (k2q, k2v) = f(th + 0.5 * dt * k1q, thd + 0.5 * dt * k1v);
            let (k3q, k3v) = f(th + 0.5 * dt * k2q, thd + 0.5 * dt * k2v);
            let (k4q, k4v) = f(th + dt * k3q, thd + dt * k3v);
            th += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
            thd += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);

            assert!(
                (state.joint_angles_rad[0] - th).abs() < 1e-6,
                "t={}: {} vs {th}",
                state.time_s,
                state.joint_angles_rad[0]
            );
        }
    }

    #[test]
    fn support_tilt_is_copied_sample_exactly() {
        let model = PlantModel::new(PlantParams::default()).unwrap();
        let state = PlantState::upright(4);
        let cmd = SupportCommand {
            tilt_rad: 0.0123456789,
            tilt_vel_rad_s: -0.987654321,
        };
        let next = model.step(&state, &[0.0; 4], cmd, 1e-3).unwrap();
        assert_eq!(next.support_tilt_rad, cmd.tilt_rad);
        assert_eq!(next.support_tilt_vel_rad_s, cmd.tilt_vel_rad_s);
    }

    #[test]
    fn com_sway_basics_and_forward_kinematics_oracle() {
        let model = PlantModel::new(PlantParams::default()).unwrap();
        assert_eq!(model.com_sway(&PlantState::upright(4)), 0.0);

        let sip = PlantModel::new(PlantParams::single_link()).unwrap();
        let state = PlantState {
            joint_angles_rad: vec![0.07],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        assert_relative_eq!(sip.com_sway(&state), 0.07, max_relative = 1e-12);

        let params = PlantParams::default();
        let state = PlantState {
            joint_angles_rad: vec![0.05, -0.12, 0.3, -0.02],
            joint_velocities_rad_s: vec![0.0; 4],
            support_tilt_rad: 0.04,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let mut abs = Vec::new();
        let mut acc = state.support_tilt_rad;
        for q in &state.joint_angles_rad {
            acc += q;
            abs.push(acc);
        }
        let mut x = 0.0;
        let mut y = 0.0;
        let (mut jx, mut jy) = (0.0, 0.0);
        for (s, th) in params.segments.iter().zip(&abs) {
            x += s.mass_kg * (jx + s.com_m * th.sin());
            y += s.mass_kg * (jy + s.com_m * th.cos());
            jx += s.length_m * th.sin();
            jy += s.length_m * th.cos();
        }
        let oracle = (x / y).atan();
        let model = PlantModel::new(params).unwrap();
        assert_relative_eq!(model.com_sway(&state), oracle, max_relative = 1e-12);
    }

    #[test]
    fn fall_guard_reports_time_and_sway() {
        let model = PlantModel::new(PlantParams::single_link()).unwrap();
        let mut state = PlantState {
            joint_angles_rad: vec![0.4],
            joint_velocities_rad_s: vec![0.0],
            support_tilt_rad: 0.0,
            support_tilt_vel_rad_s: 0.0,
            time_s: 0.0,
        };
        let mut fell = None;
        for _ in 0..5000 {
            match model.step(&state, &[0.0], SupportCommand::default(), 1e-3) {
                Ok(next) => state = next,
                Err(e) => {
                    fell = Some(e);
                    break;
                }
            }
        }
        match fell {
            Some(CoreError::Fall { time_s, sway_rad }) => {
                assert!(time_s > 0.0);
                assert!(sway_rad.abs() >= DEFAULT_FALL_THRESHOLD_RAD);
            }
            other => panic!("expected a fall event, got {other:?}"),
        }
    }

    #[test]
    fn sensors_are_ideal_without_noise_and_reproducible_with_seed() {
        let model = PlantModel::new(PlantParams::default()).unwrap();
        let state = PlantState {
            joint_angles_rad: vec![0.01, -0.02, 0.03, -0.04],
            joint_velocities_rad_s: vec![0.1, 0.2, -0.3, 0.4],
            support_tilt_rad: 0.005,
            support_tilt_vel_rad_s: -0.05,
            time_s: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ideal = model
            .read_sensors(&state, &NoiseConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(ideal.joint_angles_rad, state.joint_angles_rad);
        assert_eq!(ideal.joint_velocities_rad_s, state.joint_velocities_rad_s);
        assert_relative_eq!(
            ideal.head_angle_rad,
            0.005 + 0.01 - 0.02 + 0.03 - 0.04,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ideal.head_velocity_rad_s,
            -0.05 + 0.1 + 0.2 - 0.3 + 0.4,
            max_relative = 1e-12
        );
        assert_eq!(ideal.ankle_torque_nm, 0.0);

        let noise = NoiseConfig {
            joint_angle_std_rad: 0.01,
            ..NoiseConfig::default()
        };
        let a = model
            .read_sensors(&state, &noise, &mut ChaCha8Rng::seed_from_u64(42))
            .unwrap();
        let b = model
            .read_sensors(&state, &noise, &mut ChaCha8Rng::seed_from_u64(42))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.joint_angles_rad, state.joint_angles_rad);
    }

    #[test]
    fn sensor_noise_std_matches_configuration() {
        let model = PlantModel::new(PlantParams::single_link()).unwrap();
        let state = PlantState::upright(1);
        let noise = NoiseConfig {
            joint_angle_std_rad: 0.02,
            ..NoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let r = model.read_sensors(&state, &noise, &mut rng).unwrap();
            let v = r.joint_angles_rad[0];
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        assert!((std - 0.02).abs() / 0.02 < 0.02, "sample std {std}");
    }

    #[test]
    fn step_rejects_bad_input() {
        let model = PlantModel::new(PlantParams::default()).unwrap();
        let state = PlantState::upright(4);
        assert!(model
            .step(&state, &[0.0; 3], SupportCommand::default(), 1e-3)
            .is_err());
        assert!(model
            .step(&state, &[0.0; 4], SupportCommand::default(), 0.02)
            .is_err());
        assert!(model
            .step(&state, &[0.0; 4], SupportCommand::default(), 0.0)
            .is_err());
        assert!(model
            .step(
                &state,
                &[f64::NAN, 0.0, 0.0, 0.0],
                SupportCommand::default(),
                1e-3
            )
            .is_err());
        let short = PlantState::upright(2);
        assert!(model
            .step(&short, &[0.0; 4], SupportCommand::default(), 1e-3)
            .is_err());
    }

    #[test]
    fn parameter_validation_catches_bad_geometry() {
        let mut p = PlantParams::default();
        p.segments[1].com_m = 0.5;
        assert!(p.validate().is_err());
        let mut p = PlantParams::default();
        p.segments[0].mass_kg = 0.0;
        assert!(p.validate().is_err());
        let p = PlantParams {
            gravity_m_s2: -1.0,
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
        let p = PlantParams {
            fall_threshold_rad: Some(0.0),
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
    }
}
