//! Balance controller built on disturbance estimation and compensation.
//!
//! Each joint is driven by an independent servo module. A module measures
//! its controlled variable (joint angle, or the space-referenced sway of
//! the body COM above the joint), reconstructs the external disturbances
//! acting on it as angle equivalents, and feeds their sum through a PD
//! servo whose active output is delayed by the lumped sensorimotor delay:
//!
//! ```text
//! u   = -eps + a_grav + a_trans + a_push
//! tau = G * delay(Kp u + Kd du/dt) - (Kp_pass q + Kd_pass dq/dt)
//! ```
//!
//! The ankle module re-references its proprioceptive sway to space by
//! adding the foot-in-space tilt, which is reconstructed by integrating a
//! dead-banded velocity estimate; the dead band models the sensory
//! threshold that ignores sub-threshold support motion. The passive
//! spring and damper act on the joint angle without delay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{PlantParams, SensorReadout};

/// Default lumped delay of the active servo path, seconds.
pub const DEFAULT_DELAY_S: f64 = 0.05;

/// Default controller tick rate, Hz.
pub const DEFAULT_TICK_RATE_HZ: f64 = 100.0;

/// Default dead-band threshold of the foot-in-space velocity estimator,
/// rad/s (0.17 deg/s).
pub fn default_threshold_rad_s() -> f64 {
    0.17_f64.to_radians()
}

/// Dead-band threshold: zero inside `[-theta, theta]`, shifted identity
/// outside. Odd, continuous, and 1-Lipschitz.
pub fn deadband(x: f64, theta: f64) -> f64 {
    debug_assert!(theta >= 0.0, "threshold must be non-negative");
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

/// Which variable a servo module regulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlledVariable {
    /// Space-referenced angle of the COM of all segments above the joint.
    ComSway,
    /// Proprioceptive joint angle.
    JointAngle,
}

/// Servo gains of one joint module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointGains {
    /// Proportional gain, N·m/rad.
    pub kp: f64,
    /// Derivative gain, N·m·s/rad.
    pub kd: f64,
    /// Undelayed passive stiffness, N·m/rad.
    #[serde(default)]
    pub passive_kp: f64,
    /// Undelayed passive damping, N·m·s/rad.
    #[serde(default)]
    pub passive_kd: f64,
    /// Gain on the external contact torque compensation; zero disables
    /// the path.
    #[serde(default)]
    pub ext_gain: f64,
    /// Cutoff of the second-order Butterworth filter on the external
    /// torque, rad/s.
    #[serde(default = "JointGains::default_ext_cutoff")]
    pub ext_cutoff_rad_s: f64,
}

impl JointGains {
    fn default_ext_cutoff() -> f64 {
        5.0
    }

    pub fn new(kp: f64, kd: f64) -> Self {
        JointGains {
            kp,
            kd,
            passive_kp: 0.0,
            passive_kd: 0.0,
            ext_gain: 0.0,
            ext_cutoff_rad_s: Self::default_ext_cutoff(),
        }
    }
}

/// Full controller configuration, ankle module first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecParams {
    pub joints: Vec<JointGains>,
    pub controlled: Vec<ControlledVariable>,
    /// Loop gain multiplying every module's delayed PD output.
    pub loop_gain: f64,
    /// Lumped delay of the active path, seconds; must be a whole number
    /// of controller ticks.
    pub delay_s: f64,
    /// Dead-band threshold of the foot-in-space estimator, rad/s.
    pub threshold_rad_s: f64,
    pub tick_rate_hz: f64,
}

impl Default for DecParams {
    fn default() -> Self {
        DecParams::standard()
    }
}

impl DecParams {
    /// Published sagittal gain set: ankle, knee, hip, and pelvis modules
    /// with loop gain 1.2. The passive damping values stand in for the
    /// intrinsic joint friction of the physical robot; without them the
    /// delayed active loop cannot damp the knee and pelvis modes.
    pub fn standard() -> Self {
        let mut ankle = JointGains::new(119.57, 11.95);
        ankle.ext_gain = 0.5;
        ankle.passive_kd = 32.0;
        let mut knee = JointGains::new(55.72, 0.4458);
        knee.ext_gain = 0.5;
        knee.passive_kd = 8.0;
        let mut hip = JointGains::new(22.71, 5.67);
        hip.ext_gain = 0.5;
        hip.passive_kd = 10.0;
        let mut pelvis = JointGains::new(10.59, 0.07);
        pelvis.passive_kd = 4.0;
        DecParams {
            joints: vec![ankle, knee, hip, pelvis],
            controlled: vec![
                ControlledVariable::ComSway,
                ControlledVariable::JointAngle,
                ControlledVariable::JointAngle,
                ControlledVariable::JointAngle,
            ],
            loop_gain: 1.2,
            delay_s: DEFAULT_DELAY_S,
            threshold_rad_s: default_threshold_rad_s(),
            tick_rate_hz: DEFAULT_TICK_RATE_HZ,
        }
    }

    /// Undelayed passive joint torques −(K_p^pass q + K_d^pass q̇).
    /// These model mechanical stiffness and friction, so a simulation may
    /// re-evaluate them between controller ticks from the true state.
    pub fn passive_torques(&self, q: &[f64], qd: &[f64]) -> Vec<f64> {
        self.joints
            .iter()
            .zip(q.iter().zip(qd))
            .map(|(g, (qi, qdi))| -(g.passive_kp * qi + g.passive_kd * qdi))
            .collect()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn tick_dt(&self) -> f64 {
        1.0 / self.tick_rate_hz
    }

    /// Delay expressed in controller ticks.
    pub fn delay_ticks(&self) -> usize {
        (self.delay_s * self.tick_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(CoreError::Config(
                "controller needs at least one joint".into(),
            ));
        }
        if self.controlled.len() != self.joints.len() {
            return Err(CoreError::Config(format!(
                "{} controlled-variable entries for {} joints",
                self.controlled.len(),
                self.joints.len()
            )));
        }
        for (i, g) in self.joints.iter().enumerate() {
            for (name, v) in [
                ("kp", g.kp),
                ("kd", g.kd),
                ("passive_kp", g.passive_kp),
                ("passive_kd", g.passive_kd),
                ("ext_gain", g.ext_gain),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CoreError::Config(format!(
                        "joint {i}: {name} must be non-negative, got {v}"
                    )));
                }
            }
            if !(g.ext_cutoff_rad_s > 0.0 && g.ext_cutoff_rad_s.is_finite()) {
                return Err(CoreError::Config(format!(
                    "joint {i}: ext_cutoff_rad_s must be positive, got {}",
                    g.ext_cutoff_rad_s
                )));
            }
        }
        if !(self.loop_gain >= 0.0 && self.loop_gain.is_finite()) {
            return Err(CoreError::Config(format!(
                "loop gain must be non-negative, got {}",
                self.loop_gain
            )));
        }
        if !(self.tick_rate_hz > 0.0 && self.tick_rate_hz.is_finite()) {
            return Err(CoreError::Config(format!(
                "tick rate must be positive, got {}",
                self.tick_rate_hz
            )));
        }
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(CoreError::Config(format!(
                "delay must be non-negative, got {}",
                self.delay_s
            )));
        }
        let ticks = self.delay_s * self.tick_rate_hz;
        if (ticks - ticks.round()).abs() > 1e-6 {
            return Err(CoreError::Config(format!(
                "delay {} s is not a whole number of ticks at {} Hz",
                self.delay_s, self.tick_rate_hz
            )));
        }
        if !(self.threshold_rad_s >= 0.0 && self.threshold_rad_s.is_finite()) {
            return Err(CoreError::Config(format!(
                "threshold must be non-negative, got {}",
                self.threshold_rad_s
            )));
        }
        Ok(())
    }
}

/// The five benchmark controller configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerPreset {
    /// Published gain set, loop gain 1.2.
    Standard,
    /// Ankle derivative gain removed.
    NoAnkleDerivative,
    /// Ankle derivative gain doubled.
    DoubleAnkleDerivative,
    /// Loop gain lowered to 1.0.
    UnityLoopGain,
    /// Loop gain lowered to 0.8.
    LowLoopGain,
}

impl ControllerPreset {
    pub fn all() -> [ControllerPreset; 5] {
        [
            ControllerPreset::Standard,
            ControllerPreset::NoAnkleDerivative,
            ControllerPreset::DoubleAnkleDerivative,
            ControllerPreset::UnityLoopGain,
            ControllerPreset::LowLoopGain,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerPreset::Standard => "standard",
            ControllerPreset::NoAnkleDerivative => "no-d",
            ControllerPreset::DoubleAnkleDerivative => "double-d",
            ControllerPreset::UnityLoopGain => "g-1.0",
            ControllerPreset::LowLoopGain => "g-0.8",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ControllerPreset::all()
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "unknown preset {name:?}; expected one of standard, no-d, double-d, g-1.0, g-0.8"
                ))
            })
    }

    pub fn params(&self) -> DecParams {
        let mut p = DecParams::standard();
        match self {
            ControllerPreset::Standard => {}
            ControllerPreset::NoAnkleDerivative => p.joints[0].kd = 0.0,
            ControllerPreset::DoubleAnkleDerivative => p.joints[0].kd *= 2.0,
            ControllerPreset::UnityLoopGain => p.loop_gain = 1.0,
            ControllerPreset::LowLoopGain => p.loop_gain = 0.8,
        }
        p
    }
}

/// Disturbance angle equivalents reconstructed by one module on the last
/// tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceEstimates {
    pub alpha_grav_rad: f64,
    pub alpha_trans_rad: f64,
    pub alpha_push_rad: f64,
    /// Reconstructed foot-in-space tilt (shared by all modules).
    pub alpha_fs_rad: f64,
}

/// Integrates the dead-banded foot-in-space velocity estimate.
///
/// The raw velocity is the vestibular head velocity minus all joint
/// velocities (the support's velocity in space); the dead band suppresses
/// sub-threshold drift before the running integral.
#[derive(Debug, Clone)]
pub struct FootInSpaceEstimator {
    threshold_rad_s: f64,
    dt: f64,
    integral_rad: f64,
}

impl FootInSpaceEstimator {
    pub fn new(threshold_rad_s: f64, dt: f64) -> Self {
        FootInSpaceEstimator {
            threshold_rad_s,
            dt,
            integral_rad: 0.0,
        }
    }

    /// Feeds one velocity sample and returns the updated tilt estimate.
    pub fn update(&mut self, raw_velocity_rad_s: f64) -> f64 {
        self.integral_rad += deadband(raw_velocity_rad_s, self.threshold_rad_s) * self.dt;
        self.integral_rad
    }

    pub fn estimate_rad(&self) -> f64 {
        self.integral_rad
    }

    pub fn reset(&mut self) {
        self.integral_rad = 0.0;
    }
}

/// Second-order Butterworth low pass (bilinear transform, transposed
/// direct form II).
#[derive(Debug, Clone)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    fn lowpass(cutoff_rad_s: f64, sample_rate_hz: f64) -> Self {
        let w0 = cutoff_rad_s / sample_rate_hz;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let alpha = w0.sin() / (2.0 * q);
        let cosw = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cosw) / 2.0 / a0,
            b1: (1.0 - cosw) / a0,
            b2: (1.0 - cosw) / 2.0 / a0,
            a1: -2.0 * cosw / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }

    fn reset(&mut self) {
        self.z1 = 0.0;
        self.z2 = 0.0;
    }
}

/// Per-joint servo pipeline state.
#[derive(Debug, Clone)]
struct ServoModule {
    /// Active PD outputs waiting in the delay line, oldest first.
    delay_line: VecDeque<f64>,
    u_prev: f64,
    push_filter: Biquad,
}

/// One controller instance owning all module state.
#[derive(Debug, Clone)]
pub struct DecController {
    params: DecParams,
    /// Segment geometry the gravity and sway estimators are built on.
    masses: Vec<f64>,
    lengths: Vec<f64>,
    coms: Vec<f64>,
    /// Gravity lever m·g·h of the body above each joint, about the joint.
    mgh: Vec<f64>,
    foot_in_space: FootInSpaceEstimator,
    modules: Vec<ServoModule>,
    estimates: Vec<DisturbanceEstimates>,
}

impl DecController {
    pub fn new(params: DecParams, plant: &PlantParams) -> Result<Self> {
        params.validate()?;
        plant.validate()?;
        let n = plant.n_segments();
        if params.n_joints() != n {
            return Err(CoreError::Config(format!(
                "controller has {} modules for a {}-link plant",
                params.n_joints(),
                n
            )));
        }
        let masses: Vec<f64> = plant.segments.iter().map(|s| s.mass_kg).collect();
        let lengths: Vec<f64> = plant.segments.iter().map(|s| s.length_m).collect();
        let coms: Vec<f64> = plant.segments.iter().map(|s| s.com_m).collect();
        let mgh = plant.gravity_levers_nm_per_rad();
        let ticks = params.delay_ticks();
        let modules = params
            .joints
            .iter()
            .map(|g| ServoModule {
                delay_line: VecDeque::from(vec![0.0; ticks]),
                u_prev: 0.0,
                push_filter: Biquad::lowpass(g.ext_cutoff_rad_s, params.tick_rate_hz),
            })
            .collect();
        let foot_in_space = FootInSpaceEstimator::new(params.threshold_rad_s, params.tick_dt());
        Ok(DecController {
            estimates: vec![DisturbanceEstimates::default(); n],
            params,
            masses,
            lengths,
            coms,
            mgh,
            foot_in_space,
            modules,
        })
    }

    pub fn params(&self) -> &DecParams {
        &self.params
    }

    /// Disturbance estimates produced by the most recent tick.
    pub fn estimates(&self) -> &[DisturbanceEstimates] {
        &self.estimates
    }

    /// Clears every delay line, filter, integrator, and derivative state.
    pub fn reset(&mut self) {
        let ticks = self.params.delay_ticks();
        for m in &mut self.modules {
            m.delay_line = VecDeque::from(vec![0.0; ticks]);
            m.u_prev = 0.0;
            m.push_filter.reset();
        }
        self.foot_in_space.reset();
        self.estimates = vec![DisturbanceEstimates::default(); self.modules.len()];
    }

    /// Angle of the COM of segments `j..` about joint `j`, given absolute
    /// segment angles.
    fn com_angle_above(&self, j: usize, theta: &[f64]) -> f64 {
        let mut x = 0.0;
        let mut y = 0.0;
        let mut joint_x = 0.0;
        let mut joint_y = 0.0;
        for (k, th) in theta.iter().enumerate().skip(j) {
            x += self.masses[k] * (joint_x + self.coms[k] * th.sin());
            y += self.masses[k] * (joint_y + self.coms[k] * th.cos());
            joint_x += self.lengths[k] * th.sin();
            joint_y += self.lengths[k] * th.cos();
        }
        f64::atan2(x, y)
    }

    /// Runs one controller tick on a sensor sample and returns the joint
    /// torques, ankle first.
    pub fn tick(&mut self, readout: &SensorReadout) -> Result<Vec<f64>> {
        let n = self.modules.len();
        if readout.joint_angles_rad.len() != n || readout.joint_velocities_rad_s.len() != n {
            return Err(CoreError::Dimension(format!(
                "readout has {} joints, controller has {n}",
                readout.joint_angles_rad.len()
            )));
        }
        let finite = readout
            .joint_angles_rad
            .iter()
            .chain(&readout.joint_velocities_rad_s)
            .chain([&readout.head_angle_rad, &readout.head_velocity_rad_s])
            .chain([&readout.ankle_torque_nm])
            .all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::Config("sensor readout must be finite".into()));
        }
        let q = &readout.joint_angles_rad;
        let qd = &readout.joint_velocities_rad_s;
        let dt = self.params.tick_dt();

        // Foot-in-space velocity: head velocity in space minus the whole
        // proprioceptive velocity chain.
        let raw_fs_vel = readout.head_velocity_rad_s - qd.iter().sum::<f64>();
        let alpha_fs = self.foot_in_space.update(raw_fs_vel);

        // Support-referenced absolute angles (cumulative proprioception).
        let mut theta_prop = vec![0.0; n];
        let mut acc = 0.0;
        for (i, qi) in q.iter().enumerate() {
            acc += qi;
            theta_prop[i] = acc;
        }
        // Space-referenced absolute angles anchored at the vestibular
        // head angle and chained downward through the joints.
        let mut theta_space = vec![0.0; n];
        theta_space[n - 1] = readout.head_angle_rad;
        for i in (0..n - 1).rev() {
            theta_space[i] = theta_space[i + 1] - q[i + 1];
        }

        let passive = self.params.passive_torques(q, qd);
        let mut torques = Vec::with_capacity(n);
        for j in 0..n {
            let gains = &self.params.joints[j];

            // Space-referenced sway of the COM above this joint. The ankle
            // re-references its proprioceptive sway with the thresholded
            // foot-in-space estimate; distal modules chain from the
            // vestibular signal directly.
            let sway = if j == 0 {
                self.com_angle_above(0, &theta_prop) + alpha_fs
            } else {
                self.com_angle_above(j, &theta_space)
            };

            let eps = match self.params.controlled[j] {
                ControlledVariable::ComSway => sway,
                ControlledVariable::JointAngle => q[j],
            };

            let alpha_grav = if gains.kp > 0.0 {
                -(self.mgh[j] / gains.kp) * sway
            } else {
                0.0
            };
            let alpha_trans = 0.0;
            let alpha_push = if gains.ext_gain > 0.0 && gains.kp > 0.0 {
                gains.ext_gain * self.modules[j].push_filter.process(readout.ankle_torque_nm)
                    / gains.kp
            } else {
                0.0
            };

            let u = -eps + alpha_grav + alpha_trans + alpha_push;
            let module = &mut self.modules[j];
            let du = (u - module.u_prev) / dt;
            module.u_prev = u;

            let pd = gains.kp * u + gains.kd * du;
            let delayed = if module.delay_line.is_empty() {
                pd
            } else {
                module.delay_line.push_back(pd);
                module.delay_line.pop_front().expect("non-empty delay line")
            };
            let active = self.params.loop_gain * delayed;
            torques.push(active + passive[j]);

            self.estimates[j] = DisturbanceEstimates {
                alpha_grav_rad: alpha_grav,
                alpha_trans_rad: alpha_trans,
                alpha_push_rad: alpha_push,
                alpha_fs_rad: alpha_fs,
            };
        }
        Ok(torques)
    }
}
