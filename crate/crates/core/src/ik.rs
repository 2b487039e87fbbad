//! Per-frame inverse kinematics against strut targets.
//!
//! Parameters are the free joint positions (every joint except the pinned
//! root head) and the head/tail twist of each bone. Chains stay connected
//! because bones share joint parameters. Each valid target contributes a
//! position residual `joint - target` and a direction residual
//! `w_d * (tangent - coil_direction)`, whose squared norm is
//! `2 w_d^2 (1 - cos angle)`. Twist never enters a data residual (coil roll
//! is unobservable), so it is held by the priors.
//!
//! Volume needs no penalty term: segments scale their cross-section by
//! `1/sqrt(stretch)`, so [`bone_volume`] is constant by construction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ema_io::{CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{is_finite, Vec3};
use crate::nla::blend_poses;
use crate::rig::{cross_scale, strut_targets, End, Pose, Rig, Strut, StrutTarget};

/// Steps shorter than this (parameter-space norm, mm/rad) end the solve.
pub const STEP_TOLERANCE: f64 = 1e-6;

const MAX_DAMPING: f64 = 1e12;

/// How the temporal and rest priors enter the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Priors act as a proximal damping floor `(w_t^2 + w_r^2) I` added to
    /// every step. Observed parameters converge to the data minimum; the
    /// unobserved ones stay where the warm start put them.
    #[default]
    Proximal,
    /// Priors are extra residual rows `w_t (x - warm)` and `w_r (x - rest)`
    /// pulling toward fixed anchors. Biases observed endpoints slightly.
    Anchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub max_iterations: usize,
    /// Initial Levenberg damping.
    pub damping: f64,
    /// A frame is converged when its residual RMS (mm) is below this.
    pub position_tolerance: f64,
    /// Millimeters of position error equivalent to a unit direction residual.
    pub direction_weight: f64,
    pub temporal_weight: f64,
    pub rest_weight: f64,
    /// Relative bone volume deviation tolerated before a frame is reported.
    pub volume_tolerance: f64,
    pub pin_root: bool,
    pub prior_mode: PriorMode,
    /// After a coil comes back from a dropout, joints may move at most this
    /// far (mm) per frame until the solve catches up with the data; 0 turns
    /// the limit off. Never applies while every target stays observed.
    pub reacquire_step: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        IkSettings {
            max_iterations: 50,
            damping: 1e-3,
            position_tolerance: 1e-2,
            direction_weight: 5.0,
            temporal_weight: 0.1,
            rest_weight: 0.01,
            volume_tolerance: 1e-3,
            pin_root: true,
            prior_mode: PriorMode::Proximal,
            reacquire_step: 1.0,
        }
    }
}

impl IkSettings {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.damping,
            self.direction_weight,
            self.temporal_weight,
            self.rest_weight,
            self.reacquire_step,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("IK weights and damping must be finite and >= 0"));
        }
        if !(self.position_tolerance > 0.0 && self.volume_tolerance > 0.0) {
            return Err(Error::invalid("IK tolerances must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Fit of one target after the solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResidual {
    pub bone: String,
    pub end: End,
    /// Distance from endpoint to target (mm).
    pub position: f64,
    /// Angle between end tangent and coil direction (rad).
    pub angle: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSolve {
    pub pose: Pose,
    /// `sqrt(sum(|pos|^2 + |w_d dir|^2) / valid targets)` in mm.
    pub residual_rms: f64,
    pub targets: Vec<TargetResidual>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
}

/// Least-squares problem for one frame. Public so the residual Jacobian can
/// be checked from outside.
pub struct IkProblem<'a> {
    rig: &'a Rig,
    targets: Vec<StrutTarget>,
    settings: IkSettings,
    /// Joint index for each free joint, in parameter order.
    free: Vec<usize>,
    /// Pose used for pinned joints and as the start point.
    start: Pose,
    warm: Option<Vec<f64>>,
    rest: Vec<f64>,
}

impl<'a> IkProblem<'a> {
    pub fn new(rig: &'a Rig, targets: Vec<StrutTarget>, warm_start: Option<&Pose>, settings: &IkSettings) -> Result<Self> {
        settings.validate()?;
        for t in &targets {
            if t.weight != 0.0 && !(is_finite(&t.position) && is_finite(&t.direction) && t.weight.is_finite()) {
                return Err(Error::invalid("non-finite strut target"));
            }
        }
        let rest_pose = Pose::rest(rig);
        if let Some(w) = warm_start {
            w.check_rig(rig)?;
            if !w.is_finite() {
                return Err(Error::invalid("non-finite warm-start pose"));
            }
        }
        let mut start = warm_start.cloned().unwrap_or_else(|| rest_pose.clone());
        let first = usize::from(settings.pin_root);
        let free: Vec<usize> = (first..rig.joint_count()).collect();
        if settings.pin_root {
            // Keep the root at rest even when the warm start drifted.
            start.bones[0].head = rest_pose.bones[0].head;
        }
        let mut p = IkProblem {
            rig,
            targets,
            settings: settings.clone(),
            free,
            start: start.clone(),
            warm: None,
            rest: Vec::new(),
        };
        p.rest = p.parameters(&rest_pose);
        p.warm = warm_start.map(|w| p.parameters(w));
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        3 * self.free.len() + 2 * self.rig.bone_count()
    }

    pub fn parameters(&self, pose: &Pose) -> Vec<f64> {
        let joints = pose.joints();
        let mut x = Vec::with_capacity(self.parameter_count());
        for &j in &self.free {
            x.extend(joints[j].iter());
        }
        for b in &pose.bones {
            x.push(b.head_twist);
            x.push(b.tail_twist);
        }
        x
    }

    pub fn pose(&self, x: &[f64]) -> Pose {
        let mut joints = self.start.joints();
        for (i, &j) in self.free.iter().enumerate() {
            joints[j] = Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        }
        let off = 3 * self.free.len();
        let twists: Vec<(f64, f64)> = (0..self.rig.bone_count())
            .map(|b| (x[off + 2 * b], x[off + 2 * b + 1]))
            .collect();
        Pose::from_joints(self.rig, &joints, &twists)
    }

    fn joints(&self, x: &[f64]) -> Vec<Vec3> {
        let mut joints = self.start.joints();
        for (i, &j) in self.free.iter().enumerate() {
            joints[j] = Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        }
        joints
    }

    fn column(&self, joint: usize) -> Option<usize> {
        self.free.iter().position(|&j| j == joint).map(|i| 3 * i)
    }

    fn prior_rows(&self) -> usize {
        match self.settings.prior_mode {
            PriorMode::Proximal => 0,
            PriorMode::Anchored => self.parameter_count() * (1 + usize::from(self.warm.is_some())),
        }
    }

    fn active(&self) -> impl Iterator<Item = &StrutTarget> {
        self.targets.iter().filter(|t| t.weight != 0.0)
    }

    pub fn residual_count(&self) -> usize {
        6 * self.active().count() + self.prior_rows()
    }

    /// Residual vector and its Jacobian at `x`.
    pub fn evaluate(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.parameter_count();
        let m = self.residual_count();
        let joints = self.joints(x);
        let mut r = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, n);
        let wd = self.settings.direction_weight;
        let mut row = 0;
        for t in self.active() {
            let j = self.rig.end_joint(t.bone, t.end);
            let w = t.weight;
            let dp = (joints[j] - t.position) * w;
            r.rows_mut(row, 3).copy_from(&dp);
            if let Some(c) = self.column(j) {
                for k in 0..3 {
                    jac[(row + k, c + k)] = w;
                }
            }
            let (tan, terms) = self.rig.end_tangent_jacobian(&joints, t.bone, t.end);
            let dd = (tan - t.direction) * (w * wd);
            r.rows_mut(row + 3, 3).copy_from(&dd);
            for (jt, g) in terms {
                if let Some(c) = self.column(jt) {
                    let mut block = jac.view_mut((row + 3, c), (3, 3));
                    block += g * (w * wd);
                }
            }
            row += 6;
        }
        if self.settings.prior_mode == PriorMode::Anchored {
            let mut anchor = |anchor: &[f64], weight: f64, row: &mut usize| {
                for i in 0..n {
                    r[*row + i] = weight * (x[i] - anchor[i]);
                    jac[(*row + i, i)] = weight;
                }
                *row += n;
            };
            if let Some(w) = &self.warm {
                anchor(w, self.settings.temporal_weight, &mut row);
            }
            anchor(&self.rest, self.settings.rest_weight, &mut row);
        }
        (r, jac)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.evaluate(x).0.norm_squared()
    }

    /// Damping floor added to the normal equations in proximal mode.
    fn proximal_floor(&self) -> f64 {
        match self.settings.prior_mode {
            PriorMode::Anchored => 0.0,
            PriorMode::Proximal => {
                let wt = if self.warm.is_some() { self.settings.temporal_weight } else { 0.0 };
                wt * wt + self.settings.rest_weight * self.settings.rest_weight
            }
        }
    }

    pub fn solve(&self) -> FrameSolve {
        let mut x = self.parameters(&self.start);
        let floor = self.proximal_floor();
        let mut lambda = self.settings.damping;
        let (mut r, mut jac) = self.evaluate(&x);
        let mut cost = 0.5 * r.norm_squared();
        let mut trace = vec![cost];
        let mut iterations = 0;
        while iterations < self.settings.max_iterations {
            iterations += 1;
            let g = jac.transpose() * &r;
            let mut a = jac.transpose() * &jac;
            for i in 0..a.nrows() {
                a[(i, i)] += floor + lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 2.0;
                if lambda > MAX_DAMPING {
                    break;
                }
                continue;
            };
            let step = -chol.solve(&g);
            let step_norm = step.norm();
            let candidate: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (r_new, jac_new) = self.evaluate(&candidate);
            let cost_new = 0.5 * r_new.norm_squared();
            if cost_new.is_finite() && cost_new <= cost && self.pose(&candidate).validate().is_ok() {
                x = candidate;
                r = r_new;
                jac = jac_new;
                cost = cost_new;
                trace.push(cost);
                lambda *= 0.5;
            } else {
                lambda *= 2.0;
            }
            if step_norm < STEP_TOLERANCE || lambda > MAX_DAMPING {
                break;
            }
        }
        self.finish(&x, iterations, trace)
    }

    /// Evaluate a pose that did not come out of [`IkProblem::solve`].
    fn assess(&self, pose: &Pose, iterations: usize, objective_trace: Vec<f64>) -> FrameSolve {
        let mut out = self.finish(&self.parameters(pose), iterations, objective_trace);
        // Pinned joints come from the start pose; keep the given ones.
        out.pose = pose.clone();
        out
    }

    fn finish(&self, x: &[f64], iterations: usize, objective_trace: Vec<f64>) -> FrameSolve {
        let pose = self.pose(x);
        let joints = pose.joints();
        let wd = self.settings.direction_weight;
        let mut sum = 0.0;
        let mut valid = 0usize;
        let targets = self
            .targets
            .iter()
            .map(|t| {
                let p = joints[self.rig.end_joint(t.bone, t.end)];
                let tan = self.rig.end_tangent(&joints, t.bone, t.end);
                let (position, angle) = if t.weight != 0.0 {
                    valid += 1;
                    let dp = (p - t.position).norm_squared();
                    let dd = (tan - t.direction).norm_squared() * wd * wd;
                    sum += dp + dd;
                    ((p - t.position).norm(), tan.dot(&t.direction).clamp(-1.0, 1.0).acos())
                } else {
                    (0.0, 0.0)
                };
                TargetResidual {
                    bone: self.rig.bones()[t.bone].name.clone(),
                    end: t.end,
                    position,
                    angle,
                    weight: t.weight,
                }
            })
            .collect();
        let residual_rms = if valid == 0 { 0.0 } else { (sum / valid as f64).sqrt() };
        FrameSolve {
            pose,
            residual_rms,
            targets,
            converged: valid > 0 && residual_rms < self.settings.position_tolerance,
            iterations,
            objective_trace,
        }
    }

    /// Objective at the start point; exposed for diagnostics.
    pub fn initial_objective(&self) -> f64 {
        self.objective(&self.parameters(&self.start))
    }
}

/// Solve one frame of coil samples. `coil_names` gives the column order of `frame`.
pub fn solve_frame(
    rig: &Rig,
    struts: &[Strut],
    coil_names: &[String],
    frame: &[CoilSample],
    warm_start: Option<&Pose>,
    settings: &IkSettings,
) -> Result<FrameSolve> {
    let targets = frame_targets(rig, struts, coil_names, frame)?;
    solve_targets(rig, targets, warm_start, settings)
}

fn frame_targets(rig: &Rig, struts: &[Strut], coil_names: &[String], frame: &[CoilSample]) -> Result<Vec<StrutTarget>> {
    if frame.len() != coil_names.len() {
        return Err(Error::invalid(format!(
            "frame has {} samples for {} coils",
            frame.len(),
            coil_names.len()
        )));
    }
    if frame
        .iter()
        .any(|s| s.valid && !(is_finite(&s.position) && is_finite(&s.direction)))
    {
        return Err(Error::invalid("non-finite coil sample marked valid"));
    }
    strut_targets(rig, struts, coil_names, frame)
}

pub fn solve_targets(rig: &Rig, targets: Vec<StrutTarget>, warm_start: Option<&Pose>, settings: &IkSettings) -> Result<FrameSolve> {
    Ok(IkProblem::new(rig, targets, warm_start, settings)?.solve())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Frame t warm-starts from frame t-1. Deterministic.
    #[default]
    Sequential,
    /// Split at annotation boundaries; each part starts from rest and parts
    /// run concurrently. Results can differ from sequential mode.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub frame_count: usize,
    pub mean_residual: f64,
    pub max_residual: f64,
    pub non_converged: Vec<usize>,
    /// Largest `|volume - rest volume| / rest volume` over all bones and frames.
    pub max_volume_deviation: f64,
    /// Frames whose volume deviation exceeds the settings' tolerance.
    pub volume_violations: Vec<usize>,
    pub frames: Vec<FrameDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct SweepSolve {
    pub frames: Vec<FrameSolve>,
    pub report: SolveReport,
}

impl SweepSolve {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose.clone()).collect()
    }
}

/// Frame ranges cut at every annotation start and end.
pub fn partitions(sweep: &EmaSweep) -> Vec<std::ops::Range<usize>> {
    let n = sweep.frame_count();
    let mut cuts: Vec<usize> = vec![0, n];
    for a in sweep.annotations() {
        cuts.push(a.start_frame);
        cuts.push(a.end_frame);
    }
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

fn solve_range(
    rig: &Rig,
    struts: &[Strut],
    sweep: &EmaSweep,
    range: std::ops::Range<usize>,
    settings: &IkSettings,
) -> Result<Vec<FrameSolve>> {
    let mut out: Vec<FrameSolve> = Vec::with_capacity(range.len());
    let mut catching_up = false;
    let mut observed: Option<Vec<bool>> = None;
    for f in range {
        let targets = frame_targets(rig, struts, sweep.coil_names(), sweep.frame(f))?;
        let now: Vec<bool> = targets.iter().map(|t| t.weight != 0.0).collect();
        if let Some(before) = &observed {
            catching_up |= now.iter().zip(before).any(|(n, b)| *n && !*b);
        }
        observed = Some(now);
        let warm = out.last().map(|s| &s.pose);
        let problem = IkProblem::new(rig, targets, warm, settings)?;
        let mut solved = problem.solve();
        if let (true, Some(w)) = (catching_up && settings.reacquire_step > 0.0, warm) {
            let moved = w
                .joints()
                .iter()
                .zip(solved.pose.joints())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if moved > settings.reacquire_step {
                let pose = blend_poses(w, &solved.pose, settings.reacquire_step / moved)?;
                solved = problem.assess(&pose, solved.iterations, solved.objective_trace);
            } else {
                catching_up = false;
            }
        }
        out.push(solved);
    }
    Ok(out)
}

/// Solve every frame of a head-corrected sweep.
pub fn solve_sweep(rig: &Rig, struts: &[Strut], sweep: &EmaSweep, settings: &IkSettings, mode: SolveMode) -> Result<SweepSolve> {
    settings.validate()?;
    if sweep.frame_count() == 0 {
        return Err(Error::invalid("empty sweep"));
    }
    let frames = match mode {
        SolveMode::Sequential => solve_range(rig, struts, sweep, 0..sweep.frame_count(), settings)?,
        SolveMode::Parallel => partitions(sweep)
            .into_par_iter()
            .map(|r| solve_range(rig, struts, sweep, r, settings))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
    };
    let report = summarize(rig, &frames, settings, mode);
    Ok(SweepSolve { frames, report })
}

pub fn summarize(rig: &Rig, frames: &[FrameSolve], settings: &IkSettings, mode: SolveMode) -> SolveReport {
    let n = frames.len();
    let rest: Vec<f64> = (0..rig.bone_count()).map(|b| rest_volume(rig, b)).collect();
    let mut max_dev: f64 = 0.0;
    let mut volume_violations = Vec::new();
    for (f, s) in frames.iter().enumerate() {
        let dev = (0..rig.bone_count())
            .map(|b| ((bone_volume(rig, b, &s.pose) - rest[b]) / rest[b]).abs())
            .fold(0.0, f64::max);
        if !(dev <= settings.volume_tolerance) {
            volume_violations.push(f);
        }
        max_dev = max_dev.max(dev);
    }
    SolveReport {
        mode,
        frame_count: n,
        mean_residual: frames.iter().map(|f| f.residual_rms).sum::<f64>() / n.max(1) as f64,
        max_residual: frames.iter().map(|f| f.residual_rms).fold(0.0, f64::max),
        non_converged: frames
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.converged)
            .map(|(i, _)| i)
            .collect(),
        max_volume_deviation: max_dev,
        volume_violations,
        frames: frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameDiagnostics {
                frame: i,
                residual_rms: f.residual_rms,
                converged: f.converged,
                iterations: f.iterations,
            })
            .collect(),
    }
}

/// `pi (r c)^2 (L s)` with `c = 1/sqrt(s)` the cross-section scale.
pub fn bone_volume(rig: &Rig, bone: usize, pose: &Pose) -> f64 {
    let b = &rig.bones()[bone];
    let s = pose.bones[bone].stretch();
    let c = cross_scale(s);
    std::f64::consts::PI * (b.rest_radius * c).powi(2) * (b.rest_length() * s)
}

pub fn rest_volume(rig: &Rig, bone: usize) -> f64 {
    let b = &rig.bones()[bone];
    std::f64::consts::PI * b.rest_radius.powi(2) * b.rest_length()
}
