use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use tongue_ema::bake::{bake, export_animation, obj_name, Baked};
use tongue_ema::ema_io::{ingest, parse_annotations, parse_sweep, write_sweep, EmaSweep};
use tongue_ema::geometry::SimilarityTransform;
use tongue_ema::ik::{bone_volume, rest_volume, solve_sweep, SolveMode};
use tongue_ema::nla::{action_to_text, read_action, read_library, resolve_timeline, segment_actions, Action, Timeline, TimelineEntry};
use tongue_ema::posefile::{self, PoseTrack};
use tongue_ema::rig::{bind_struts, strut_targets, Pose, Rig, Strut};
use tongue_ema::skin::{auto_weights, heatmap_csv, load_mesh, parse_landmarks, register_named, save_mesh, weight_heatmap, Mesh, WeightMap};
use tongue_ema::synth::{apply_head_motion, generate_gesture, scan_transform, ta_script, tongue_mesh, Noise, SynthScene};

use crate::config::{read_text, Project, ProjectConfig, SynthConfig};
use crate::error::{CliError, CliResult, Context};
use crate::output::Output;
use crate::{ActionsArgs, BakeArgs, BindArgs, Cli, Command, ExportArgs, IngestArgs, ReportArgs, SkinInputs, SolveArgs, SynthArgs, TimelineArgs};

/// Run one subcommand; returns the JSON summary printed on stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let project = Project::load(cli.global.config.as_deref())?;
    let mut out = Output::new(cli.global.dry_run);
    let (name, mut summary) = match &cli.command {
        Command::Synth(a) => ("synth", synth(&project, a, &mut out)?),
        Command::Ingest(a) => ("ingest", ingest_cmd(&project, a, &mut out)?),
        Command::Bind(a) => ("bind", bind(&project, a, &mut out)?),
        Command::Solve(a) => ("solve", solve(&project, a, cli.global.parallel, &mut out)?),
        Command::Actions(a) => ("actions", actions(&project, a, &mut out)?),
        Command::Timeline(a) => ("timeline", timeline(&project, a, &mut out)?),
        Command::Bake(a) => ("bake", bake_cmd(&project, a, &mut out)?),
        Command::Export(a) => ("export", export(&project, a, &mut out)?),
        Command::Report(a) => ("report", report(&project, a, &mut out)?),
    };
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("command".into(), json!(name));
    obj.insert("dry_run".into(), json!(out.dry_run()));
    obj.insert("outputs".into(), json!(out.paths()));
    Ok(serde_json::to_string(&summary)?)
}

fn read_sweep(project: &Project, path: &Path, annotations: Option<&Path>) -> CliResult<EmaSweep> {
    let sweep = parse_sweep(&read_text(path)?, project.config.sample_rate).in_file(path)?;
    match annotations {
        Some(a) => {
            let list = parse_annotations(&read_text(a)?).in_file(a)?;
            sweep.with_annotations(list).in_file(a)
        }
        None => Ok(sweep),
    }
}

fn read_struts(path: &Path) -> CliResult<Vec<Strut>> {
    serde_json::from_str(&read_text(path)?).in_file(path)
}

fn read_mesh(path: &Path) -> CliResult<Mesh> {
    load_mesh(&read_text(path)?).in_file(path)
}

fn read_track(rig: &Rig, path: &Path) -> CliResult<PoseTrack> {
    let bytes = std::fs::read(path).map_err(|e| tongue_ema::Error::io(path, e))?;
    posefile::decode(rig, &bytes).in_file(path)
}

fn write_action(out: &mut Output, action: &Action, rig: &Rig, dir: &Path) -> CliResult<()> {
    let (header, csv) = action_to_text(action, rig)?;
    out.write(&dir.join(format!("{}.json", action.name)), header)?;
    out.write(&dir.join(format!("{}.csv", action.name)), csv)
}

fn load_action(rig: &Rig, header: &Path) -> CliResult<Action> {
    let dir = header.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = header
        .file_stem()
        .ok_or_else(|| CliError::usage(format!("'{}' is not an action file", header.display())))?
        .to_string_lossy();
    read_action(dir, &name, rig).in_file(header)
}

fn synth(project: &Project, a: &SynthArgs, out: &mut Output) -> CliResult<Value> {
    let base = &project.config.synth;
    let cfg = SynthConfig {
        noise: Noise {
            sigma_pos: a.sigma.unwrap_or(base.noise.sigma_pos),
            outlier_rate: a.outlier_rate.unwrap_or(base.noise.outlier_rate),
            dropout_rate: a.dropout_rate.unwrap_or(base.noise.dropout_rate),
        },
        seed: a.seed.unwrap_or(base.seed),
        repeat: a.repeat.unwrap_or(base.repeat),
        rate: a.rate.unwrap_or(base.rate),
        head_motion: base.head_motion,
    };
    let scene = SynthScene::default_scene()?;
    let script = ta_script(&scene.rig, cfg.repeat);
    let gen = generate_gesture(&scene, &script, cfg.rate, &cfg.noise, cfg.seed)?;
    let sweep = match &cfg.head_motion {
        Some(m) => apply_head_motion(&gen.sweep, m)?,
        None => gen.sweep,
    };

    let dir = &a.out_dir;
    out.write(&dir.join("sweep.csv"), write_sweep(&sweep))?;
    out.write_json(&dir.join("annotations.json"), &sweep.annotations())?;
    out.write_json(&dir.join("truth.json"), &gen.truth)?;
    out.write_json(&dir.join("rig.json"), &scene.rig.description())?;
    out.write_json(&dir.join("layout.json"), &scene.layout)?;
    out.write_json(&dir.join("assignment.json"), &scene.assignment)?;
    out.write_json(&dir.join("reference_pose.json"), &scene.reference_pose)?;
    let mesh = tongue_mesh();
    out.write(&dir.join("scan.obj"), save_mesh(&mesh.transformed(&scan_transform())))?;
    out.write_json(&dir.join("landmarks.json"), &mesh.landmark_positions())?;

    let labels: Vec<String> = (0..cfg.repeat).map(|i| if i == 0 { "ta".into() } else { format!("ta_{}", i + 1) }).collect();
    let entries: Vec<TimelineEntry> = labels
        .iter()
        .take(2)
        .enumerate()
        .map(|(i, l)| TimelineEntry {
            action: l.clone(),
            crossfade_frames: if i == 0 && cfg.repeat > 1 { 20 } else { 0 },
        })
        .collect();
    out.write_json(&dir.join("timeline.json"), &Timeline { entries })?;

    let config = ProjectConfig {
        rig: Some("rig.json".into()),
        layout: Some("layout.json".into()),
        assignment: Some("assignment.json".into()),
        reference_pose: Some("reference_pose.json".into()),
        synth: cfg.clone(),
        ..ProjectConfig::default()
    };
    out.write_json(&dir.join("project.json"), &config)?;

    Ok(json!({
        "frame_count": sweep.frame_count(),
        "rate": sweep.sample_rate(),
        "coils": sweep.coil_names(),
        "outliers": gen.truth.outliers.len(),
        "dropouts": gen.truth.dropouts.len(),
        "seed": cfg.seed,
    }))
}

fn ingest_cmd(project: &Project, a: &IngestArgs, out: &mut Output) -> CliResult<Value> {
    let mut settings = project.config.ingest;
    if a.rate.is_some() {
        settings.target_rate = a.rate;
    }
    if let Some(w) = a.median_window {
        settings.clean.median_window = w;
    }
    if let Some(s) = a.max_speed {
        settings.clean.max_speed = s;
    }
    let layout = project.layout()?;
    let reference = project.reference_pose()?;
    let sweep = read_sweep(project, &a.input, a.annotations.as_deref())?;
    let (clean, report) = ingest(&sweep, &layout, reference.as_ref(), &settings)?;

    out.write(&a.out, write_sweep(&clean))?;
    if let Some(p) = &a.annotations_out {
        out.write_json(p, &clean.annotations())?;
    }
    if let Some(p) = &a.report {
        out.write_json(p, &report)?;
    }
    Ok(json!({
        "frame_count": report.frame_count,
        "input_rate": report.input_rate,
        "output_rate": report.output_rate,
        "repairs": report.clean.repairs.len(),
        "head_max_rms": report.head.reference_rms.iter().flatten().fold(0.0, |m: f64, r| m.max(*r)),
        "head_borrowed_frames": report.head.borrowed_frames.len(),
        "flagged": report.clean.flagged,
    }))
}

fn registration(project: &Project, a: &BindArgs, mesh: &Mesh) -> CliResult<(SimilarityTransform, Option<f64>)> {
    if let Some(t) = project.config.registration {
        return Ok((t, None));
    }
    let path = a
        .landmarks
        .as_deref()
        .ok_or_else(|| CliError::usage("bind needs --landmarks or a 'registration' in the config"))?;
    let target = parse_landmarks(&read_text(path)?).in_file(path)?;
    let (t, rms) = register_named(&mesh.landmark_positions(), &target, project.config.allow_scale)?;
    Ok((t, Some(rms)))
}

fn bind(project: &Project, a: &BindArgs, out: &mut Output) -> CliResult<Value> {
    let rig = project.rig()?;
    let layout = project.layout()?;
    let assignment = project.assignment()?;
    let sweep = read_sweep(project, &a.sweep, None)?;
    let scan = read_mesh(&a.mesh)?;
    let (transform, rms) = registration(project, a, &scan)?;
    let mesh = scan.transformed(&transform);
    let weights = auto_weights(&mesh, &rig, &project.config.weights)?;
    let bind_frame = a.bind_frame.unwrap_or(project.config.bind_frame);
    let struts = bind_struts(&rig, &sweep, &layout, bind_frame, &assignment, project.config.max_offset)?;

    let dir = &a.out_dir;
    out.write(&dir.join("mesh.obj"), save_mesh(&mesh))?;
    out.write(&dir.join("weights.json"), weights.to_json(&rig))?;
    out.write_json(&dir.join("struts.json"), &struts)?;
    out.write_json(&dir.join("registration.json"), &json!({ "transform": transform, "rms": rms }))?;
    if let Some(bone) = &a.heatmap {
        let values = weight_heatmap(&weights, &rig, bone)?;
        out.write(&dir.join(format!("heatmap_{bone}.csv")), heatmap_csv(&values))?;
    }
    Ok(json!({
        "vertices": mesh.vertices.len(),
        "registration_rms": rms,
        "scale": transform.scale,
        "struts": struts.len(),
        "bind_frame": bind_frame,
    }))
}

fn solve(project: &Project, a: &SolveArgs, parallel_flag: bool, out: &mut Output) -> CliResult<Value> {
    let rig = project.rig()?;
    let mut settings = project.config.ik.clone();
    if let Some(n) = a.max_iterations {
        settings.max_iterations = n;
    }
    let sweep = read_sweep(project, &a.input, a.annotations.as_deref())?;
    let struts = match &a.struts {
        Some(p) => read_struts(p)?,
        None => {
            let bind_frame = a.bind_frame.unwrap_or(project.config.bind_frame);
            bind_struts(
                &rig,
                &sweep,
                &project.layout()?,
                bind_frame,
                &project.assignment()?,
                project.config.max_offset,
            )?
        }
    };
    let mode = if parallel_flag || project.config.parallel {
        SolveMode::Parallel
    } else {
        SolveMode::Sequential
    };
    let solved = solve_sweep(&rig, &struts, &sweep, &settings, mode)?;
    let track = PoseTrack {
        rate: sweep.sample_rate(),
        poses: solved.poses(),
        annotations: sweep.annotations().to_vec(),
    };
    out.write(&a.out, posefile::encode(&rig, &track)?)?;
    let r = &solved.report;
    if let Some(p) = &a.report {
        out.write_json(p, r)?;
    }
    Ok(json!({
        "mode": r.mode,
        "frame_count": r.frame_count,
        "mean_residual": r.mean_residual,
        "max_residual": r.max_residual,
        "non_converged": r.non_converged.len(),
        "max_volume_deviation": r.max_volume_deviation,
        "volume_violations": r.volume_violations.len(),
    }))
}

fn actions(project: &Project, a: &ActionsArgs, out: &mut Output) -> CliResult<Value> {
    let rig = project.rig()?;
    let track = read_track(&rig, &a.poses)?;
    let id = match &a.sweep_id {
        Some(s) => s.clone(),
        None => a.poses.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let list = segment_actions(&track.poses, &track.annotations, track.rate, &id)?;
    for action in &list {
        write_action(out, action, &rig, &a.out_dir)?;
    }
    let names: Vec<&str> = list.iter().map(|x| x.name.as_str()).collect();
    Ok(json!({ "actions": names }))
}

fn timeline(project: &Project, a: &TimelineArgs, out: &mut Output) -> CliResult<Value> {
    let rig = project.rig()?;
    let library = read_library(&a.library, &rig)?;
    let tl = Timeline::from_json(&read_text(&a.timeline)?).in_file(&a.timeline)?;
    let mut action = resolve_timeline(&tl, &library)?;
    action.name = a.name.clone();
    write_action(out, &action, &rig, &a.out_dir)?;
    Ok(json!({ "name": action.name, "frames": action.len(), "rate": action.rate }))
}

fn bake_inputs(project: &Project, s: &SkinInputs) -> CliResult<(Rig, Baked)> {
    let rig = project.rig()?;
    let action = load_action(&rig, &s.action)?;
    let mesh = read_mesh(&s.mesh)?;
    let weights = WeightMap::from_json(&read_text(&s.weights)?, &rig).in_file(&s.weights)?;
    let stride = s.stride.unwrap_or(project.config.stride);
    let baked = bake(&action, &rig, &mesh, &weights, stride)?;
    Ok((rig, baked))
}

fn bake_cmd(project: &Project, a: &BakeArgs, out: &mut Output) -> CliResult<Value> {
    let (_, baked) = bake_inputs(project, &a.inputs)?;
    for f in 0..baked.frames.len() {
        out.write(&a.out_dir.join(obj_name(f)), save_mesh(&baked.mesh(f)))?;
    }
    let max_step = baked
        .frames
        .windows(2)
        .flat_map(|w| w[0].vertices.iter().zip(&w[1].vertices).map(|(p, q)| (q - p).norm()))
        .fold(0.0, f64::max);
    let diagnostics = json!({
        "name": baked.name,
        "rate": baked.rate,
        "stride": baked.stride,
        "frame_count": baked.frames.len(),
        "source_frames": baked.frames.iter().map(|f| f.source_frame).collect::<Vec<_>>(),
        "max_vertex_step": max_step,
    });
    out.write_json(&a.out_dir.join("bake.json"), &diagnostics)?;
    Ok(json!({
        "name": baked.name,
        "rate": baked.rate,
        "stride": baked.stride,
        "frame_count": baked.frames.len(),
        "max_vertex_step": max_step,
    }))
}

fn export(project: &Project, a: &ExportArgs, out: &mut Output) -> CliResult<Value> {
    let (rig, baked) = bake_inputs(project, &a.inputs)?;
    let anim = export_animation(&baked, &rig);
    out.write(&a.out, anim.to_json())?;
    Ok(json!({ "name": anim.name, "rate": anim.rate, "frame_count": anim.frames.len() }))
}

/// Largest relative bone volume deviation over all frames and bones.
fn volume_deviation(rig: &Rig, poses: &[Pose]) -> f64 {
    let rest: Vec<f64> = (0..rig.bone_count()).map(|b| rest_volume(rig, b)).collect();
    poses
        .iter()
        .flat_map(|p| rest.iter().enumerate().map(move |(b, r)| ((bone_volume(rig, b, p) - r) / r).abs()))
        .fold(0.0, f64::max)
}

fn report(project: &Project, a: &ReportArgs, out: &mut Output) -> CliResult<Value> {
    let rig = project.rig()?;
    let track = read_track(&rig, &a.poses)?;
    let joints: Vec<_> = track.poses.iter().map(Pose::joints).collect();
    let max_jump = joints
        .windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(p, q)| (q - p).norm()))
        .fold(0.0, f64::max);
    let non_finite = track.poses.iter().filter(|p| !p.is_finite()).count();
    let mut summary = json!({
        "frame_count": track.poses.len(),
        "rate": track.rate,
        "non_finite_frames": non_finite,
        "max_joint_jump": max_jump,
        "max_volume_deviation": volume_deviation(&rig, &track.poses),
        "annotations": track.annotations.len(),
    });

    if let Some(sweep_path) = &a.sweep {
        let sweep = read_sweep(project, sweep_path, None)?;
        if sweep.frame_count() != track.poses.len() {
            return Err(CliError::from(tongue_ema::Error::Invalid(format!(
                "sweep has {} frames, pose file {}",
                sweep.frame_count(),
                track.poses.len()
            ))));
        }
        let struts = match &a.struts {
            Some(p) => read_struts(p)?,
            None => bind_struts(
                &rig,
                &sweep,
                &project.layout()?,
                project.config.bind_frame,
                &project.assignment()?,
                project.config.max_offset,
            )?,
        };
        let mut per_target: BTreeMap<String, f64> = BTreeMap::new();
        let (mut sum, mut n) = (0.0, 0usize);
        for (f, j) in joints.iter().enumerate() {
            for t in strut_targets(&rig, &struts, sweep.coil_names(), sweep.frame(f))? {
                if t.weight == 0.0 {
                    continue;
                }
                let e = (j[rig.end_joint(t.bone, t.end)] - t.position).norm();
                let key = format!("{}.{:?}", rig.bones()[t.bone].name, t.end).to_lowercase();
                let m = per_target.entry(key).or_insert(0.0);
                *m = m.max(e);
                sum += e;
                n += 1;
            }
        }
        let obj = summary.as_object_mut().expect("object");
        obj.insert("mean_endpoint_residual".into(), json!(if n > 0 { sum / n as f64 } else { 0.0 }));
        obj.insert("max_endpoint_residual".into(), json!(per_target));
    }
    if let Some(p) = &a.out {
        out.write_json(p, &summary)?;
    }
    Ok(summary)
}
