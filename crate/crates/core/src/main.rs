use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use point_avatar::deformation::DeformationModel;
use point_avatar::geometry::{read_cloud, read_mesh, read_obj, write_cloud_ply, write_mesh_ply, write_obj, PlyFormat, TriangleMesh};
use point_avatar::nn::Checkpoint;
use point_avatar::pipeline::{
    evaluate, generate_subject_with, train_appearance, train_geometry_with, transfer, Avatar, ComposeConfig, ComposeMode,
    EvalConfig, EvalReport, SubjectConfig, SyntheticSubject, TrainConfig, TrainLog, HANDS,
};
use point_avatar::recon::{reconstruct, ReconConfig};
use point_avatar::semantic::{read_semantic_ply, write_semantic_ply, PartLabel};
use point_avatar::skeleton::PoseParams;
use point_avatar::{Error, Result};

/// Point-based animatable avatars on synthetic subjects.
#[derive(Debug, Parser)]
#[command(name = "point-avatar", version, subcommand_required = true, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config for this stage; absent fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Scale {
    /// Start from the published sample counts and network sizes instead of desk defaults.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a subject: labeled template, skeleton, poses and posed scans.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 40)]
        poses: usize,
    },
    /// Train DeltaNet and LBSNet on a subject's scans.
    TrainGeom {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        subject: PathBuf,
    },
    /// Sample semantic points on the labeled template and align them to the template scan.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        subject: PathBuf,
    },
    /// Pretrain the color autoencoder and fit per-point features; writes the avatar.
    TrainAppearance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scale: Scale,
        #[arg(long)]
        subject: PathBuf,
        /// Geometry checkpoint written by train-geom.
        #[arg(long)]
        geometry: PathBuf,
        /// Semantic points written by transfer.
        #[arg(long)]
        points: PathBuf,
    },
    /// Pose an avatar and mesh it.
    Repose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pose: PathBuf,
    },
    /// Mesh an oriented point cloud.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cloud: PathBuf,
    },
    /// Build an avatar from a host with some parts taken from a donor.
    Compose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        donor: PathBuf,
        /// Comma-separated part names, e.g. left_leg,right_leg.
        #[arg(long, value_delimiter = ',')]
        parts: Vec<String>,
        #[arg(long, default_value = "points")]
        mode: ComposeMode,
    },
    /// Compare a predicted mesh with a ground-truth mesh.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { common, poses } => generate(&common, poses),
        Command::TrainGeom { common, scale, subject } => train_geom(&common, &scale, &subject),
        Command::Transfer { common, scale, subject } => run_transfer(&common, &scale, &subject),
        Command::TrainAppearance {
            common,
            scale,
            subject,
            geometry,
            points,
        } => run_appearance(&common, &scale, &subject, &geometry, &points),
        Command::Repose { common, checkpoint, pose } => repose(&common, &checkpoint, &pose),
        Command::Reconstruct { common, cloud } => run_reconstruct(&common, &cloud),
        Command::Compose {
            common,
            host,
            donor,
            parts,
            mode,
        } => run_compose(&common, &host, &donor, &parts, mode),
        Command::Eval { common, pred, gt } => run_eval(&common, &pred, &gt),
    }
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(|e| Error::file(&common.out, e))?;
    Ok(&common.out)
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn train_config(common: &Common, scale: &Scale) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None if scale.paper_scale => TrainConfig::paper(),
        None => TrainConfig::desk(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj(path),
        _ => read_mesh(path),
    }
}

fn generate(common: &Common, poses: usize) -> Result<()> {
    let cfg: SubjectConfig = match &common.config {
        Some(path) => read_config(path)?,
        None => SubjectConfig {
            held_out: (poses / 5).min(8),
            ..SubjectConfig::default()
        },
    };
    let seed = common.seed.unwrap_or(0);
    let out = out_dir(common)?;
    let start = Instant::now();
    let subject = generate_subject_with(seed, poses, &cfg)?;
    subject.save(out.join("subject.spck"))?;
    write_mesh_ply(&subject.template.mesh, out.join("template.ply"), PlyFormat::BinaryLittleEndian)?;
    subject.skeleton.save(out.join("skeleton.json"))?;
    let poses_dir = out.join("poses");
    let scans_dir = out.join("scans");
    for dir in [&poses_dir, &scans_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut csv = String::from("pose,split,vertices,faces\n");
    let held = subject.held_out_poses();
    for (i, (pose, scan)) in subject.poses.iter().zip(&subject.scans).enumerate() {
        pose.save(poses_dir.join(format!("pose_{i:03}.json")))?;
        write_mesh_ply(scan, scans_dir.join(format!("scan_{i:03}.ply")), PlyFormat::BinaryLittleEndian)?;
        let split = if held.contains(&i) { "held_out" } else { "train" };
        let _ = writeln!(csv, "{i},{split},{},{}", scan.vertices.len(), scan.faces.len());
    }
    write_text(&out.join("poses.csv"), &csv)?;
    log::info!(
        "generated subject seed {seed} with {poses} poses in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_geom(common: &Common, scale: &Scale, subject: &Path) -> Result<()> {
    let cfg = train_config(common, scale)?;
    let out = out_dir(common)?;
    let subject = SyntheticSubject::load(subject)?;
    write_json(&out.join("config.json"), &cfg)?;
    let log_path = out.join("train_log.csv");
    let mut partial = TrainLog::default();
    let (model, log) = train_geometry_with(&subject, &cfg, |rec, model| {
        if cfg.checkpoint_every > 0 && (rec.epoch + 1) % cfg.checkpoint_every == 0 {
            save_model(model, &out.join(format!("geometry_epoch_{:03}.spck", rec.epoch + 1)))?;
        }
        // rewritten every epoch so an interrupted run keeps its history
        partial.epochs.push(*rec);
        write_text(&log_path, &partial.to_csv())
    })?;
    write_text(&log_path, &log.to_csv())?;
    save_model(&model, &out.join("geometry.spck"))
}

fn save_model(model: &DeformationModel, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    model.write_checkpoint(&mut ck, "model")?;
    ck.save(path)
}

fn run_transfer(common: &Common, scale: &Scale, subject: &Path) -> Result<()> {
    let cfg = train_config(common, scale)?;
    let out = out_dir(common)?;
    let subject = SyntheticSubject::load(subject)?;
    let (points, report) = transfer(&subject, &cfg)?;
    write_semantic_ply(&points, out.join("semantic.ply"), PlyFormat::BinaryLittleEndian)?;
    let mut csv = String::from("iteration,loss,best\n");
    for (i, (l, b)) in report.losses.iter().zip(&report.best).enumerate() {
        let _ = writeln!(csv, "{i},{l},{b}");
    }
    write_text(&out.join("align_log.csv"), &csv)?;
    write_json(
        &out.join("census.json"),
        &PartLabel::ALL
            .iter()
            .map(|l| (l.name(), points.census()[*l as usize]))
            .collect::<std::collections::BTreeMap<_, _>>(),
    )
}

fn run_appearance(common: &Common, scale: &Scale, subject: &Path, geometry: &Path, points: &Path) -> Result<()> {
    let cfg = train_config(common, scale)?;
    let out = out_dir(common)?;
    let subject = SyntheticSubject::load(subject)?;
    let model = DeformationModel::read_checkpoint(&Checkpoint::load(geometry)?, "model")?;
    let points = read_semantic_ply(points)?;
    let (appearance, points, report) = train_appearance(&subject, &model, &points, &cfg)?;
    let mut csv = String::from("epoch,color_loss\n");
    let _ = writeln!(csv, "0,{}", report.initial_loss);
    for (e, l) in report.epoch_loss.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", e + 1);
    }
    write_text(&out.join("appearance_log.csv"), &csv)?;
    Avatar::new(subject.template.mesh.clone(), model, Some(appearance), points)?.save(out.join("avatar.spav"))
}

fn recon_config(common: &Common) -> Result<ReconConfig> {
    common.config.as_deref().map_or_else(|| Ok(ReconConfig::default()), read_config)
}

fn repose(common: &Common, checkpoint: &Path, pose: &Path) -> Result<()> {
    let recon = recon_config(common)?;
    let out = out_dir(common)?;
    let avatar = Avatar::load(checkpoint)?;
    let pose = PoseParams::load(pose)?;
    let start = Instant::now();
    let posed = avatar.repose(&pose)?;
    write_cloud_ply(&posed.cloud, out.join("posed.ply"), PlyFormat::BinaryLittleEndian)?;
    let mesh = reconstruct(&posed.cloud, &recon)?;
    write_obj(&mesh, out.join("mesh.obj"))?;
    if avatar.has_appearance() {
        let colored = avatar.color_mesh(&mesh, &posed.cloud, ComposeConfig::default().k, Default::default())?;
        write_mesh_ply(&colored, out.join("mesh.ply"), PlyFormat::BinaryLittleEndian)?;
    }
    let csv = format!(
        "points,vertices,faces,watertight,seconds\n{},{},{},{},{}\n",
        posed.cloud.len(),
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_watertight(),
        start.elapsed().as_secs_f64()
    );
    write_text(&out.join("repose.csv"), &csv)
}

fn run_reconstruct(common: &Common, cloud: &Path) -> Result<()> {
    let recon = recon_config(common)?;
    let out = out_dir(common)?;
    let cloud = read_cloud(cloud)?;
    let start = Instant::now();
    let mesh = reconstruct(&cloud, &recon)?;
    write_obj(&mesh, out.join("mesh.obj"))?;
    let csv = format!(
        "points,resolution,vertices,faces,watertight,seconds\n{},{},{},{},{},{}\n",
        cloud.len(),
        recon.resolution,
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_watertight(),
        start.elapsed().as_secs_f64()
    );
    write_text(&out.join("reconstruct.csv"), &csv)
}

fn run_compose(common: &Common, host: &Path, donor: &Path, parts: &[String], mode: ComposeMode) -> Result<()> {
    let cfg: ComposeConfig = common.config.as_deref().map_or_else(|| Ok(ComposeConfig::default()), read_config)?;
    let parts = parts.iter().map(|p| p.parse()).collect::<Result<Vec<PartLabel>>>()?;
    let out = out_dir(common)?;
    let host = Avatar::load(host)?;
    let donor = Avatar::load(donor)?;
    let composite = host.compose(&donor, &parts, mode, &cfg)?;
    composite.save(out.join("avatar.spav"))?;
    let mut csv = String::from("part,host,donor,composite\n");
    let (h, d, c) = (host.points.census(), donor.points.census(), composite.points.census());
    for l in PartLabel::ALL {
        let i = l as usize;
        let _ = writeln!(csv, "{},{},{},{}", l.name(), h[i], d[i], c[i]);
    }
    write_text(&out.join("census.csv"), &csv)
}

fn run_eval(common: &Common, pred: &Path, gt: &Path) -> Result<()> {
    let mut cfg: EvalConfig = common.config.as_deref().map_or_else(|| Ok(EvalConfig::default()), read_config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = out_dir(common)?;
    let report = evaluate(&load_mesh(pred)?, &load_mesh(gt)?, &HANDS, &cfg)?;
    write_text(&out.join("eval.csv"), &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
    write_json(&out.join("eval.json"), &report)?;
    println!(
        "CD {:.3} mm  CD-MAX {:.3} mm  NC {:.4}  IoU {}",
        report.all.cd,
        report.all.cd_max,
        report.all.nc,
        report.iou.map_or("-".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}
