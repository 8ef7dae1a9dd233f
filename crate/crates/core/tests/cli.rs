//! Contract tests for the command-line tool.

use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use point_avatar::deformation::{DeformationConfig, DeformationModel};
use point_avatar::geometry::{read_cloud, read_obj};
use point_avatar::pipeline::synthetic::random_pose;
use point_avatar::pipeline::{generate_subject, Avatar};
use point_avatar::semantic::sample_semantic;
use point_avatar::skeleton::DEFAULT_EXPRESSION_DIM;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_point-avatar"))
}

#[test]
fn missing_subcommand_prints_usage_and_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["eval", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["reconstruct", "--cloud"])
        .arg(dir.path().join("absent.ply"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repose_writes_posed_cloud_and_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let subject = generate_subject(4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = DeformationModel::new(
        DeformationConfig::desk(),
        subject.skeleton.clone(),
        subject.rest_pose().clone(),
        DEFAULT_EXPRESSION_DIM,
        &mut rng,
    )
    .unwrap();
    let points = sample_semantic(&subject.template, 3000, 4).unwrap();
    let avatar = Avatar::new(subject.template.mesh.clone(), model, None, points).unwrap();
    let ck = dir.path().join("c.spav");
    avatar.save(&ck).unwrap();
    let pose = dir.path().join("p.json");
    let p = random_pose(&subject.skeleton, DEFAULT_EXPRESSION_DIM, &mut rng);
    std::fs::write(&pose, serde_json::to_string(&p).unwrap()).unwrap();
    let out_dir = dir.path().join("d");

    let out = bin()
        .args(["repose", "--checkpoint"])
        .arg(&ck)
        .arg("--pose")
        .arg(&pose)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cloud = read_cloud(out_dir.join("posed.ply")).unwrap();
    assert_eq!(cloud.len(), 3000);
    let mesh = read_obj(out_dir.join("mesh.obj")).unwrap();
    assert!(!mesh.faces.is_empty() && mesh.is_watertight());
}
