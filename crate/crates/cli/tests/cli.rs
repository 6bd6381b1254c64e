use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use respmodel::phantom::{generate, PhantomConfig, PopulationConfig, PopulationMember};
use respmodel::registration::RegistrationConfig;
use respmodel::{rvf, GridMeta, MotionModel};
use serde_json::json;
use tempfile::TempDir;

fn respmodel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_respmodel"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn respmodel")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_phantom(n_phases: usize) -> PhantomConfig {
    PhantomConfig {
        dims: [32; 3],
        spacing: 4.0,
        n_phases,
        ..PhantomConfig::default()
    }
}

fn fast_reg(base: RegistrationConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(RegistrationConfig {
        levels: 2,
        iters_per_level: 30,
        ..base
    })
    .unwrap();
    v.as_object_mut().unwrap().remove("sliding_mask");
    v
}

/// Config for a 3-patient, 4-phase population at 32³ with short registrations.
fn write_fast_config(dir: &Path) -> PathBuf {
    let m = |id: &str, t: [f64; 3], scale: f64, peak: f64| PopulationMember {
        id: id.into(),
        translation: t,
        scale,
        peak_displacement: peak,
    };
    let pop = PopulationConfig {
        base: small_phantom(4),
        members: vec![
            m("a", [0.0, 0.0, 0.0], 1.0, 3.0),
            m("b", [2.0, 0.0, 0.0], 1.05, 4.0),
            m("c", [0.0, -2.0, 2.0], 0.95, 2.0),
        ],
    };
    let cfg = json!({
        "resolution": 32,
        "intra": fast_reg(RegistrationConfig::intra_default()),
        "inter": fast_reg(RegistrationConfig::inter_default()),
        "population": pop,
        "signal": { "amp_range": [0.0, 1200.0], "period_mean": 4.0, "period_jitter": 0.15,
                    "amp_jitter": 0.2, "seed": 0, "duration": 8.0, "dt": 0.5 }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn files_equal(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let (pa, pb) = (a.join(&n), b.join(&n));
        if pa.is_dir() {
            files_equal(&pa, &pb);
        } else {
            assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap(), "{}", pa.display());
        }
    }
}

#[test]
fn missing_dataset_exits_2_and_names_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere").join("dataset.json");
    let o = respmodel(&["fit", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_4() {
    assert_eq!(respmodel(&["frobnicate"]).status.code(), Some(4));
    let o = respmodel(&["phantom", "--out", "/tmp/x", "--resolution", "48"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("power of two"));
    assert_eq!(respmodel(&["--help"]).status.code(), Some(0));
}

#[test]
fn mismatched_phase_counts_exit_4() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    generate(&small_phantom(4)).unwrap().save(&a).unwrap();
    generate(&small_phantom(3)).unwrap().save(&b).unwrap();
    let o = respmodel(&["atlas", s(&a), s(&b), "--resolution", "32", "--out", s(&tmp.path().join("atlas"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("phase"));
}

fn zero_model_setup(tmp: &Path) -> (PathBuf, PathBuf) {
    let truth = generate(&small_phantom(3)).unwrap();
    let image = tmp.join("ref.rvf");
    rvf::write_volume(&image, truth.ref_image()).unwrap();
    let model = tmp.join("model");
    MotionModel::zero(truth.ref_image().meta.clone()).save(&model).unwrap();
    (model, image)
}

#[test]
fn zero_model_frames_equal_reference() {
    let tmp = TempDir::new().unwrap();
    let (model, image) = zero_model_setup(tmp.path());
    let out = tmp.path().join("frames");
    let o = respmodel(&["animate", s(&model), s(&image), "--simulate", "--frames", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reference = rvf::read_volume(&image).unwrap();
    for k in 0..4 {
        let f = rvf::read_volume(out.join(format!("frame_{k:04}.rvf"))).unwrap();
        assert_eq!(f.values, reference.values);
    }
    assert!(!out.join("frame_0004.rvf").exists());
}

#[test]
fn simulate_with_seed_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let truth = generate(&small_phantom(10)).unwrap();
    let image = tmp.path().join("ref.rvf");
    rvf::write_volume(&image, truth.ref_image()).unwrap();
    let model_dir = tmp.path().join("model");
    truth.true_motion_set().fit_model().unwrap().0.save(&model_dir).unwrap();

    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = respmodel(&[
            "animate", s(&model_dir), s(&image), "--simulate", "--seed", seed, "--frames", "3", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "7");
    let b = run("b", "7");
    files_equal(&a, &b);
    let c = run("c", "8");
    assert_ne!(fs::read(a.join("frames.csv")).unwrap(), fs::read(c.join("frames.csv")).unwrap());
}

#[test]
fn transfer_beyond_resampling_range_exits_4() {
    let tmp = TempDir::new().unwrap();
    let truth = generate(&small_phantom(3)).unwrap();
    let motion = truth.true_motion_set();
    let atlas = respmodel::atlas::build_mean_atlas(&[motion], "phantom", &RegistrationConfig::inter_default())
        .unwrap();
    let atlas_dir = tmp.path().join("atlas");
    atlas.save(&atlas_dir).unwrap();

    let huge = GridMeta::centered([32; 3], 12.0).unwrap();
    let image = tmp.path().join("huge.rvf");
    rvf::write_volume(&image, &respmodel::ScalarVolume::constant(huge, 1.0)).unwrap();
    let o = respmodel(&["transfer", s(&atlas_dir), s(&image), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn phantom_is_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_fast_config(tmp.path());
    for name in ["p1", "p2"] {
        let o = respmodel(&["phantom", "--config", s(&cfg), "--seed", "3", "--out", s(&tmp.path().join(name))]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    files_equal(&tmp.path().join("p1"), &tmp.path().join("p2"));
    assert!(tmp.path().join("p1/b/truth/phantom.json").exists());
}

/// phantom → fit → atlas → transfer → animate → evaluate, as in the README script.
#[test]
fn end_to_end_pipeline() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let cfg = write_fast_config(t);
    let run = |args: &[&str]| {
        let mut all = vec!["--config", s(&cfg)];
        all.extend_from_slice(args);
        let o = respmodel(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    let pop = t.join("pop");
    run(&["phantom", "--out", s(&pop)]);

    let fit = t.join("fit_a");
    run(&["fit", s(&pop.join("a")), "--out", s(&fit)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["phases"].as_array().unwrap().len(), 4);
    assert!(fit.join("model/model.json").exists());

    let atlas = t.join("atlas");
    run(&["atlas", s(&pop.join("a")), s(&pop.join("b")), "--reference", "a", "--out", s(&atlas)]);
    assert!(atlas.join("atlas.json").exists());

    let transfer = t.join("transfer");
    run(&["transfer", s(&atlas), s(&pop.join("c/phase_00.rvf")), "--out", s(&transfer)]);
    assert!(transfer.join("atlas_to_new.rvf").exists());

    let frames = t.join("frames");
    run(&[
        "animate", s(&transfer.join("model")), s(&pop.join("c/phase_00.rvf")), "--signal", s(&transfer.join("signal.csv")),
        "--out", s(&frames),
    ]);
    assert!(frames.join("frame_0003.rvf").exists());

    let eval = t.join("eval");
    let o = run(&["evaluate", s(&pop), "--out", s(&eval)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("liver"));
    let dice: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("dice.json")).unwrap()).unwrap();
    assert_eq!(dice["folds"].as_array().unwrap().len(), 3);
}
