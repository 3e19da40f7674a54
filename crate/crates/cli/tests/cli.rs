use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qdistill::config::ExperimentConfig;
use qdistill::correlator::correlate;
use qdistill::distill::distill;
use qdistill::export::encode_csv;
use qdistill::simulate::simulate_stack;
use qdistill::stack::FrameStack;
use tempfile::TempDir;

const MIXED: &str = "\
[scene]
width = 16
height = 12
pair_rate = 300
classical_photons = 1.0

[run]
frames = 400
seed = 5
window_radius = 4
";

fn qdistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdistill")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qdistill(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    qdistill(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Simulates and correlates `text`, returning (config, stack, correlation).
fn pipeline(dir: &TempDir, text: &str) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = config(dir, "exp.toml", text);
    let stack = dir.path().join("stack.qdif");
    let corr = dir.path().join("stack.qdcr");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&stack)]);
    ok(&["correlate", s(&stack), "--window", "4", "--out", s(&corr)]);
    (cfg, stack, corr)
}

fn report_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .to_string()
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["report", "--out", s(&out)]), 1);
    assert_eq!(code(&["report", "nowhere.qdif", "--out", s(&out)]), 1);
    assert_eq!(code(&["correlate", "nowhere.qdif", "--window", "0", "--out", s(&out)]), 1);

    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a stack at all").unwrap();
    assert_eq!(code(&["report", s(&junk), "--out", s(&out)]), 2);
    assert_eq!(code(&["correlate", s(&junk), "--out", s(&out)]), 2);

    let one = config(&dir, "one.toml", "[scene]\nwidth = 4\nheight = 4\n[run]\nframes = 1\n");
    let stack = dir.path().join("one.qdif");
    assert_eq!(code(&["simulate", "--config", s(&one), "--out", s(&stack)]), 2);
    let unknown = config(&dir, "bad.toml", "[scene]\nwidth = 4\nheight = 4\ncolour = 1\n[run]\nframes = 10\n");
    assert_eq!(code(&["simulate", "--config", s(&unknown), "--out", s(&stack)]), 2);
}

#[test]
fn truncated_stack_names_the_frame() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "exp.toml", MIXED);
    let stack = dir.path().join("stack.qdif");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&stack)]);
    let bytes = fs::read(&stack).unwrap();
    let frame = 16 * 12 * 2;
    fs::write(&stack, &bytes[..bytes.len() - frame - 7]).unwrap();
    let out = qdistill(&["correlate", s(&stack), "--out", s(&dir.path().join("c.qdcr"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frame 398"), "{err}");
}

#[test]
fn outputs_are_reproducible_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "exp.toml", MIXED);
    let (a, b) = (dir.path().join("a.qdif"), dir.path().join("b.qdif"));
    ok(&["--threads", "1", "simulate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["--threads", "3", "simulate", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let other = dir.path().join("c.qdif");
    ok(&["simulate", "--config", s(&cfg), "--seed", "6", "--out", s(&other)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&other).unwrap());

    let (ca, cb) = (dir.path().join("a.qdcr"), dir.path().join("b.qdcr"));
    ok(&["--threads", "1", "correlate", s(&a), "--out", s(&ca)]);
    ok(&["--threads", "2", "correlate", s(&a), "--out", s(&cb)]);
    assert_eq!(fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
}

#[test]
fn cli_matches_library_pipeline() {
    let dir = TempDir::new().unwrap();
    let (cfg_path, stack, corr) = pipeline(&dir, MIXED);
    let out = dir.path().join("distilled");
    ok(&[
        "distill",
        s(&corr),
        "--stack",
        s(&stack),
        "--config",
        s(&cfg_path),
        "--out",
        s(&out),
    ]);

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let mut frames = FrameStack::new(cfg.grid(), cfg.run.exposure_ms);
    simulate_stack(&cfg.scene, &cfg.camera, cfg.run.frames, cfg.run.seed, &mut frames).unwrap();
    let res = correlate(&mut frames.reader(), 4).unwrap();
    let d = distill(&res, cfg.camera.noise_mean, None, &cfg.run.distill_options()).unwrap();
    for (name, image) in [
        ("direct", &d.direct),
        ("quantum", &d.quantum.q),
        ("object", &d.quantum.object),
        ("classical", &d.classical.image),
    ] {
        let got = fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        assert_eq!(got, encode_csv(image), "{name}");
        assert!(out.join(format!("{name}.pgm")).is_file());
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report_value(&report, "scale"), d.classical.scale.to_string());
}

#[test]
fn distill_rejects_a_foreign_stack() {
    let dir = TempDir::new().unwrap();
    let (cfg, _, corr) = pipeline(&dir, MIXED);
    let other = dir.path().join("other.qdif");
    ok(&["simulate", "--config", s(&cfg), "--seed", "9", "--out", s(&other)]);
    let out = dir.path().join("d");
    assert_eq!(code(&["distill", s(&corr), "--stack", s(&other), "--out", s(&out)]), 2);
}

#[test]
fn report_exports_the_distilled_images() {
    let dir = TempDir::new().unwrap();
    let (cfg, stack, corr) = pipeline(&dir, MIXED);
    let distilled = dir.path().join("distilled");
    ok(&["distill", s(&corr), "--config", s(&cfg), "--out", s(&distilled)]);
    let rep = dir.path().join("report");
    let text = ok(&["report", s(&stack), s(&corr), "--config", s(&cfg), "--out", s(&rep)]);
    assert_eq!(report_value(&text, "kind"), "stack");
    assert!(text.contains("kind = correlation"));
    assert!(report_value(&text, "snr").parse::<f64>().is_ok());
    assert_eq!(
        fs::read_to_string(rep.join("0_stack_direct.csv")).unwrap(),
        fs::read_to_string(distilled.join("direct.csv")).unwrap()
    );
    assert!(rep.join("1_stack_minus.pgm").is_file());
    for name in ["direct", "quantum", "classical"] {
        for ext in ["csv", "pgm"] {
            let file = format!("{name}.{ext}");
            assert_eq!(
                fs::read(rep.join("1_stack").join(&file)).unwrap(),
                fs::read(distilled.join(&file)).unwrap(),
                "{file}"
            );
        }
    }
    assert_eq!(fs::read_to_string(rep.join("report.txt")).unwrap(), text);
}

#[test]
fn dark_scene_sits_on_the_noise_floor() {
    let dir = TempDir::new().unwrap();
    let (cfg, stack, _) = pipeline(&dir, "[scene]\nwidth = 8\nheight = 8\n[run]\nframes = 2000\n");
    let rep = dir.path().join("report");
    let text = ok(&["report", s(&stack), "--config", s(&cfg), "--out", s(&rep)]);
    // 64 pixels x 2000 frames of read noise with std 32.
    let mean: f64 = report_value(&text, "mean_above_floor").parse().unwrap();
    assert!(mean.abs() < 5.0 * 32.0 / (64.0f64 * 2000.0).sqrt(), "{mean}");
}

#[test]
fn classical_only_run_reports_no_quantum_signal() {
    let dir = TempDir::new().unwrap();
    let (cfg, stack, corr) = pipeline(
        &dir,
        "[scene]\nwidth = 12\nheight = 12\nclassical_photons = 2.0\n[run]\nframes = 1000\nwindow_radius = 4\n",
    );
    let out = dir.path().join("d");
    let text = ok(&["distill", s(&corr), "--stack", s(&stack), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(report_value(&text, "no_quantum_signal"), "true");
    assert_eq!(report_value(&text, "scale"), "0");
    assert_eq!(
        fs::read(out.join("classical.csv")).unwrap(),
        fs::read(out.join("direct.csv")).unwrap()
    );
}

#[test]
fn snr_sweep_writes_points_and_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "sweep.toml",
        "[scene]\nwidth = 12\nheight = 12\npair_rate = 400\n[camera]\ngain = 1\nnoise_std = 2\n[run]\nframes = 300\nwindow_radius = 5\n",
    );
    let out = dir.path().join("sweep");
    ok(&["snr-sweep", "--config", s(&cfg), "--ratios", "0,1,4", "--out", s(&out)]);
    let points = fs::read_to_string(out.join("points.csv")).unwrap();
    assert_eq!(points.lines().count(), 4, "{points}");
    assert!(out.join("fit.txt").is_file());
    for i in 0..3 {
        assert!(out.join(format!("minus_{i}.pgm")).is_file());
    }
    assert_eq!(code(&["snr-sweep", "--config", s(&cfg), "--ratios", "-1", "--out", s(&out)]), 1);
}
