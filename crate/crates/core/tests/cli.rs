//! End-to-end runs of the command-line binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use derain_cyclegan::data::{load_paired, DatasetLayout, PAIRED_TEST_DIR};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_derain-cyclegan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_MODEL: [&str; 10] = [
    "--set",
    "model.uarse_stages=2",
    "--set",
    "model.uarse_width=4",
    "--set",
    "model.generator_width=4",
    "--set",
    "model.discriminator_width=4",
    "--set",
    "crop_size=24",
];

fn synth(out: &Path) {
    let o = run(&["synth-data", "--out", s(out), "--size", "32", "--train-per-domain", "3", "--test-pairs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args =
        vec!["train", "--data", s(data), "--out", s(out), "--set", "epochs=2", "--set", "checkpoint_interval=1"];
    args.extend(TINY_MODEL);
    args.extend(extra);
    run(&args)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_snapshot(dir: &Path) {
    let text = std::fs::read_to_string(dir.join("effective-config.toml")).unwrap();
    assert!(text.starts_with(&format!("# tool_version = \"{}\"", env!("CARGO_PKG_VERSION"))), "{text}");
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["synth-data", "--out", s(&out), "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("run");
    let o = train(&data, &out, &["--set", "losses.lambda_nope=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda_nope"));
    assert!(!out.exists());
    let o = train(&data, &out, &["--losses", "base+xyz"]);
    assert_eq!(o.status.code(), Some(1));
    let o = train(&tmp.path().join("missing"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not an archive").unwrap();
    let png = tmp.path().join("x.png");
    derain_cyclegan::imaging::write_png(&png, &derain_cyclegan::data::procedural_scene(3, 16, 16, 0)).unwrap();
    let o = run(&["derain", "--checkpoint", s(&ckpt), "--input", s(&png), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_train_eval_derain_rainmake_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    assert_snapshot(&data);

    let run_dir = tmp.path().join("run");
    let o = train(&data, &run_dir, &["--losses", "total"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_snapshot(&run_dir);
    let ckpt = run_dir.join("final.ckpt");
    assert!(ckpt.exists() && run_dir.join("checkpoints/epoch-0001.ckpt").exists());
    let log = std::fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,lr,l_adv,l_att,l_cc,l_p,l_gmm,l_r,total");
    assert_eq!(log.lines().count(), 1 + 6);

    let eval_dir = tmp.path().join("eval");
    let test = data.join(PAIRED_TEST_DIR);
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&test), "--out", s(&eval_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_snapshot(&eval_dir);
    let csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("filename,psnr_db,ssim\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
    let o = run(&["eval", "--data", s(&test), "--out", s(&tmp.path().join("eval_base")), "--luma"]);
    assert!(o.status.success());

    let derain_dir = tmp.path().join("derained");
    let input = test.join("rain/0000.png");
    let o = run(&["derain", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&derain_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = files_under(&derain_dir);
    assert_eq!(files, [PathBuf::from("0000_derained.png"), PathBuf::from("0000_mask.png")]);
    let bytes = std::fs::read(derain_dir.join("0000_derained.png")).unwrap();
    let needle = b"tool_version";
    assert!(bytes.windows(needle.len()).any(|w| w == needle));

    let made = tmp.path().join("made");
    let o = run(&["rainmake", "--checkpoint", s(&ckpt), "--clean", s(&data.join("norain")), "--out", s(&made)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_snapshot(&made);
    assert_eq!(load_paired(&DatasetLayout::new(&made)).unwrap().len(), 3);
}

#[test]
fn identical_effective_configs_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a);
    synth(&b);
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }

    let (ra, rb) = (tmp.path().join("ra"), tmp.path().join("rb"));
    assert!(train(&a, &ra, &[]).status.success());
    assert!(train(&a, &rb, &[]).status.success());
    let files = files_under(&ra);
    assert_eq!(files, files_under(&rb));
    for f in &files {
        assert_eq!(std::fs::read(ra.join(f)).unwrap(), std::fs::read(rb.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn resume_from_epoch_checkpoint_reproduces_final_state() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let full = tmp.path().join("full");
    assert!(train(&data, &full, &[]).status.success());

    let part = tmp.path().join("part");
    assert!(train(&data, &part, &[]).status.success());
    let ckpt = part.join("checkpoints/epoch-0001.ckpt");
    let o = run(&["train", "--data", s(&data), "--out", s(&part), "--resume", s(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["final.ckpt", "train_log.csv", "gmm_log.csv", "effective-config.toml"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(part.join(f)).unwrap(), "{f}");
    }
    let o = run(&["train", "--data", s(&data), "--out", s(&part), "--resume", s(&ckpt), "--set", "epochs=3"]);
    assert_eq!(o.status.code(), Some(1));
}
