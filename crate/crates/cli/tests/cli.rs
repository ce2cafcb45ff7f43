use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vidpred::data::{write_flo, Pgm};
use vidpred::flow::FlowField;

fn vidpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidpred"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vidpred")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ramp_pgm(path: &Path, w: usize, h: usize) -> Pgm {
    let pgm = Pgm {
        width: w,
        height: h,
        maxval: 255,
        data: (0..w * h).map(|i| ((i * 37) % 256) as u16).collect(),
    };
    pgm.write(path).unwrap();
    pgm
}

#[test]
fn params_prints_total_then_breakdown() {
    for (arch, total) in [
        ("ae-convlstm-flow", 1_035_067),
        ("ae-convlstm", 1_256_305),
        ("ae-conv", 109_073),
        ("ae-fclstm", 45_110_833),
    ] {
        let o = vidpred(&["params", "--arch", arch]);
        assert!(o.status.success());
        let text = stdout(&o);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().trim(), total.to_string(), "{arch}");
        let parts: usize = lines.map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(parts, total, "{arch} breakdown");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(vidpred(&["params", "--arch", "gru"]).status.code(), Some(1));
    assert_eq!(vidpred(&["gradcheck", "--module", "gru"]).status.code(), Some(1));
    assert_eq!(vidpred(&["warp"]).status.code(), Some(1));
    assert_eq!(vidpred(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.mmsq");
    let o = vidpred(&["predict", "--ckpt", p(&missing), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.mmsq"));
}

#[test]
fn gradcheck_single_module() {
    let o = vidpred(&["gradcheck", "--module", "linear"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().starts_with("PASS linear"));
    assert!(text.contains("1 probes, 0 failed"));
}

#[test]
fn warp_zero_and_shift() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.pgm");
    let pgm = ramp_pgm(&src, 9, 7);

    let out = dir.path().join("zero.pgm");
    let o = vidpred(&["warp", "--image", p(&src), "--flow", "zero", "--out", p(&out), "--target", p(&src)]);
    assert!(o.status.success());
    assert_eq!(Pgm::read(&out).unwrap(), pgm);
    assert!(stdout(&o).contains("per-pixel warp error 0.000000"));

    let out = dir.path().join("shift.pgm");
    assert!(vidpred(&["warp", "--image", p(&src), "--flow", "shift:2,-1", "--out", p(&out)]).status.success());
    let shifted = Pgm::read(&out).unwrap();
    for y in 1..7 {
        for x in 0..7 {
            assert_eq!(shifted.data[y * 9 + x], pgm.data[(y - 1) * 9 + x + 2]);
        }
    }

    let flo = dir.path().join("f.flo");
    write_flo(&flo, &FlowField::constant(2.0, -1.0, 7, 9)).unwrap();
    let out2 = dir.path().join("flo.pgm");
    assert!(vidpred(&["warp", "--image", p(&src), "--flow", p(&flo), "--out", p(&out2)]).status.success());
    assert_eq!(Pgm::read(&out2).unwrap(), shifted);

    write_flo(&flo, &FlowField::constant(0.0, 0.0, 3, 3)).unwrap();
    assert_eq!(vidpred(&["warp", "--image", p(&src), "--flow", p(&flo), "--out", p(&out2)]).status.code(), Some(2));
    assert_eq!(vidpred(&["warp", "--image", p(&src), "--flow", "shift:1", "--out", p(&out2)]).status.code(), Some(1));
}

#[test]
fn generate_train_predict_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.mmsq");
    let o = vidpred(&[
        "gen-mnist", "--out", p(&data), "--n", "4", "--seed", "5", "--canvas", "32", "--seq-len", "12", "--speed-min", "1",
        "--speed-max", "2",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("wrote 4 sequences of 12x32x32"));

    let run = dir.path().join("run");
    let base = ["train", "--arch", "ae-conv", "--data", p(&data), "--val", p(&data), "--batch", "2", "--out", p(&run)];
    let o = vidpred(&[&base[..], &["--epochs", "2"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,lr,train_loss,val_loss,data_term,smooth_term"));
    let validation = fs::read_to_string(run.join("validation.csv")).unwrap();
    assert_eq!(validation.lines().count(), 3);

    let ckpt = run.join("checkpoint.ckpt");
    let o = vidpred(&[&base[..], &["--epochs", "3", "--resume", p(&ckpt)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().last().unwrap().starts_with("3,"));

    let wrong = ["train", "--arch", "ae-convlstm", "--data", p(&data), "--val", p(&data), "--out", p(&run)];
    assert_eq!(vidpred(&[&wrong[..], &["--resume", p(&ckpt)]].concat()).status.code(), Some(1));

    let pred = dir.path().join("pred");
    let o = vidpred(&["predict", "--ckpt", p(&ckpt), "--data", p(&data), "--index", "1", "--out", p(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ground_truth.png", "predicted.png", "current.png"] {
        assert!(pred.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("per-pixel loss"));
    let o = vidpred(&["predict", "--ckpt", p(&ckpt), "--data", p(&data), "--index", "9", "--out", p(&pred)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flow_model_predicts_a_flow_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.mmsq");
    assert_eq!(vidpred(&["gen-mnist", "--out", p(&data), "--n", "2", "--canvas", "16"]).status.code(), Some(1));
    let o = vidpred(&[
        "gen-mnist", "--out", p(&data), "--n", "2", "--canvas", "16", "--glyph-downsample", "4", "--speed-min", "0.5",
        "--speed-max", "1.25",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let o = vidpred(&[
        "train", "--arch", "ae-convlstm-flow", "--data", p(&data), "--val", p(&data), "--epochs", "1", "--batch", "2", "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(run.join("validation.csv")).unwrap();
    let row: Vec<&str> = header.lines().nth(1).unwrap().split(',').collect();
    assert!(row[3].parse::<f64>().unwrap().is_finite());

    let pred = dir.path().join("pred");
    let o = vidpred(&["predict", "--ckpt", p(&run.join("checkpoint.ckpt")), "--data", p(&data), "--out", p(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean flow magnitude"));
    let img = fs::read(pred.join("flow.png")).unwrap();
    assert_eq!(&img[1..4], b"PNG");
}
