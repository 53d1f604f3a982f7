use std::path::Path;
use std::process::{Command, Output};

fn pwoc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwoc")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "d_max = 1\nbottom_up_channels = 4, 4, 4, 4, 4, 4\npyramid_channels = 4\n\
                    occ_channels = 4, 1\nsf_channels = 4, 4\nctx_channels = 4, 4\nctx_dilations = 1, 1\n";

#[test]
fn generate_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let o = pwoc(args, d);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["generate", "--out", "data", "--count", "2", "--seed", "3", "--width", "64", "--height", "64", "--objects", "1"]);
    ok(&["train", "--data", "data", "--out", "m.ckpt", "--steps", "2", "--seed", "1", "--config", "tiny.cfg"]);
    let log = std::fs::read_to_string(d.join("m.ckpt.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,loss,l2,l3,l4,l5,l6");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));

    let s = "data/sample_00000/";
    let frames: Vec<String> = ["left_t", "right_t", "left_t1", "right_t1"].iter().map(|f| format!("{s}{f}.ppm")).collect();
    let mut args = vec!["infer", "--ckpt", "m.ckpt", "--frames"];
    args.extend(frames.iter().map(String::as_str));
    args.extend(["--out-prefix", "p"]);
    ok(&args);
    for f in ["p.flow.flo", "p.d0.pfm", "p.d1.pfm", "p.occ_rt.pgm", "p.occ_lt1.pgm", "p.occ_rt1.pgm", "p.viz.ppm"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let occ = std::fs::read(d.join("p.occ_rt.pgm")).unwrap();
    assert!(occ.starts_with(b"P5\n64 64\n255\n"));

    let out = stdout(&ok(&["eval", "--pred-prefix", "p", "--gt", "data/sample_00000"]));
    assert!(out.lines().any(|l| l.starts_with("epe_flow=")), "{out}");
    ok(&["viz", "--flow", "p.flow.flo", "--out", "v.ppm"]);
}

#[test]
fn eval_of_ground_truth_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = pwoc(&["generate", "--out", "data", "--count", "1", "--width", "64", "--height", "64"], d);
    assert!(o.status.success());
    let s = d.join("data/sample_00000");
    for (from, to) in [("flow.flo", "gt.flow.flo"), ("d0.pfm", "gt.d0.pfm"), ("d1.pfm", "gt.d1.pfm")] {
        std::fs::copy(s.join(from), d.join(to)).unwrap();
    }
    let o = pwoc(&["eval", "--pred-prefix", "gt", "--gt", "data/sample_00000"], d);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "epe_flow=0"), "{out}");
    assert!(out.lines().any(|l| l == "sf=0"), "{out}");
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(pwoc(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(pwoc(&["train", "--bogus"], d).status.code(), Some(2));
    assert_eq!(pwoc(&[], d).status.code(), Some(2));
    let o = pwoc(&["viz", "--flow", "missing.flo", "--out", "x.ppm"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.flo"));
    assert_eq!(pwoc(&["generate", "--out", "g", "--count", "1", "--width", "100"], d).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pwoc(&["gradcheck"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bench_reports_timings() {
    let dir = tempfile::tempdir().unwrap();
    for op in ["conv2d", "costvol1d", "costvol2d", "warp2d"] {
        let o = pwoc(&["bench", "--op", op, "--size", "16x32", "--channels", "4", "--iters", "2"], dir.path());
        assert!(o.status.success());
        assert!(stdout(&o).contains("mean") && stdout(&o).contains("min"));
    }
}
