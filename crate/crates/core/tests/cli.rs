use std::path::Path;
use std::process::{Command, Output};

use haarmap::GridField;

fn haarmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haarmap"))
        .current_dir(dir)
        .env_remove("HAARMAP_SEED")
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Trace CSV with the wall-clock column removed.
fn untimed(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(1);
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn decompose_then_reconstruct_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let f = GridField::from_fn(5, |x, y| (7.0 * x).sin() + y * y - 0.3);
    f.save(dir.path().join("f.csv")).unwrap();
    assert!(haarmap(dir.path(), &["decompose", "f.csv", "c.bin"]).status.success());
    assert!(haarmap(dir.path(), &["reconstruct", "c.bin", "g.csv"]).status.success());
    let g = GridField::load(dir.path().join("g.csv")).unwrap();
    assert!(g.max_abs_diff(&f) < 1e-12);
}

#[test]
fn truncated_decomposition_is_piecewise_constant() {
    let dir = tempfile::tempdir().unwrap();
    GridField::from_fn(4, |x, y| x + 2.0 * y).save(dir.path().join("f.bin")).unwrap();
    let o = haarmap(dir.path(), &["decompose", "f.bin", "c.bin", "--levels", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(haarmap(dir.path(), &["reconstruct", "c.bin", "g.bin"]).status.success());
    let g = GridField::load(dir.path().join("g.bin")).unwrap();
    // One level of detail leaves 2x2 constant blocks of 8x8 cells.
    assert_eq!(g.get(0, 0), g.get(7, 7));
    assert_ne!(g.get(0, 0), g.get(8, 8));
}

#[test]
fn map_writes_trace_and_field_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["--profile", "fast", "--set", "gd.max_iters=25", "--set", "gd.time_budget=1e6", "--out", out, "map", "--prior", "wavelet", "--method", "2"]
    };
    for out in ["a", "b"] {
        let o = haarmap(dir.path(), &args(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = dir.path().join("a");
    assert!(a.join("field_wavelet-m2.csv").exists());
    assert!(a.join("metadata.toml").exists());
    let trace = untimed(&a.join("trace_wavelet-m2.csv"));
    assert!(trace.starts_with("iter,I,Phi,cm_norm,grad_norm,backtracks,event"));
    assert_eq!(trace.lines().count(), 27);
    assert_eq!(trace, untimed(&dir.path().join("b/trace_wavelet-m2.csv")));
    let field = GridField::load(a.join("field_wavelet-m2.csv")).unwrap();
    assert_eq!(field.exponent(), 5);
    let coeffs = std::fs::read_to_string(a.join("coeffs_wavelet-m2.csv")).unwrap();
    assert!(coeffs.starts_with("l,j,m,k,n,value"));
    assert_eq!(coeffs.lines().count(), 1 + 64);
}

#[test]
fn map_dumps_gradient_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let o = haarmap(
        dir.path(),
        &["--profile", "fast", "--set", "gd.max_iters=2", "map", "--prior", "fourier", "--method", "1", "--dump-gradient"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let text = std::fs::read_to_string(out.join("gradient_fourier-m1.csv")).unwrap();
    assert!(text.starts_with("l,a,b,value"));
    assert!(text.lines().skip(1).any(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() != 0.0));
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_haarmap"));
        c.current_dir(dir.path()).env("RUST_LOG", "error").env_remove("HAARMAP_SEED");
        if let Some(s) = env {
            c.env("HAARMAP_SEED", s);
        }
        let mut args = vec!["--profile", "fast", "--out", "o"];
        args.extend_from_slice(extra);
        args.push("forward");
        assert!(c.args(&args).output().unwrap().status.success());
        std::fs::read_to_string(dir.path().join("o/data.csv")).unwrap()
    };
    let base = run(&["--seed", "3"], None);
    assert_eq!(run(&[], Some("3")), base);
    assert_eq!(run(&["--seed", "3"], Some("4")), base);
    assert_ne!(run(&[], Some("4")), base);
}

#[test]
fn config_errors_name_the_field_and_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[wavelet]\ndepth = 5\n[pde]\nexponent = 5\n").unwrap();
    let o = haarmap(dir.path(), &["--config", "bad.toml", "map"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("category=config field=pde.exponent"), "{}", stderr(&o));

    let o = haarmap(dir.path(), &["--set", "gd.alpha=0", "map"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("field=gd.alpha"));

    std::fs::write(dir.path().join("typo.toml"), "[gd]\nalpah = 1.0\n").unwrap();
    let o = haarmap(dir.path(), &["--config", "typo.toml", "map"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("alpah"), "{}", stderr(&o));
}

#[test]
fn override_flag_bypasses_inverse_crime_guard() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--profile", "fast", "--set", "pde.exponent=4", "--set", "gd.max_iters=2", "map"];
    assert_eq!(haarmap(dir.path(), &args).status.code(), Some(3));
    let mut with = args.to_vec();
    with.insert(0, "--allow-inverse-crime");
    let o = haarmap(dir.path(), &with);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = haarmap(dir.path(), &["decompose", "nope.csv", "c.bin"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).starts_with("error: category=io"));
}

#[test]
fn malformed_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("f.csv"), "1,2,3\n4,5,6\n7,8,9\n").unwrap();
    let o = haarmap(dir.path(), &["decompose", "f.csv", "c.bin"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: category="));
}

#[test]
fn sample_prior_writes_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    for prior in ["wavelet", "fourier"] {
        let o = haarmap(dir.path(), &["--profile", "fast", "--out", "s", "sample-prior", "--prior", prior, "--count", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        for i in 0..2 {
            let f = GridField::load(dir.path().join(format!("s/sample_{prior}_{i}.csv"))).unwrap();
            assert_eq!(f.exponent(), 5);
        }
    }
}
