use std::path::PathBuf;
use std::process::Command;

use semiflow::data::{synthesize, SynthConfig};

/// `cargo test` builds only the rlib, so the static archive is built here.
fn staticlib() -> PathBuf {
    let status = Command::new(env!("CARGO"))
        .args(["build", "--offline", "--quiet", "--lib", "-p", "semiflow-ffi"])
        .status()
        .expect("cargo runs");
    assert!(status.success());
    let exe = std::env::current_exe().unwrap();
    let target = exe.ancestors().nth(3).unwrap();
    target.join("debug").join("libsemiflow_ffi.a")
}

#[test]
fn c_program_links_against_the_header_and_library() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = staticlib();
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler runs");
    assert!(status.success());

    let cfg = SynthConfig {
        base_min: 6,
        base_max: 8,
        ..SynthConfig::default()
    };
    let base = synthesize(&cfg, 0).unwrap().0.base.to_json();
    let out = Command::new(&exe).arg(base).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}{stdout}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("vertices=2"), "{stdout}");
    assert!(stdout.contains("n_max="), "{stdout}");
}
