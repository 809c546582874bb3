use std::path::{Path, PathBuf};
use std::process::Command;

/// Directory holding the shared library built for this test run: `deps`
/// next to the test binary, or its parent after a plain build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let has_lib = |d: &Path| {
        ["libsearchmatch_ffi.so", "libsearchmatch_ffi.dylib"]
            .iter()
            .any(|f| d.join(f).exists())
    };
    if has_lib(deps) {
        deps.to_path_buf()
    } else {
        deps.parent().unwrap().to_path_buf()
    }
}

#[test]
fn c_program_links_against_header_and_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = artifact_dir();
    assert!(lib_dir.join("libsearchmatch_ffi.so").exists() || lib_dir.join("libsearchmatch_ffi.dylib").exists());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lsearchmatch_ffi", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
