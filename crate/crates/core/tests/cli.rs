use std::process::Command;

fn bmlab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bmlab")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn list_and_describe() {
    let (code, out, _) = bmlab(&["--list"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 8);
    let (code, out, _) = bmlab(&["--describe", "slab_sharpness"]);
    assert_eq!(code, 0);
    assert!(out.contains("eps") && out.contains("power"));
    let (code, _, err) = bmlab(&["--describe", "tubes"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown experiment"));
}

#[test]
fn exit_codes() {
    let (code, out, _) = bmlab(&["--experiment", "dim_eval", "--set", "expr=prod(sl2r_cover, heis3)"]);
    assert_eq!(code, 0);
    assert!(out.lines().nth(1).unwrap().starts_with("\"prod(sl2r_cover,heis3)\",6,0,1,6,5,true"), "{out}");
    let (code, _, _) = bmlab(&["--experiment", "dim_eval", "--set", "expr=ext_lie(Z, T)"]);
    assert_eq!(code, 1);
    let (code, _, err) = bmlab(&["--experiment", "bm_check"]);
    assert_eq!(code, 2);
    assert!(err.contains("seed"));
    let (code, _, _) = bmlab(&["--experiment", "collapse", "--levels", "3", "--set", "s=0.15", "--set", "bound=1.01"]);
    assert_eq!(code, 1);
}

#[test]
fn config_file_and_outputs() {
    let dir = std::env::temp_dir().join(format!("bmlab-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("slab.cfg");
    std::fs::write(&cfg, "# affine slab\nexperiment = slab_sharpness\nlevels = 4,5\neps = 0.05\n").unwrap();
    let stem = dir.join("out/slab");
    let (code, _, _) = bmlab(&["--config", cfg.to_str().unwrap(), "--out", stem.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.join("out/slab.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("out/slab.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["eps"], "0.05");
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}
