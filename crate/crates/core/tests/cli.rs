use std::collections::BTreeMap;
use std::path::Path;

use mcuplan::cli::{cmd_plan, main_with_args, RunConfig, EXIT_VERIFY_FAILED};
use mcuplan::graph::Resolution;
use mcuplan::memory::DeviceSpec;
use mcuplan::DType;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("mcuplan").chain(args.iter().copied()))
}

fn config(out: &Path, cuts: &str) -> RunConfig {
    RunConfig {
        model: "builtin:toy-hggd".into(),
        device: "builtin:gap9".into(),
        cuts: cuts.into(),
        dtype: DType::Int8,
        input_res: Resolution::new(160, 320),
        seed: 0,
        out: out.to_path_buf(),
    }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn every_auto_stage_fits_flash() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_plan(&config(dir.path(), "auto:4")).unwrap();
    assert_eq!(outcome.optimised.stages.len(), 4);
    for s in &outcome.optimised.stages {
        assert!(s.flash_bytes <= 2_097_152, "{}: {} bytes", s.name, s.flash_bytes);
        assert!(!s.exceeds_flash);
    }
}

#[test]
fn original_configuration_needs_more_working_memory() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_plan(&config(dir.path(), "preset")).unwrap();
    let original = outcome.original.expect("float32 at 640x360 fits the device");
    for (o, n) in original.stages.iter().zip(&outcome.optimised.stages) {
        assert_eq!(o.name, n.name);
        assert!(o.working_bytes > n.working_bytes, "{}: {} vs {}", o.name, o.working_bytes, n.working_bytes);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(&["plan", "--out", out]), 0);
        assert_eq!(run(&["simulate", "--mode", "pipelined", "--noise-ms", "0.5", "--seed", "3", "--out", out]), 0);
    }
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    for name in [
        "plan.json",
        "memory_report.json",
        "memory_report.csv",
        "memory_report.md",
        "summary.json",
        "bootstrap.json",
        "events.csv",
    ] {
        assert!(fa.contains_key(name), "{name} not written");
    }
    assert_eq!(fa, fb);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["simulate", "--out", out]), 0);
    assert_eq!(run(&["simulate", "--frames", "0", "--out", out]), 1);
    assert_eq!(run(&["plan", "--dtype", "int4", "--out", out]), 1);
    assert_eq!(run(&["no-such-command"]), 1);

    let tiny = DeviceSpec { l2_bytes: 1024, ram_bytes: 2048, ..DeviceSpec::gap9() };
    let dev_path = dir.path().join("tiny.json");
    std::fs::write(&dev_path, serde_json::to_string(&tiny).unwrap()).unwrap();
    assert_eq!(run(&["plan", "--device", dev_path.to_str().unwrap(), "--out", out]), 2);

    let verify = ["verify", "--cuts", "preset", "--input-res", "64x32", "--trials", "2", "--out", out];
    assert_eq!(run(&verify), 0);
    let corrupt: Vec<&str> = verify.iter().copied().chain(["--corrupt", "a03_conv"]).collect();
    assert_eq!(run(&corrupt), EXIT_VERIFY_FAILED);
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent-model.json");
    let mut cfg = config(dir.path(), "auto:4");
    cfg.model = missing.to_str().unwrap().into();
    let err = cmd_plan(&cfg).unwrap_err();
    assert!(err.to_string().contains(missing.to_str().unwrap()), "{err}");
    assert_eq!(err.exit_code(), 1);
}
