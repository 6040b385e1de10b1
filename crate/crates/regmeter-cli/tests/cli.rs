//! End-to-end tests of the `regmeter` binary: exit codes, printed values,
//! and the simulate -> calibrate -> meter -> collect workflow over real
//! files.

use std::path::Path;
use std::process::{Command, Output};

fn regmeter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regmeter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_schedule(path: &Path) {
    std::fs::write(
        path,
        r#"{"boundaries":[100,200],"rates":[1,2,3],"mode":"telescopic","warning_margin":0.1}"#,
    )
    .unwrap();
}

fn write_training_csv(path: &Path) {
    let mut text = String::from("sensor_volts,ref_amps\n");
    for k in 0..12 {
        let x = 0.05 + (0.85 - 0.05) * k as f64 / 11.0;
        let i = 0.9188 * x.powi(3) - 1.406 * x.powi(2) + 10.86 * x - 0.08648;
        text.push_str(&format!("{x},{i}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn help_exits_zero_on_every_subcommand() {
    let subcommands: &[&[&str]] = &[
        &["--help"],
        &["simulate", "--help"],
        &["calibrate", "--help"],
        &["calibrate", "fit", "--help"],
        &["calibrate", "eval", "--help"],
        &["meter", "--help"],
        &["meter", "run", "--help"],
        &["compare", "--help"],
        &["bill", "--help"],
        &["dr-status", "--help"],
        &["project", "--help"],
        &["frame", "--help"],
        &["frame", "encode", "--help"],
        &["frame", "decode", "--help"],
        &["collect", "--help"],
    ];
    for args in subcommands {
        let output = regmeter(args);
        assert!(
            output.status.success(),
            "{args:?} exited {:?}",
            output.status.code()
        );
        assert!(stdout(&output).contains("Usage"), "{args:?} has no usage text");
    }
    // Documented flags show up in the help text.
    let sim_help = stdout(&regmeter(&["simulate", "--help"]));
    for flag in ["--scenario", "--irms", "--minutes", "--decimate", "--seed", "--out"] {
        assert!(sim_help.contains(flag), "simulate help missing {flag}");
    }
    let run_help = stdout(&regmeter(&["meter", "run", "--help"]));
    for flag in ["--no-regression", "--model", "--state", "--emit-frames", "--schedule"] {
        assert!(run_help.contains(flag), "meter run help missing {flag}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let unknown = regmeter(&["simulate", "--banana"]);
    assert_eq!(unknown.status.code(), Some(2));
    let conflict = regmeter(&[
        "meter", "run", "--samples", "x.csv", "--model", "m.json", "--no-regression",
    ]);
    assert_eq!(conflict.status.code(), Some(2));
    let missing = regmeter(&["frame", "decode"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn project_prints_monthly_figures() {
    let output = regmeter(&["project", "--wh-5min", "31.61"]);
    assert!(output.status.success());
    assert_eq!(stdout(&output).trim(), "282214.08");

    let output = regmeter(&["project", "--wh-5min", "32.1"]);
    assert_eq!(stdout(&output).trim(), "286588.80");

    let output = regmeter(&["project", "--wh-5min", "-1"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn frame_decode_short_frame_is_a_domain_error() {
    let output = regmeter(&["frame", "decode", "--hex", "534d01"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("short-frame"));
}

#[test]
fn frame_encode_decode_round_trip() {
    let output = regmeter(&[
        "frame", "encode", "--meter-id", "9", "--timestamp", "1700000000", "--vrms-mv",
        "230000", "--irms-ma", "8000", "--pf-scaled", "10000", "--energy-mwh", "31610",
        "--dr-flag", "1",
    ]);
    assert!(output.status.success());
    let hex = stdout(&output).trim().to_string();
    assert_eq!(hex.len(), 88);

    let decoded = regmeter(&["frame", "decode", "--hex", &hex]);
    assert!(decoded.status.success());
    let text = stdout(&decoded);
    assert!(text.contains("\"meter_id\": 9"));
    assert!(text.contains("\"energy_mwh\": 31610"));
    assert!(text.contains("\"dr_flag\": 1"));

    // Any corrupted nibble must be rejected.
    let mut corrupted = hex.clone();
    corrupted.replace_range(40..41, if &hex[40..41] == "0" { "1" } else { "0" });
    let rejected = regmeter(&["frame", "decode", "--hex", &corrupted]);
    assert_eq!(rejected.status.code(), Some(1));
}

#[test]
fn bill_matches_worked_example_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = dir.path().join("schedule.json");
    write_schedule(&schedule);

    let output = regmeter(&["bill", "--units", "250", "--schedule", schedule.to_str().unwrap()]);
    assert!(output.status.success());
    let text = stdout(&output);
    assert!(text.contains("450.00"), "telescopic total missing: {text}");

    let output = regmeter(&[
        "bill", "--units", "250", "--schedule", schedule.to_str().unwrap(), "--mode", "flat-slab",
    ]);
    assert!(stdout(&output).contains("750.00"));

    let output = regmeter(&["dr-status", "--units", "95", "--schedule", schedule.to_str().unwrap()]);
    assert_eq!(stdout(&output).trim(), "warning(100)");
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let output = regmeter(&[
            "simulate", "--scenario", "type-b", "--irms", "6", "--samples", "1200",
            "--noise-mv", "4", "--seed", seed, "--out", path.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", stderr(&output));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
}

#[test]
fn simulate_decimate_reduces_rows_and_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let output = regmeter(&[
        "simulate", "--minutes", "0.01", "--decimate", "5", "--out", out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let text = std::fs::read_to_string(&out).unwrap();
    // 0.01 min = 0.6 s at 500 us/sample -> 1200 rows plus header.
    assert_eq!(text.lines().count(), 1201);
    assert!(text.lines().nth(1).unwrap().ends_with(",500"));
}

#[test]
fn full_workflow_from_simulation_to_collector() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let arg = |p: &Path| p.to_str().unwrap().to_string();

    let samples = path("samples.csv");
    let training = path("training.csv");
    let model = path("model.json");
    let schedule = path("schedule.json");
    let register = path("meter.reg");
    let log = path("measurements.csv");
    let frames = path("frames.bin");
    let log_dir = path("collector-logs");

    write_training_csv(&training);
    write_schedule(&schedule);

    // Nonlinear sensor at 8 A, two seconds of samples.
    let output = regmeter(&[
        "simulate", "--scenario", "type-a", "--sensor", "nonlinear", "--irms", "8",
        "--samples", "20000", "--out", &arg(&samples),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));

    let output = regmeter(&[
        "calibrate", "fit", "--training", &arg(&training), "--out", &arg(&model),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));

    let output = regmeter(&[
        "meter", "run", "--samples", &arg(&samples), "--model", &arg(&model),
        "--state", &arg(&register), "--log", &arg(&log), "--emit-frames", &arg(&frames),
        "--meter-id", "11", "--schedule", &arg(&schedule),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let summary = stdout(&output);
    assert!(summary.contains("processed 100 windows"), "{summary}");
    // 230 V x 8 A for 2 s is just over one watt-hour.
    assert!(summary.contains("energy 1.0"), "{summary}");

    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 101);
    assert!(log_text.starts_with("t_hours,v_rms,i_rms,p,s,pf,energy_wh"));

    // The register survives and matches a fresh run's resume point.
    let register_text = std::fs::read_to_string(&register).unwrap();
    assert_eq!(register_text.lines().count(), 2);

    let output = regmeter(&[
        "collect", "--input", &arg(&frames), "--log-dir", &arg(&log_dir),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("accepted 100 rejected 0"));
    let meter_log = std::fs::read_to_string(log_dir.join("meter-11.jsonl")).unwrap();
    assert_eq!(meter_log.lines().count(), 100);

    // The regression model reads ~8 A where the fixed path reads low.
    let output = regmeter(&[
        "compare", "--samples", &arg(&samples), "--model", &arg(&model),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let report = stdout(&output);
    assert!(report.contains("projected 31-day"), "{report}");
}

#[test]
fn meter_run_resumes_from_persisted_energy() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let register = dir.path().join("meter.reg");
    let output = regmeter(&[
        "simulate", "--samples", "2000", "--out", samples.to_str().unwrap(),
    ]);
    assert!(output.status.success());

    let run = |args: &[&str]| {
        let output = regmeter(args);
        assert!(output.status.success(), "{}", stderr(&output));
        stdout(&output)
    };
    let first = run(&[
        "meter", "run", "--samples", samples.to_str().unwrap(), "--no-regression",
        "--state", register.to_str().unwrap(),
    ]);
    let second = run(&[
        "meter", "run", "--samples", samples.to_str().unwrap(), "--no-regression",
        "--state", register.to_str().unwrap(),
    ]);
    let energy = |text: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix("energy "))
            .and_then(|l| l.strip_suffix(" Wh"))
            .unwrap()
            .parse()
            .unwrap()
    };
    let first_wh = energy(&first);
    let second_wh = energy(&second);
    assert!(
        (second_wh - 2.0 * first_wh).abs() < 1e-6,
        "expected doubling: {first_wh} then {second_wh}"
    );
}

#[test]
fn corrupt_register_is_fatal_not_silent() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let register = dir.path().join("meter.reg");
    assert!(regmeter(&["simulate", "--samples", "400", "--out", samples.to_str().unwrap()])
        .status
        .success());
    std::fs::write(&register, "31.61\n0000\n").unwrap();
    let output = regmeter(&[
        "meter", "run", "--samples", samples.to_str().unwrap(), "--no-regression",
        "--state", register.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("corrupt register"));
}
