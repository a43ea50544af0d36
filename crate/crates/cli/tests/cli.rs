use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--params",
    "toy64",
    "--set",
    "train.cdt-x.traces=3000",
    "--set",
    "train.yu-zero.traces=3000",
    "--set",
    "train.sign-a.traces=1000",
    "--set",
    "train.sign-b.traces=1000",
    "--set",
    "train.cdt-x.epochs=3",
    "--set",
    "train.yu-zero.epochs=3",
    "--set",
    "train.sign-a.epochs=3",
    "--set",
    "train.sign-b.epochs=3",
    "--set",
    "eval.traces=2000",
    "--set",
    "eval.yu-zero.traces=2000",
];

fn blisslab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blisslab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn blisslab")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = blisslab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(extra);
    v
}

/// Report lines without wall-clock values or the JSON line that embeds them.
fn stable_lines(report: &str) -> Vec<String> {
    report
        .lines()
        .filter(|l| {
            !l.split('=').next().unwrap().ends_with("_seconds") && !l.starts_with("summary=")
        })
        .map(str::to_string)
        .collect()
}

fn fact<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn pipeline(dir: &Path) -> Vec<String> {
    let all = vec![
        run_ok(dir, &with_small(&["--out", "run", "keygen"])),
        run_ok(
            dir,
            &with_small(&[
                "--out",
                "run",
                "--signatures",
                "20",
                "sign",
                "--transcripts",
            ]),
        ),
        run_ok(dir, &with_small(&["--out", "run", "tracegen"])),
        run_ok(dir, &with_small(&["--out", "run", "train"])),
        run_ok(dir, &with_small(&["--out", "run", "eval"])),
    ];
    all.into_iter().flat_map(|r| stable_lines(&r)).collect()
}

#[test]
fn pipeline_writes_artifacts_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    assert_eq!(ra, rb);
    let run = a.path().join("run");
    for name in [
        "victim.pk",
        "victim.sk",
        "corpus.blsc",
        "transcripts.log",
        "profile-yu-zero.sctr",
        "model-cdt-x.blmd",
        "model-sign-b.blmd",
        "eval-report.txt",
    ] {
        assert!(run.join(name).is_file(), "{name}");
    }
    for name in ["corpus.blsc", "model-yu-zero.blmd", "profile-cdt-x.sctr"] {
        assert_eq!(
            fs::read(run.join(name)).unwrap(),
            fs::read(b.path().join("run").join(name)).unwrap(),
            "{name}"
        );
    }
    let log = fs::read_to_string(run.join("transcripts.log")).unwrap();
    assert!(log.lines().all(|l| l.starts_with("sig=")));
}

#[test]
fn flags_work_on_either_side_of_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let before = run_ok(
        dir.path(),
        &["--params", "toy64", "--seed.signing", "9", "config"],
    );
    let after = run_ok(
        dir.path(),
        &["config", "--params", "toy64", "--seed.signing", "9"],
    );
    assert_eq!(before, after);
    assert!(before.contains("seed.signing = \"9\""));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "params = \"toy64\"\nsignatures = 77\n[seed]\nkeygen = 5\n",
    )
    .unwrap();
    let out = run_ok(
        dir.path(),
        &["--config", "exp.toml", "--set", "seed.keygen=6", "config"],
    );
    assert!(out.contains("params = \"toy64\""));
    assert!(out.contains("signatures = \"77\""));
    assert!(out.contains("seed.keygen = \"6\""));

    // The printed config is itself a loadable config file.
    fs::write(dir.path().join("printed.toml"), &out).unwrap();
    assert_eq!(
        run_ok(dir.path(), &["--config", "printed.toml", "config"]),
        out
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        blisslab(d, &["--set", "nonsense=1", "keygen"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        blisslab(d, &["--params", "bliss9", "keygen"]).status.code(),
        Some(2)
    );
    assert_eq!(
        blisslab(d, &["--attack", "4", "config"]).status.code(),
        Some(2)
    );
    assert_eq!(
        blisslab(d, &["--out", "empty", "sign"]).status.code(),
        Some(3)
    );
    assert_eq!(
        blisslab(d, &["--out", "empty", "train"]).status.code(),
        Some(3)
    );

    fs::create_dir(d.join("bad")).unwrap();
    fs::write(d.join("bad/victim.sk"), b"not a key").unwrap();
    assert_eq!(
        blisslab(d, &["--out", "bad", "sign"]).status.code(),
        Some(4)
    );

    run_ok(d, &["--params", "toy64", "--out", "k", "keygen"]);
    let mismatch = blisslab(d, &["--params", "bliss1", "--out", "k", "sign"]);
    assert_eq!(mismatch.status.code(), Some(4));

    // Too few signatures for the kernel attack: the run ends in a failed recovery.
    let out = blisslab(
        d,
        &with_small(&["--out", "few", "--attack", "2", "--signatures", "10", "e2e"]),
    );
    assert_eq!(out.status.code(), Some(5));
    let report = fs::read_to_string(d.join("few/e2e-report.txt")).unwrap();
    assert_eq!(fact(&report, "success"), Some("false"));
}

#[test]
fn toy_likelihood_attack_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let out = run_ok(
        dir.path(),
        &[
            "--params",
            "toy64",
            "--out",
            "run",
            "--attack",
            "3",
            "--signatures",
            "125000",
            "e2e",
        ],
    );
    assert!(start.elapsed().as_secs() < 600);
    assert_eq!(fact(&out, "key_recovered"), Some("true"));
    assert_eq!(fact(&out, "matches_victim_key"), Some("true"));
    assert_eq!(fact(&out, "signatures"), Some("125000"));
}

#[test]
fn toy_kernel_attack_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(
        dir.path(),
        &[
            "--params",
            "toy64",
            "--out",
            "run",
            "--attack",
            "2",
            "--signatures",
            "1200",
            "e2e",
        ],
    );
    assert_eq!(fact(&out, "key_recovered"), Some("true"));
    assert_eq!(fact(&out, "success"), Some("true"));
}

#[test]
fn kernel_attack_end_to_end_with_2000_signatures() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(
        dir.path(),
        &[
            "--params",
            "bliss1",
            "--out",
            "run",
            "--attack",
            "2",
            "--signatures",
            "2000",
            "e2e",
        ],
    );
    assert_eq!(fact(&out, "result"), Some("key recovered"));
    assert_eq!(fact(&out, "signatures"), Some("2000"));
    let attack: f64 = fact(&out, "attack_seconds").unwrap().parse().unwrap();
    assert!(attack < 60.0, "{attack}");
    let summary = fact(&out, "summary").unwrap();
    assert!(summary.contains("\"success\":true"));
}
