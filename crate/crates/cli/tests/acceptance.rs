//! CLI acceptance: byte-identical outputs for identical invocations
//! (criterion 10) and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn chainplace(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainplace"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn c10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |suffix: &str| {
        let train = chainplace(
            &[
                "train",
                "--scenario",
                "tiny4",
                "--schedule",
                "2:3,3:2",
                "--batch-size",
                "2",
                "--seed",
                "5",
                "--out",
                &format!("policy_{suffix}.ckpt"),
                "--metrics",
                &format!("metrics_{suffix}.csv"),
                "--log-every",
                "0",
            ],
            dir.path(),
        );
        assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));

        let evaluate = chainplace(
            &[
                "evaluate",
                "--scenario",
                "tiny4",
                "--algo",
                "ff",
                "--requests",
                "16",
                "--chain-length",
                "3",
                "--seed",
                "9",
                "--out",
                &format!("eval_{suffix}.csv"),
            ],
            dir.path(),
        );
        assert!(evaluate.status.success(), "{}", String::from_utf8_lossy(&evaluate.stderr));

        let eval_s2s = chainplace(
            &[
                "evaluate",
                "--scenario",
                "tiny4",
                "--algo",
                "s2s",
                "--requests",
                "8",
                "--chain-length",
                "3",
                "--seed",
                "9",
                "--checkpoint",
                &format!("policy_{suffix}.ckpt"),
                "--out",
                &format!("eval_s2s_{suffix}.csv"),
            ],
            dir.path(),
        );
        assert!(eval_s2s.status.success(), "{}", String::from_utf8_lossy(&eval_s2s.stderr));

        let compare = chainplace(
            &[
                "compare",
                "--scenario",
                "tiny4",
                "--algos",
                "ff,bnb",
                "--lengths",
                "2,3",
                "--requests",
                "12",
                "--seed",
                "9",
                "--out",
                &format!("cmp_{suffix}"),
            ],
            dir.path(),
        );
        assert!(compare.status.success(), "{}", String::from_utf8_lossy(&compare.stderr));

        let solve = chainplace(
            &[
                "solve",
                "--scenario",
                "tiny4",
                "--chain",
                "random:4",
                "--algo",
                "bnb",
                "--seed",
                "3",
                "--out",
                &format!("solve_{suffix}.csv"),
            ],
            dir.path(),
        );
        assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    };

    run("a");
    run("b");

    for (a, b) in [
        ("policy_a.ckpt", "policy_b.ckpt"),
        ("metrics_a.csv", "metrics_b.csv"),
        ("eval_a.csv", "eval_b.csv"),
        ("eval_s2s_a.csv", "eval_s2s_b.csv"),
        ("solve_a.csv", "solve_b.csv"),
    ] {
        assert_eq!(read(dir.path(), a), read(dir.path(), b), "{a} vs {b} differ");
    }
    for name in ["results.csv", "plot_accept_ratio.csv"] {
        assert_eq!(
            read(&dir.path().join("cmp_a"), name),
            read(&dir.path().join("cmp_b"), name),
            "compare output {name} differs"
        );
    }
    println!(
        "acceptance criterion 10 (CLI determinism): PASS \
         (train/evaluate/compare/solve outputs byte-identical across reruns)"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // 0: success
    let ok = chainplace(&["oracle-check", "--trials", "5", "--seed", "1"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    // 1: usage errors, from the parser and from validation
    let bad_flag = chainplace(&["evaluate", "--no-such-flag"], dir.path());
    assert_eq!(bad_flag.status.code(), Some(1));
    let missing_ckpt = chainplace(
        &[
            "evaluate",
            "--scenario",
            "tiny4",
            "--algo",
            "s2s",
            "--requests",
            "1",
            "--chain-length",
            "2",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(missing_ckpt.status.code(), Some(1));

    // 2: internal failure (unreadable scenario)
    let bad_scenario = chainplace(
        &[
            "evaluate",
            "--scenario",
            "no_such_scenario",
            "--algo",
            "ff",
            "--requests",
            "1",
            "--chain-length",
            "2",
            "--out",
            "y.csv",
        ],
        dir.path(),
    );
    assert_eq!(bad_scenario.status.code(), Some(2));

    // 3: oracle mismatch (deliberately corrupted bound)
    let corrupt = chainplace(
        &["oracle-check", "--trials", "40", "--seed", "1", "--corrupt-bound"],
        dir.path(),
    );
    assert_eq!(corrupt.status.code(), Some(3), "{}", String::from_utf8_lossy(&corrupt.stdout));

    println!("cli exit codes: 0/1/2/3 as documented");
}
