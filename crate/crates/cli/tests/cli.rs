//! End-to-end command tests: golden outputs, exit codes, and
//! byte-stability across runs.

use std::io::Write as _;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = crossworld_cli::run_with(
        args.iter().map(|s| s.to_string()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn model(name: &str) -> String {
    format!("{}/../../models/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn backtrack_chain_golden() {
    let (code, out, err) = run(&[
        "query",
        "--model",
        &model("linear_gaussian.model"),
        "--query",
        &model("backtrack_chain.query"),
    ]);
    assert_eq!(code, 0, "stderr: {err}");
    assert_eq!(
        out,
        "backend: gaussian\n\
         gaussian over (X*, Z*)\n\
         mean:\n\
         \x20 X* = 1.5\n\
         \x20 Z* = 3.5\n\
         covariance:\n\
         \x20 cov[X*, X*] = 0.5\n\
         \x20 cov[X*, Z*] = 0.5\n\
         \x20 cov[Z*, Z*] = 1.5\n"
    );
}

#[test]
fn intervene_firing_squad_golden() {
    let (code, out, _) = run(&[
        "query",
        "--model",
        &model("firing_squad.model"),
        "--query",
        &model("intervene_firing_squad.query"),
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "backend: exact\nP(P)\nP  probability\n1  1\n");
}

#[test]
fn backtracking_firing_squad_spares_the_prisoner() {
    let (code, out, _) = run(&[
        "query",
        "--model",
        &model("firing_squad.model"),
        "backtrack given C=1,A=1,B=1,P=1 had A*=0 find P*",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "backend: exact\nP(P*)\nP*  probability\n0   1\n");
}

#[test]
fn counterlegal_antecedent_exits_2_with_no_stdout() {
    let (code, out, err) = run(&[
        "query",
        "--model",
        &model("copy.model"),
        "--query",
        &model("counterlegal_copy.query"),
    ]);
    assert_eq!(code, 2);
    assert!(out.is_empty(), "no partial output on error, got: {out}");
    assert!(err.contains("counterlegal"), "stderr: {err}");
}

#[test]
fn observe_conditions_on_evidence() {
    let (code, out, _) = run(&[
        "query",
        "--model",
        &model("linear_gaussian.model"),
        "observe given Y=3 find X,Z",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("X = 1.5\n"), "{out}");
    assert!(out.contains("Z = 4.5\n"), "{out}");
}

#[test]
fn exact_backend_on_continuous_fails_fast_exit_3() {
    let (code, out, err) = run(&[
        "query",
        "--model",
        &model("linear_gaussian.model"),
        "--backend",
        "exact",
        "observe given Y=3 find X",
    ]);
    assert_eq!(code, 3);
    assert!(out.is_empty());
    assert!(err.contains("unsupported backend"), "stderr: {err}");
}

#[test]
fn same_seed_is_byte_identical_and_seeds_differ() {
    let args = [
        "query",
        "--model",
        &model("linear_gaussian.model"),
        "--backend",
        "mc",
        "--samples",
        "5000",
        "--format",
        "machine",
        "backtrack given X=1,Y=2,Z=2 had Y*=3 find X*,Z*",
    ];
    let (c1, out1, _) = run(&args);
    let (c2, out2, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(out1, out2, "same seed must be byte-identical");
    let mut other: Vec<&str> = args.to_vec();
    other.extend(["--seed", "1"]);
    let (c3, out3, _) = run(&other);
    assert_eq!(c3, 0);
    assert_ne!(out1, out3, "different seeds should differ");
    assert!(out1.starts_with("backend=mc\nkind=particles\n"), "{out1}");
}

#[test]
fn query_with_clause_is_overridden_by_flags() {
    let (code, out, _) = run(&[
        "query",
        "--model",
        &model("linear_gaussian.model"),
        "--backend",
        "gaussian",
        "backtrack given X=1,Y=2,Z=2 had Y*=3 find X*,Z* with backend=mc",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("backend: gaussian\n"), "{out}");
}

#[test]
fn validate_and_solve() {
    let (code, out, _) = run(&["validate", "--model", &model("firing_squad.model")]);
    assert_eq!(code, 0);
    assert_eq!(
        out,
        "ok: 1 exogenous, 4 endogenous, 4 laws\nprior: table\nbacktracking kernel: present\n"
    );
    let (code, out, _) = run(&[
        "solve",
        "--model",
        &model("linear_gaussian.model"),
        "--given",
        "U_X=1,U_Y=1,U_Z=0",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "variable  value\nX         1\nY         2\nZ         3\n");
}

#[test]
fn check_kernel_reports_all_verdicts() {
    let (code, out, _) = run(&[
        "check-kernel",
        "--model",
        &model("firing_squad.model"),
        "--format",
        "machine",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("closeness=true\nsymmetry=true\ndecomposability=true\n"), "{out}");
    assert!(out.contains("marginal_match_tv="), "{out}");
}

#[test]
fn prior_kernel_with_nonuniform_prior_is_asymmetric() {
    let text = "\
exogenous { U : {0, 1} }
endogenous { X : {0, 1} }
laws { X := U }
prior { kind = table
        (0) : 0.25
        (1) : 0.75 }
backtracking { kind = prior }
";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(text.as_bytes()).unwrap();
    let (code, out, _) = run(&["check-kernel", "--model", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("symmetry: false"), "{out}");
}

#[test]
fn unified_rescues_a_counterlegal_antecedent() {
    let (code, out, _) = run(&[
        "query",
        "--model",
        &model("copy.model"),
        "unified given X=0,Y=0 had Y*=1,X*=0 find Y*",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("\n1   1\n"), "{out}");
}

#[test]
fn explain_and_attribute_commands() {
    let (code, out, _) = run(&[
        "explain",
        "map",
        "--model",
        &model("firing_squad.model"),
        "--observation",
        "C=1,A=1,B=1,P=1",
        "--predictor",
        "P",
        "--desired",
        "0",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "feature  value\nA        0\nB        0\nC        0\n");

    let (code, out, _) = run(&[
        "attribute",
        "--model",
        &model("firing_squad.model"),
        "--observation",
        "C=1,A=1,B=1,P=1",
        "--target",
        "P",
        "--subset",
        "U",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "score = 1\n");
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let (code, _, err) = run(&["query", "--model", "/nonexistent.model", "observe find X"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"), "{err}");
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("crossworld"), "{out}");
}
