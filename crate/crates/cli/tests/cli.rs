//! End-to-end runs of the `relnas` binary.

use std::path::Path;
use std::process::{Command, Output};

use relnas_core::ArchDag;
use serde_json::Value;

fn relnas(args: &[&str]) -> Output {
    relnas_env(args, None)
}

fn relnas_env(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relnas"));
    cmd.args(args).env_remove("RELNAS_OUT");
    if let Some(p) = out_env {
        cmd.env("RELNAS_OUT", p);
    }
    cmd.output().expect("spawn relnas")
}

fn json_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("not JSON ({e}): {l}")))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
    "version": 1,
    "seed": 3,
    "data": {"kind": "sbm_node", "sbm": {"n": 12, "k": 2, "p_intra": 0.6, "p_inter": 0.1}, "d_v": 2, "counts": [4, 2, 2]},
    "search": {"target_size": 2, "epochs_per_iteration": [2, 2], "d_v": 4, "d_e": 2},
    "strategy": {"kind": "random", "batch_size": 2},
    "train": {"epochs": 3, "batch_size": 2, "lr": 0.01}
}"#;

/// Writes the tiny config and generates its dataset.
fn setup(dir: &Path) -> (String, String) {
    setup_with(dir, TINY)
}

fn setup_with(dir: &Path, config: &str) -> (String, String) {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = relnas(&["gen-data", "--config", s(&cfg), "--out", s(&dir.join("data"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (s(&cfg).to_string(), s(&dir.join("data/dataset.json")).to_string())
}

#[test]
fn audit_reports_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = relnas(&["audit", "--out", s(dir.path())]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("3019898880"));
    assert!(text.contains("3410512607094195460639097831351648256"));
    let file = std::fs::read_to_string(dir.path().join("audit.json")).unwrap();
    assert!(file.contains("3019898880"));
}

#[test]
fn search_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(dir.path());
    let run = dir.path().join("run");
    let out = relnas(&["search", "--config", &cfg, "--dataset", &ds, "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let arch = ArchDag::from_json(&std::fs::read_to_string(run.join("arch.json")).unwrap()).unwrap();
    arch.validate().unwrap();
    assert_eq!(arch.n_vertices, 2);
    assert!(arch.is_differentiated());
    let logs = json_lines(&out);
    assert_eq!(logs.last().unwrap()["event"], "search_done");

    let arch_path = run.join("arch.json");
    let out = relnas(&["train", "--config", &cfg, "--arch", s(&arch_path), "--dataset", &ds, "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let epochs = json_lines(&out).iter().filter(|v| v["event"] == "train_epoch").count();
    assert_eq!(epochs, 3);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();

    let ckpt = run.join("model.json");
    let out = relnas(&["eval", "--arch", s(&arch_path), "--checkpoint", s(&ckpt), "--dataset", &ds, "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = json_lines(&out).pop().unwrap();
    assert_eq!(eval["value"], report["test"]["value"]);
    assert_eq!(eval["loss"], report["test"]["loss"]);
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(dir.path());
    let again = dir.path().join("again");
    relnas(&["gen-data", "--config", &cfg, "--out", s(&again)]);
    assert_eq!(std::fs::read(&ds).unwrap(), std::fs::read(again.join("dataset.json")).unwrap());
    let run = |name: &str| {
        let p = dir.path().join(name);
        let o =
            relnas(&["search", "--config", &cfg, "--dataset", &ds, "--out", s(&p), "--strategy", "darts-first-order"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(p.join("arch.json")).unwrap(), std::fs::read(p.join("audit.json")).unwrap(), o.stdout)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn schema_errors_stop_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = setup(dir.path());
    let bad = dir.path().join("bad.json");
    let out_dir = dir.path().join("never");
    for text in [
        r#"{"version": 1, "seed": 1, "serch": {}}"#,
        r#"{"version": 7, "seed": 1}"#,
        r#"{"version": 1, "seed": 1, "train": {"lr": 0}}"#,
        r#"{"version": 1, "seed": 1, "search": {"target_size": 8, "epochs_per_iteration": [1]}}"#,
    ] {
        std::fs::write(&bad, text).unwrap();
        let out = relnas(&["search", "--config", s(&bad), "--dataset", &ds, "--out", s(&out_dir)]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = json_lines(&out).pop().unwrap();
        assert_eq!(err["event"], "error");
        assert!(err["kind"] == "config" || err["kind"] == "schema", "{err}");
        assert!(!out_dir.exists(), "output written despite {text}");
    }
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = relnas(&["search", "--seed", "1", "--dataset", s(&dir.path().join("none.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = json_lines(&out).pop().unwrap();
    assert_eq!(err["kind"], "missing_file");
    assert!(err["message"].as_str().unwrap().contains("none.json"));

    let out = relnas(&["gen-data", "--kind", "sbm-node", "--out", s(dir.path())]);
    assert_eq!(json_lines(&out).pop().unwrap()["kind"], "config", "seed is mandatory");

    let out = relnas(&["search", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_lines(&out).pop().unwrap()["kind"], "usage");
}

#[test]
fn seeds_fan_out_into_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out = relnas(&["gen-data", "--config", s(&cfg), "--seeds", "1,2", "--out", s(dir.path())]);
    assert!(out.status.success());
    let a = std::fs::read(dir.path().join("seed-1/dataset.json")).unwrap();
    let b = std::fs::read(dir.path().join("seed-2/dataset.json")).unwrap();
    assert_ne!(a, b);
    let seeds: Vec<u64> = json_lines(&out).iter().map(|v| v["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds.len(), 2);
    assert!(seeds.contains(&1) && seeds.contains(&2));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");
    let out = relnas_env(&["audit", "--size", "4"], Some(&env_dir));
    assert!(out.status.success());
    assert!(env_dir.join("audit.json").exists());
    let out = relnas_env(&["audit", "--size", "4", "--out", s(&flag_dir)], Some(&env_dir));
    assert!(out.status.success());
    assert!(flag_dir.join("audit.json").exists());
}

/// Minimal DOT grammar: graph, subgraphs, attribute statements, node and
/// edge statements with bracketed attribute lists.
fn parse_dot(text: &str) -> Result<usize, String> {
    #[derive(Debug, PartialEq)]
    enum Tok {
        Id(String),
        Str,
        Sym(&'static str),
    }
    let mut toks = Vec::new();
    let cs: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' {
            i += 1;
            while i < cs.len() && cs[i] != '"' {
                i += if cs[i] == '\\' { 2 } else { 1 };
            }
            if i >= cs.len() {
                return Err("unterminated string".into());
            }
            i += 1;
            toks.push(Tok::Str);
        } else if c.is_alphanumeric() || c == '_' || c == '.' {
            let start = i;
            while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_' || cs[i] == '.') {
                i += 1;
            }
            toks.push(Tok::Id(cs[start..i].iter().collect()));
        } else if c == '-' && cs.get(i + 1) == Some(&'>') {
            toks.push(Tok::Sym("->"));
            i += 2;
        } else {
            let sym = match c {
                '{' => "{",
                '}' => "}",
                '[' => "[",
                ']' => "]",
                ';' => ";",
                ',' => ",",
                '=' => "=",
                _ => return Err(format!("unexpected character {c:?}")),
            };
            toks.push(Tok::Sym(sym));
            i += 1;
        }
    }
    let mut p = 0;
    let mut edges = 0;
    let expect = |p: &mut usize, s: &str| -> Result<(), String> {
        match toks.get(*p) {
            Some(Tok::Sym(x)) if *x == s => {
                *p += 1;
                Ok(())
            }
            t => Err(format!("expected {s}, got {t:?}")),
        }
    };
    let id = |p: &mut usize| -> Result<(), String> {
        match toks.get(*p) {
            Some(Tok::Id(_)) | Some(Tok::Str) => {
                *p += 1;
                Ok(())
            }
            t => Err(format!("expected identifier, got {t:?}")),
        }
    };
    fn attrs(toks: &[Tok], p: &mut usize) -> Result<(), String> {
        if toks.get(*p) != Some(&Tok::Sym("[")) {
            return Ok(());
        }
        *p += 1;
        while toks.get(*p) != Some(&Tok::Sym("]")) {
            match (toks.get(*p), toks.get(*p + 1), toks.get(*p + 2)) {
                (Some(Tok::Id(_)), Some(Tok::Sym("=")), Some(Tok::Id(_) | Tok::Str)) => *p += 3,
                t => return Err(format!("bad attribute {t:?}")),
            }
            if toks.get(*p) == Some(&Tok::Sym(",")) {
                *p += 1;
            }
        }
        *p += 1;
        Ok(())
    }
    match toks.get(p) {
        Some(Tok::Id(k)) if k == "digraph" => p += 1,
        t => return Err(format!("expected digraph, got {t:?}")),
    }
    if matches!(toks.get(p), Some(Tok::Id(_))) {
        p += 1;
    }
    expect(&mut p, "{")?;
    let mut depth = 1;
    while depth > 0 {
        match toks.get(p) {
            None => return Err("unbalanced braces".into()),
            Some(Tok::Sym("}")) => {
                depth -= 1;
                p += 1;
            }
            Some(Tok::Id(k)) if k == "subgraph" => {
                p += 1;
                id(&mut p)?;
                expect(&mut p, "{")?;
                depth += 1;
            }
            Some(Tok::Id(_)) => {
                p += 1;
                match toks.get(p) {
                    Some(Tok::Sym("=")) => {
                        p += 1;
                        id(&mut p)?;
                    }
                    Some(Tok::Sym("->")) => {
                        p += 1;
                        id(&mut p)?;
                        attrs(&toks, &mut p)?;
                        edges += 1;
                    }
                    _ => attrs(&toks, &mut p)?,
                }
                expect(&mut p, ";")?;
            }
            t => return Err(format!("unexpected {t:?}")),
        }
    }
    if p != toks.len() {
        return Err("trailing tokens".into());
    }
    Ok(edges)
}

#[test]
fn dot_grammar_checker_rejects_garbage() {
    assert!(parse_dot("digraph g { a -> b; }").is_ok());
    assert!(parse_dot("digraph g { a -> ; }").is_err());
    assert!(parse_dot("digraph g { a [label=\"x\"]; ").is_err());
    assert!(parse_dot("graph g { }").is_err());
}

#[test]
fn export_dot_of_size_four_parses() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup_with(
        dir.path(),
        &TINY.replace("[2, 2]", "[2, 2, 2]").replace("\"target_size\": 2", "\"target_size\": 4"),
    );
    let run = dir.path().join("run");
    let out = relnas(&["search", "--config", &cfg, "--dataset", &ds, "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let arch_path = run.join("arch.json");
    let out = relnas(&["export", "--arch", s(&arch_path), "--format", "dot", "--out", s(&run)]);
    assert!(out.status.success());
    let dot = std::fs::read_to_string(run.join("arch.dot")).unwrap();
    // 4 vertices x 2 inputs x 2 spaces
    assert_eq!(parse_dot(&dot), Ok(16));
    let out = relnas(&["export", "--arch", s(&arch_path), "--format", "json", "--out", s(&dir.path().join("j"))]);
    assert!(out.status.success());
    let back = ArchDag::from_json(&std::fs::read_to_string(dir.path().join("j/arch.json")).unwrap()).unwrap();
    assert_eq!(back, ArchDag::from_json(&std::fs::read_to_string(&arch_path).unwrap()).unwrap());
}

#[test]
fn global_random_search_gives_a_valid_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(dir.path());
    let run = dir.path().join("run");
    let out = relnas(&[
        "search",
        "--config",
        &cfg,
        "--dataset",
        &ds,
        "--global",
        "--size",
        "3",
        "--node-only",
        "--out",
        s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let arch = ArchDag::from_json(&std::fs::read_to_string(run.join("arch.json")).unwrap()).unwrap();
    assert_eq!(arch.n_vertices, 3);
    assert!(!arch.relation_space);
    assert!(arch.is_differentiated());
}
