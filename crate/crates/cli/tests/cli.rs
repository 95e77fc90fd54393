use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

const QUARTET: &str = "((A[&model=JC,a=0.1],B[&model=JC,a=0.05])[&model=JC,a=0.02],\
(C[&model=JC,a=0.15],D[&model=JC,a=0.1])[&model=JC,a=0.03]);";

fn qphylo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qphylo")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn file(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_fasta(path: &Path) -> Vec<(String, String)> {
    let text = fs::read_to_string(path).unwrap();
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(h) = lines.next() {
        out.push((h.trim_start_matches('>').to_owned(), lines.next().unwrap().to_owned()));
    }
    out
}

#[test]
fn simulate_zero_evolution_copies_root_character() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A[&model=JC,a=0],B[&model=JC,a=0]);");
    let out = dir.path().join("s.fa");
    let r = qphylo(&["simulate", "--tree", s(&tree), "--sites", "10", "--seed", "4", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let recs = read_fasta(&out);
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].1.len(), 10);
    assert_eq!(recs[0].1, recs[1].1);
}

#[test]
fn simulate_frequencies_within_three_sigma() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", QUARTET);
    let out = dir.path().join("s.fa");
    let sites = 100_000;
    let r = qphylo(&["simulate", "--tree", s(&tree), "--sites", &sites.to_string(), "--seed", "17", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.fa.tensor.json")).unwrap()).unwrap();
    assert_eq!(doc["taxa"], serde_json::json!(["A", "B", "C", "D"]));
    let recs = read_fasta(&out);
    let rows: Vec<&[u8]> = recs.iter().map(|(_, seq)| seq.as_bytes()).collect();
    let mut counts = std::collections::HashMap::new();
    for site in 0..sites {
        let pat: String = rows.iter().map(|r| r[site] as char).collect();
        *counts.entry(pat).or_insert(0usize) += 1;
    }
    let patterns = doc["patterns"].as_array().unwrap();
    assert_eq!(patterns.len(), 256);
    let mut total = 0.0;
    for entry in patterns {
        let p = entry["probability"].as_f64().unwrap();
        total += p;
        let observed = *counts.get(entry["pattern"].as_str().unwrap()).unwrap_or(&0) as f64;
        let expected = sites as f64 * p;
        let sigma = (sites as f64 * p * (1.0 - p)).sqrt();
        assert!((observed - expected).abs() <= 3.0 * sigma, "{entry}: observed {observed}, expected {expected}");
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", QUARTET);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = qphylo(&["simulate", "--tree", s(&tree), "--sites", "500", "--seed", "9", "--out", s(&out)]);
        assert_eq!(code(&r), 0);
        (fs::read(&out).unwrap(), fs::read(dir.path().join(format!("{name}.tensor.json"))).unwrap())
    };
    assert_eq!(run("a.fa"), run("b.fa"));
    let out = dir.path().join("c.fa");
    qphylo(&["simulate", "--tree", s(&tree), "--sites", "500", "--seed", "10", "--out", s(&out)]);
    assert_ne!(fs::read(&out).unwrap(), run("a.fa").0);
}

#[test]
fn cherry_likelihood_is_four_hundredths() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A[&model=JC,a=0.1],B[&model=JC,a=0.1]);");
    let aln = file(&dir, "a.fa", ">A\nA\n>B\nC\n");
    for engine in ["classical", "quantum", "dual"] {
        let r = qphylo(&["likelihood", "--tree", s(&tree), "--alignment", s(&aln), "--engine", engine]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        let doc: Value = serde_json::from_slice(&r.stdout).unwrap();
        assert_eq!(doc["engine"], engine);
        let total = doc["total_log_likelihood"].as_f64().unwrap();
        assert!((total - 0.04f64.ln()).abs() < 1e-12, "{engine}: {total}");
    }
}

#[test]
fn all_engines_agree_on_random_instance() {
    let dir = TempDir::new().unwrap();
    let tree = file(
        &dir,
        "t.nwk",
        "((A[&model=K3,a=0.1,b=0.2,c=0.05],(B[&model=K2,a=0.3,b=0.1],C[&model=JC,a=0.2])[&model=K3,a=0.05,b=0.1,c=0.15])\
         [&model=JC,a=0.01],D[&model=K2,a=0.2,b=0.2]);",
    );
    let aln = file(&dir, "a.fa", ">A\nACGTTGCAAC\n>B\nAGGTCGCATC\n>C\nTCGATGCACC\n>D\nACGTAGGAAG\n");
    let out = dir.path().join("r.json");
    let r = qphylo(&["likelihood", "--tree", s(&tree), "--alignment", s(&aln), "--engine", "all", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("max cross-engine deviation"));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["reports"].as_array().unwrap().len(), 3);
    assert_eq!(doc["deviations"].as_array().unwrap().len(), 3);
    assert!(doc["max_deviation"].as_f64().unwrap() < 1e-8);
    assert_eq!(doc["reports"][0]["per_site"].as_array().unwrap().len(), 10);
}

#[test]
fn taxa_mismatch_exits_four() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "((A,B),C);");
    let aln = file(&dir, "a.fa", ">A\nAC\n>B\nAC\n");
    let r = qphylo(&["likelihood", "--tree", s(&tree), "--alignment", s(&aln)]);
    assert_eq!(code(&r), 4);
    assert!(stderr(&r).contains("`C`"));
}

#[test]
fn zero_site_likelihood_exits_five_with_site() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A[&model=JC,a=0],B[&model=JC,a=0]);");
    let aln = file(&dir, "a.fa", ">A\nAAG\n>B\nAAC\n");
    let r = qphylo(&["likelihood", "--tree", s(&tree), "--alignment", s(&aln), "--engine", "dual"]);
    assert_eq!(code(&r), 5);
    assert!(stderr(&r).contains("site 2"), "{}", stderr(&r));
}

#[test]
fn parse_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let good_tree = file(&dir, "t.nwk", "(A,B);");
    let good_aln = file(&dir, "a.fa", ">A\nA\n>B\nC\n");
    let bad_tree = file(&dir, "bad.nwk", "(A,B");
    let bad_aln = file(&dir, "bad.fa", ">A\nAX\n>B\nAC\n");
    assert_eq!(code(&qphylo(&["likelihood", "--tree", s(&bad_tree), "--alignment", s(&good_aln)])), 2);
    assert_eq!(code(&qphylo(&["likelihood", "--tree", s(&good_tree), "--alignment", s(&bad_aln)])), 2);
    let missing = dir.path().join("nope.nwk");
    assert_eq!(code(&qphylo(&["likelihood", "--tree", s(&missing), "--alignment", s(&good_aln)])), 2);
    assert_eq!(code(&qphylo(&["likelihood", "--tree", s(&good_tree), "--alignment", s(&good_aln), "--engine", "x"])), 2);
}

#[test]
fn seeds_are_mandatory() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A,B);");
    let aln = file(&dir, "a.fa", ">A\nA\n>B\nC\n");
    let out = dir.path().join("s.fa");
    assert_eq!(code(&qphylo(&["simulate", "--tree", s(&tree), "--sites", "3", "--out", s(&out)])), 2);
    assert!(!out.exists());
    assert_eq!(code(&qphylo(&["optimize", "--tree", s(&tree), "--alignment", s(&aln), "--family", "JC"])), 2);
}

#[test]
fn model_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A,B);");
    let binary = file(&dir, "b.fa", ">A\n1212\n>B\n1122\n");
    let r = qphylo(&["optimize", "--tree", s(&tree), "--alignment", s(&binary), "--family", "K3", "--seed", "1"]);
    assert_eq!(code(&r), 3);
    let invalid = file(&dir, "i.nwk", "(A[&model=JC,a=0.5],B);");
    let dna = file(&dir, "d.fa", ">A\nA\n>B\nC\n");
    assert_eq!(code(&qphylo(&["likelihood", "--tree", s(&invalid), "--alignment", s(&dna)])), 3);
    let r = qphylo(&["optimize", "--tree", s(&tree), "--alignment", s(&dna), "--family", "JC", "--seed", "1", "--fix", "z=0.1"]);
    assert_eq!(code(&r), 3);
}

#[test]
fn degenerate_optimization_exits_six() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A,B);");
    let aln = file(&dir, "a.fa", ">A\nA\n>B\nC\n");
    let r = qphylo(&[
        "optimize", "--tree", s(&tree), "--alignment", s(&aln), "--family", "K3", "--seed", "1", "--fix", "b=0", "--fix", "c=0",
    ]);
    assert_eq!(code(&r), 6, "{}", stderr(&r));
}

#[test]
fn optimize_identical_columns_hits_boundary() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "(A,B);");
    let aln = file(&dir, "a.fa", ">A\nACGTTGCA\n>B\nACGTTGCA\n");
    let out = dir.path().join("o.json");
    let r = qphylo(&["optimize", "--tree", s(&tree), "--alignment", s(&aln), "--family", "JC", "--seed", "5", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(doc["point"][0].as_f64().unwrap() < 1e-6);
    assert!((doc["log_likelihood"].as_f64().unwrap() - 8.0 * 0.25f64.ln()).abs() < 1e-5);
    assert!(!doc["trace"].as_array().unwrap().is_empty());
    assert_eq!(doc["parameters"].as_array().unwrap().len(), 2);
}

#[test]
fn optimize_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", QUARTET);
    let sim = dir.path().join("s.fa");
    assert_eq!(code(&qphylo(&["simulate", "--tree", s(&tree), "--sites", "300", "--seed", "2", "--out", s(&sim)])), 0);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = ["optimize", "--tree", s(&tree), "--alignment", s(&sim), "--family", "K2", "--engine", "quantum"];
        let r = qphylo(&[&args[..], &["--seed", "8", "--out", s(&out)]].concat());
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn per_edge_sharing_reports_each_edge() {
    let dir = TempDir::new().unwrap();
    let tree = file(&dir, "t.nwk", "((A,B),C);");
    let aln = file(&dir, "a.fa", ">A\nACGTAACG\n>B\nACGTTACG\n>C\nACCTAAGG\n");
    let r = qphylo(&[
        "optimize", "--tree", s(&tree), "--alignment", s(&aln), "--family", "JC", "--seed", "3", "--sharing", "per-edge",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let doc: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(doc["sharing"], "per-edge");
    assert_eq!(doc["point"].as_array().unwrap().len(), 4);
}

#[test]
fn verify_default_passes() {
    let r = qphylo(&["verify"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = String::from_utf8_lossy(&r.stdout);
    for suite in ["split", "model-identity", "dilation-channel", "diagonalizer-fourier", "pruning-equivalence"] {
        assert!(text.contains(suite), "{suite}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_perturbed_markov_fails_naming_suite() {
    let r = qphylo(&["verify", "--perturb-markov", "1e-9"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("model-identity"));
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL model-identity"));
}

#[test]
fn verify_deep_within_budget() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("v.json");
    let start = Instant::now();
    let r = qphylo(&["verify", "--level", "deep", "--out", s(&out)]);
    assert!(start.elapsed() < Duration::from_secs(300));
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["level"], "deep");
    assert_eq!(doc["passed"], true);
}
