mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use examiner_irt::cli::{run, FitMeta, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use examiner_irt::data::{write_table, Comparison, LatentValue, Mating, ResponseRecord, TableFormat};
use examiner_irt::fit::ModelKind;
use tempfile::TempDir;

const SHORT: [&str; 8] = ["--chains", "2", "--warmup", "150", "--samples", "100", "--seed", "4"];

fn write_records(dir: &Path, name: &str, records: &[ResponseRecord]) -> String {
    let path = dir.join(name);
    write_table(records, fs::File::create(&path).unwrap(), &TableFormat::default()).unwrap();
    path.to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["examiner-irt"];
    v.extend_from_slice(args);
    run(v)
}

fn fit(input: &str, model: &str, out: &Path, extra: &[&str]) -> i32 {
    let out = out.to_string_lossy();
    let mut args = vec!["fit", "--input", input, "--model", model, "--out", &out];
    args.extend_from_slice(&SHORT);
    args.extend_from_slice(extra);
    cli(&args)
}

fn toy(dir: &Path) -> String {
    let sim = common::simulated(ModelKind::IRTreeKey, 12, 16, Some(10), 9);
    write_records(dir, "toy.csv", &sim.records)
}

#[test]
fn ingest_reports_and_normalizes() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let out = tmp.path().join("ingest");
    assert_eq!(cli(&["ingest", "--input", &input, "--out", out.to_str().unwrap()]), EXIT_OK);
    for f in ["dataset.csv", "quarantine.jsonl", "ingest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ingest.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["records"], 120);
    assert_eq!(report["quarantined"], 0);
}

#[test]
fn malformed_rows_are_quarantined_not_fatal() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str("E999,I999,Mates,VID,Maybe,,,\n");
    fs::write(&input, text).unwrap();
    let out = tmp.path().join("ingest");
    assert_eq!(cli(&["ingest", "--input", &input, "--out", out.to_str().unwrap()]), EXIT_OK);
    let q = fs::read_to_string(out.join("quarantine.jsonl")).unwrap();
    assert!(q.lines().count() >= 1);
}

#[test]
fn empty_or_missing_input_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(cli(&["ingest", "--input", empty.to_str().unwrap(), "--out", out]), EXIT_DATA);
    assert_eq!(cli(&["ingest", "--input", "/nonexistent/file.csv", "--out", out]), EXIT_DATA);
}

#[test]
fn usage_errors() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    assert_eq!(fit(&input, "nonsense", &tmp.path().join("f"), &[]), EXIT_USAGE);
    assert_eq!(cli(&["fit", "--input", &input, "--model", "rasch", "--target-accept", "2"]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["ingest", "--input", &input, "--column", "colour=Red"]), EXIT_USAGE);
}

#[test]
fn fits_are_reproducible_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ca = fit(&input, "rasch", &a, &[]);
    let cb = fit(&input, "rasch", &b, &[]);
    assert_eq!(ca, cb);
    for f in ["summary.csv", "draws.csv", "diagnostics.json", "waic.json", "meta.json", "proficiency.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn json_format_and_config_precedence() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let config = tmp.path().join("run.conf");
    fs::write(&config, "# sampler\nseed = 21\nchains = 1\nformat = json\nrhat_threshold = 10\n").unwrap();
    let out = tmp.path().join("f");
    let code = cli(&[
        "fit", "--input", &input, "--model", "cltrm", "--config", config.to_str().unwrap(),
        "--warmup", "100", "--samples", "50", "--chains", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(code == EXIT_OK || code == 3, "{code}");
    let meta: FitMeta = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.sampler.seed, 21);
    assert_eq!(meta.sampler.chains, 2);
    assert!(out.join("summary.json").exists() && out.join("key.json").exists());
}

#[test]
fn map_mode_writes_laplace_summary() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let out = tmp.path().join("map");
    assert_eq!(fit(&input, "ltrm", &out, &["--map"]), EXIT_OK);
    let meta: FitMeta = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.method, "laplace");
    assert!(out.join("mode.json").exists());
}

#[test]
fn compare_ranks_and_refuses_mixed_data() {
    let tmp = TempDir::new().unwrap();
    let input = toy(tmp.path());
    let other_sim = common::simulated(ModelKind::IRTreeKey, 12, 16, Some(10), 10);
    let other = write_records(tmp.path(), "other.csv", &other_sim.records);
    let dirs: Vec<_> = ["c1", "c2", "c3"].iter().map(|d| tmp.path().join(d)).collect();
    fit(&input, "cltrm", &dirs[0], &["--map"]);
    fit(&input, "altrm", &dirs[1], &["--map"]);
    fit(&other, "cltrm", &dirs[2], &["--map"]);
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let out = tmp.path().join("cmp");
    assert_eq!(cli(&["compare", &s(&dirs[0]), "--out", &s(&out)]), EXIT_OK);
    assert_eq!(fs::read_to_string(out.join("comparison.csv")).unwrap().lines().count(), 2);
    assert_eq!(cli(&["compare", &s(&dirs[0]), &s(&dirs[1]), "--out", &s(&out)]), EXIT_OK);
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let waics: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(waics[0] <= waics[1]);
    assert_eq!(cli(&["compare", &s(&dirs[0]), &s(&dirs[2]), "--out", &s(&out)]), EXIT_DATA);
}

fn unanimous() -> Vec<ResponseRecord> {
    let mut out = Vec::new();
    for i in 0..6 {
        for j in 0..9 {
            let (latent, compare) = match j % 3 {
                0 => (LatentValue::NV, None),
                1 => (LatentValue::VID, Some(Comparison::Inconclusive)),
                _ => (LatentValue::VID, Some(Comparison::Individualization)),
            };
            out.push(ResponseRecord {
                examiner_id: format!("E{i}"),
                item_id: format!("I{j}"),
                mating: Mating::Mates,
                latent_value: latent,
                compare_value: compare,
                inconclusive_reason: compare
                    .filter(|c| *c == Comparison::Inconclusive)
                    .map(|_| examiner_irt::data::InconclusiveReason::Close),
                exclusion_reason: None,
                reported_difficulty: None,
            });
        }
    }
    out
}

#[test]
fn answer_keys_agree_on_unanimous_data() {
    let tmp = TempDir::new().unwrap();
    let input = write_records(tmp.path(), "agree.csv", &unanimous());
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let mut dirs = Vec::new();
    for m in ["ltrm", "cltrm", "altrm", "irtree-key"] {
        let d = tmp.path().join(m);
        let code = fit(&input, m, &d, &[]);
        assert!(code == EXIT_OK || code == 3, "{m}: {code}");
        dirs.push(s(&d));
    }
    let out = tmp.path().join("keys");
    let mut args = vec!["answerkey", "--input", &input];
    args.extend(dirs[..3].iter().map(String::as_str));
    let out_s = s(&out);
    args.extend(["--out", &out_s]);
    assert_eq!(cli(&args), EXIT_USAGE, "irtree-key fit is missing");
    args.insert(6, &dirs[3]);
    assert_eq!(cli(&args), EXIT_OK);
    let matrix = fs::read_to_string(out.join("disagreement.csv")).unwrap();
    for line in matrix.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|c| c == "0"), "{matrix}");
    }
    for k in ["modal", "ltrm", "cltrm", "altrm", "irtree"] {
        assert!(out.join(format!("key_{k}.csv")).exists(), "{k}");
    }
}

#[test]
fn simulate_then_diagnose_through_the_binary() {
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_examiner-irt");
    let sim = tmp.path().join("sim");
    let status = Command::new(bin)
        .args(["simulate", "--model", "rasch", "--examiners", "10", "--items", "12", "--seed", "3", "--out"])
        .arg(&sim)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    assert!(sim.join("data.csv").exists() && sim.join("truth.json").exists());

    let f = tmp.path().join("fit");
    let status = Command::new(bin)
        .args(["fit", "--model", "rasch", "--input"])
        .arg(sim.join("data.csv"))
        .args(SHORT)
        .arg("--out")
        .arg(&f)
        .status()
        .unwrap();
    let fit_code = status.code().unwrap();
    assert!(fit_code == EXIT_OK || fit_code == 3);
    let status = Command::new(bin).arg("diagnose").arg("--fit").arg(&f).status().unwrap();
    assert_eq!(status.code(), Some(fit_code));
    assert_eq!(Command::new(bin).status().unwrap().code(), Some(EXIT_USAGE));
}
