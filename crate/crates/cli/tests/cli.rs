use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_flgpr");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn flgpr(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg("1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path → contents of every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn only_file(dir: &Path, prefix: &str) -> PathBuf {
    let hits: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(hits.len(), 1, "{prefix} in {}: {hits:?}", dir.display());
    hits[0].clone()
}

fn run_all_stages(out: &Path) -> Vec<String> {
    let stages = ["generate", "prescreen", "extract", "train", "evaluate", "fuse", "confmap", "report"];
    stages
        .iter()
        .map(|s| {
            let o = flgpr(&fixture(), out, &[s]);
            assert!(o.status.success(), "{s} failed: {}", stderr(&o));
            let line = stdout(&o);
            assert_eq!(line.lines().count(), 1, "{s} prints one summary line: {line}");
            assert!(line.starts_with(&format!("{s}:")), "{line}");
            line
        })
        .collect()
}

#[test]
fn full_grid_is_deterministic_and_reported() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let lines = run_all_stages(a.path());
    assert!(lines[4].contains("81 algorithms"), "{}", lines[4]);

    let results = only_file(&a.path().join("results"), "results-");
    let text = fs::read_to_string(&results).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next().unwrap(), "fold,polarization,feature,classifier,pauc_mean,pauc_ci_lo,pauc_ci_hi");
    let body: Vec<&str> = rows.collect();
    assert_eq!(body.len(), 81);
    assert!(body.iter().all(|r| r.starts_with("pooled,")));
    for r in &body {
        let p: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p), "{r}");
    }

    let roc = fs::read_to_string(only_file(&a.path().join("results"), "roc-")).unwrap();
    assert_eq!(roc.lines().next().unwrap(), "curve,far,pd,ci_lo,ci_hi");
    assert!(roc.lines().any(|l| l.starts_with("fusion,")));
    let steps = fs::read_to_string(only_file(&a.path().join("results"), "fusion-steps-")).unwrap();
    assert_eq!(steps.lines().next().unwrap(), "fold,step,added_column,inner_cv_pauc,accepted");
    for fig in ["roc-", "pauc-bars-", "fusion-curve-"] {
        let png = fs::read(only_file(&a.path().join("figures"), fig)).unwrap();
        assert_eq!(&png[1..4], b"PNG");
    }
    let maps = only_file(&a.path().join("figures"), "confmap-");
    assert!(maps.join("dictionary.png").is_file() && maps.join("index.csv").is_file());

    // Same config and seed into a fresh directory: byte-identical artifacts.
    let o = flgpr(&fixture(), b.path(), &["all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs between runs", k.display());
    }

    // Re-running a stage in place rewrites identical bytes.
    let before = tree(a.path());
    let o = flgpr(&fixture(), a.path(), &["prescreen"]);
    assert!(o.status.success());
    assert!(before == tree(a.path()));
}

#[test]
fn fusion_stage_reingests_prediction_csvs() {
    let out = tempfile::tempdir().unwrap();
    for s in ["generate", "prescreen", "extract", "evaluate"] {
        let o = flgpr(&fixture(), out.path(), &[s]);
        assert!(o.status.success(), "{s}: {}", stderr(&o));
    }
    let preds = only_file(&out.path().join("results"), "predictions-HH-lstat-plsda-");
    let text = fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().next().unwrap(), "fold,role,lane,alarm,confidence");
    let o = flgpr(&fixture(), out.path(), &["fuse"]);
    assert!(o.status.success(), "{}", stderr(&o));

    // A truncated prediction file is rejected with its path.
    let kept: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    fs::write(&preds, kept.join("\n") + "\n").unwrap();
    let o = flgpr(&fixture(), out.path(), &["fuse"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&preds.file_name().unwrap().to_string_lossy().into_owned()), "{}", stderr(&o));
}

#[test]
fn missing_upstream_artifact_is_named() {
    let out = tempfile::tempdir().unwrap();
    for s in ["generate", "prescreen"] {
        assert!(flgpr(&fixture(), out.path(), &[s]).status.success());
    }
    let o = flgpr(&fixture(), out.path(), &["evaluate"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("missing artifact") && err.contains("features/") && err.contains(".bin"), "{err}");

    let empty = tempfile::tempdir().unwrap();
    let o = flgpr(&fixture(), empty.path(), &["prescreen"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lanes/") && stderr(&o).contains(".lane"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_nonzero_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture()).unwrap();
    let cases = [
        (text.replace("k = 6", "k = \"six\""), "pipeline.bov.k"),
        (text.replace("max_nf = 3", "max_nf = 3\nauto_stopp = true"), "fusion.auto_stopp"),
        (text.replacen("seed = 5", "seed = 5\nfeatures = [\"hog\"]", 1), "features"),
        (text.replacen("seed = 5\n", "", 1), "seed"),
    ];
    for (i, (bad, field)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.toml"));
        fs::write(&path, bad).unwrap();
        let o = flgpr(&path, dir.path(), &["generate"]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(field), "case {i}: {}", stderr(&o));
    }
    let o = Command::new(BIN).arg("generate").output().unwrap();
    assert!(!o.status.success() && stderr(&o).contains("--config"));
}

#[test]
fn show_config_round_trips_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let o = flgpr(&fixture(), dir.path(), &["show-config", "--seed", "77"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let effective = stdout(&o);
    assert!(effective.contains("seed = 77"));
    let path = dir.path().join("effective.toml");
    fs::write(&path, &effective).unwrap();
    let again = flgpr(&path, dir.path(), &["show-config"]);
    assert_eq!(stdout(&again), effective);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    for name in ["quick.toml", "table1.toml"] {
        let o = flgpr(&root.join(name), dir.path(), &["show-config"]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}
