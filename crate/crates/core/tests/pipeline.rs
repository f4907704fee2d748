use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use stereo_meter::alignment::AlignmentReport;
use stereo_meter::lexicon::GroupRef;
use stereo_meter::model_io::{prompt_id, read_bundle, Manifest};
use stereo_meter::pipeline::{run_pipeline, ErrorKind, RunConfig, Stage, TemplateSelection};
use stereo_meter::scoring::{Measure, ScoreMatrix};
use stereo_meter::squish::{squish_oracle, SquishProblem};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic")
}

fn base(out: &Path) -> RunConfig {
    let mut c = RunConfig::read(&fixture().join("run.json")).unwrap();
    c.output = out.to_path_buf();
    c
}

/// τ-b by enumerating pairs.
fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let (mut s, mut tx, mut ty, mut n0) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            n0 += 1;
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            s += a * b;
            tx += i64::from(a == 0);
            ty += i64::from(b == 0);
        }
    }
    s as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

fn human_means() -> BTreeMap<(String, String), f64> {
    let mut sums: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for line in fs::read_to_string(fixture().join("human.csv")).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry((f[0].to_string(), format!("{}-{}", f[1], f[2]))).or_default();
        e.0 += f[3].parse::<f64>().unwrap();
        e.1 += 1.0;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n)).collect()
}

#[test]
fn score_and_align_match_the_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig {
        measures: vec![Measure::Set],
        templates: TemplateSelection::Ids(vec!["are".into(), "all_are".into()]),
        stages: vec![Stage::Score, Stage::Align],
        ..base(tmp.path())
    };
    run_pipeline(&config).unwrap();
    let (scores, prov) = ScoreMatrix::read(&tmp.path().join("scores_set.csv")).unwrap();
    assert_eq!(prov.config_sha256.as_deref(), Some(config.config_hash().as_str()));

    let bundle = read_bundle(&fixture().join("bundle")).unwrap();
    let delta = |id: &str, target: usize| {
        let h = bundle.hidden(id).unwrap();
        let logits = bundle.project(h);
        let norm: f64 = h.iter().map(|&x| f64::from(x).powi(2)).sum();
        squish_oracle(&SquishProblem::new(&logits, norm, target, 1.0)).unwrap().distance
    };
    let adjective = |template: &str, group: &str, adj: &str| {
        bundle.adjective_tokenization[adj]
            .iter()
            .map(|&tok| {
                let g = delta(&prompt_id(template, &GroupRef::Group(group.into())), tok);
                let p = delta(&prompt_id(template, &GroupRef::Prior), tok);
                if g == 0.0 {
                    50.0
                } else {
                    -(g / p).ln()
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let human = human_means();
    let (mut model_obs, mut human_obs) = (Vec::new(), Vec::new());
    for group in &scores.rows {
        for pair in &scores.cols {
            let (left, right) = pair.split_once('-').unwrap();
            let expected = ["are", "all_are"]
                .iter()
                .map(|t| adjective(t, group, right) - adjective(t, group, left))
                .sum::<f64>()
                / 2.0;
            let got = scores.get(group, pair).unwrap();
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{group} {pair}: {got} vs {expected}");
            if let Some(h) = human.get(&(group.clone(), pair.clone())) {
                model_obs.push(got);
                human_obs.push(*h);
            }
        }
    }
    assert_eq!(model_obs.len(), 20);

    let report = AlignmentReport::from_json(&fs::read_to_string(tmp.path().join("align_set.json")).unwrap()).unwrap();
    let tau = report.overall.tau.unwrap();
    assert!((tau - brute_tau(&model_obs, &human_obs)).abs() < 1e-12);
    for g in &report.groups {
        let idx: Vec<usize> = (0..scores.cols.len()).collect();
        let m: Vec<f64> = idx.iter().map(|&j| scores.get(&g.group, &scores.cols[j]).unwrap()).collect();
        let h: Vec<f64> = idx.iter().map(|&j| human[&(g.group.clone(), scores.cols[j].clone())]).collect();
        assert!((g.tau.unwrap() - brute_tau(&m, &h)).abs() < 1e-12, "{}", g.group);
    }
}

#[test]
fn manifest_only_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig {
        bundle: None,
        ..base(&tmp.path().join("out"))
    };
    let outcome = run_pipeline(&config).unwrap();
    assert_eq!(outcome.stages, [Stage::Manifest]);
    assert_eq!(outcome.written, ["manifest.json"]);
    let m = Manifest::read(&config.output.join("manifest.json")).unwrap();
    let shipped = Manifest::read(&fixture().join("manifest.json")).unwrap();
    assert_eq!(m.prompts, shipped.prompts);
    assert!(m.provenance.is_some());
}

#[test]
fn missing_bundle_is_a_validation_error_with_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = RunConfig {
        bundle: Some(tmp.path().join("missing")),
        ..base(&out)
    };
    let e = run_pipeline(&config).unwrap_err();
    assert_eq!(e.kind, ErrorKind::Validation);
    assert_eq!(e.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn stages_resume_from_file_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let first = RunConfig {
        stages: vec![Stage::Pilot, Stage::Score],
        ..base(tmp.path())
    };
    run_pipeline(&first).unwrap();
    let second = RunConfig {
        stages: vec![Stage::Align, Stage::Report],
        ..base(tmp.path())
    };
    let outcome = run_pipeline(&second).unwrap();
    assert!(outcome.written.contains(&"align_set.json".to_string()));
    assert!(tmp.path().join("scores_set.csv").is_file());
    let report = fs::read_to_string(tmp.path().join("report.md")).unwrap();
    assert!(report.contains("Pilot on"), "{report}");

    // Alignment without scores on disk cannot start.
    let empty = tempfile::tempdir().unwrap();
    let lonely = RunConfig {
        stages: vec![Stage::Align],
        ..base(empty.path())
    };
    assert_eq!(run_pipeline(&lonely).unwrap_err().kind, ErrorKind::Validation);
}

#[test]
fn corrupt_ratings_fail_with_a_data_error_and_leave_earlier_outputs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "group,trait_left,trait_right,rating,annotator_id\nwoman,cold,warm,900,a\n").unwrap();
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "earlier").unwrap();
    let config = RunConfig {
        human: Some(bad),
        templates: TemplateSelection::All,
        ..base(&out)
    };
    let e = run_pipeline(&config).unwrap_err();
    assert_eq!((e.kind, e.stage), (ErrorKind::Data, Some(Stage::Align)));
    let left: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, ["keep.txt"]);
}
