use super::*;
use crate::eventlog::Event;
use crate::value::{Attributes, Timestamp};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn min(m: i64) -> Timestamp {
    Timestamp(m * 60_000)
}

fn two_case_log() -> EventLog {
    let t1 = Trace::new(
        "c1",
        vec![
            Event::new("1", "c1", "A", min(0)).with_attr("kind", "x"),
            Event::new("2", "c1", "B", min(30)).with_attr("cost", 3i64),
        ],
        Attributes::from([("vip".to_string(), Value::Bool(true))]),
    );
    let t2 = Trace::new(
        "c2",
        vec![
            Event::new("3", "c2", "A", min(5)).with_attr("kind", "y"),
            Event::new("4", "c2", "C", min(50)),
        ],
        Attributes::from([("vip".to_string(), Value::Bool(false))]),
    );
    EventLog::new([t1, t2]).unwrap()
}

#[test]
fn case_duration_target_and_encoding() {
    let log = two_case_log();
    let t = feature_table_from_log(&log, &ConditionSpec::case_duration(), &TableConfig::default()).unwrap();
    assert_eq!(t.target, TargetValues::Numeric(vec![1800.0, 2700.0]));
    assert_eq!(t.columns, vec!["vip", "kind=x", "kind=y", "cost"]);
    let kind = t.features.iter().find(|f| f.name == "kind").unwrap();
    assert_eq!(kind.owner, Owner::Activity("A".into()));
    assert_eq!(t.rows[0][..3], [1.0, 1.0, 0.0]);
    assert!(t.rows[1][3].is_nan());
    // scan oracle
    for (i, case) in t.case_ids.iter().enumerate() {
        let tr = &log.traces[case];
        let want = tr.events.last().unwrap().timestamp.seconds_since(tr.events[0].timestamp);
        let TargetValues::Numeric(y) = &t.target else { unreachable!() };
        assert_eq!(y[i], want);
    }
    assert!(t.to_csv().starts_with("case_id,(case)/vip,A/kind=x,A/kind=y,B/cost,target\nc1,1,1,0,3,1800\n"));
}

#[test]
fn timing_features_skip_leaking_ones() {
    let log = two_case_log();
    let cfg = TableConfig { features: FeatureSelection::Keys(vec![]), ..TableConfig::default() };
    let t = feature_table_from_log(&log, &ConditionSpec::case_duration(), &cfg).unwrap();
    assert!(t.features.is_empty());
    let cond = ConditionSpec { target: Target::ActivityDuration("B".into()), direction: Direction::High };
    let t = feature_table_from_log(&log, &cond, &cfg).unwrap();
    assert_eq!(t.case_ids, vec!["c1"]);
    assert_eq!(t.excluded_rows, 1);
    let owners: Vec<&Owner> = t.features.iter().map(|f| &f.owner).collect();
    assert_eq!(owners, vec![&Owner::Activity("A".into())]);
    let cond = ConditionSpec { target: Target::CaseAttribute("vip".into()), direction: Direction::High };
    let t = feature_table_from_log(&log, &cond, &TableConfig::default()).unwrap();
    assert!(matches!(t.target, TargetValues::Categorical { .. }));
    assert!(t.features.iter().all(|f| f.name != "vip"));
    let bad = ConditionSpec { target: Target::CaseAttribute("nope".into()), direction: Direction::High };
    assert!(matches!(feature_table_from_log(&log, &bad, &cfg), Err(XaiError::UnknownTarget(_))));
}

/// Five uniform features, target = 3·f2 + Gaussian noise.
fn planted(seed: u64, n: usize) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        y.push(3.0 * r[2] + noise.sample(&mut rng));
        rows.push(r);
    }
    FeatureTable::numeric(&["f0", "f1", "signal", "f3", "null"], rows, y)
}

fn run(t: &FeatureTable, seed: u64) -> (SurrogateModel, Importances) {
    let m = train_surrogate(t, &ModelKind::default(), seed).unwrap();
    let imp = importance(&m, t, &ImportanceConfig { n_repeats: 5, seed }).unwrap();
    (m, imp)
}

fn value_of(imp: &Importances, name: &str) -> f64 {
    imp.values.iter().find(|v| v.1 == name).unwrap().2
}

#[test]
fn planted_signal_ranks_first_and_null_is_small() {
    let mut first = 0;
    let mut null_total = 0.0;
    for seed in 0..20 {
        let t = planted(seed, 300);
        let (_, imp) = run(&t, seed);
        let top = imp.values.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        if top.1 == "signal" {
            first += 1;
        }
        null_total += value_of(&imp, "null");
        assert!(imp.values.iter().all(|v| v.2 >= 0.0));
    }
    assert!(first >= 19, "{first}/20");
    assert!(null_total / 20.0 <= 0.05, "{}", null_total / 20.0);
}

#[test]
fn holdout_fit_quality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(0.0..1.0)]).collect();
    let linear: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 1.0).collect();
    let t = FeatureTable::numeric(&["x", "z"], rows.clone(), linear);
    assert!(train_surrogate(&t, &ModelKind::default(), 1).unwrap().holdout_score >= 0.95);
    assert!(train_surrogate(&t, &ModelKind::Ridge { lambda: 1e-3 }, 1).unwrap().holdout_score >= 0.95);

    let noise: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
    let t = FeatureTable::numeric(&["x", "z"], rows, noise);
    assert!(train_surrogate(&t, &ModelKind::default(), 1).unwrap().holdout_score <= 0.2);
}

#[test]
fn constant_target_convention() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
    let t = FeatureTable::numeric(&["x"], rows, vec![7.0; 30]);
    let (m, imp) = run(&t, 0);
    assert_eq!(m.holdout_score, 0.0);
    assert!(m.warnings.iter().any(|w| w.starts_with("DegenerateTarget")));
    assert_eq!(m.predict(&[3.0]), 7.0);
    assert_eq!(value_of(&imp, "x"), 0.0);
}

#[test]
fn insufficient_rows_and_schema_mismatch() {
    let t = planted(0, 10);
    assert_eq!(train_surrogate(&t, &ModelKind::default(), 0).unwrap_err(), XaiError::InsufficientRows(10));
    let t = planted(0, 100);
    let m = train_surrogate(&t, &ModelKind::default(), 0).unwrap();
    let other = t.permuted_features(&[1, 0, 2, 3, 4]);
    assert_eq!(importance(&m, &other, &ImportanceConfig::default()).unwrap_err(), XaiError::SchemaMismatch);
}

#[test]
fn feature_order_does_not_matter() {
    let t = planted(3, 200);
    let (_, a) = run(&t, 3);
    let (_, b) = run(&t.permuted_features(&[4, 2, 0, 3, 1]), 3);
    for (_, name, v) in &a.values {
        assert_eq!(*v, value_of(&b, name), "{name}");
    }
}

#[test]
fn conformance_restricts_shuffling() {
    // feature owned by B, constant on every row that executes B, varying elsewhere
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut traversed = Vec::new();
    for i in 0..200 {
        let has_b = i % 2 == 0;
        let v = if has_b { 1.0 } else { rng.random_range(0.0..10.0) };
        rows.push(vec![v]);
        y.push(v + rng.random_range(0.0..0.1));
        traversed.push(if has_b { BTreeSet::from(["B".to_string()]) } else { BTreeSet::new() });
    }
    let mut t = FeatureTable::numeric(&["v"], rows, y);
    t.features[0].owner = Owner::Activity("B".into());
    t.traversed = traversed;
    let (_, imp) = run(&t, 0);
    assert_eq!(value_of(&imp, "v"), 0.0);
}

#[test]
fn classification_uses_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let values: Vec<usize> = rows.iter().map(|r| usize::from(r[0] > 0.5)).collect();
    let mut t = FeatureTable::numeric(&["a", "b"], rows, vec![]);
    t.target = TargetValues::Categorical { labels: vec!["fast".into(), "slow".into()], values };
    let (m, imp) = run(&t, 2);
    assert!(m.holdout_score > 0.9);
    assert!(value_of(&imp, "a") > value_of(&imp, "b"));
}

#[test]
fn arrange_and_export() {
    let imp = Importances {
        values: vec![
            (Owner::Activity("check".into()), "region in city".into(), 0.1),
            (Owner::Activity("fine".into()), "driver's credits".into(), 0.2),
            (Owner::Activity("fine".into()), "filling out hazardous circumstances".into(), 0.9),
            (Owner::Activity("tow".into()), "choice of towing company".into(), 0.6),
            (Owner::Activity("elsewhere".into()), "x".into(), 0.3),
        ],
        holdout_score: 0.5,
    };
    let order: Vec<String> = ["check", "fine", "tow"].map(String::from).to_vec();
    let v = XaiView::arrange(&imp, &order);
    let want = "{\n\"check\": {\"region in city\": 0.1},\n\"fine\": {\"filling out hazardous circumstances\": 0.9, \"driver's credits\": 0.2},\n\"tow\": {\"choice of towing company\": 0.6}\n}";
    assert_eq!(v.export(), want);
    assert_eq!(v.top_feature(), Some(("fine", "filling out hazardous circumstances", 0.9)));
    assert_eq!(XaiView::parse(want).unwrap(), v);
    assert_eq!(XaiView::default().export(), "{}");

    let big = Importances { values: vec![(Owner::Case, "a".into(), 4.0), (Owner::Case, "b".into(), 1.0)], holdout_score: 0.0 };
    let v = XaiView::arrange(&big, &[]);
    assert_eq!(v.case_level, vec![("a".to_string(), 1.0), ("b".to_string(), 0.25)]);
    assert!(v.export().contains("\"(case)\": {\"a\": 1.0, \"b\": 0.25}"));
}

#[test]
fn graph_roundtrip() {
    let log = two_case_log();
    let mut g = KnowledgeGraph::from_log(&log).unwrap();
    let imp = Importances {
        values: vec![(Owner::Activity("A".into()), "kind".into(), 0.5), (Owner::Activity("B".into()), "cost".into(), 0.25)],
        holdout_score: 0.0,
    };
    let order: Vec<String> = ["A", "B"].map(String::from).to_vec();
    let v = XaiView::arrange(&imp, &order);
    write_xai_layer(&mut g, &v).unwrap();
    assert_eq!(XaiView::from_graph(&g, &order).unwrap(), v);
}

fn view_strategy() -> impl Strategy<Value = XaiView> {
    let features = prop::collection::btree_map("[a-z' \"]{1,8}", (0u32..10_000).prop_map(|v| v as f64 / 1e4), 1..4);
    (prop::collection::btree_map("[a-z ]{1,8}", features.clone(), 0..4), prop::option::of(features)).prop_map(|(acts, case)| {
        let mut per_activity: Vec<(String, FeatureList)> = acts.into_iter().map(|(a, fs)| (a, fs.into_iter().collect())).collect();
        for (_, fs) in per_activity.iter_mut() {
            sort_features(fs);
        }
        let mut case_level: FeatureList = case.map(|c| c.into_iter().collect()).unwrap_or_default();
        sort_features(&mut case_level);
        XaiView { per_activity, case_level }
    })
}

proptest! {
    #[test]
    fn export_parse_roundtrip(v in view_strategy()) {
        let text = export_xai_json(&v);
        let back = XaiView::parse(&text).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(export_xai_json(&back), text);
    }
}
