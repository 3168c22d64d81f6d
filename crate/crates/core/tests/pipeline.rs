use std::io::Cursor;

use faultloc::eval::{evaluate, parse_predictions, parse_report_csv, report_to_csv, write_predictions};
use faultloc::ingest::{parse_assets, parse_outages, parse_pings, write_assets, write_outages, write_pings};
use faultloc::optimize::OptimizerConfig;
use faultloc::run::{build_contexts, predict_all, replay, RunInputs};
use faultloc::synth::{generate_suite, parse_truth, write_truth, Dataset, ScenarioSpec};

fn round_trip<T>(write: impl FnOnce(&mut Vec<u8>), parse: impl FnOnce(Cursor<Vec<u8>>) -> T) -> T {
    let mut buf = Vec::new();
    write(&mut buf);
    parse(Cursor::new(buf))
}

/// Generates a suite, pushes it through the file formats and predicts it.
#[test]
fn suite_through_files_and_back() {
    let d = Dataset::from_scenarios(&generate_suite(12, &ScenarioSpec::default(), 3));
    let outages = round_trip(|b| write_outages(b, &d.outages).unwrap(), |c| parse_outages(c).unwrap());
    let pings = round_trip(|b| write_pings(b, &d.pings).unwrap(), |c| parse_pings(c).unwrap());
    let assets = round_trip(|b| write_assets(b, &d.assets).unwrap(), |c| parse_assets(c).unwrap());
    let truths = round_trip(|b| write_truth(b, &d.truths).unwrap(), |c| parse_truth(c).unwrap());
    assert!(outages.is_clean() && pings.is_clean() && truths.is_clean());
    assert_eq!(outages.records, d.outages);
    assert_eq!(pings.records, d.pings);
    assert_eq!(assets, d.assets);
    assert_eq!(truths.records, d.truths);

    let inputs = RunInputs {
        outages: outages.records,
        pings: pings.records,
        assets,
    };
    let contexts = build_contexts(&inputs, &Default::default()).unwrap();
    assert_eq!(contexts.len(), 12);
    let cfg = OptimizerConfig::default();
    let results = predict_all(&contexts, &cfg);
    let records: Vec<_> = results.iter().map(|r| r.record(cfg.seed)).collect();
    let parsed = round_trip(|b| write_predictions(b, &records).unwrap(), |c| parse_predictions(c).unwrap());
    assert_eq!(parsed.records, records);

    let report = evaluate(&records, &truths.records, 100.0).unwrap();
    assert_eq!(report.n_outages, 12);
    assert!(report.hit_rate >= 0.9, "{}", report.summary_line());
    let back = round_trip(|b| report_to_csv(&report, b).unwrap(), |c| parse_report_csv(c).unwrap());
    assert_eq!(back.rows, report.rows);

    // Replaying a stored row reproduces the prediction and its clustering.
    for ((ctx, r), rec) in contexts.iter().zip(&results).zip(&records) {
        let again = replay(ctx, rec, &cfg);
        assert_eq!(again.result, r.result);
        assert_eq!(again.assignment, r.assignment);
    }
}
