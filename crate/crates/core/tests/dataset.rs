use std::fs;

use fairflow::dataset::io::{load_flows, load_regions, write_flows, write_regions};
use fairflow::dataset::{prepare, SplitSpec, COMMUNAL_BLOCK, FEATURE_COUNT, ONE_HOT};
use fairflow::par::Exec;
use fairflow::synth::{self, SynthConfig};
use fairflow::Error;

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        regions: 12,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn header_only_flows_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flows.csv");
    fs::write(&path, "origin_id,dest_id,distance_ft,flow\n").unwrap();
    assert!(load_flows(&path).unwrap().is_empty());
}

#[test]
fn negative_flow_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flows.csv");
    fs::write(&path, "origin_id,dest_id,distance_ft,flow\na,b,10,3\nb,a,10,-1\n").unwrap();
    let err = load_flows(&path).unwrap_err();
    assert!(matches!(err, Error::Ingest { row: 3, .. }), "{err:?}");
    assert!(err.to_string().contains("flow"), "{err}");
}

#[test]
fn malformed_cells_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flows.csv");
    fs::write(&path, "origin_id,dest_id,distance_ft,flow\na,b,far,3\n").unwrap();
    let err = load_flows(&path).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("distance_ft"), "{err}");

    fs::write(&path, "origin,dest,distance_ft,flow\na,b,1,3\n").unwrap();
    assert!(load_flows(&path).is_err());
}

#[test]
fn self_flows_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flows.csv");
    fs::write(&path, "origin_id,dest_id,distance_ft,flow\na,a,1,9\na,b,5,2\n").unwrap();
    let rows = load_flows(&path).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].dest_id, "b");
}

#[test]
fn synthetic_set_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (regions, flows) = synth::generate(&small_synth(3)).unwrap();
    let rows = synth::to_rows(&flows);
    let (rp, fp) = (dir.path().join("regions.csv"), dir.path().join("flows.csv"));
    write_regions(&rp, &regions.profiles).unwrap();
    write_flows(&fp, &rows).unwrap();
    assert_eq!(load_regions(&rp).unwrap(), regions.profiles);
    assert_eq!(load_flows(&fp).unwrap(), rows);
}

#[test]
fn prepare_partitions_and_normalizes_on_train_only() {
    let cfg = small_synth(4);
    let regions = synth::gen_regions(&cfg).unwrap();
    let rows = synth::to_rows(&synth::gen_flows(&regions, &cfg, Exec::Sequential).unwrap());
    let data = prepare(&regions.profiles, &rows, &SplitSpec::default()).unwrap();
    let n = rows.len();
    assert_eq!(n, 12 * 11);

    let mut seen: Vec<usize> = data
        .split
        .train
        .iter()
        .chain(&data.split.validation)
        .chain(&data.split.test)
        .copied()
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..n).collect::<Vec<_>>());

    let stats = |part: &[fairflow::dataset::Sample], c: usize| {
        let m = part.len() as f64;
        let mean = part.iter().map(|s| s.features.0[c]).sum::<f64>() / m;
        let var = part.iter().map(|s| (s.features.0[c] - mean).powi(2)).sum::<f64>() / m;
        (mean, var.sqrt())
    };
    let mut validation_differs = false;
    for c in 0..COMMUNAL_BLOCK.end {
        if ONE_HOT.contains(&c) {
            continue;
        }
        let (mean, std) = stats(&data.train, c);
        assert!(mean.abs() < 1e-6, "feature {c} mean {mean}");
        assert!(std == 0.0 || (std - 1.0).abs() < 1e-6, "feature {c} std {std}");
        let (vm, vs) = stats(&data.validation, c);
        validation_differs |= vm.abs() > 1e-3 || (vs - 1.0).abs() > 1e-3;
    }
    assert!(validation_differs);
    for s in data.train.iter().chain(&data.test) {
        let hot = &s.features.0[ONE_HOT];
        assert_eq!(hot.iter().sum::<f64>(), 1.0);
        assert_eq!(hot[s.group.index()], 1.0);
        assert_eq!(s.features.0.len(), FEATURE_COUNT);
    }
}

#[test]
fn missing_income_is_an_ingest_error_naming_the_region() {
    let cfg = small_synth(5);
    let (mut regions, flows) = synth::generate(&cfg).unwrap();
    regions.profiles[2].median_household_income = f64::NAN;
    let id = regions.profiles[2].region_id.clone();
    let err = prepare(&regions.profiles, &synth::to_rows(&flows), &SplitSpec::default()).unwrap_err();
    assert!(err.to_string().contains(&id), "{err}");
}
