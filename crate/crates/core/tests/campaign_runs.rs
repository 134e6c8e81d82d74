use std::path::PathBuf;

use meshfi_core::campaign::{
    bundled_inputs, export_report, golden_run, load_report, Campaign, CampaignConfig, Mode, Outcome, TRIALS_HEADER,
};
use meshfi_core::fault::SignalKind;
use meshfi_core::mesh::MeshConfig;
use meshfi_core::qnn::{forward, load_model, OffloadHook, INPUT_SEED};

fn model_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy_cnn.json")
}

fn config(mode: Mode, faults: usize) -> CampaignConfig {
    CampaignConfig {
        model: model_path(),
        inputs: 3,
        faults_per_layer_per_input: faults,
        signals: SignalKind::ALL.to_vec(),
        dim: Some(8),
        valid_propagates: true,
        mode,
        master_seed: 99,
        out_dir: "out".into(),
        layers: None,
        input_seed: INPUT_SEED,
    }
}

#[test]
fn golden_run_is_pure_and_matches_hooked_forward() {
    let m = load_model(model_path()).unwrap();
    let xs = bundled_inputs(&m, INPUT_SEED, 4);
    let a = golden_run(&m, &xs).unwrap();
    assert_eq!(a, golden_run(&m, &xs).unwrap());
    let plan_tile = meshfi_core::tiling::TileCoord { mi: 1, ki: 3, ni: 2 };
    for (x, g) in xs.iter().zip(&a) {
        let mut hook = OffloadHook::new(3, MeshConfig::square(8), plan_tile, vec![]);
        assert_eq!(&forward(&m, x, Some(&mut hook)).unwrap(), g);
    }
}

#[test]
fn rtl_records_respect_outcome_invariants() {
    let report = Campaign::from_config(config(Mode::Rtl, 60)).unwrap().run(2).unwrap();
    assert_eq!(report.total_trials, 3 * 3 * 60);
    assert_eq!(report.trials.len() as u64, report.total_trials);
    for (i, t) in report.trials.iter().enumerate() {
        assert_eq!(t.trial, i as u64);
        match t.outcome {
            Outcome::Critical => assert_ne!(t.golden_top1, t.faulty_top1),
            Outcome::Masked => assert!(!t.exposed),
            Outcome::ExposedBenign => assert_eq!(t.golden_top1, t.faulty_top1),
        }
        let f = t.fault.unwrap();
        assert!(f.row < 8 && f.col < 8 && f.bit < f.signal.width());
    }
    let avf = report.avf.unwrap();
    assert!((0.0..=1.0).contains(&avf));
    assert!(avf <= report.exposure_rate);
    for h in &report.heatmaps {
        for r in 0..8 {
            for c in 0..8 {
                assert!(h.critical[r][c] <= h.exposed[r][c]);
                if let (Some(a), Some(e)) = (h.avf[r][c], h.exposure[r][c]) {
                    assert!(a <= e);
                }
            }
        }
    }
    let heat_total: u64 = report.heatmaps.iter().flat_map(|h| h.trials.iter().flatten()).sum();
    assert_eq!(heat_total, report.total_trials);
}

#[test]
fn sw_mode_never_masks() {
    let report = Campaign::from_config(config(Mode::Sw, 40)).unwrap().run(0).unwrap();
    assert_eq!(report.counts.masked, 0);
    assert!(report.pvf.is_some() && report.avf.is_none());
    assert!(report.heatmaps.is_empty());
    assert!(report.trials.iter().all(|t| t.sw_flip.is_some_and(|f| f.bit < 8)));
}

#[test]
fn export_writes_grids_and_is_reproducible() {
    let cfg = CampaignConfig { signals: vec![SignalKind::Propag, SignalKind::OperandA], ..config(Mode::Rtl, 20) };
    let report = Campaign::from_config(cfg).unwrap().run(0).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = export_report(&report, d1.path()).unwrap();
    export_report(&report, d2.path()).unwrap();
    assert_eq!(files.len(), 2 + 2 * 2);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(d2.path().join(name)).unwrap());
    }
    let grid = std::fs::read_to_string(d1.path().join("heatmap_propag.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').count() == 8));
    assert!(d1.path().join("exposure_operand_a.csv").exists());
    let trials = std::fs::read_to_string(d1.path().join("trials.csv")).unwrap();
    assert_eq!(trials.lines().next().unwrap(), TRIALS_HEADER);
    assert_eq!(trials.lines().count() as u64, report.total_trials + 1);
    let n_cols = TRIALS_HEADER.split(',').count();
    assert!(trials.lines().all(|l| l.split(',').count() == n_cols));
    assert_eq!(load_report(d1.path().join("report.json")).unwrap(), report);
    let text = std::fs::read_to_string(d1.path().join("report.json")).unwrap();
    assert!(!text.contains("elapsed") && !text.contains("seconds"));
}

#[test]
fn config_file_resolves_model_relative_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(model_path(), dir.path().join("m.json")).unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"model":"m.json","inputs":1,"faults_per_layer_per_input":2,"mode":"sw","master_seed":5,"out_dir":"o"}"#).unwrap();
    let cfg = CampaignConfig::load(&p).unwrap();
    assert_eq!(cfg.model, dir.path().join("m.json"));
    assert_eq!(cfg.out_dir, dir.path().join("o"));
    assert_eq!(Campaign::from_config(cfg).unwrap().run(1).unwrap().total_trials, 3 * 2);

    std::fs::write(&p, r#"{"model":"nope.json","inputs":1,"mode":"sw","master_seed":5,"out_dir":"o"}"#).unwrap();
    assert!(Campaign::from_config(CampaignConfig::load(&p).unwrap()).is_err());
    std::fs::write(&p, r#"{"model":"m.json","inputs":1,"mode":"rtl","master_seed":5,"out_dir":"o"}"#).unwrap();
    assert!(CampaignConfig::load(&p).is_err());
}

#[test]
fn layer_selection_rejects_non_gemm_layers() {
    let cfg = CampaignConfig { layers: Some(vec![1]), ..config(Mode::Rtl, 1) };
    assert!(Campaign::from_config(cfg).is_err());
    let cfg = CampaignConfig { layers: Some(vec![5]), ..config(Mode::Rtl, 4) };
    let r = Campaign::from_config(cfg).unwrap().run(0).unwrap();
    assert!(r.trials.iter().all(|t| t.layer == 5));
    assert_eq!(r.layers.len(), 1);
    assert!(r.layers[0].effective_fraction < 0.1);
}
