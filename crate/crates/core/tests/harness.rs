use std::sync::OnceLock;

use scait_core::harness::{evaluate_point, load_split, run_sweep, train_models, ExperimentConfig, Models, Point, Scheme};
use scait_core::kb::save_kb;
use scait_core::nn::{accuracy, save_checkpoint};
use scait_core::{ChannelConfig, CompressionRatio, DatasetSplit, Fec};

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("dataset.per_class", "20"),
        ("dataset.size", "16"),
        ("train.epochs", "30"),
        ("train.batch_size", "16"),
        ("train.learning_rate", "0.02"),
        ("semantic.epochs", "2"),
        ("cr", "0, 0.75"),
        ("snr_db", "3, inf"),
        ("quality", "50"),
        ("seeds", "1, 2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn fixture() -> &'static (ExperimentConfig, DatasetSplit, Models) {
    static F: OnceLock<(ExperimentConfig, DatasetSplit, Models)> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = config();
        let split = load_split(&cfg).unwrap();
        let models = train_models(&cfg, &split).unwrap().models;
        (cfg, split, models)
    })
}

#[test]
fn training_is_reproducible() {
    let (cfg, split, models) = fixture();
    let again = train_models(cfg, split).unwrap().models;
    assert_eq!(again.semantic.params(), models.semantic.params());
    assert_eq!(again.baseline.params(), models.baseline.params());
    assert_eq!(again.kb, models.kb);
}

#[test]
fn sweep_rows_reproduce_except_measured_time() {
    let (cfg, split, models) = fixture();
    let a = run_sweep(cfg, models, &split.test).unwrap();
    let b = run_sweep(cfg, models, &split.test).unwrap();
    // (2 + 2 + 1 points) x 2 SNRs x 2 seeds
    assert_eq!(a.rows.len(), 20);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(
            (&x.scheme, x.cr_or_quality, x.snr_db, x.seed, x.accuracy, x.bpp_air, x.transmission_delay_ms),
            (&y.scheme, y.cr_or_quality, y.snr_db, y.seed, y.accuracy, y.bpp_air, y.transmission_delay_ms)
        );
    }
    // common random numbers: at cr = 0 both semantic schemes send every map
    let full = |s: &str| a.rows.iter().filter(|r| r.scheme == s && r.cr_or_quality == 0.0).map(|r| r.accuracy).collect::<Vec<_>>();
    assert_eq!(full("sc_ait"), full("sc_random"));
}

#[test]
fn noiseless_full_frame_matches_clean_accuracy() {
    let (_, split, models) = fixture();
    let clean = accuracy(&models.semantic, &split.test).unwrap();
    let channel = ChannelConfig {
        snr_db: f64::INFINITY,
        fec: Fec::Hamming74,
        seed: 5,
    };
    let res = evaluate_point(models, &split.test, Scheme::ScAit, Point::Cr(CompressionRatio::new(0.0).unwrap()), &channel).unwrap();
    assert!((res.accuracy - clean).abs() <= 0.01, "{} vs {clean}", res.accuracy);
    assert_eq!(res.ber, 0.0);
}

#[test]
fn saved_artifacts_reload_identically() {
    let (cfg, split, models) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg.clone();
    cfg.checkpoint = dir.path().join("s.ckpt");
    cfg.baseline_checkpoint = dir.path().join("b.ckpt");
    cfg.kb = dir.path().join("kb.txt");
    save_checkpoint(&models.semantic, &cfg.checkpoint).unwrap();
    save_checkpoint(&models.baseline, &cfg.baseline_checkpoint).unwrap();
    save_kb(&models.kb, &cfg.kb).unwrap();
    let (loaded, warnings) = Models::load(&cfg).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(loaded.semantic.params(), models.semantic.params());
    assert_eq!(loaded.kb.to_text(), models.kb.to_text());
    assert_eq!(loaded.kb.ranking(), models.kb.ranking());

    // a KB from the other checkpoint still loads, with a warning
    save_kb(&scait_core::kb::build_kb(&models.baseline, split).unwrap(), &cfg.kb).unwrap();
    let (_, warnings) = Models::load(&cfg).unwrap();
    assert_eq!(warnings.len(), 1);
}

#[test]
fn missing_checkpoint_is_a_setup_error() {
    let mut cfg = config();
    cfg.checkpoint = "/nonexistent/s.ckpt".into();
    let err = Models::load(&cfg).unwrap_err();
    assert!(err.is_setup(), "{err}");
}
