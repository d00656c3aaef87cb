use super::*;
use crate::data::{synth_generate, SynthSpec, WindowConfig};
use crate::models::InterModule;

const TOML: &str = r#"
output_dir = "out"

[data]
dir = "data"
sampling_rate = 50.0

[window]
window_seconds = 1.0
overlap_seconds = 0.5
"#;

fn tiny(variant: ModelVariant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    cfg.window = WindowConfig::new(0.4, 0.2);
    cfg.model = ModelSettings {
        variant,
        kernel: 3,
        conv_layers: 2,
        filters: 4,
        lstm_hidden: 8,
        attn_heads: 2,
        transformer_layers: 1,
        ..ModelSettings::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 10;
    cfg.train.seeds = vec![0, 1];
    cfg
}

fn tiny_data(subjects: usize) -> Dataset {
    let spec = SynthSpec::separable(subjects, 3, 50.0, 12.0, 1);
    Dataset::new(synth_generate(&spec).unwrap(), Some(3)).unwrap()
}

#[test]
fn config_defaults_follow_training_protocol() {
    let cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    assert_eq!(cfg.train.epochs, 30);
    assert_eq!(cfg.train.batch_size, 100);
    assert_eq!(cfg.train.seeds.len(), 3);
    assert_eq!(cfg.train.schedule.base_lr, 1e-4);
    assert_eq!(cfg.train.schedule.decay_factor, 0.9);
    assert_eq!(cfg.train.schedule.decay_period_epochs, 10);
    assert_eq!(cfg.train.adam.weight_decay, 1e-6);
    assert_eq!(cfg.model.kernel, 9);
    assert_eq!(cfg.model.filters, 64);
    assert_eq!(cfg.model.lstm_hidden, 128);
    assert_eq!(cfg.model.dropout, 0.5);
    assert_eq!(cfg.eval.tiou_thresholds.values(), [0.3, 0.4, 0.5, 0.6, 0.7]);
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_errors_are_config_errors() {
    let missing_window = "[data]\ndir = \"d\"\nsampling_rate = 50.0\n";
    let typo = format!("{TOML}\n[train]\nepochz = 3\n");
    let zero_epochs = format!("{TOML}\n[train]\nepochs = 0\n");
    let bad_variant = format!("{TOML}\n[model]\nvariant = \"dcc-gru\"\n");
    let short_window = TOML.replace("window_seconds = 1.0", "window_seconds = 0.6");
    for text in [missing_window, &typo, &zero_epochs, &bad_variant, &short_window] {
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}

#[test]
fn eval_batch_rule() {
    let mut cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    cfg.model.variant = ModelVariant::DeepConvLstm;
    assert_eq!(cfg.eval_batch(), 1);
    for v in ModelVariant::all().into_iter().skip(1) {
        cfg.model.variant = v;
        assert_eq!(cfg.eval_batch(), 100);
    }
}

#[test]
fn output_dir_env_override() {
    let cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    // Only this test touches the variable.
    std::env::remove_var(OUTPUT_DIR_ENV);
    assert_eq!(cfg.resolved_output_dir(), Path::new("out"));
    std::env::set_var(OUTPUT_DIR_ENV, "/tmp/elsewhere");
    assert_eq!(cfg.resolved_output_dir(), Path::new("/tmp/elsewhere"));
    std::env::remove_var(OUTPUT_DIR_ENV);
}

#[test]
fn loso_runs_every_seed_and_fold() {
    let cfg = tiny(ModelVariant::DeepConvContext(InterModule::Lstm));
    let out = run_loso(&cfg, &tiny_data(3)).unwrap();
    assert_eq!(out.runs.len(), 6);
    assert_eq!(out.report.seeds.len(), 2);
    assert!(out.report.seeds.iter().all(|s| s.subjects.len() == 3));
    assert_eq!(out.runs[0].epochs.len(), 2);
    let samples: u64 = out.report.confusion.iter().flatten().sum();
    assert!(samples > 0);
}

#[test]
fn loso_is_deterministic_and_parallel_safe() {
    let mut cfg = tiny(ModelVariant::DeepConvContext(InterModule::CausalAttention));
    let ds = tiny_data(2);
    let a = run_loso(&cfg, &ds).unwrap();
    let b = run_loso(&cfg, &ds).unwrap();
    cfg.train.parallel_folds = true;
    let c = run_loso(&cfg, &ds).unwrap();
    let json = |o: &LosoOutcome| serde_json::to_string_pretty(&o.report).unwrap();
    assert_eq!(json(&a), json(&b));
    assert_eq!(json(&a), json(&c));
}

#[test]
fn deepconvlstm_eval_independent_of_batch_size() {
    let cfg = tiny(ModelVariant::DeepConvLstm);
    let ds = tiny_data(2);
    let train: Vec<&RawRecording> = ds.recordings[..1].iter().collect();
    let trained = train_model(&cfg, 3, &train, 0, "fold").unwrap();
    let seq = sliding_window(&trained.normalizer.apply(&ds.recordings[1]), &cfg.window).unwrap();
    let single = predict_windows(&trained.model, &seq, 1).unwrap();
    for b in [7, 100] {
        let batched = predict_windows(&trained.model, &seq, b).unwrap();
        for (x, y) in single.iter().zip(&batched) {
            assert_eq!(x.class, y.class);
            for (p, q) in x.probs.iter().zip(&y.probs) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn schedule_recorded_per_epoch() {
    let mut cfg = tiny(ModelVariant::DeepConvLstm);
    cfg.train.epochs = 3;
    cfg.train.schedule.decay_period_epochs = 1;
    let ds = tiny_data(2);
    let train: Vec<&RawRecording> = ds.recordings.iter().collect();
    let t = train_model(&cfg, 3, &train, 0, "all").unwrap();
    let lrs: Vec<f64> = t.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, [1e-4, 1e-4 * 0.9, 1e-4 * 0.9 * 0.9]);
}

#[test]
fn divergence_is_reported() {
    let mut cfg = tiny(ModelVariant::DeepConvLstm);
    cfg.train.schedule.base_lr = 1e300;
    let ds = tiny_data(2);
    let train: Vec<&RawRecording> = ds.recordings.iter().collect();
    let err = train_model(&cfg, 3, &train, 0, "s01").unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn sweep_rows_and_single_window_warning() {
    let mut cfg = tiny(ModelVariant::DeepConvContext(InterModule::Lstm));
    cfg.train.epochs = 1;
    cfg.train.seeds = vec![0];
    let rows = run_batch_sweep(&cfg, &tiny_data(2), &[1, 20]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].warning.as_deref(), Some("context length = single window"));
    assert!(rows[1].warning.is_none());
    assert!((rows[1].context_length_seconds - 20.0 * 0.2).abs() < 1e-12);
}

#[test]
fn complexity_table_at_reference_settings() {
    let cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    let rows = complexity_report(&cfg, 3, 6).unwrap();
    let counts: Vec<usize> = rows.iter().take(6).map(|r| r.param_count).collect();
    assert_eq!(counts, [277_062, 277_062, 704_198, 837_062, 638_150, 638_150]);
    assert_eq!(rows[2].context_length_seconds, Some(50.0));
    assert_eq!(rows[0].context_length_seconds, Some(1.0));
    assert!(rows[6].note.as_deref().unwrap().starts_with("not reconciled"));
    assert!(rows[2].note.is_none());
}

#[test]
fn dataset_loads_directory_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_generate(&SynthSpec::separable(3, 2, 50.0, 2.0, 4)).unwrap();
    for r in recs.iter().rev() {
        crate::data::write_csv(r, &dir.path().join(format!("{}.csv", r.subject_id)), None).unwrap();
    }
    let mut cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    cfg.data.dir = dir.path().to_path_buf();
    let ds = load_dataset(&cfg).unwrap();
    let ids: Vec<&str> = ds.recordings.iter().map(|r| r.subject_id.as_str()).collect();
    assert_eq!(ids, ["s01", "s02", "s03"]);
    assert_eq!(ds.n_classes, 2);

    cfg.data.dir = dir.path().join("missing");
    assert_eq!(load_dataset(&cfg).unwrap_err().exit_code(), 3);
}
