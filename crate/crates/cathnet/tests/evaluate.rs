mod common;

use cathnet::evaluate::{evaluate_model, evaluate_oracle, EvalError};
use cathnet::report::write_report;
use cathnet::trainer::{DataSplits, Trainer};
use cathnet_core::model::Network;
use cathnet_core::pipeline::DecodeConfig;
use cathnet_core::synth::GeneratorConfig;
use common::tiny_config;

#[test]
fn oracle_injection_scores_perfectly() {
    let records = cathnet::dataset::generate_records(4, 0, 30, &GeneratorConfig::default()).unwrap();
    let r = evaluate_oracle(&records, &DecodeConfig::default()).unwrap();
    assert_eq!(r.ap, 1.0);
    assert_eq!(r.mean_j, 1.0);
    assert_eq!(r.mae_px, 0.0);
}

#[test]
fn empty_dataset_is_rejected() {
    let cfg = tiny_config(std::path::Path::new("unused"));
    let (net, params) = Network::new(cfg.model.clone(), 0).unwrap();
    assert!(matches!(evaluate_model(&net, &params, &[], &DecodeConfig::default(), 4), Err(EvalError::Empty)));
    assert!(matches!(evaluate_oracle(&[], &DecodeConfig::default()), Err(EvalError::Empty)));
}

#[test]
fn size_mismatch_names_both_sizes() {
    let cfg = tiny_config(std::path::Path::new("unused"));
    let (net, params) = Network::new(cfg.model.clone(), 0).unwrap();
    let records = cathnet::dataset::generate_records(0, 0, 2, &GeneratorConfig::default()).unwrap();
    let err = evaluate_model(&net, &params, &records, &DecodeConfig::default(), 4).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("32×32") && msg.contains("64×64"), "{msg}");
}

#[test]
fn repeated_evaluation_gives_identical_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut t = Trainer::new(cfg.clone(), DataSplits::load(&cfg).unwrap()).unwrap();
    for _ in 0..4 {
        t.step().unwrap();
    }
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            std::fs::create_dir_all(&out).unwrap();
            let r = t.evaluate(&t.data.test).unwrap();
            write_report(&out, &r, "test", 4).unwrap();
            out
        })
        .collect();
    for f in ["report.json", "per_sample.csv"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    // batch size does not change the scores
    let a = evaluate_model(&t.network, &t.params, &t.data.test, &cfg.eval.decode, 1).unwrap();
    let b = evaluate_model(&t.network, &t.params, &t.data.test, &cfg.eval.decode, 3).unwrap();
    assert_eq!(a, b);
}
