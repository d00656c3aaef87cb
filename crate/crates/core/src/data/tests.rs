use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rec(id: &str, labels: Vec<usize>) -> RawRecording {
    let n = labels.len();
    let ch = (0..n).map(|t| t as f64).collect();
    RawRecording::new(id, 50.0, vec!["x".into()], vec![ch], labels).unwrap()
}

fn cfg(w: f64, o: f64) -> WindowConfig {
    WindowConfig::new(w, o)
}

#[test]
fn window_starts_follow_stride() {
    let r = rec("a", vec![0; 100]);
    let seq = sliding_window(&r, &cfg(1.0, 0.5)).unwrap();
    let starts: Vec<usize> = seq.windows.iter().map(|w| w.sample_range.start).collect();
    assert_eq!(starts, [0, 25, 50]);
    assert_eq!(seq.stride_samples, 25);
    for w in &seq.windows {
        assert_eq!(w.data, r.slice(w.sample_range.clone()));
    }
}

#[test]
fn window_count_formula() {
    for n in 50..140 {
        let seq = sliding_window(&rec("a", vec![0; n]), &cfg(1.0, 0.3)).unwrap();
        assert_eq!(seq.windows.len(), (n - 50) / 35 + 1);
        assert!(seq.windows.last().unwrap().sample_range.end <= n);
    }
}

#[test]
fn short_recording_rejected() {
    assert!(sliding_window(&rec("a", vec![0; 49]), &cfg(1.0, 0.0)).is_err());
    assert!(sliding_window(&rec("a", vec![0; 60]), &cfg(1.0, 1.0)).is_err());
}

#[test]
fn non_overlapping_windows_tile_prefix() {
    let seq = sliding_window(&rec("a", vec![0; 130]), &cfg(0.5, 0.0)).unwrap();
    for pair in seq.windows.windows(2) {
        assert_eq!(pair[0].sample_range.end, pair[1].sample_range.start);
    }
    assert_eq!(seq.windows.len(), 5);
}

#[test]
fn majority_label_and_ties() {
    let mut labels = vec![0; 26];
    labels.extend(vec![1; 24]);
    let seq = sliding_window(&rec("a", labels), &cfg(1.0, 0.0)).unwrap();
    assert_eq!(seq.windows[0].label, 0);

    // 25/25 tie: class 3 appears at sample 0, class 1 from sample 10.
    let mut labels = vec![3; 10];
    labels.extend(vec![1; 25]);
    labels.extend(vec![3; 15]);
    let seq = sliding_window(&rec("a", labels.clone()), &cfg(1.0, 0.0)).unwrap();
    assert_eq!(seq.windows[0].label, 3);

    let mut c = cfg(1.0, 0.0);
    c.label_rule = LabelRule::LastSample;
    labels[49] = 1;
    assert_eq!(sliding_window(&rec("a", labels), &c).unwrap().windows[0].label, 1);
}

#[test]
fn loso_partitions_subjects() {
    let recs: Vec<_> = ["a", "b", "c"].iter().map(|s| rec(s, vec![0; 60])).collect();
    let splits = loso_splits(&recs).unwrap();
    assert_eq!(splits.len(), 3);
    for s in &splits {
        assert!(!s.train_subjects.contains(&s.held_out_subject));
        assert_eq!(s.train_subjects.len(), 2);
    }
    let held: Vec<_> = splits.iter().map(|s| s.held_out_subject.as_str()).collect();
    assert_eq!(held, ["a", "b", "c"]);
    assert!(loso_splits(&recs[..1]).is_err());
    assert!(loso_splits(&[recs[0].clone(), recs[0].clone()]).is_err());
}

fn seq_with(n: usize) -> WindowedSequence {
    sliding_window(&rec("s", vec![0; 50 + (n - 1) * 10]), &cfg(1.0, 0.8)).unwrap()
}

#[test]
fn batches_respect_subjects_and_order() {
    let one = [seq_with(250)];
    let sizes: Vec<_> = make_batches(&one, 100, PartialPolicy::Keep).unwrap().iter().map(Batch::len).collect();
    assert_eq!(sizes, [100, 100, 50]);
    let dropped: Vec<_> = make_batches(&one, 100, PartialPolicy::Drop).unwrap().iter().map(Batch::len).collect();
    assert_eq!(dropped, [100, 100]);

    let two = [seq_with(150), seq_with(150)];
    let batches = make_batches(&two, 100, PartialPolicy::Keep).unwrap();
    let sizes: Vec<_> = batches.iter().map(|b| (b.sequence, b.len())).collect();
    assert_eq!(sizes, [(0, 100), (0, 50), (1, 100), (1, 50)]);

    let order: Vec<(usize, usize)> = batches.iter().flat_map(|b| b.windows.clone().map(|w| (b.sequence, w))).collect();
    let expected: Vec<(usize, usize)> = (0..2).flat_map(|s| (0..150).map(move |w| (s, w))).collect();
    assert_eq!(order, expected);
    assert!(make_batches(&two, 0, PartialPolicy::Keep).is_err());
}

#[test]
fn batch_inputs_stack_windows() {
    let seqs = [seq_with(5)];
    let b = &make_batches(&seqs, 3, PartialPolicy::Keep).unwrap()[1];
    let x = b.inputs(&seqs);
    assert_eq!(x.shape(), &[2, 50, 1]);
    assert_eq!(x.data()[0], 30.0);
    assert_eq!(x.data()[50], 40.0);
}

#[test]
fn class_weight_examples() {
    assert_eq!(class_weights(&[0, 1, 0, 1], 2).unwrap(), [1.0, 1.0]);
    let mut labels = vec![0; 90];
    labels.extend(vec![1; 10]);
    let w = class_weights(&labels, 2).unwrap();
    // Raw inverse frequencies 100/180 and 100/20, rescaled to mean 1.
    let raw = [100.0 / 180.0, 5.0];
    let mean = (raw[0] + raw[1]) / 2.0;
    assert!((w[0] - raw[0] / mean).abs() < 1e-12 && (w[0] - 0.2).abs() < 1e-12);
    assert!((w[1] - raw[1] / mean).abs() < 1e-12 && (w[1] - 1.8).abs() < 1e-12);
    let w = class_weights(&[0, 0, 2], 3).unwrap();
    assert_eq!(w[1], 0.0);
    assert!(((w[0] + w[2]) / 2.0 - 1.0).abs() < 1e-12);
    assert!(class_weights(&[], 2).is_err());
    assert!(class_weights(&[5], 2).is_err());
}

#[test]
fn normalizer_uses_training_statistics() {
    let train = rec("a", vec![0; 4]);
    let other = RawRecording::new("b", 50.0, vec!["x".into()], vec![vec![10.0; 4]], vec![0; 4]).unwrap();
    let norm = Normalizer::fit([&train]).unwrap();
    assert_eq!(norm.mean, [1.5]);
    assert!((norm.std[0] - 1.25f64.sqrt()).abs() < 1e-12);
    let z = norm.apply(&train);
    let m: f64 = z.channels[0].iter().sum::<f64>() / 4.0;
    assert!(m.abs() < 1e-12);
    assert_eq!(norm.apply(&other).channels[0][0], (10.0 - 1.5) / 1.25f64.sqrt());
    let flat = Normalizer::fit([&other]).unwrap();
    assert_eq!(flat.std, [1.0]);
}

#[test]
fn csv_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("subj7.csv");
    std::fs::write(&p, "sample_index,ax,ay,label\n0,1.5,-2,3\n").unwrap();
    let r = load_csv(&p, 50.0).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r.subject_id, "subj7");
    assert_eq!(r.channels, [vec![1.5], vec![-2.0]]);
    assert_eq!(r.labels, [3]);
}

fn parse_line(text: &str, map: Option<&str>) -> Option<usize> {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    std::fs::write(&p, text).unwrap();
    if let Some(m) = map {
        std::fs::write(dir.path().join(LABEL_MAP_FILE), m).unwrap();
    }
    match load_csv(&p, 50.0) {
        Err(crate::error::DataError::Parse { line, .. }) => Some(line),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => None,
    }
}

#[test]
fn csv_errors_carry_line_numbers() {
    let map = Some(r#"{"walk": 0, "run": 1}"#);
    assert_eq!(parse_line("sample_index,x,label\n0,1,walk\n1,2,run\n", map), None);
    assert_eq!(parse_line("sample_index,x,label\n0,1,walk\n1,2,unknown_class\n", map), Some(3));
    assert_eq!(parse_line("sample_index,x,label\n0,1,walk\n1,2\n", map), Some(3));
    assert_eq!(parse_line("sample_index,x,label\n5,1,1\n5,2,1\n", None), Some(3));
    assert_eq!(parse_line("sample_index,x,label\n0,abc,1\n", None), Some(2));
    assert_eq!(parse_line("sample_index,x,label\n0,1,1\n1,NaN,1\n", None), Some(3));
    assert_eq!(parse_line("sample_index,x,label\n0,inf,1\n", None), Some(2));
    assert_eq!(parse_line("idx,x,label\n0,1,1\n", None), Some(1));
    assert_eq!(parse_line("sample_index,x,label\n0,1,walk\n", None), Some(2));
}

#[test]
fn csv_roundtrip_is_bit_exact() {
    let spec = SynthSpec {
        samples_per_subject: 1000,
        ..SynthSpec::separable(1, 3, 50.0, 20.0, 9)
    };
    let r = synth_generate(&spec).unwrap().remove(0);
    assert_eq!(r.num_channels(), 3);
    let dir = tempfile::tempdir().unwrap();
    let map: LabelMap = [("a".to_string(), 0), ("b".to_string(), 1), ("c".to_string(), 2)].into();
    write_label_map(&map, &dir.path().join(LABEL_MAP_FILE)).unwrap();
    let p = dir.path().join(format!("{}.csv", r.subject_id));
    write_csv(&r, &p, Some(&map)).unwrap();
    let back = load_csv(&p, 50.0).unwrap();
    let bits = |r: &RawRecording| r.channels.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&r));
    assert_eq!(back, r);
}

#[test]
fn synth_is_deterministic() {
    let spec = SynthSpec::separable(2, 4, 50.0, 30.0, 3);
    assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
    let other = SynthSpec { seed: 4, ..spec.clone() };
    assert_ne!(synth_generate(&spec).unwrap(), synth_generate(&other).unwrap());
}

#[test]
fn identity_chain_stays_in_one_class() {
    let mut spec = SynthSpec::separable(3, 4, 50.0, 20.0, 1);
    spec.transitions = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for r in synth_generate(&spec).unwrap() {
        assert!(r.labels.iter().all(|&l| l == r.labels[0]));
    }
}

#[test]
fn invalid_chain_rejected() {
    let mut spec = SynthSpec::separable(1, 2, 50.0, 2.0, 1);
    spec.transitions[0] = vec![0.7, 0.7];
    assert!(synth_generate(&spec).is_err());
    spec.transitions[0] = vec![1.2, -0.2];
    assert!(synth_generate(&spec).is_err());
}

/// Left eigenvector of a stochastic matrix by power iteration.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| pi[i] * p[i][j]).sum()).collect();
        pi = next;
    }
    pi
}

#[test]
fn class_frequencies_match_stationary_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 5;
    let transitions: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let spec = SynthSpec {
        n_channels: 1,
        samples_per_subject: 1_000_000,
        transitions: transitions.clone(),
        signatures: (0..n)
            .map(|c| ClassSignature {
                offset: vec![c as f64],
                amplitude: vec![0.0],
                frequency_hz: 1.0,
            })
            .collect(),
        ..SynthSpec::separable(1, n, 50.0, 1.0, 5)
    };
    let r = synth_generate(&spec).unwrap().remove(0);
    let pi = stationary(&transitions);
    for c in 0..n {
        let freq = r.labels.iter().filter(|&&l| l == c).count() as f64 / r.len() as f64;
        assert!((freq - pi[c]).abs() < 0.02, "class {c}: {freq} vs {}", pi[c]);
    }
}

#[test]
fn context_rule_shares_signature() {
    let spec = SynthSpec::context(1, 50.0, 300.0, 5.0, 2);
    let r = synth_generate(&spec).unwrap().remove(0);
    // X (2) is preceded by A (0) and Y (3) by B (1).
    for t in 1..r.len() {
        let (prev, cur) = (r.labels[t - 1], r.labels[t]);
        if prev != cur {
            match cur {
                2 => assert_eq!(prev, 0),
                3 => assert_eq!(prev, 1),
                _ => assert!(prev >= 2),
            }
        }
    }
    let noiseless = SynthSpec { noise_std: 0.0, ..spec };
    let r = synth_generate(&noiseless).unwrap().remove(0);
    // Identical signatures: the signal is a function of time alone on X and Y.
    let sig = &noiseless.signatures[2];
    for t in 0..r.len() {
        if r.labels[t] >= 2 {
            let phase = 2.0 * std::f64::consts::PI * sig.frequency_hz * t as f64 / 50.0;
            assert_eq!(r.channels[0][t], sig.offset[0] + sig.amplitude[0] * phase.sin());
        }
    }
}

#[test]
fn context_preset_shortens_ambiguous_segments() {
    let spec = SynthSpec::context(1, 50.0, 10.0, 4.0, 0);
    let stay: Vec<f64> = (0..4).map(|c| spec.transitions[c][c]).collect();
    assert_eq!(stay, [1.0 - 1.0 / 200.0, 1.0 - 1.0 / 200.0, 1.0 - 1.0 / 100.0, 1.0 - 1.0 / 100.0]);
    assert_eq!(spec.transitions[2][0], 0.5 / 100.0);
}
