use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use signflow::dataset::{
    build_label_map, load_tensors, scan_dataset, split_indices, synth_gestures, write_corpus,
    DatasetError, LabelMap, SplitConfig, SynthConfig, TensorDataset, STANDARD_LABELS,
};
use signflow::infer::{Prediction, Recognizer, TranscriptConfig, TranscriptState};
use signflow::landmarks::{encode_sequence, FrameFeatures, GestureSequence, FEATURE_DIM};
use signflow::nn::{
    decode_model, encode_model, init_params, model_forward, predict_probs, Checkpoint, ModelParams,
    ModelSpec, ParamTensors,
};
use signflow::optim::AdamaxHyper;
use signflow::train::{evaluate, fit, TrainConfig};

fn write_label(root: &Path, label: &str, videos: usize, frames: usize, dim: usize) {
    let dir = root.join(label);
    fs::create_dir_all(&dir).unwrap();
    for v in 0..videos {
        let frames = (0..frames)
            .map(|t| FrameFeatures::with_dim(vec![(v * 31 + t) as f32 * 1e-3; dim], dim).unwrap())
            .collect();
        let seq = GestureSequence::with_dim(dim, frames, None).unwrap();
        fs::write(dir.join(format!("{v:02}.lmk")), encode_sequence(&seq)).unwrap();
    }
}

#[test]
fn short_label_is_flagged_not_padded() {
    let dir = tempfile::tempdir().unwrap();
    write_label(dir.path(), "Hello", 30, 30, 6);
    write_label(dir.path(), "Namaste", 29, 30, 6);
    let index = scan_dataset(dir.path()).unwrap();
    let stats = index.stats();
    assert_eq!(stats.files, 59);
    assert_eq!(stats.short_labels, ["Namaste"]);
    assert_eq!(index.entries[1].files.len(), 29);
}

#[test]
fn empty_root_gives_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let index = scan_dataset(dir.path()).unwrap();
    assert_eq!(index.file_count(), 0);
    assert_eq!(index.stats().labels, 0);
}

#[test]
fn numeric_file_order_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    write_label(dir.path(), "A", 12, 2, 3);
    // unpadded names must still sort numerically: 2 before 10
    for v in 0..12 {
        let dir = dir.path().join("A");
        fs::rename(
            dir.join(format!("{v:02}.lmk")),
            dir.join(format!("{v}.lmk")),
        )
        .unwrap();
    }
    let index = scan_dataset(dir.path()).unwrap();
    let names: Vec<String> = index.entries[0]
        .files
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, (0..12).map(|i| i.to_string()).collect::<Vec<_>>());
}

#[test]
fn loading_a_29_frame_file_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    write_label(dir.path(), "Hello", 1, 29, 4);
    let index = scan_dataset(dir.path()).unwrap();
    let labels = build_label_map(["Hello"]).unwrap();
    let err = load_tensors(&index, &labels, 30).unwrap_err();
    assert!(err.to_string().contains("00.lmk"), "{err}");
}

#[test]
fn single_video_single_class_shapes() {
    let dir = tempfile::tempdir().unwrap();
    write_label(dir.path(), "Hello", 1, 30, FEATURE_DIM);
    let index = scan_dataset(dir.path()).unwrap();
    let labels = build_label_map(["Hello"]).unwrap();
    let data = load_tensors(&index, &labels, 30).unwrap();
    assert_eq!(
        (data.len(), data.frames(), data.dims()),
        (1, 30, FEATURE_DIM)
    );
    assert_eq!(data.y(), [1.0]);
}

#[test]
fn unknown_label_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_label(dir.path(), "Stranger", 1, 30, 4);
    let index = scan_dataset(dir.path()).unwrap();
    let labels = build_label_map(["Hello"]).unwrap();
    assert!(load_tensors(&index, &labels, 30).is_err());
}

#[test]
fn written_corpus_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_gestures(SynthConfig {
        classes: 3,
        videos: 4,
        frames: 5,
        dims: 7,
        noise_sd: 0.05,
        seed: 2,
    })
    .unwrap();
    let labels = build_label_map(["x", "y", "z"]).unwrap();
    write_corpus(dir.path(), &data, &labels).unwrap();
    let index = scan_dataset(dir.path()).unwrap();
    let back = load_tensors(
        &index,
        &LabelMap::load(&dir.path().join("labels.json")).unwrap(),
        5,
    )
    .unwrap();
    assert_eq!(back.x(), data.x());
    assert_eq!(back.y(), data.y());
}

#[test]
fn standard_model_single_sample_probabilities() {
    let spec = ModelSpec::standard(30, FEATURE_DIM, 45);
    let params = init_params(&spec, 5).unwrap();
    let x: Vec<f64> = (0..30 * FEATURE_DIM)
        .map(|i| (i % 97) as f64 / 97.0)
        .collect();
    let (probs, _) = model_forward(&params, &x, 1).unwrap();
    assert_eq!(probs.len(), 45);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let zeros = ModelParams::zeros(&spec).unwrap();
    let uniform = predict_probs(&zeros, &x, 1).unwrap();
    assert!(uniform.iter().all(|p| (p - 1.0 / 45.0).abs() < 1e-15));
}

#[test]
fn batch_rows_match_single_sample_forward() {
    // the batch path splits work across threads; results must not depend on it
    let spec = ModelSpec::stacked(6, 5, &[4, 5], &[4, 3], 3);
    let params = init_params(&spec, 9).unwrap();
    let x: Vec<f64> = (0..7 * 6 * 5)
        .map(|i| ((i * 37) % 11) as f64 / 11.0)
        .collect();
    let batched = predict_probs(&params, &x, 7).unwrap();
    for b in 0..7 {
        let one = predict_probs(&params, &x[b * 30..(b + 1) * 30], 1).unwrap();
        assert_eq!(one, batched[b * 3..(b + 1) * 3]);
    }
}

#[test]
fn memorizes_four_samples() {
    let spec = ModelSpec::stacked(3, 2, &[8], &[8], 2);
    let mut params = init_params(&spec, 0).unwrap();
    let x = vec![
        0.1, 0.9, 0.2, 0.8, 0.1, 0.7, //
        0.9, 0.1, 0.8, 0.2, 0.9, 0.3, //
        0.2, 0.8, 0.1, 0.9, 0.3, 0.7, //
        0.8, 0.3, 0.9, 0.1, 0.7, 0.2,
    ];
    let data = TensorDataset::from_class_ids((3, 2, 2), x, &[0, 1, 0, 1]).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 2,
        ..Default::default()
    };
    let hyper = AdamaxHyper {
        lr: 0.01,
        ..Default::default()
    };
    let history = fit(&mut params, &data, &cfg, &hyper).unwrap();
    assert_eq!(history.len(), 200);
    assert_eq!(history.last().unwrap().categorical_accuracy, 1.0);
    assert_eq!(evaluate(&params, &data).unwrap().accuracy, 1.0);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let spec = ModelSpec::stacked(4, 3, &[5], &[4, 2], 2);
    let params = init_params(&spec, 12).unwrap();
    let labels = build_label_map(["Yes", "No"]).unwrap();
    let bytes = encode_model(&Checkpoint::new(params.clone(), labels, 12).unwrap());
    let back = decode_model(&bytes).unwrap();
    let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
    // weights persist as f32, so compare against the rounded model
    let mut rounded = params.clone();
    for t in rounded.tensors_mut() {
        for v in t.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
    assert_eq!(
        predict_probs(&back.params, &x, 1).unwrap(),
        predict_probs(&rounded, &x, 1).unwrap()
    );
    assert_eq!(back.labels.id("No"), Some(1));
    assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn standard_window_classifies_within_a_frame_interval() {
    let spec = ModelSpec::standard(30, FEATURE_DIM, 45);
    let params = init_params(&spec, 0).unwrap();
    let mut rec =
        Recognizer::new(params, LabelMap::standard(), TranscriptConfig::default()).unwrap();
    let frame = vec![0.5f32; FEATURE_DIM];
    for _ in 0..29 {
        rec.push_frame(&frame).unwrap();
    }
    // best of several runs, to ignore scheduler noise
    let best = (0..5)
        .map(|_| {
            let start = Instant::now();
            assert!(rec.push_frame(&frame).unwrap().is_some());
            start.elapsed()
        })
        .min()
        .unwrap();
    assert!(best < Duration::from_millis(33), "{best:?}");
}

#[test]
fn recognizer_can_move_between_threads() {
    fn assert_send<T: Send>() {}
    assert_send::<Recognizer>();
    let spec = ModelSpec::stacked(30, 2, &[2], &[], 2);
    let params = init_params(&spec, 0).unwrap();
    let labels = build_label_map(["a", "b"]).unwrap();
    let mut rec = Recognizer::new(params, labels, TranscriptConfig::default()).unwrap();
    for _ in 0..15 {
        rec.push_frame(&[0.1, 0.2]).unwrap();
    }
    let mut rec = std::thread::spawn(move || {
        for _ in 0..14 {
            rec.push_frame(&[0.1, 0.2]).unwrap();
        }
        rec
    })
    .join()
    .unwrap();
    assert!(rec.push_frame(&[0.1, 0.2]).unwrap().is_some());
}

#[test]
fn duplicate_and_empty_label_maps_are_rejected() {
    assert!(matches!(
        build_label_map(["A", "A"]),
        Err(DatasetError::DuplicateLabel(l)) if l == "A"
    ));
    assert_eq!(build_label_map(["Hello"]).unwrap().id("Hello"), Some(0));
    let standard = LabelMap::standard();
    assert_eq!(standard.len(), 45);
    assert_eq!(standard.id("A"), Some(0));
    assert_eq!(standard.label(44), Some(STANDARD_LABELS[44]));
    assert_eq!(standard.label(45), None);
}

fn pred(label: &str, p: f64) -> Prediction {
    Prediction {
        probs: vec![p],
        class_id: 0,
        label: label.into(),
        probability: p,
    }
}

proptest! {
    #[test]
    fn split_partitions_rows(n in 2usize..400, fraction in 0.01f64..0.99, seed: u64) {
        let cfg = SplitConfig { test_fraction: fraction, seed };
        if let Ok((train, test)) = split_indices(n, cfg) {
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(test.len(), (fraction * n as f64).ceil() as usize);
            prop_assert_eq!(split_indices(n, cfg).unwrap(), (train, test));
        }
    }

    #[test]
    fn transcript_only_grows_and_never_repeats(
        labels in proptest::collection::vec((0usize..3, 0.0f64..1.0), 0..300),
        stability in 1usize..12,
    ) {
        let names = ["A", "B", "C"];
        let mut t = TranscriptState::new(TranscriptConfig { threshold: 0.5, stability });
        let mut before: Vec<String> = Vec::new();
        for (l, p) in labels {
            t.update(&pred(names[l], p));
            prop_assert!(t.words().starts_with(&before));
            prop_assert!(t.words().len() <= before.len() + 1);
            before = t.words().to_vec();
        }
        prop_assert!(t.words().windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn one_prediction_per_frame_after_warm_up(frames in 0usize..70) {
        let spec = ModelSpec::stacked(30, 2, &[2], &[], 2);
        let params = init_params(&spec, 1).unwrap();
        let labels = build_label_map(["a", "b"]).unwrap();
        let mut rec = Recognizer::new(params, labels, TranscriptConfig::default()).unwrap();
        let mut produced = 0;
        for i in 0..frames {
            if rec.push_frame(&[i as f32 * 0.01, 0.5]).unwrap().is_some() {
                produced += 1;
            }
            prop_assert!(rec.window().len() <= 30);
        }
        prop_assert_eq!(produced, frames.saturating_sub(29));
    }
}
