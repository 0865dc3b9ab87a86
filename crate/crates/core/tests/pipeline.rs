//! End-to-end runs through the public API.

use mixb2d::data::{load_idx, save_idx, split, SplitMode, SplitSpec};
use mixb2d::eval::{run_recognition, synth_generate, ModelKind, RecognitionConfig, SyntheticSpec};
use mixb2d::model::{self, avg_recon_error, project_new};
use mixb2d::persist::Container;
use mixb2d::{FitConfig, MixtureParams};

fn clustered(seed: u64) -> mixb2d::data::SampleSet {
    let spec = SyntheticSpec::separated(3, (7, 6, 2, 2), 8.0, 0.5, 0.02, 90, seed);
    synth_generate(&spec).unwrap().0
}

#[test]
fn fit_save_load_project() {
    let data = clustered(3);
    let fit = model::fit(&data, &FitConfig::new(3, 2, 2)).unwrap();
    assert!(fit.trace.len() <= 50);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    fit.params.to_container(&[]).save(&path).unwrap();
    let params = MixtureParams::from_container(&Container::load(&path).unwrap()).unwrap();
    assert_eq!(params, fit.params);

    for n in [0, 17, 89] {
        let proj = project_new(data.sample(n), &params).unwrap();
        assert_eq!(proj.assigned, fit.gamma.argmax(n));
        for k in 0..3 {
            let stored = &fit.latent.get(n, k).core;
            assert!((&proj.cores[k] - stored).frobenius() <= 1e-8 * (1.0 + stored.frobenius()));
        }
    }
    let projected: Vec<_> = data
        .samples()
        .iter()
        .map(|x| project_new(x, &params).unwrap().reconstruct(&params))
        .collect();
    let e = avg_recon_error(&data, &projected).unwrap();
    assert!((e - avg_recon_error(&data, &fit.reconstructions()).unwrap()).abs() < 1e-8);
}

#[test]
fn idx_round_trip_feeds_a_split() {
    let data = clustered(4);
    let scaled: Vec<_> = data
        .samples()
        .iter()
        .map(|x| x.map(|v| ((v + 20.0) / 40.0).clamp(0.0, 1.0)))
        .collect();
    let labels: Vec<u32> = data.labels().unwrap().to_vec();
    let set = mixb2d::data::SampleSet::new(scaled, Some(labels)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    save_idx(&set, &img, Some(&lbl)).unwrap();
    let back = load_idx(&img, Some(&lbl)).unwrap();
    assert_eq!(back.labels(), set.labels());
    for (a, b) in back.samples().iter().zip(set.samples()) {
        assert!((a - b).max_abs() <= 0.5 / 255.0 + 1e-12);
    }

    let spec = SplitSpec {
        mode: SplitMode::PerClassCount,
        train_per_class: 5,
        test_per_class: Some(4),
        seed: 1,
    };
    let (train, test) = split(&back, &spec).unwrap();
    assert_eq!((train.len(), test.len()), (15, 12));
}

#[test]
fn recognition_on_separable_classes() {
    let data = clustered(5);
    for kind in [ModelKind::MixB2dPpca, ModelKind::Glram, ModelKind::MixPpca] {
        let k = if kind == ModelKind::Glram { 1 } else { 2 };
        let cfg = RecognitionConfig {
            train_per_class: 8,
            trials: 3,
            ..RecognitionConfig::new(kind, k, 2, 2)
        };
        let res = run_recognition(&data, &cfg).unwrap();
        assert_eq!(res.trials.len(), 3);
        // vectorial PPCA features drop mean offsets orthogonal to its loadings
        let floor = if kind == ModelKind::MixPpca { 0.9 } else { 1.0 };
        assert!(res.mean >= floor, "{} {}", kind.name(), res.mean);
    }
}
