use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsplat::datagen::{emit_dataset, DataConfig, Dataset, SceneConfig};
use seqsplat::model::{DecoderConfig, EncoderConfig, Mode, ModelConfig, PlannerConfig, SceneTensors};
use seqsplat::scene::{random_scene, save_scene};
use seqsplat::train::{run_train, EncoderInit, TrainConfig, TrainOptions};
use seqsplat_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        seqsplat_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(seqsplat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_report_null_pointer() {
    let mut scene = ptr::null_mut();
    let status = unsafe { seqsplat_scene_load(ptr::null(), &mut scene) };
    assert_eq!(status, SeqsplatStatus::NullPointer);
    assert!(scene.is_null());
    assert_eq!(last_error(), "path is NULL");

    let mut out = SeqsplatStepScores::default();
    let status = unsafe { seqsplat_step_scores(ptr::null(), ptr::null(), 3, &mut out) };
    assert_eq!(status, SeqsplatStatus::NullPointer);

    let mut feats = ptr::null_mut();
    assert_eq!(unsafe { seqsplat_lift(ptr::null(), 2, 8, 8, &mut feats) }, SeqsplatStatus::NullPointer);
    assert_eq!(unsafe { seqsplat_scene_len(ptr::null()) }, 0);
    assert_eq!(unsafe { seqsplat_prediction_steps(ptr::null()) }, 0);
    unsafe {
        seqsplat_scene_free(ptr::null_mut());
        seqsplat_features_free(ptr::null_mut());
        seqsplat_model_free(ptr::null_mut());
        seqsplat_prediction_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("absent.ply"));
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { seqsplat_scene_load(missing.as_ptr(), &mut scene) }, SeqsplatStatus::Io);
    assert!(last_error().contains("absent.ply"));

    let junk = dir.path().join("junk.ply");
    std::fs::write(&junk, b"not a ply file").unwrap();
    let junk = cstr(&junk);
    assert_eq!(unsafe { seqsplat_scene_load(junk.as_ptr(), &mut scene) }, SeqsplatStatus::Parse);

    let pred = [0.1, 0.9];
    let mut seq = SeqsplatSequenceScores::default();
    let status = unsafe { seqsplat_sequential_scores(pred.as_ptr(), 0, pred.as_ptr(), 0, 2, &mut seq) };
    assert_eq!(status, SeqsplatStatus::Invalid);
    assert!(!last_error().is_empty());

    let mut out = SeqsplatStepScores::default();
    // A successful call clears the message.
    let status = unsafe { seqsplat_step_scores(pred.as_ptr(), pred.as_ptr(), 2, &mut out) };
    assert_eq!(status, SeqsplatStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn last_error_truncates_and_reports_full_length() {
    let mut scene = ptr::null_mut();
    unsafe { seqsplat_scene_load(ptr::null(), &mut scene) };
    let full = unsafe { seqsplat_last_error(ptr::null_mut(), 0) };
    assert_eq!(full, "path is NULL".len());
    let mut buf = [1 as c_char; 5];
    let n = unsafe { seqsplat_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full);
    let got = unsafe { CStr::from_ptr(buf.as_ptr()) };
    assert_eq!(got.to_str().unwrap(), "path");
}

#[test]
fn metrics_match_the_core_library() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let t_pred = rng.random_range(1..4);
        let t_gt = rng.random_range(1..4);
        let mut masks = |t: usize, soft: bool| -> Vec<Vec<f64>> {
            (0..t)
                .map(|_| {
                    (0..n)
                        .map(|_| if soft { rng.random::<f64>() } else { f64::from(rng.random_bool(0.4) as u8) })
                        .collect()
                })
                .collect()
        };
        let pred = masks(t_pred, true);
        let gt = masks(t_gt, false);

        let want = seqsplat::metrics::step_scores(&pred[0], &gt[0]).unwrap();
        let mut got = SeqsplatStepScores::default();
        let status = unsafe { seqsplat_step_scores(pred[0].as_ptr(), gt[0].as_ptr(), n, &mut got) };
        assert_eq!(status, SeqsplatStatus::Ok);
        assert_eq!((got.iou, got.auc, got.sim, got.mae), (want.iou, want.auc, want.sim, want.mae));

        let want = seqsplat::metrics::sequential_metrics(&pred, &gt).unwrap();
        let flat_p: Vec<f64> = pred.concat();
        let flat_g: Vec<f64> = gt.concat();
        let mut got = SeqsplatSequenceScores::default();
        let status = unsafe {
            seqsplat_sequential_scores(flat_p.as_ptr(), t_pred, flat_g.as_ptr(), t_gt, n, &mut got)
        };
        assert_eq!(status, SeqsplatStatus::Ok);
        assert_eq!(
            (got.siou, got.sauc, got.ssim, got.smae, got.aligned_length),
            (want.siou, want.sauc, want.ssim, want.smae, want.aligned_length)
        );
    }
}

#[test]
fn scene_and_feature_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ply");
    save_scene(&random_scene(30, 4), &path).unwrap();
    let path = cstr(&path);
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { seqsplat_scene_load(path.as_ptr(), &mut scene) }, SeqsplatStatus::Ok);
    assert_eq!(unsafe { seqsplat_scene_len(scene) }, 30);

    let mut bank = ptr::null_mut();
    assert_eq!(unsafe { seqsplat_lift(scene, 2, 16, 16, &mut bank) }, SeqsplatStatus::Ok);
    let (n, dim) = unsafe { (seqsplat_features_len(bank), seqsplat_features_dim(bank)) };
    assert_eq!(n, 30);
    assert!(dim > 0);
    let mut buf = vec![f64::NAN; n * dim];
    assert_eq!(unsafe { seqsplat_features_copy(bank, buf.as_mut_ptr(), buf.len()) }, SeqsplatStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));
    assert_eq!(unsafe { seqsplat_features_copy(bank, buf.as_mut_ptr(), 1) }, SeqsplatStatus::Shape);
    assert_eq!(unsafe { seqsplat_lift(scene, 0, 16, 16, &mut bank) }, SeqsplatStatus::Invalid);
    unsafe {
        seqsplat_features_free(bank);
        seqsplat_scene_free(scene);
    }
}

#[test]
fn prediction_matches_the_core_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = DataConfig {
        scenes: 2,
        seed: 3,
        split_ratio: 1.0,
        scene: SceneConfig {
            min_objects: 2,
            max_objects: 2,
            sequences_per_scene: 2,
            ..Default::default()
        },
    };
    emit_dataset(&config, &data).unwrap();
    let ds = Dataset::load(&data).unwrap();
    let model = ModelConfig {
        encoder: EncoderConfig {
            point_widths: vec![16, 24],
            d_model: 24,
        },
        planner: PlannerConfig {
            layers: 1,
            heads: 2,
            d_model: 24,
            context: 64,
            mlp_ratio: 2,
        },
        decoder: DecoderConfig {
            scales: 2,
            mlp_hidden: 32,
        },
    };
    let train = TrainConfig {
        epochs: 2,
        lr: 1e-3,
        features: false,
        ..Default::default()
    };
    let model_dir = dir.path().join("model");
    let options = TrainOptions {
        out_dir: Some(model_dir.clone()),
        ..Default::default()
    };
    let outcome = run_train(&ds, &model, &train, EncoderInit::Scratch, &options).unwrap();

    let first = &ds.scenes[0];
    let scene_path = dir.path().join("scene.ply");
    save_scene(&first.scene, &scene_path).unwrap();
    let instruction = &first.sequences[0].instruction;

    let want = outcome
        .net
        .forward_sequence(
            &outcome.vocab.encode(instruction),
            &SceneTensors::new(&first.scene, None).unwrap(),
            &Mode::Greedy {
                max_steps: 4,
                max_tokens: model.planner.context,
            },
        )
        .unwrap();

    let (model_dir, scene_path) = (cstr(&model_dir), cstr(&scene_path));
    let text = CString::new(instruction.as_str()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(seqsplat_model_load(model_dir.as_ptr(), &mut m), SeqsplatStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(seqsplat_scene_load(scene_path.as_ptr(), &mut s), SeqsplatStatus::Ok);
        let mut p = ptr::null_mut();
        assert_eq!(
            seqsplat_model_predict(m, s, ptr::null(), text.as_ptr(), 4, &mut p),
            SeqsplatStatus::Ok,
            "{}",
            last_error()
        );
        let steps = seqsplat_prediction_steps(p);
        assert_eq!(steps, want.mask_logits.len());

        let len = seqsplat_prediction_text(p, ptr::null_mut(), 0);
        let mut buf = vec![0 as c_char; len + 1];
        seqsplat_prediction_text(p, buf.as_mut_ptr(), buf.len());
        let got = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(got, outcome.vocab.decode(&want.plan.output));

        let n = seqsplat_scene_len(s);
        let mut mask = vec![0.0; n];
        for (t, logits) in want.mask_logits.iter().enumerate() {
            assert_eq!(seqsplat_prediction_mask(p, t, mask.as_mut_ptr(), n), SeqsplatStatus::Ok);
            for (m, l) in mask.iter().zip(logits) {
                assert!((m - 1.0 / (1.0 + (-l).exp())).abs() < 1e-12);
            }
        }
        assert_eq!(seqsplat_prediction_mask(p, steps, mask.as_mut_ptr(), n), SeqsplatStatus::Invalid);
        assert_eq!(seqsplat_prediction_mask(p, 0, mask.as_mut_ptr(), n + 1), {
            if steps == 0 { SeqsplatStatus::Invalid } else { SeqsplatStatus::Shape }
        });
        seqsplat_prediction_free(p);
        seqsplat_scene_free(s);
        seqsplat_model_free(m);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/seqsplat.h")).unwrap();
    assert!(header.contains("#ifndef SEQSPLAT_H"));
    for name in [
        "seqsplat_version",
        "seqsplat_last_error",
        "seqsplat_scene_load",
        "seqsplat_lift",
        "seqsplat_model_predict",
        "seqsplat_prediction_mask",
        "seqsplat_sequential_scores",
        "typedef struct SeqsplatModel SeqsplatModel",
        "SEQSPLAT_STATUS_PANIC = 6",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/seqsplat.h");
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
