use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqsplat::cli::RunConfig;
use seqsplat::metrics::sequential_metrics;
use seqsplat::scene::{load_annotations, AnnotationFile};

const CONFIG: &str = r#"
[data]
scenes = 2
seed = 4

[data.scene]
min_objects = 2
max_objects = 2
sequences_per_scene = 2

[model.encoder]
point_widths = [16, 24]
d_model = 24

[model.planner]
layers = 1
heads = 2
d_model = 24
context = 64
mlp_ratio = 2

[model.decoder]
scales = 2
mlp_hidden = 32

[train]
pretrain_epochs = 1
epochs = 2
lr = 1e-3

[lift]
views = 2
width = 32
height = 32
"#;

fn seqsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqsplat"))
        .args(args)
        .env("SEQSPLAT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqsplat(args);
    assert!(
        out.status.success(),
        "seqsplat {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.toml");
    fs::write(&config, CONFIG).unwrap();
    Workspace { _dir: dir, root, config }
}

#[test]
fn pipeline_from_data_to_evaluation() {
    let w = workspace();
    let (cfg, data, pre, model, eval) = (
        s(&w.config),
        w.root.join("data"),
        w.root.join("pre"),
        w.root.join("model"),
        w.root.join("eval"),
    );
    ok(&["gen-data", "--config", cfg, "--out", s(&data)]);
    assert!(data.join("manifest.json").exists());
    assert!(data.join("config.toml").exists());

    let text = ok(&["pretrain", "--config", cfg, "--out", s(&pre), "--data", s(&data)]);
    assert!(text.contains("reconstruction mIoU"));
    assert!(pre.join("pretrain.ssck").exists());
    assert!(pre.join("pretrain_report.tsv").exists());

    ok(&[
        "train",
        "--config",
        cfg,
        "--out",
        s(&model),
        "--data",
        s(&data),
        "--init",
        s(&pre.join("pretrain.ssck")),
        "--features",
        "on",
    ]);
    let log = fs::read_to_string(model.join("train_log.tsv")).unwrap();
    assert!(log.starts_with("epoch\tL_lang\tsum_L_mask\tL_total\tseconds\n"));
    assert_eq!(log.lines().count(), 3);

    for setting in ["single", "seq_gt", "seq"] {
        let table = ok(&[
            "eval",
            "--config",
            cfg,
            "--out",
            s(&eval),
            "--data",
            s(&data),
            "--checkpoint",
            s(&model),
            "--setting",
            setting,
            "--split",
            "train",
        ]);
        assert!(table.contains(&format!("{setting}\ttrain\t")), "{table}");
        assert!(eval.join(format!("eval_{setting}.tsv")).exists());
        assert!(eval.join(format!("eval_{setting}_details.tsv")).exists());
    }
    let planner = fs::read_to_string(eval.join("planner.tsv")).unwrap();
    assert!(planner.starts_with("instructions\ttoken_accuracy\tseg_count_match\texact_match\n"));
}

#[test]
fn bogus_setting_is_a_usage_error() {
    let w = workspace();
    let out = seqsplat(&[
        "eval",
        "--config",
        s(&w.config),
        "--out",
        s(&w.root),
        "--data",
        s(&w.root),
        "--checkpoint",
        s(&w.root),
        "--setting",
        "bogus",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn missing_required_flags_fail() {
    assert!(!seqsplat(&["gen-data", "--out", "/nonexistent"]).status.success());
    assert!(!seqsplat(&["eval", "--config", "c.toml", "--out", "o", "--data", "d"]).status.success());
}

#[test]
fn help_lists_subcommands_and_flags() {
    let top = ok(&["--help"]);
    for sub in ["gen-data", "pretrain", "train", "eval", "ablate", "render", "lift", "metrics"] {
        assert!(top.contains(sub), "top-level help lacks {sub}");
    }
    let eval = ok(&["eval", "--help"]);
    for flag in ["--config", "--out", "--seed", "--checkpoint", "--setting", "--split"] {
        assert!(eval.contains(flag), "eval help lacks {flag}");
    }
    assert!(eval.contains("seq_gt"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(RunConfig::from_toml("[train]\nlearning_rate = 1e-3\n").is_err());
    assert!(RunConfig::from_toml("[nonsense]\n").is_err());
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());

    let w = workspace();
    let bad = w.root.join("bad.toml");
    fs::write(&bad, "[data]\nscene_count = 3\n").unwrap();
    let out = seqsplat(&["gen-data", "--config", s(&bad), "--out", s(&w.root.join("d"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_count"));
}

#[test]
fn seed_flag_reaches_the_echoed_config() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data), "--seed", "17", "--scenes", "1"]);
    let echoed = RunConfig::load(data.join("config.toml")).unwrap();
    assert_eq!((echoed.data.seed, echoed.train.seed, echoed.data.scenes), (17, 17, 1));
}

#[test]
fn metrics_subcommand_matches_the_library() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data)]);
    let gt_path = data.join("annotations").join("scene_000.json");
    let gt = load_annotations(&gt_path).unwrap();

    // Drop the last step of the first sample and blank the second sample's
    // first mask so both the length penalty and a zero-IoU step show up.
    let mut pred = gt.clone();
    pred[0].steps.pop();
    if pred.len() > 1 {
        for v in &mut pred[1].steps[0].mask.scores {
            *v = 0.0;
        }
        pred[1].steps[0].mask.scores[0] = 1.0;
    }
    let doc = AnnotationFile::read(&gt_path).unwrap();
    let pred_doc = AnnotationFile::from_sequences(doc.scene.clone(), &pred);
    let pred_path = w.root.join("pred.json");
    pred_doc.write(&pred_path).unwrap();

    let out_dir = w.root.join("scores");
    let table = ok(&["metrics", "--pred", s(&pred_path), "--gt", s(&gt_path), "--out", s(&out_dir)]);
    assert_eq!(fs::read_to_string(out_dir.join("metrics.tsv")).unwrap(), table);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), gt.len() + 1);
    for (row, (p, g)) in rows.iter().zip(pred.iter().zip(&gt)) {
        let masks = |s: &seqsplat::scene::AffordanceSequence| -> Vec<Vec<f64>> {
            s.steps.iter().map(|t| t.mask.scores.clone()).collect()
        };
        let want = sequential_metrics(&masks(p), &masks(g)).unwrap();
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols[0], g.instruction);
        let got: Vec<f64> = cols[1..5].iter().map(|c| c.parse().unwrap()).collect();
        for (a, b) in got.iter().zip([want.siou, want.sauc, want.ssim, want.smae]) {
            assert!((a - b).abs() <= 5e-7, "{row}");
        }
        assert_eq!(cols[5].parse::<usize>().unwrap(), want.aligned_length);
    }
    assert!(rows[0].split('\t').nth(1).unwrap().parse::<f64>().unwrap() < 1.0);
}

#[test]
fn metrics_rejects_mismatched_instructions() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data)]);
    let gt_path = data.join("annotations").join("scene_000.json");
    let mut pred = load_annotations(&gt_path).unwrap();
    pred[0].instruction = "something else entirely".into();
    let doc = AnnotationFile::read(&gt_path).unwrap();
    let pred_path = w.root.join("pred.json");
    AnnotationFile::from_sequences(doc.scene.clone(), &pred).write(&pred_path).unwrap();
    let out = seqsplat(&["metrics", "--pred", s(&pred_path), "--gt", s(&gt_path)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn render_and_lift_write_outputs() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data), "--scenes", "1"]);
    let scene = data.join("scenes").join("scene_000.ply");
    let views = w.root.join("views");
    ok(&["render", "--config", s(&w.config), "--out", s(&views), "--scene", s(&scene), "--weights"]);
    for v in 0..2 {
        let ppm = fs::read(views.join(format!("view_{v:02}.ppm"))).unwrap();
        assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
        assert!(views.join(format!("view_{v:02}.weights")).exists());
    }
    let lifted = w.root.join("lifted");
    ok(&["lift", "--config", s(&w.config), "--out", s(&lifted), "--scene", s(&scene)]);
    let bank = seqsplat::lift::FeatureBank::load(lifted.join("scene_000.ssfb")).unwrap();
    assert_eq!(bank.n(), seqsplat::scene::load_scene(&scene).unwrap().len());
}
