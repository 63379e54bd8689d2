//! Protocol invariants of the teacher → pseudo-label → student workflow on a
//! small synthetic dataset.

use bridgekd::denoiser::DenoiserConfig;
use bridgekd::phantom::{build_dataset, DatasetManifest, DegradationConfig, Role};
use bridgekd::train::{run_self_training, train_model, TrainConfig};

fn cfg(train_steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        train_steps,
        batch_size: 2,
        learning_rate: 2e-3,
        seed,
        steps: 6,
        stride: 2,
        eval_every: 10,
        denoiser: DenoiserConfig {
            base_channels: 4,
            num_blocks: 1,
            time_embed_dim: 4,
            image_channels: 1,
        },
        manifest: None,
    }
}

fn dataset(dir: &std::path::Path) -> DatasetManifest {
    let deg = DegradationConfig {
        n_views: 8,
        ..Default::default()
    };
    build_dataset(3, 6, 2, 16, &deg, 11, dir).unwrap()
}

#[test]
fn student_starts_from_teacher_and_sees_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("data"));
    let out = run_self_training(&m, &cfg(4, 1), &cfg(0, 2), &dir.path().join("run")).unwrap();
    // zero student steps: the student must be the teacher, bit for bit
    assert_eq!(out.student, out.teacher);
    assert_eq!(out.summary.teacher.checkpoint_id, out.summary.student.checkpoint_id);
    assert_eq!(out.summary.student.n_train_pairs, m.n_paired + m.n_unpaired);
    assert_eq!(out.summary.n_pseudo, m.n_unpaired);

    let pseudo = DatasetManifest::load(&dir.path().join("run/manifest_pseudo.json")).unwrap();
    let test_ids: Vec<_> = pseudo.items_with_role(Role::Test).map(|i| i.phantom_seed).collect();
    for item in pseudo.items_with_role(Role::PseudoLabeled) {
        assert!(!test_ids.contains(&item.phantom_seed));
    }
    let unpaired: Vec<_> = pseudo.items_with_role(Role::Unpaired).map(|i| &i.cbct).collect();
    let sources: Vec<_> = pseudo.items_with_role(Role::PseudoLabeled).map(|i| &i.cbct).collect();
    assert_eq!(unpaired, sources);
}

#[test]
fn loss_trend_is_downward() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path());
    let (_, rec) = train_model(&m, &[Role::Paired], &cfg(300, 4), None).unwrap();
    assert!(rec.losses.windows(2).all(|w| w[0].step < w[1].step));
    assert!(rec.losses.iter().all(|p| p.loss.is_finite()));
    let (start, end) = rec.moving_average_ends(100).unwrap();
    assert!(end < start, "{start} -> {end}");
}

#[test]
fn missing_roles_abort_in_setup() {
    let dir = tempfile::tempdir().unwrap();
    let deg = DegradationConfig {
        n_views: 8,
        ..Default::default()
    };
    let m = build_dataset(2, 0, 1, 16, &deg, 1, dir.path()).unwrap();
    let err = run_self_training(&m, &cfg(1, 1), &cfg(1, 2), &dir.path().join("run")).unwrap_err();
    assert!(err.to_string().contains("setup"), "{err}");
    assert_eq!(err.category(), "dataset");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("data"));
    for run in ["a", "b"] {
        run_self_training(&m, &cfg(3, 1), &cfg(3, 2), &dir.path().join(run)).unwrap();
    }
    for f in [
        "teacher.bbkd",
        "student.bbkd",
        "summary.json",
        "manifest_pseudo.json",
        "report.txt",
        "pseudo/pseudo-0003.imgf",
    ] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}
