use dermabench::plots::{confusion_layout, curves_layout, emit_confusion_plot, emit_curves};
use dermabench::trainer::EpochRecord;
use dermabench::Error;
use dermabench_core::{ClassLabel, ConfusionMatrix};
use proptest::prelude::*;

fn diagonal() -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::zeros();
    for (i, n) in [5u64, 9, 3, 1, 7, 40, 2].into_iter().enumerate() {
        cm.counts[i][i] = n;
    }
    cm
}

fn history(losses: &[f64]) -> Vec<EpochRecord> {
    losses
        .iter()
        .enumerate()
        .map(|(i, &v)| EpochRecord {
            epoch: i + 1,
            train_loss: v + 0.1,
            validation_loss: v,
            train_accuracy: 0.5,
            validation_accuracy: 0.4,
        })
        .collect()
}

fn png_signature(path: &std::path::Path) -> bool {
    let bytes = std::fs::read(path).unwrap();
    bytes.len() > 1000 && bytes.starts_with(&[0x89, b'P', b'N', b'G'])
}

#[test]
fn diagonal_matrix_has_zero_off_diagonal_annotations() {
    let layout = confusion_layout(&diagonal(), "t");
    for r in 0..7 {
        for c in 0..7 {
            if r != c {
                assert_eq!(layout.annotations[r][c], "0");
                assert_eq!(layout.intensity[r][c], 0.0);
            }
        }
    }
    assert_eq!(layout.annotations[5][5], "40");
}

#[test]
fn axes_carry_the_class_names_in_code_order() {
    let layout = confusion_layout(&diagonal(), "t");
    let names: Vec<String> = ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect();
    assert_eq!(layout.row_labels, names);
    assert_eq!(layout.column_labels, names);
}

#[test]
fn confusion_plot_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cm.png");
    emit_confusion_plot(&diagonal(), "Res50_e on DermaMNIST", &path).unwrap();
    assert!(png_signature(&path));
}

#[test]
fn unwritable_destination_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("cm.png");
    assert!(matches!(emit_confusion_plot(&diagonal(), "t", &path), Err(Error::Io { .. })));
    assert!(matches!(emit_curves(&history(&[1.0]), &path), Err(Error::Io { .. })));
}

#[test]
fn ten_epochs_span_one_to_ten() {
    let h = history(&[2.0, 1.8, 1.5, 1.4, 1.45, 1.3, 1.35, 1.32, 1.31, 1.4]);
    let layout = curves_layout(&h).unwrap();
    assert_eq!(layout.x_range, (1, 10));
    assert_eq!(layout.best_epoch, 6);
    assert_eq!(layout.panels[0].title, "loss");
    assert_eq!(layout.panels[1].title, "accuracy");
    for p in &layout.panels {
        let names: Vec<&str> = p.series.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["train", "validation"]);
        assert!(p.series.iter().all(|s| s.points.len() == 10));
    }
    let dir = tempfile::tempdir().unwrap();
    emit_curves(&h, &dir.path().join("c.png")).unwrap();
    assert!(png_signature(&dir.path().join("c.png")));
}

#[test]
fn single_epoch_renders() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.png");
    emit_curves(&history(&[0.7]), &path).unwrap();
    assert!(png_signature(&path));
}

#[test]
fn empty_history_is_refused() {
    assert!(curves_layout(&[]).is_err());
}

proptest! {
    #[test]
    fn best_epoch_is_the_first_minimum(losses in prop::collection::vec(0.0f64..5.0, 1..30)) {
        let layout = curves_layout(&history(&losses)).unwrap();
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let first = losses.iter().position(|&v| v == min).unwrap() + 1;
        prop_assert_eq!(layout.best_epoch, first);
    }

    #[test]
    fn intensities_are_row_shares(counts in prop::array::uniform7(prop::array::uniform7(0u64..50))) {
        let cm = ConfusionMatrix { counts };
        let layout = confusion_layout(&cm, "p");
        for r in 0..7 {
            let s: f64 = layout.intensity[r].iter().sum();
            let support: u64 = counts[r].iter().sum();
            if support == 0 {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
