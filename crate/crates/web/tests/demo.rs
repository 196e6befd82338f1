use flowad_core::synth::DefectKind;
use flowad_web::{DemoState, IMAGE_SIZE};

fn trained(epochs: usize) -> DemoState {
    let mut d = DemoState::new(7, 24).unwrap();
    for _ in 0..epochs {
        d.train_epoch().unwrap();
    }
    d
}

#[test]
fn training_lowers_the_loss() {
    let d = trained(8);
    let h = d.history();
    assert_eq!(d.epochs_done(), 8);
    assert!(h.iter().all(|v| v.is_finite()));
    assert!(h[7] < h[0], "{h:?}");
}

#[test]
fn demo_is_deterministic_per_seed() {
    let mut a = trained(2);
    let mut b = trained(2);
    assert_eq!(a.history(), b.history());
    assert_eq!(a.new_image(Some(DefectKind::Blob)).unwrap(), b.new_image(Some(DefectKind::Blob)).unwrap());
    assert_eq!(a.score().unwrap(), b.score().unwrap());
}

#[test]
fn defects_raise_the_score_and_map_matches_image() {
    let mut d = trained(15);
    let mut normal = Vec::new();
    let mut defective = Vec::new();
    for i in 0..6 {
        d.new_image(None).unwrap();
        normal.push(d.score().unwrap().image_score());
        let img = d.new_image(Some(DefectKind::ALL[i % 3])).unwrap();
        assert_eq!((img.width, img.height, img.pixels.len()), (IMAGE_SIZE, IMAGE_SIZE, IMAGE_SIZE * IMAGE_SIZE));
        assert!(d.mask().iter().any(|&m| m));
        let map = d.score().unwrap();
        assert_eq!((map.height(), map.width()), (IMAGE_SIZE, IMAGE_SIZE));
        defective.push(map.image_score());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&defective) > mean(&normal), "defective {defective:?} vs normal {normal:?}");
}

#[test]
fn perturbation_is_local_and_vanishes_at_zero() {
    let d = trained(3);
    let (zero, _) = d.perturb(10, 20, 0.0).unwrap();
    assert!(zero.values().iter().all(|&v| v < 1e-9));
    let (map, cell) = d.perturb(10, 20, 2.0).unwrap();
    assert_eq!(cell, (2, 5));
    assert_eq!((map.height(), map.width()), (8, 8));
    let (ay, ax) = map.argmax();
    assert!(ay.abs_diff(cell.0) <= 4 && ax.abs_diff(cell.1) <= 4, "argmax ({ay},{ax})");
    assert!(d.perturb(IMAGE_SIZE, 0, 1.0).is_err());
}
