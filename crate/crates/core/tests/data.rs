use std::fs;

use proptest::prelude::*;
use viewpose::data::{
    generate_synthetic, load_manifest, make_training_tuple, write_manifest, SyntheticSceneSpec, MANIFEST_FILE,
};
use viewpose::image::BACKGROUND;
use viewpose::{rng, Error};

fn small() -> SyntheticSceneSpec {
    SyntheticSceneSpec { resolution: 32, azimuths_deg: vec![0.0, 90.0, 45.0], seed: 4, ..Default::default() }
}

#[test]
fn manifest_round_trip_preserves_pixels_and_metadata() {
    let ds = generate_synthetic(&small(), 3, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&ds, dir.path()).unwrap();
    let back = load_manifest(dir.path()).unwrap();
    assert_eq!(back.views_per_scene, 3);
    assert_eq!(back.view_names, ds.view_names);
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.sequences.iter().zip(&back.sequences) {
        assert_eq!((&a.scene_id, &a.subject_id, a.label, &a.action), (&b.scene_id, &b.subject_id, b.label, &b.action));
        for (fa, fb) in a.views.iter().flatten().zip(b.views.iter().flatten()) {
            assert_eq!(fa.load().unwrap().quantized(), *fb.load().unwrap());
        }
    }
}

#[test]
fn unequal_view_lengths_name_the_scene() {
    let ds = generate_synthetic(&small(), 2, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(&ds, dir.path()).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    m["sequences"][1]["views"][0].as_array_mut().unwrap().pop();
    fs::write(&path, m.to_string()).unwrap();
    match load_manifest(&path) {
        Err(Error::Load { context, .. }) => assert!(context.contains("s0001"), "{context}"),
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn missing_frame_and_bad_version_are_load_errors() {
    let ds = generate_synthetic(&small(), 1, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&ds, dir.path()).unwrap();
    fs::remove_file(dir.path().join("frames/s0000/az090/0001.png")).unwrap();
    assert!(matches!(load_manifest(dir.path()), Err(Error::Load { .. })));

    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap().replace("viewpose-manifest-v1", "viewpose-manifest-v0");
    fs::write(&path, text).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Load { .. })));
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(&small(), 2, 3).unwrap();
    let b = generate_synthetic(&small(), 2, 3).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&SyntheticSceneSpec { seed: 5, ..small() }, 2, 3).unwrap();
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tuples_respect_shift_bounds_and_share_the_flip(seed in any::<u64>(), k in 0usize..4) {
        let ds = generate_synthetic(&SyntheticSceneSpec { resolution: 16, ..small() }, 1, 4).unwrap();
        let pair = ds.pair(0, 0, 1).unwrap();
        let t = make_training_tuple(&pair, k, &mut rng::stream(seed, "t")).unwrap();
        for c in [t.c1, t.c2] {
            prop_assert!(c.dx.abs() <= 4 && c.dy.abs() <= 4);
        }
        prop_assert!(t.m < 4 && t.n < 4);
        let orig = |v: usize, f: usize| {
            let im = ds.sequences[0].views[v][f].load().unwrap();
            if t.flip_applied { im.flipped_horizontal() } else { (*im).clone() }
        };
        prop_assert_eq!(&t.iv_k, &orig(0, k));
        prop_assert_eq!(&t.iw_k, &orig(1, k));
        prop_assert_eq!(&t.iv_m, &orig(0, t.m));
        prop_assert_eq!(&t.iw_n, &orig(1, t.n));
        prop_assert_eq!(&t.aug_v, &t.iv_k.shifted(t.c1.dx, t.c1.dy, BACKGROUND));
        prop_assert_eq!(&t.aug_w, &t.iw_k.shifted(t.c2.dx, t.c2.dy, BACKGROUND));
    }
}
