use or2_core::io::{read_init, write_init, Dataset};
use or2_core::scene::PointCloudInit;
use or2_core::stream::FrameSource;
use or2_core::synth::{export_dataset, jitter_points, make_scene, observation, NoiseSpec};
use or2_core::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn init_round_trip_is_bit_exact(
        pts in prop::collection::vec((-1e300f64..1e300, -1e3f64..1e3, 0.0f64..1.0), 1..20)
    ) {
        let init = PointCloudInit {
            points: pts.iter().map(|&(a, b, c)| [a, b, c]).collect(),
            colors: pts.iter().map(|&(_, _, c)| [c, 1.0 - c, c / 3.0]).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.json");
        write_init(&path, &init).unwrap();
        let back = read_init(&path).unwrap();
        let bits = |v: &[[f64; 3]]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.points), bits(&init.points));
        prop_assert_eq!(bits(&back.colors), bits(&init.colors));
    }
}

#[test]
fn init_rejects_mismatch_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("init.json");
    let bad = PointCloudInit {
        points: vec![[0.0; 3]; 2],
        colors: vec![[0.0; 3]],
    };
    write_init(&path, &bad).unwrap();
    assert!(matches!(read_init(&path), Err(Error::ShapeMismatch(_))));
    let empty = PointCloudInit {
        points: vec![],
        colors: vec![],
    };
    write_init(&path, &empty).unwrap();
    assert!(matches!(read_init(&path), Err(Error::EmptyInitialization)));
}

#[test]
fn dataset_source_streams_frames_in_order() {
    let scene = make_scene(2, 20, 3, 3, 3, 24).unwrap();
    let spec = NoiseSpec::default();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&scene, Some(&spec), dir.path()).unwrap();
    let init = jitter_points(&scene, 0.02, 0.5, 0).unwrap();
    write_init(&dir.path().join("init.json"), &init).unwrap();
    assert_eq!(read_init(&dir.path().join("init.json")).unwrap(), init);

    let ds = Dataset::open(dir.path()).unwrap();
    let mut src = ds.source(&[2, 0]).unwrap();
    assert_eq!(src.frame_count(), 3);
    for t in 0..3 {
        let obs = src.next_frame().unwrap();
        assert_eq!(obs.frame, t);
        assert_eq!(obs.images.len(), 2);
        assert_eq!(obs.images[0], observation(&scene, Some(&spec), t, 2).unwrap());
        assert_eq!(obs.images[1], observation(&scene, Some(&spec), t, 0).unwrap());
    }
    assert!(matches!(src.next_frame(), Err(Error::DatasetExhausted(3))));
    assert!(matches!(ds.source(&[3]), Err(Error::InvalidArgument(_))));
    assert!(matches!(ds.image(0, 5), Err(Error::DatasetExhausted(5))));

    std::fs::remove_file(ds.image_path(1, 1)).unwrap();
    assert!(ds.image(1, 1).is_err());
    assert!(Dataset::open(&dir.path().join("missing")).is_err());
}
