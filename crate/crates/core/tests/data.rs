use racdnn::data::*;
use racdnn::Error;

#[test]
fn generation_is_deterministic_and_index_addressable() {
    let spec = DatasetSpec::new(9, 12, 48);
    let a = generate(&spec).unwrap();
    assert_eq!(a, generate(&spec).unwrap());
    assert_eq!(a[7], generate_one(&spec, 7).unwrap());
    assert_eq!(a[3].id, "s000003");
    assert_ne!(a, generate(&DatasetSpec::new(10, 12, 48)).unwrap());
}

#[test]
fn generated_masks_respect_area_bounds() {
    for s in generate(&DatasetSpec::new(2, 40, 32)).unwrap() {
        s.validate().unwrap();
        let area = s.mask.sum() / s.mask.len() as f64;
        assert!((MIN_AREA..=MAX_AREA).contains(&area), "{} covers {area}", s.id);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = DatasetSpec::new(0, 4, 32);
    spec.scale_range = (0.8, 0.2);
    assert!(generate(&spec).is_err());
    assert!(generate(&DatasetSpec::new(0, 4, 2)).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate(&DatasetSpec::new(4, 6, 24)).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let back = load_dataset(&resolve_manifest(dir.path())).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        let worst = a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn netpbm_round_trip_and_comments() {
    let r = Raster {
        width: 3,
        height: 2,
        channels: 1,
        pixels: vec![0, 1, 127, 128, 254, 255],
    };
    assert_eq!(Raster::decode(&r.encode()).unwrap(), r);
    let with_comment = b"P5\n# made by hand\n3 2\n255\n\x00\x01\x7f\x80\xfe\xff";
    assert_eq!(Raster::decode(with_comment).unwrap(), r);
    let (offset, _) = Raster::decode(b"P5\n3 2\n65535\n").unwrap_err();
    assert!(offset > 0);
    assert!(Raster::decode(b"P6\n2 2\n255\n\x00").is_err());
}

#[test]
fn masks_threshold_at_half_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pgm");
    Raster {
        width: 4,
        height: 1,
        channels: 1,
        pixels: vec![0, 127, 128, 255],
    }
    .write(&p)
    .unwrap();
    assert_eq!(read_mask(&p).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn manifest_errors_carry_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.tsv");
    std::fs::write(&p, "a\timages/a.ppm\tmasks/a.pgm\nb\tonly-two\n").unwrap();
    match read_manifest(&p) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 27),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let text = format_manifest(&[("x".into(), "i.ppm".into(), "m.pgm".into())]);
    std::fs::write(&p, text).unwrap();
    let entries = read_manifest(&p).unwrap();
    assert_eq!(entries[0].id, "x");
    assert_eq!(entries[0].image, dir.path().join("i.ppm"));
}

#[test]
fn split_is_a_stable_partition() {
    let samples = generate(&DatasetSpec::new(5, 60, 16)).unwrap();
    let (train, val) = split(samples.clone());
    assert_eq!(train.len() + val.len(), 60);
    assert!(!val.is_empty() && !train.is_empty());
    assert!(val.iter().all(|s| is_validation(&s.id)));
    assert!(train.iter().all(|s| !is_validation(&s.id)));
}

#[test]
fn augmentation_keeps_shapes_and_binary_masks() {
    for (i, s) in generate(&DatasetSpec::new(6, 8, 40)).unwrap().iter().enumerate() {
        let a = augment(s, i as u64).unwrap();
        assert_eq!(a.image.shape(), s.image.shape());
        a.validate().unwrap();
        assert_eq!(augment(s, i as u64).unwrap(), a);
        let id = apply_augment(s, &AugmentParams::identity(40, 40)).unwrap();
        assert_eq!(id.mask, s.mask);
    }
}
