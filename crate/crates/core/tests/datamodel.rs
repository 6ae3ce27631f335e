use brand_attention::datamodel::{
    encode_saliency_png, ingest_hypothesis_dataset, load_boxes, load_image, load_image_bytes, load_saliency_png,
    save_boxes, save_saliency_png, BoundingBox, BoundingBoxSet, Grid, SaliencyMap,
};
use proptest::prelude::*;

fn box_set() -> impl Strategy<Value = BoundingBoxSet> {
    let one = (0u32..500, 0u32..500, 0u32..500, 0u32..500, prop::option::of("[a-z]{1,8}"), prop::option::of(0.0f64..1.0))
        .prop_map(|(a, b, c, d, label, conf)| {
            let mut bx = BoundingBox::new(a.min(c), b.min(d), a.max(c), b.max(d));
            bx.label = label;
            bx.confidence = conf;
            bx
        });
    prop::collection::vec(one, 0..6).prop_map(BoundingBoxSet::new)
}

fn saliency(max_side: usize) -> impl Strategy<Value = SaliencyMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |v| SaliencyMap::new(Grid::new(h, w, v).unwrap()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_files_round_trip(set in box_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.boxes.json");
        save_boxes(&path, &set).unwrap();
        prop_assert_eq!(load_boxes(&path, Some((500, 500))).unwrap(), set);
    }

    #[test]
    fn saliency_png_round_trips_within_one_level(map in saliency(24)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        save_saliency_png(&path, &map).unwrap();
        let back = load_saliency_png(&path).unwrap();
        prop_assert_eq!(back.grid().shape(), map.grid().shape());
        for (a, b) in back.grid().data.iter().zip(&map.grid().data) {
            prop_assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }
}

#[test]
fn loading_the_same_file_twice_gives_identical_bytes() {
    let map = SaliencyMap::new(Grid::from_fn(40, 50, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap()).unwrap();
    let bytes = encode_saliency_png(&map);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    std::fs::write(&path, &bytes).unwrap();
    let a = load_image(&path, (32, 64)).unwrap();
    let b = load_image(&path, (32, 64)).unwrap();
    assert_eq!(a.tensor.data(), b.tensor.data());
    let c = load_image_bytes(&bytes, (32, 64), None).unwrap();
    assert_eq!(a.tensor.data(), c.tensor.data());
    assert_eq!(a.original_size(), (40, 50));
}

#[test]
fn ingestion_keeps_every_annotated_image() {
    let root = tempfile::tempdir().unwrap();
    let mut written = 0;
    for (h, conds) in [("position", &["up", "down", "center"][..]), ("color", &["red", "white"][..])] {
        for (k, c) in conds.iter().enumerate() {
            let dir = root.path().join(h).join(c);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..=k + 1 {
                let name = format!("img{i}.png");
                image::RgbImage::new(16, 12).save(dir.join(&name)).unwrap();
                // Both accepted annotation names.
                let boxes = if i % 2 == 0 { format!("img{i}.boxes.json") } else { format!("{name}.boxes.json") };
                save_boxes(dir.join(boxes), &BoundingBoxSet::new(vec![BoundingBox::new(0, 0, 15, 11)])).unwrap();
                written += 1;
            }
        }
    }
    // Stray files are not samples.
    std::fs::write(root.path().join("position/up/notes.txt"), "x").unwrap();
    let ds = ingest_hypothesis_dataset(root.path()).unwrap();
    assert_eq!(ds.sample_count(), written);
    assert_eq!(ds.condition_count(), 5);
}
