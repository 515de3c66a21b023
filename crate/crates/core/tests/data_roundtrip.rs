use std::path::PathBuf;

use lesionbench_core::data::*;
use lesionbench_core::Error;
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/voc").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn classes() -> Vec<String> {
    ["Acne Vulgaris", "Eczema", "Psoriasis"].iter().map(|s| s.to_string()).collect()
}

fn bbox(xmin: u32, ymin: u32, xmax: u32, ymax: u32, class_id: usize) -> BoundingBox {
    BoundingBox { xmin, ymin, xmax, ymax, class_id }
}

#[test]
fn voc_fixtures() {
    assert_eq!(
        parse_voc_annotation(&fixture("acne_0001.xml"), &classes()).unwrap(),
        vec![bbox(112, 87, 241, 190, 0), bbox(402, 300, 640, 480, 0)]
    );
    assert_eq!(
        parse_voc_annotation(&fixture("mixed_0042.xml"), &classes()).unwrap(),
        vec![bbox(10, 21, 100, 150, 2), bbox(180, 120, 299, 199, 1)]
    );
    assert!(parse_voc_annotation(&fixture("empty.xml"), &classes()).unwrap().is_empty());
    assert!(matches!(
        parse_voc_annotation(&fixture("degenerate.xml"), &classes()),
        Err(Error::DegenerateBox { xmin: 80, xmax: 60, .. })
    ));
}

fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
    (2usize..6).prop_flat_map(|c| {
        prop::collection::vec((0..c, 0u8..3, any::<bool>(), prop::option::of((0u32..50, 0u32..50, 1u32..40, 1u32..40))), 0..40)
            .prop_map(move |rows| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (class_id, split, noise, b))| {
                        let mut r = ImageRecord::new(format!("id-{i}"), format!("images/{i}.png"), class_id);
                        r.split = [Split::Train, Split::Test, Split::Unassigned][split as usize];
                        r.noise_flag = noise;
                        if let Some((x, y, w, h)) = b {
                            r.boxes.push(bbox(x, y, x + w, y + h, class_id));
                        }
                        r
                    })
                    .collect();
                DatasetManifest::new((0..c).map(|k| format!("class \"{k}\"")).collect(), records).unwrap()
            })
    })
}

fn stratified(c: usize) -> impl Strategy<Value = DatasetManifest> {
    prop::collection::vec(2usize..40, c).prop_map(|counts| {
        let mut records = Vec::new();
        for (class_id, &n) in counts.iter().enumerate() {
            for i in 0..n {
                records.push(ImageRecord::new(format!("c{class_id}-{i}"), format!("{class_id}/{i}.png"), class_id));
            }
        }
        DatasetManifest::new((0..counts.len()).map(|k| format!("c{k}")).collect(), records).unwrap()
    })
}

proptest! {
    #[test]
    fn manifest_save_load_is_byte_stable(m in manifest_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        prop_assert_eq!(&loaded, &m);
        loaded.save(&path).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn split_partitions(m in (2usize..6).prop_flat_map(stratified), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let out = split_dataset(&m, frac, seed).unwrap();
        prop_assert_eq!(out.len(), m.len());
        prop_assert!(out.records.iter().all(|r| r.split != Split::Unassigned));
        let ids: Vec<_> = out.records.iter().map(|r| &r.image_id).collect();
        prop_assert_eq!(ids, m.records.iter().map(|r| &r.image_id).collect::<Vec<_>>());
        let stats = class_stats(&out);
        for count in &stats.per_class {
            let target = count.total as f64 * frac;
            prop_assert!((count.test as f64 - target).abs() <= 1.0);
            prop_assert_eq!(count.train + count.test, count.total);
        }
        prop_assert_eq!(out, split_dataset(&m, frac, seed).unwrap());
    }

    #[test]
    fn cleaning_removes_exactly_the_flagged(m in manifest_strategy()) {
        let out = clean_dataset(&m);
        let flagged = m.records.iter().filter(|r| r.noise_flag).count();
        prop_assert_eq!(out.removed, flagged);
        prop_assert_eq!(out.manifest.len() + out.removed, m.len());
        prop_assert!(out.manifest.records.iter().all(|r| !r.noise_flag));
    }
}

#[test]
fn table_two_class_split() {
    let records = (0..1997).map(|i| ImageRecord::new(format!("a{i}"), format!("a/{i}.jpg"), 0)).collect();
    let m = DatasetManifest::new(vec!["Acne Vulgaris".into()], records).unwrap();
    let stats = class_stats(&split_dataset(&m, DEFAULT_TEST_FRACTION, 0).unwrap());
    assert_eq!((stats.per_class[0].train, stats.per_class[0].test), (1598, 399));
}
