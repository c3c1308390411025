use std::fs;

use diff2ct::datagen::{build_dataset, DatasetOptions};
use diff2ct::format::{read_image, read_volume};
use diff2ct::manifest::{base_dir, load_case, Manifest, Split, MANIFEST_FILE};
use diff2ct_core::phantom::PhantomSpec;
use diff2ct_core::projector::{projected_dims, ProjectionPlane};
use diff2ct_core::ValueSpace;

fn opts(count: usize, seed: u64) -> DatasetOptions {
    DatasetOptions { count, seed, spec: PhantomSpec { spacing: [2.0; 3], ..PhantomSpec::cubic(16) }, raw_spacing: None, threads: 1 }
}

#[test]
fn ten_cases_write_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&opts(10, 7), dir.path()).unwrap();
    assert_eq!(m.cases.len(), 10);
    assert_eq!(fs::read_dir(dir.path().join("ct")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(dir.path().join("xray")).unwrap().count(), 20);
    assert_eq!(m.split(Split::Train).count(), 8);
    assert_eq!(m.split(Split::Test).count(), 2);
    let path = dir.path().join(MANIFEST_FILE);
    assert_eq!(Manifest::load(&path).unwrap(), m);
    for rec in &m.cases {
        let c = load_case(&base_dir(&path), rec).unwrap();
        assert_eq!(c.ct.value_space(), ValueSpace::Normalized);
        assert_eq!(c.lateral.dims(), projected_dims(c.ct.dims(), ProjectionPlane::Sagittal));
        assert_eq!(c.frontal.dims(), projected_dims(c.ct.dims(), ProjectionPlane::Coronal));
        assert_eq!(rec.original_spacing, [2.0; 3]);
        read_volume(dir.path().join(&rec.ct)).unwrap();
        read_image(dir.path().join(&rec.xray_frontal)).unwrap();
    }
}

#[test]
fn rebuild_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&opts(4, 11), a.path()).unwrap();
    build_dataset(&DatasetOptions { threads: 3, ..opts(4, 11) }, b.path()).unwrap();
    for f in [MANIFEST_FILE, "ct/case_0002.dvol", "xray/case_0003_lateral.dimg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn raw_spacing_is_resampled_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = DatasetOptions { raw_spacing: Some([1.0, 1.0, 4.0]), ..opts(2, 1) };
    let m = build_dataset(&o, dir.path()).unwrap();
    let ct = read_volume(dir.path().join(&m.cases[0].ct)).unwrap();
    assert_eq!(ct.dims(), [16; 3]);
    assert_eq!(ct.spacing(), [2.0; 3]);
    assert_eq!(m.cases[0].original_spacing, [1.0, 1.0, 4.0]);
}

#[test]
fn manifest_problems_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&opts(2, 0), dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut dup = m.clone();
    dup.cases[1].case_id = dup.cases[0].case_id.clone();
    dup.save(&path).unwrap();
    assert!(matches!(Manifest::load(&path), Err(diff2ct::Error::Manifest(_))));
    let mut swapped = m.clone();
    swapped.cases[0].xray_lateral = swapped.cases[0].xray_frontal.clone();
    assert!(matches!(load_case(dir.path(), &swapped.cases[0]), Err(diff2ct::Error::Manifest(_))));
    fs::remove_file(dir.path().join(&m.cases[1].ct)).unwrap();
    assert!(matches!(load_case(dir.path(), &m.cases[1]), Err(diff2ct::Error::Io { .. })));
}
