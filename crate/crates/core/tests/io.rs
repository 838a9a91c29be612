mod common;

use splatedit::editing::{apply_edit, EditOp};
use splatedit::io::{from_bytes, load, save, to_bytes, SceneMeta};
use splatedit::priors::{BackendInfo, BackendKind};
use splatedit::semantics::{fit_codec, Selection};
use splatedit::{Error, GaussianScene};

fn rich_scene(seed: u64, n: usize) -> GaussianScene {
    let mut s = common::random_scene(seed, n, 2, 4);
    let a = s.register_object("mug");
    let b = s.register_object("lamp");
    let samples: Vec<Vec<f64>> = (0..8).map(|i| (0..10).map(|k| ((i * 7 + k * 3) % 11) as f64 / 11.0).collect()).collect();
    s.set_codec(fit_codec(&samples, 4).unwrap()).unwrap();
    for (i, g) in s.gaussians_mut().iter_mut().enumerate() {
        g.object_id = [a, b, -1][i % 3];
        g.active = i % 7 != 0;
    }
    s
}

fn bits(s: &GaussianScene) -> Vec<u32> {
    s.gaussians()
        .iter()
        .flat_map(|g| {
            g.center
                .iter()
                .chain(&g.scale)
                .chain(&g.rotation)
                .chain(std::iter::once(&g.opacity))
                .chain(&g.sh)
                .chain(&g.embedding)
                .map(|v| v.to_bits())
                .chain([g.object_id as u32, g.active as u32])
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn thousand_gaussians_round_trip_bit_exact() {
    let s = rich_scene(1, 1000);
    let meta = SceneMeta {
        camera: Some(common::camera(64)),
        backends: Some(BackendInfo::uniform(BackendKind::Mock)),
        seed: Some(99),
    };
    let bytes = to_bytes(&s, &meta).unwrap();
    let (back, meta2) = from_bytes(&bytes).unwrap();
    assert_eq!(bits(&back), bits(&s));
    assert_eq!(back.objects(), s.objects());
    assert_eq!(back.codec(), s.codec());
    assert_eq!(meta2, meta);
    assert_eq!(to_bytes(&back, &meta2).unwrap(), bytes);
}

#[test]
fn header_layout_is_fixed() {
    let s = rich_scene(2, 10);
    let b = to_bytes(&s, &SceneMeta::default()).unwrap();
    assert_eq!(&b[..4], b"GSED");
    assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
    assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 10);
    assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(b[14..18].try_into().unwrap()), 2);
    // The first stored value is x of Gaussian 0.
    assert_eq!(f32::from_le_bytes(b[18..22].try_into().unwrap()).to_bits(), s.gaussians()[0].center[0].to_bits());
    let crc = u32::from_le_bytes(b[b.len() - 4..].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&b[..b.len() - 4]));
}

#[test]
fn empty_scene_round_trips() {
    let s = GaussianScene::new(0, 0);
    let b = to_bytes(&s, &SceneMeta::default()).unwrap();
    let (back, _) = from_bytes(&b).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.embed_dim(), 0);
}

#[test]
fn corruption_is_reported_by_kind() {
    let b = to_bytes(&rich_scene(3, 50), &SceneMeta::default()).unwrap();
    for cut in [b.len() - 1, b.len() / 2, 20, 6] {
        assert!(matches!(from_bytes(&b[..cut]), Err(Error::Checksum { .. })), "cut at {cut}");
    }
    let mut flipped = b.clone();
    flipped[100] ^= 0x10;
    assert!(matches!(from_bytes(&flipped), Err(Error::Checksum { .. })));
    let mut magic = b.clone();
    magic[0] = b'X';
    assert!(matches!(from_bytes(&magic), Err(Error::BadMagic)));
    let mut version = b.clone();
    version[4] = 2;
    assert!(matches!(from_bytes(&version), Err(Error::BadVersion(2))));
}

#[test]
fn file_load_resets_revision_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.gsed");
    let mut s = rich_scene(4, 30);
    let sel = Selection::from_indices(&s, vec![0, 1]).unwrap();
    apply_edit(&mut s, &EditOp::translate(sel, [0.5, 0.0, 0.0])).unwrap();
    assert!(s.revision() > 0 && s.history_len() == 1);
    let n = save(&s, &SceneMeta::default(), &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, n);
    let (back, _) = load(&path).unwrap();
    assert_eq!(back.revision(), 0);
    assert_eq!(back.history_len(), 0);
    assert_eq!(bits(&back), bits(&s));
    assert!(matches!(load(dir.path().join("missing.gsed")), Err(Error::Io(_))));
}
