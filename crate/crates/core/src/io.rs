//! GSED: the single-file scene container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "GSED" | u16 version | u32 N | u32 d | u32 sh_degree
//! f32 x[3N] | f32 s[3N] | f32 q[4N] | f32 α[N] | f32 c[3·(deg+1)²·N] | f32 e[dN]
//! i32 object_id[N] | active bitset, ⌈N/8⌉ bytes, LSB first
//! u32 trailer length | JSON trailer | u32 CRC32 of everything before it
//! ```
//!
//! Scales and opacities are stored as values, not as log or logit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::priors::BackendInfo;
use crate::scene::{sh_coeffs, Gaussian, GaussianScene, ObjectInfo};
use crate::semantics::EmbeddingCodec;

pub const MAGIC: &[u8; 4] = b"GSED";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 3;

/// Run metadata carried alongside the scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<BackendInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    background: [f64; 3],
    objects: Vec<ObjectInfo>,
    codec: Option<EmbeddingCodec>,
    #[serde(flatten)]
    meta: SceneMeta,
}

fn put_f32s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(scene: &GaussianScene, meta: &SceneMeta) -> Result<Vec<u8>> {
    let gs = scene.gaussians();
    let n = gs.len();
    let count = |v: usize| u32::try_from(v).map_err(|_| Error::invalid("count exceeds u32"));
    let mut out = Vec::with_capacity(HEADER_LEN + n * (4 * (14 + 3 * sh_coeffs(scene.sh_degree()) + scene.embed_dim())));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count(n)?.to_le_bytes());
    out.extend_from_slice(&count(scene.embed_dim())?.to_le_bytes());
    out.extend_from_slice(&count(scene.sh_degree())?.to_le_bytes());
    put_f32s(&mut out, gs.iter().flat_map(|g| &g.center));
    put_f32s(&mut out, gs.iter().flat_map(|g| &g.scale));
    put_f32s(&mut out, gs.iter().flat_map(|g| &g.rotation));
    put_f32s(&mut out, gs.iter().map(|g| &g.opacity));
    put_f32s(&mut out, gs.iter().flat_map(|g| &g.sh));
    put_f32s(&mut out, gs.iter().flat_map(|g| &g.embedding));
    for g in gs {
        out.extend_from_slice(&g.object_id.to_le_bytes());
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, g) in gs.iter().enumerate() {
        if g.active {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    let trailer = serde_json::to_vec(&Trailer {
        background: scene.background,
        objects: scene.objects().to_vec(),
        codec: scene.codec().cloned(),
        meta: meta.clone(),
    })?;
    out.extend_from_slice(&count(trailer.len())?.to_le_bytes());
    out.extend_from_slice(&trailer);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("array size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(GaussianScene, SceneMeta)> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() >= 6 {
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
    }
    // A file too short to hold a checksum is reported as a checksum failure,
    // the same as any other truncation.
    if bytes.len() < HEADER_LEN + 8 {
        return Err(Error::Checksum {
            stored: 0,
            computed: crc32fast::hash(bytes),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 6 };
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let deg = r.u32()? as usize;
    if deg > 3 {
        return Err(Error::Format(format!("SH degree {deg} above 3")));
    }
    let nc = 3 * sh_coeffs(deg);
    let x = r.f32s(3 * n)?;
    let s = r.f32s(3 * n)?;
    let q = r.f32s(4 * n)?;
    let a = r.f32s(n)?;
    let c = r.f32s(nc * n)?;
    let e = r.f32s(d * n)?;
    let ids: Vec<i32> = r
        .take(4 * n)?
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let bits = r.take(n.div_ceil(8))?;
    let tlen = r.u32()? as usize;
    let trailer: Trailer = serde_json::from_slice(r.take(tlen)?)?;
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let gaussians = (0..n)
        .map(|i| Gaussian {
            center: x[3 * i..3 * i + 3].try_into().expect("3"),
            scale: s[3 * i..3 * i + 3].try_into().expect("3"),
            rotation: q[4 * i..4 * i + 4].try_into().expect("4"),
            opacity: a[i],
            sh: c[nc * i..nc * (i + 1)].to_vec(),
            embedding: e[d * i..d * (i + 1)].to_vec(),
            object_id: ids[i],
            active: bits[i / 8] & (1 << (i % 8)) != 0,
        })
        .collect();
    let scene = GaussianScene::from_parts(gaussians, deg, d, trailer.background, trailer.objects, trailer.codec)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((scene, trailer.meta))
}

/// Writes the scene and returns the byte count. The file is written beside
/// the target and renamed into place.
pub fn save(scene: &GaussianScene, meta: &SceneMeta, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = to_bytes(scene, meta)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(bytes.len())
}

/// Loads a scene at revision 0 with empty undo history.
pub fn load(path: impl AsRef<Path>) -> Result<(GaussianScene, SceneMeta)> {
    from_bytes(&std::fs::read(path)?)
}
