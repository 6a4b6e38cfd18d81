//! Single-array artifact files: one JSON header line, then a raw
//! little-endian payload whose length is `product(shape) * dtype size`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrisim::CoilImageSet;
use crate::numkernel::C64;
use crate::segjoint::LabelMap;

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    /// Interleaved `f32` real/imaginary pairs.
    C64,
    F32,
    F64,
    I32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::C64 | Dtype::F64 => 8,
            Dtype::F32 | Dtype::I32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub dtype: Dtype,
    /// Slowest-varying axis first.
    pub shape: Vec<usize>,
    pub role: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    C64(Vec<[f32; 2]>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::C64(_) => Dtype::C64,
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
            Payload::I32(_) => Dtype::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::C64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype().size());
        match self {
            Payload::C64(v) => v.iter().for_each(|[re, im]| {
                out.extend_from_slice(&re.to_le_bytes());
                out.extend_from_slice(&im.to_le_bytes());
            }),
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    fn from_bytes(dtype: Dtype, b: &[u8]) -> Self {
        let w4 = |c: &[u8]| <[u8; 4]>::try_from(c).expect("4-byte chunk");
        match dtype {
            Dtype::C64 => Payload::C64(
                b.chunks_exact(8)
                    .map(|c| [f32::from_le_bytes(w4(&c[..4])), f32::from_le_bytes(w4(&c[4..]))])
                    .collect(),
            ),
            Dtype::F32 => Payload::F32(b.chunks_exact(4).map(|c| f32::from_le_bytes(w4(c))).collect()),
            Dtype::I32 => Payload::I32(b.chunks_exact(4).map(|c| i32::from_le_bytes(w4(c))).collect()),
            Dtype::F64 => Payload::F64(
                b.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub payload: Payload,
}

impl Container {
    pub fn new(role: &str, shape: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != payload.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} holds {n} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(Self {
            header: Header {
                version: CONTAINER_VERSION,
                dtype: payload.dtype(),
                shape,
                role: role.to_string(),
                metadata: BTreeMap::new(),
            },
            payload,
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.header.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Coil stack as `[coils, rows, cols]` complex values (stored at `f32`).
    pub fn from_coils(role: &str, gamma: &CoilImageSet) -> Self {
        let v = gamma.to_flat().iter().map(|z| [z.re as f32, z.im as f32]).collect();
        let shape = vec![gamma.n_coils(), gamma.rows(), gamma.cols()];
        Self::new(role, shape, Payload::C64(v)).expect("shape matches stack")
    }

    pub fn to_coils(&self) -> Result<CoilImageSet> {
        match (&self.payload, self.header.shape.as_slice()) {
            (Payload::C64(v), &[n, r, c]) => {
                let flat: Vec<C64> = v.iter().map(|[a, b]| C64::new(*a as f64, *b as f64)).collect();
                CoilImageSet::from_flat(n, r, c, &flat)
            }
            _ => Err(Error::CorruptHeader("expected a c64 array of rank 3".into())),
        }
    }

    pub fn from_labels(role: &str, labels: &LabelMap) -> Self {
        let (r, c) = labels.shape();
        let v = labels.labels().iter().map(|&l| l as i32).collect();
        Self::new(role, vec![r, c], Payload::I32(v)).expect("shape matches labels")
    }

    pub fn to_labels(&self) -> Result<LabelMap> {
        match (&self.payload, self.header.shape.as_slice()) {
            (Payload::I32(v), &[r, c]) => {
                let l = v
                    .iter()
                    .map(|&x| u8::try_from(x).map_err(|_| Error::InvalidArgument(format!("label {x}"))))
                    .collect::<Result<Vec<_>>>()?;
                LabelMap::new(r, c, l)
            }
            _ => Err(Error::CorruptHeader("expected an i32 array of rank 2".into())),
        }
    }

    /// Exact `f64` vector, used for model parameters.
    pub fn from_f64(role: &str, values: &[f64]) -> Self {
        Self::new(role, vec![values.len()], Payload::F64(values.to_vec())).expect("rank-1 shape")
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match &self.payload {
            Payload::F64(v) => Ok(v.clone()),
            _ => Err(Error::CorruptHeader("expected an f64 array".into())),
        }
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let n: usize = c.header.shape.iter().product();
    if n != c.payload.len() || c.header.dtype != c.payload.dtype() {
        return Err(Error::DimensionMismatch("header does not describe payload".into()));
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer(&mut f, &c.header)?;
    f.write_all(b"\n")?;
    f.write_all(&c.payload.to_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptHeader("no header line".into()))?;
    let text = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptHeader("missing version".into()))?;
    if version != CONTAINER_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: CONTAINER_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let expected = header
        .shape
        .iter()
        .try_fold(header.dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptHeader("shape overflows".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: body.len(),
        });
    }
    Ok(Container {
        payload: Payload::from_bytes(header.dtype, body),
        header,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multicoil_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12 * 208 * 170;
        let v: Vec<[f32; 2]> = (0..n).map(|_| [rng.gen(), rng.gen::<f32>() - 0.5]).collect();
        let c = Container::new("kspace", vec![12, 208, 170], Payload::C64(v)).unwrap().with_meta("accel", 4.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.bin");
        write_container(&p, &c).unwrap();
        let back = read_container(&p).unwrap();
        assert_eq!(back, c);
        let (Payload::C64(a), Payload::C64(b)) = (&back.payload, &c.payload) else { unreachable!() };
        assert!(a.iter().zip(b).all(|(x, y)| x[0].to_bits() == y[0].to_bits() && x[1].to_bits() == y[1].to_bits()));
    }

    #[test]
    fn f64_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let vals = vec![1.0 / 3.0, -0.0, f64::MIN_POSITIVE, 1e300];
        write_container(&p, &Container::from_f64("params", &vals)).unwrap();
        let back = read_container(&p).unwrap().to_f64().unwrap();
        assert!(back.iter().zip(&vals).all(|(a, b)| a.to_bits() == b.to_bits()));

        let l = LabelMap::new(2, 3, vec![0, 1, 2, 3, 2, 1]).unwrap();
        write_container(&p, &Container::from_labels("labels", &l)).unwrap();
        assert_eq!(read_container(&p).unwrap().to_labels().unwrap(), l);
    }

    #[test]
    fn truncated_payload_names_both_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        write_container(&p, &Container::new("x", vec![2, 5], Payload::F32(vec![0.5; 10])).unwrap()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 6]).unwrap();
        match read_container(&p) {
            Err(Error::TruncatedPayload { expected, actual }) => assert_eq!((expected, actual), (40, 34)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn future_version_and_bad_header_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        fs::write(&p, b"{\"version\":2,\"dtype\":\"f32\",\"shape\":[1],\"role\":\"x\"}\n\0\0\0\0").unwrap();
        assert!(matches!(read_container(&p), Err(Error::VersionMismatch { found: 2, supported: 1 })));
        fs::write(&p, b"not json\n").unwrap();
        assert!(matches!(read_container(&p), Err(Error::CorruptHeader(_))));
        fs::write(&p, b"{\"version\":1,\"dtype\":\"f16\",\"shape\":[1],\"role\":\"x\"}\n\0\0").unwrap();
        assert!(matches!(read_container(&p), Err(Error::CorruptHeader(_))));
        fs::write(&p, b"no newline").unwrap();
        assert!(matches!(read_container(&p), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn shape_must_match_payload() {
        assert!(Container::new("x", vec![3, 3], Payload::I32(vec![0; 8])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn any_float_bits_survive_a_round_trip(bits in proptest::collection::vec(any::<u32>(), 1..64), tag in "[a-z]{1,8}") {
            let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let c = Container::new(&tag, vec![vals.len()], Payload::F32(vals.clone())).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.bin");
            write_container(&p, &c).unwrap();
            let back = read_container(&p).unwrap();
            prop_assert_eq!(&back.header, &c.header);
            let Payload::F32(out) = back.payload else { panic!("dtype changed") };
            prop_assert!(out.iter().zip(&vals).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
