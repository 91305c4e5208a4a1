//! GVMW weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "GVMW" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 data
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::models::params_from_tensors;
use crate::nn::{ArchDescriptor, NetworkParams, Role};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GVMW";
pub const VERSION: u32 = 1;

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::InvalidArgument(format!("tensor {name} rank too large")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<IndexMap<String, Tensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32("tensor count")?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Corrupt(format!("tensor {name} has invalid extents {shape:?}")))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Corrupt(format!("tensor {name} too large")))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params.iter())?)?;
    Ok(())
}

/// Load parameters for `role`, checking every tensor against the architecture descriptor.
pub fn load_params(path: impl AsRef<Path>, role: Role, arch: &ArchDescriptor) -> Result<NetworkParams> {
    let tensors = decode(&fs::read(path)?)?;
    params_from_tensors(role, arch, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(res: usize) -> ArchDescriptor {
        ArchDescriptor {
            resolution: res,
            latent_dim: 10,
            base_channels: 4,
        }
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.gvmw");
        let p = init_params(Role::Generator, &arch(32), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_params(&p, &path).unwrap();
        let q = load_params(&path, Role::Generator, &arch(32)).unwrap();
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn distinct_errors_for_magic_version_truncation() {
        let p = init_params(Role::Discriminator, &arch(32), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode(p.iter()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));

        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&v2), Err(Error::VersionMismatch { found: 2, .. })));

        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        assert!(matches!(decode(&bytes[..6]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn resolution_mismatch_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g32.gvmw");
        let p = init_params(Role::Generator, &arch(32), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        save_params(&p, &path).unwrap();
        match load_params(&path, Role::Generator, &arch(64)) {
            Err(Error::TensorShapeMismatch { name, .. }) => assert_eq!(name, "fc.weight"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn randomized_bundles_round_trip(
            shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..6),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tensors: Vec<(String, Tensor)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    use rand::Rng;
                    (format!("t{i}"), Tensor::from_fn(s, |_| rng.gen::<f32>() * 200.0 - 100.0))
                })
                .collect();
            let bytes = encode(tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for (n, t) in &tensors {
                let b = &back[n];
                prop_assert_eq!(b.shape(), t.shape());
                prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(encode(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap(), bytes);
        }
    }
}
