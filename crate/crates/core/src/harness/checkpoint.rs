use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{spec_from_text, spec_to_text};
use crate::error::{Error, Result};
use crate::network::{build_network, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"FHEDN1\n";
pub const VERSION: u32 = 1;

const SPEC_KEY: &str = "meta.spec";
const ITER_KEY: &str = "meta.iteration";
const RNG_KEY: &str = "meta.rng";

/// Trainer position stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// Round every parameter and running statistic to the nearest `f32`, the
/// precision checkpoints store.
pub fn quantize(model: &mut Model) {
    for p in &mut model.params {
        for v in p.value.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    for s in &mut model.bn {
        for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

fn bytes_tensor(bytes: &[u8]) -> (Vec<u32>, Vec<f32>) {
    (vec![bytes.len() as u32], bytes.iter().map(|&b| b as f32).collect())
}

fn rng_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut b = rng.get_seed().to_vec();
    b.extend_from_slice(&rng.get_stream().to_le_bytes());
    b.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    b
}

fn rng_from_bytes(b: &[u8]) -> Result<ChaCha8Rng> {
    if b.len() != 56 {
        return Err(Error::Format(format!("{RNG_KEY} holds {} bytes, expected 56", b.len())));
    }
    let seed: [u8; 32] = b[..32].try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

fn push_tensor(out: &mut Vec<u8>, name: &str, dims: &[u32], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize weights, running statistics, the network spec and trainer
/// state. Parameters are stored as `f32`.
pub fn encode_checkpoint(model: &Model, state: &TrainState) -> Vec<u8> {
    let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let mut entries: Vec<(String, Vec<u32>, Vec<f32>)> = Vec::new();
    let (d, v) = bytes_tensor(spec_to_text(&model.spec).as_bytes());
    entries.push((SPEC_KEY.into(), d, v));
    let (d, v) = bytes_tensor(&state.iteration.to_le_bytes());
    entries.push((ITER_KEY.into(), d, v));
    let (d, v) = bytes_tensor(&rng_bytes(&state.rng));
    entries.push((RNG_KEY.into(), d, v));
    for p in &model.params {
        let dims = p.value.dims().iter().map(|&d| d as u32).collect();
        entries.push((p.name.clone(), dims, f32s(p.value.data())));
    }
    for (name, s) in model.bn_names.iter().zip(&model.bn) {
        let c = vec![s.mean.len() as u32];
        entries.push((format!("{name}.running_mean"), c.clone(), f32s(&s.mean)));
        entries.push((format!("{name}.running_var"), c, f32s(&s.var)));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, data) in &entries {
        push_tensor(&mut out, name, dims, data);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("ran out of bytes reading {what} at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn meta_bytes(data: &[f32], key: &str) -> Result<Vec<u8>> {
    data.iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Format(format!("{key} holds a non-byte value {v}")))
            }
        })
        .collect()
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub state: TrainState,
}

/// Inverse of [`encode_checkpoint`]. Framing, version and CRC are checked
/// before any tensor is interpreted; every parameter and statistic of the
/// echoed spec must be present exactly once with matching shape.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32("tensor count")?;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(count.min(4096) as usize);
    for i in 0..count {
        let what = format!("tensor {i}");
        let len = r.u16(&what)? as usize;
        let name = String::from_utf8_lossy(r.take(len, &what)?).into_owned();
        let ndim = r.u8(&name)? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32(&name).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_needed = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{name}: size overflow")))?;
        let data = r
            .take(bytes_needed, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, dims, data));
    }
    match bytes.len() - r.pos {
        4 => {}
        n if n < 4 => return Err(Error::Truncated("checksum missing".into())),
        n => return Err(Error::Format(format!("{} unexpected bytes after the last tensor", n - 4))),
    }
    let stored = u32::from_le_bytes(bytes[r.pos..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..r.pos]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut find = |key: &str| -> Result<(Vec<usize>, Vec<f32>)> {
        let i = tensors
            .iter()
            .position(|(n, _, _)| n == key)
            .ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
        let (_, d, v) = tensors.swap_remove(i);
        Ok((d, v))
    };
    let spec_text = String::from_utf8(meta_bytes(&find(SPEC_KEY)?.1, SPEC_KEY)?)
        .map_err(|_| Error::Format("spec echo is not UTF-8".into()))?;
    let spec = spec_from_text(&spec_text)?;
    let iter_bytes = meta_bytes(&find(ITER_KEY)?.1, ITER_KEY)?;
    let iteration = u64::from_le_bytes(
        iter_bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("{ITER_KEY} must hold 8 bytes")))?,
    );
    let rng = rng_from_bytes(&meta_bytes(&find(RNG_KEY)?.1, RNG_KEY)?)?;

    let mut model = build_network(&spec, 0)?;
    for p in &mut model.params {
        let (dims, data) = find(&p.name)?;
        if dims != p.value.dims() {
            return Err(Error::Format(format!("{}: stored {dims:?}, spec needs {:?}", p.name, p.value.dims())));
        }
        p.value = Tensor::new(dims, data.iter().map(|&v| v as f64).collect())?;
    }
    for (name, s) in model.bn_names.iter().zip(model.bn.iter_mut()) {
        for (suffix, dst) in [("running_mean", &mut s.mean), ("running_var", &mut s.var)] {
            let key = format!("{name}.{suffix}");
            let (dims, data) = find(&key)?;
            if dims != [dst.len()] {
                return Err(Error::Format(format!("{key}: stored {dims:?}, expected [{}]", dst.len())));
            }
            *dst = data.iter().map(|&v| v as f64).collect();
        }
    }
    if let Some((name, _, _)) = tensors.first() {
        return Err(Error::Format(format!("tensor {name} does not belong to the network")));
    }
    Ok(Checkpoint {
        model,
        state: TrainState { iteration, rng },
    })
}

/// Write a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(model: &Model, state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, encode_checkpoint(model, state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{FusionMode, NetworkSpec};

    fn tiny() -> Model {
        let mut spec = NetworkSpec::desk(FusionMode::B);
        spec.input_size = 32;
        spec.anchors.d_min = 32.0;
        spec.anchors.s0 = 0.25;
        spec.anchors.sl = 0.75;
        build_network(&spec, 3).unwrap()
    }

    #[test]
    fn round_trip_is_stable() {
        let mut m = tiny();
        quantize(&mut m);
        let bytes = encode_checkpoint(&m, &TrainState::default());
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model.params, m.params);
        assert_eq!(back.model.bn, m.bn);
        assert_eq!(back.model.spec, m.spec);
        assert_eq!(encode_checkpoint(&back.model, &back.state), bytes);
    }

    #[test]
    fn faults_are_distinguished() {
        let bytes = encode_checkpoint(&tiny(), &TrainState::default());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(Error::Format(_))));
        let mut version = bytes.clone();
        version[7] = 2;
        assert!(matches!(decode_checkpoint(&version), Err(Error::Version { found: 2, .. })));
        for cut in [9, 15, 40, bytes.len() - 2] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Truncated(_))), "{cut}");
        }
    }
}
