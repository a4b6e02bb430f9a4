//! Checkpoint container. All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PHONMTCK"
//! version    u32
//! config     u32 length + UTF-8 `key=value` lines
//! vocab      u32 length + UTF-8 (source), then the same for target
//! arrays     u32 count, then per array:
//!              u32 name length + UTF-8 name
//!              u8 dtype (1 = f32, 2 = f64)
//!              u32 rank + u64 per dimension
//!              raw element data
//! state      u8 flag; when 1:
//!              u64 step, 32-byte rng seed, u64 rng stream, u128 rng word position,
//!              u64 order length + u64 per entry, u64 cursor
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! Parameters are stored under their dotted names; optimizer moments use
//! the prefixes `adam_m.` and `adam_v.`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::optim::TrainingState;
use super::params::ModelParameters;
use super::tensor::Real;
use super::vocab::Vocabulary;
use super::{io_error, Seq2SeqError};

pub const MAGIC: &[u8; 8] = b"PHONMTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub params: ModelParameters<f32>,
    pub state: Option<TrainingState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_params<T: Real>(out: &mut Vec<u8>, prefix: &str, params: &ModelParameters<T>) {
    for (name, t) in params.tensors() {
        put_str(out, &format!("{prefix}{name}"));
        out.push(T::DTYPE);
        put_u32(out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u64(out, d as u64);
        }
        for &x in &t.data {
            x.write_le(out);
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters<f32>,
    state: Option<&TrainingState>,
    config: &ModelConfig,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
) -> Result<(), Seq2SeqError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, &config.to_kv());
    put_str(&mut out, &source_vocab.to_text());
    put_str(&mut out, &target_vocab.to_text());
    let per_model = params.tensors().len() as u32;
    put_u32(&mut out, per_model * if state.is_some() { 3 } else { 1 });
    put_params(&mut out, "", params);
    if let Some(s) = state {
        put_params(&mut out, "adam_m.", &s.first_moment);
        put_params(&mut out, "adam_v.", &s.second_moment);
        out.push(1);
        put_u64(&mut out, s.step);
        out.extend_from_slice(&s.rng.get_seed());
        put_u64(&mut out, s.rng.get_stream());
        out.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
        put_u64(&mut out, s.order.len() as u64);
        for &i in &s.order {
            put_u64(&mut out, i);
        }
        put_u64(&mut out, s.cursor);
    } else {
        out.push(0);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Seq2SeqError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Seq2SeqError::CorruptFile(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, Seq2SeqError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, Seq2SeqError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, Seq2SeqError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<&'a str, Seq2SeqError> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Seq2SeqError::CorruptFile("invalid UTF-8".into()))
    }
}

fn read_params(
    r: &mut Reader<'_>,
    prefix: &str,
    into: &mut ModelParameters<f32>,
) -> Result<(), Seq2SeqError> {
    for (name, t) in into.tensors_mut() {
        let stored = r.str()?;
        if stored != format!("{prefix}{name}") {
            return Err(Seq2SeqError::CorruptFile(format!("expected array {prefix}{name}, found {stored}")));
        }
        let dtype = r.u8()?;
        if dtype != f32::DTYPE {
            return Err(Seq2SeqError::CorruptFile(format!("array {stored} has dtype {dtype}")));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if shape != t.shape {
            return Err(Seq2SeqError::ConfigMismatch(format!(
                "array {stored} has shape {shape:?}, config implies {:?}",
                t.shape
            )));
        }
        let raw = r.take(t.data.len() * f32::BYTES)?;
        for (x, chunk) in t.data.iter_mut().zip(raw.chunks_exact(f32::BYTES)) {
            *x = f32::read_le(chunk);
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Seq2SeqError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Seq2SeqError::CorruptFile("missing magic bytes".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Seq2SeqError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Seq2SeqError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config = ModelConfig::from_kv(r.str()?).ok_or_else(|| Seq2SeqError::CorruptFile("bad config block".into()))?;
    config.validate()?;
    let source_vocab = Vocabulary::from_text(r.str()?)?;
    let target_vocab = Vocabulary::from_text(r.str()?)?;
    let count = r.u32()? as usize;
    let mut params = ModelParameters::<f32>::zeros(&config, source_vocab.len(), target_vocab.len());
    let per_model = params.tensors().len();
    if count != per_model && count != 3 * per_model {
        return Err(Seq2SeqError::CorruptFile(format!("unexpected array count {count}")));
    }
    read_params(&mut r, "", &mut params)?;
    let state = if count == 3 * per_model {
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        read_params(&mut r, "adam_m.", &mut m)?;
        read_params(&mut r, "adam_v.", &mut v)?;
        if r.u8()? != 1 {
            return Err(Seq2SeqError::CorruptFile("optimizer moments without state".into()));
        }
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let n = r.u64()? as usize;
        if n > body.len() {
            return Err(Seq2SeqError::CorruptFile("order length out of range".into()));
        }
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            order.push(r.u64()?);
        }
        let cursor = r.u64()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Some(TrainingState {
            step,
            first_moment: m,
            second_moment: v,
            rng,
            order,
            cursor,
        })
    } else {
        if r.u8()? != 0 {
            return Err(Seq2SeqError::CorruptFile("state flag without moments".into()));
        }
        None
    };
    if r.pos != body.len() {
        return Err(Seq2SeqError::CorruptFile("trailing bytes".into()));
    }
    if !params.all_finite() {
        return Err(Seq2SeqError::CorruptFile("non-finite parameters".into()));
    }
    Ok(Checkpoint {
        config,
        source_vocab,
        target_vocab,
        params,
        state,
    })
}

/// Loads and rejects a checkpoint written under a different model config.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, Seq2SeqError> {
    let ck = load_checkpoint(path)?;
    if &ck.config != expected {
        return Err(Seq2SeqError::ConfigMismatch(format!(
            "checkpoint was trained with\n{}but the run expects\n{}",
            ck.config.to_kv(),
            expected.to_kv()
        )));
    }
    Ok(ck)
}
