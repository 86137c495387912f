//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "VXKTCKPT"
//! version      u32
//! model_name   u32 length + UTF-8 bytes
//! embedding    u32 dim, u32 max_input_tokens
//! pooling      u8
//! frozen       u8
//! encoder      u8 kind (0 = remote, 1 = hash)
//!              hash only: u32 rows, u32 cols, f64 table…, f64 projection…
//! head         u32 rows, u32 cols, f64 weights…, f64 bias × cols
//! log          u32 count, (u32 epoch, f64 mean_loss) × count
//! checksum     32 bytes, SHA-256 of everything above
//! ```
//!
//! Weights are stored as raw IEEE-754 bit patterns, so a load reproduces the
//! saved state bit for bit.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::encoder::{Backend, HashEncoder, RemoteEncoder};
use super::{ClassifierState, DenseHead, EncoderBackendSpec, EpochLoss, FinetuneError, Pooling};
use crate::taxonomy::NUM_LABELS;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VXKTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const HEADER_LEN: usize = 12;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        self.f64s(m.iter());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FinetuneError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FinetuneError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, FinetuneError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, FinetuneError> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FinetuneError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FinetuneError::Corrupt("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str(&mut self) -> Result<String, FinetuneError> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| FinetuneError::Corrupt(e.to_string()))
    }
    fn matrix(&mut self) -> Result<Array2<f64>, FinetuneError> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let values = self.f64s(rows * cols)?;
        Array2::from_shape_vec((rows, cols), values).map_err(|e| FinetuneError::Corrupt(e.to_string()))
    }
}

pub(crate) fn encode_state(state: &ClassifierState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let spec = state.spec();
    w.str(&spec.model_name);
    w.u32(spec.embedding_dim);
    w.u32(spec.max_input_tokens);
    w.u8(state.pooling.tag());
    w.u8(u8::from(state.encoder_frozen));
    match &state.backend {
        Backend::Remote(_) => w.u8(0),
        Backend::Hash(h) => {
            w.u8(1);
            w.matrix(&h.table);
            w.f64s(h.projection.iter());
        }
    }
    w.matrix(&state.head.weights);
    w.f64s(state.head.bias.iter());
    w.u32(state.training_log.len());
    for entry in &state.training_log {
        w.u32(entry.epoch);
        w.f64s([entry.mean_loss].iter());
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub(crate) fn decode_state(bytes: &[u8]) -> Result<ClassifierState, FinetuneError> {
    if bytes.len() >= CHECKPOINT_MAGIC.len() && &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(FinetuneError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(FinetuneError::ChecksumMismatch);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(FinetuneError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(FinetuneError::ChecksumMismatch);
    }

    let mut r = Reader { buf: body, pos: HEADER_LEN };
    let model_name = r.str()?;
    let embedding_dim = r.u32()?;
    let max_input_tokens = r.u32()?;
    let spec = EncoderBackendSpec::new(model_name, embedding_dim, max_input_tokens)
        .map_err(|e| FinetuneError::Corrupt(e.to_string()))?;
    let pooling_tag = r.u8()?;
    let pooling =
        Pooling::from_tag(pooling_tag).ok_or_else(|| FinetuneError::Corrupt(format!("pooling tag {pooling_tag}")))?;
    let encoder_frozen = r.u8()? != 0;
    let backend = match r.u8()? {
        0 => Backend::Remote(RemoteEncoder::new(spec, None)),
        1 => {
            let table = r.matrix()?;
            let projection = Array2::from_shape_vec((embedding_dim, embedding_dim), r.f64s(embedding_dim * embedding_dim)?)
                .map_err(|e| FinetuneError::Corrupt(e.to_string()))?;
            Backend::Hash(HashEncoder::from_parts(spec, table, projection)?)
        }
        kind => return Err(FinetuneError::Corrupt(format!("encoder kind {kind}"))),
    };
    let weights = r.matrix()?;
    if weights.dim() != (embedding_dim, NUM_LABELS) {
        return Err(FinetuneError::Corrupt(format!("head shape {:?}", weights.dim())));
    }
    let bias = Array1::from(r.f64s(NUM_LABELS)?);
    let count = r.u32()?;
    let mut training_log = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let epoch = r.u32()?;
        let mean_loss = r.f64s(1)?[0];
        training_log.push(EpochLoss { epoch, mean_loss });
    }
    if r.pos != body.len() {
        return Err(FinetuneError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(ClassifierState {
        backend,
        pooling,
        encoder_frozen,
        head: DenseHead { weights, bias },
        training_log,
    })
}

/// Writes the checkpoint atomically (temporary file, then rename).
pub fn save_state(state: &ClassifierState, path: &Path) -> Result<(), FinetuneError> {
    let io = |source| FinetuneError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&encode_state(state)).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<ClassifierState, FinetuneError> {
    let bytes = std::fs::read(path).map_err(|source| FinetuneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_state(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::{HASH_TEST_DIM, HASH_TEST_BACKEND};

    fn sample_state() -> ClassifierState {
        ClassifierState {
            backend: Backend::Hash(HashEncoder::test_backend()),
            pooling: Pooling::Mean,
            encoder_frozen: false,
            head: DenseHead::initialized(HASH_TEST_DIM, 5),
            training_log: vec![
                EpochLoss { epoch: 1, mean_loss: 0.7 },
                EpochLoss { epoch: 2, mean_loss: 0.6 },
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let state = sample_state();
        let back = decode_state(&encode_state(&state)).unwrap();
        assert_eq!(back, state);
        assert_eq!(back.spec().model_name, HASH_TEST_BACKEND);
    }

    #[test]
    fn remote_round_trip_keeps_spec_only() {
        let state = ClassifierState {
            backend: Backend::resolve("hatexplain", Some("http://localhost:1")).unwrap(),
            pooling: Pooling::BackendPooled,
            encoder_frozen: true,
            head: DenseHead::initialized(768, 1),
            training_log: vec![],
        };
        let back = decode_state(&encode_state(&state)).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn truncation_is_a_checksum_failure() {
        let bytes = encode_state(&sample_state());
        for cut in [bytes.len() - 1, bytes.len() / 2, 20, 12] {
            assert!(matches!(decode_state(&bytes[..cut]), Err(FinetuneError::ChecksumMismatch)), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = encode_state(&sample_state());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_state(&bytes), Err(FinetuneError::ChecksumMismatch)));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_state(&sample_state());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_state(&bytes),
            Err(FinetuneError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn wrong_magic() {
        assert!(matches!(decode_state(b"PK\x03\x04 not a checkpoint at all........................"), Err(FinetuneError::BadMagic)));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_state(&sample_state(), &path).unwrap();
        assert_eq!(load_state(&path).unwrap(), sample_state());
        assert!(matches!(load_state(&dir.path().join("missing")), Err(FinetuneError::Io { .. })));
    }
}
