//! Versioned on-disk model containers.
//!
//! Embedding models: magic `RRPV`, u32 version, hyperparameters, vocabulary
//! table, then the three matrices as row-major little-endian f32, and a
//! trailing CRC32 over everything after the magic. Regressors: magic
//! `RRML`, u32 version, loss kind, standardizer, weights and bias as
//! little-endian f64, same trailing CRC. A load either returns a complete,
//! checksum-verified model or an integrity error — never a partial model.

use std::fs;
use std::io::Write;
use std::path::Path;

use scorestream_core::embedding::{ParagraphVectorModel, PvHyperparams};
use scorestream_core::matrix::Matrix;
use scorestream_core::regression::{LossKind, RegressionModel, Standardizer};
use scorestream_core::vocab::{NoiseTable, VocabEntry, Vocabulary};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PV_MAGIC: &[u8; 4] = b"RRPV";
const ML_MAGIC: &[u8; 4] = b"RRML";
const PV_VERSION: u32 = 1;
const ML_VERSION: u32 = 1;

/// Write `bytes` to `path` via a temp file and atomic rename, so readers
/// never observe a partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io("cannot create directory", parent, e))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f =
            fs::File::create(&tmp).map_err(|e| Error::io("cannot create temp file", &tmp, e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io("cannot write temp file", &tmp, e))?;
        f.sync_all()
            .map_err(|e| Error::io("cannot sync temp file", &tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io("cannot rename artifact", path, e))?;
    Ok(())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io("cannot read file", path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Writer {
        Writer {
            buf: magic.to_vec(),
        }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    /// Append the CRC32 of everything after the magic and return the buffer.
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf[4..]);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Strip and verify magic and the trailing CRC, leaving the payload.
    fn open(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Reader<'a>> {
        if bytes.len() < 8 {
            return Err(Error::Integrity(format!("{what}: file too short")));
        }
        if &bytes[..4] != magic {
            return Err(Error::Integrity(format!(
                "{what}: bad magic header (not a {} file)",
                String::from_utf8_lossy(magic)
            )));
        }
        let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let payload = &bytes[4..bytes.len() - 4];
        let crc_actual = crc32fast::hash(payload);
        if crc_stored != crc_actual {
            return Err(Error::Integrity(format!(
                "{what}: checksum mismatch (file truncated or corrupted)"
            )));
        }
        Ok(Reader {
            buf: payload,
            pos: 0,
            what,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!("{}: truncated record", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Integrity(format!(
                "{}: {} unexpected trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn write_matrix(w: &mut Writer, m: &Matrix<f32>) {
    w.u32(m.rows() as u32);
    w.u32(m.cols() as u32);
    for &v in m.as_slice() {
        w.f32(v);
    }
}

fn read_matrix(r: &mut Reader<'_>) -> Result<Matrix<f32>> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32()?);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Persist an embedding model: vocabulary table, hyperparameters, then
/// the three matrices.
pub fn save_pv_model(model: &ParagraphVectorModel, path: &Path) -> Result<()> {
    let mut w = Writer::new(PV_MAGIC);
    w.u32(PV_VERSION);

    w.u32(model.vocab.len() as u32);
    for e in model.vocab.entries() {
        let b = e.token.as_bytes();
        w.u32(b.len() as u32);
        w.bytes(b);
        w.u64(e.count);
    }

    let p = &model.params;
    w.u32(p.dim as u32);
    w.u32(p.window as u32);
    w.u32(p.negatives as u32);
    w.u32(p.epochs as u32);
    w.f32(p.alpha_start);
    w.f32(p.alpha_end);
    w.u64(p.min_count);
    w.u64(p.seed);
    w.f32(p.subsample_t);

    write_matrix(&mut w, &model.word_in);
    write_matrix(&mut w, &model.word_out);
    write_matrix(&mut w, &model.doc_vecs);
    atomic_write(path, &w.finish())
}

/// Load an embedding model; the noise table is rebuilt from the vocabulary
/// counts (it is fully determined by them).
pub fn load_pv_model(path: &Path) -> Result<ParagraphVectorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io("cannot read model file", path, e))?;
    let mut r = Reader::open(&bytes, PV_MAGIC, "embedding model")?;
    let version = r.u32()?;
    if version != PV_VERSION {
        return Err(Error::Integrity(format!(
            "embedding model: unsupported version {version} (expected {PV_VERSION})"
        )));
    }
    let vocab_len = r.u32()? as usize;
    let mut entries = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        let len = r.u32()? as usize;
        let token = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Integrity("embedding model: invalid UTF-8 token".into()))?;
        let count = r.u64()?;
        entries.push(VocabEntry { token, count });
    }
    let vocab = Vocabulary::from_entries(entries);
    let params = PvHyperparams {
        dim: r.u32()? as usize,
        window: r.u32()? as usize,
        negatives: r.u32()? as usize,
        epochs: r.u32()? as usize,
        alpha_start: r.f32()?,
        alpha_end: r.f32()?,
        min_count: r.u64()?,
        seed: r.u64()?,
        subsample_t: r.f32()?,
    };
    let word_in = read_matrix(&mut r)?;
    let word_out = read_matrix(&mut r)?;
    let doc_vecs = read_matrix(&mut r)?;
    r.done()?;
    let noise = NoiseTable::build(&vocab);
    Ok(ParagraphVectorModel {
        vocab,
        params,
        word_in,
        word_out,
        doc_vecs,
        noise,
    })
}

/// Persist a regressor.
pub fn save_regression_model(model: &RegressionModel, path: &Path) -> Result<()> {
    let mut w = Writer::new(ML_MAGIC);
    w.u32(ML_VERSION);
    w.u8(match model.loss_kind {
        LossKind::Squared => 0,
        LossKind::EpsilonInsensitive => 1,
    });
    w.f64(model.epsilon);
    w.f64(model.l2_lambda);
    let d = model.dim();
    w.u32(d as u32);
    for &v in &model.standardizer.mean {
        w.f64(v);
    }
    for &v in &model.standardizer.std {
        w.f64(v);
    }
    for &flag in &model.standardizer.constant_dims {
        w.u8(u8::from(flag));
    }
    for &v in &model.weights {
        w.f64(v);
    }
    w.f64(model.bias);
    atomic_write(path, &w.finish())
}

pub fn load_regression_model(path: &Path) -> Result<RegressionModel> {
    let bytes = fs::read(path).map_err(|e| Error::io("cannot read model file", path, e))?;
    let mut r = Reader::open(&bytes, ML_MAGIC, "regression model")?;
    let version = r.u32()?;
    if version != ML_VERSION {
        return Err(Error::Integrity(format!(
            "regression model: unsupported version {version} (expected {ML_VERSION})"
        )));
    }
    let loss_kind = match r.u8()? {
        0 => LossKind::Squared,
        1 => LossKind::EpsilonInsensitive,
        k => {
            return Err(Error::Integrity(format!(
                "regression model: unknown loss kind {k}"
            )))
        }
    };
    let epsilon = r.f64()?;
    let l2_lambda = r.f64()?;
    let d = r.u32()? as usize;
    let mut mean = Vec::with_capacity(d);
    for _ in 0..d {
        mean.push(r.f64()?);
    }
    let mut std = Vec::with_capacity(d);
    for _ in 0..d {
        std.push(r.f64()?);
    }
    let mut constant_dims = Vec::with_capacity(d);
    for _ in 0..d {
        constant_dims.push(r.u8()? != 0);
    }
    let mut weights = Vec::with_capacity(d);
    for _ in 0..d {
        weights.push(r.f64()?);
    }
    let bias = r.f64()?;
    r.done()?;
    Ok(RegressionModel {
        weights,
        bias,
        loss_kind,
        epsilon,
        l2_lambda,
        standardizer: Standardizer {
            mean,
            std,
            constant_dims,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use scorestream_core::embedding::PvTrainer;

    fn tiny_model() -> ParagraphVectorModel {
        let docs: Vec<Vec<String>> = vec![
            vec!["a", "b", "c", "a", "b"],
            vec!["c", "d", "a"],
            vec!["b", "d", "d"],
        ]
        .into_iter()
        .map(|d| d.into_iter().map(str::to_string).collect())
        .collect();
        let vocab = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let encoded: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(d)).collect();
        let params = PvHyperparams {
            dim: 6,
            epochs: 2,
            window: 2,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let mut t = PvTrainer::new(vocab, docs.len(), params).unwrap();
        for _ in 0..2 {
            t.train_epoch(encoded.iter().cloned().enumerate());
        }
        t.into_model()
    }

    #[test]
    fn pv_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrpv");
        let model = tiny_model();
        save_pv_model(&model, &path).unwrap();
        let loaded = load_pv_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn pv_wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrpv");
        let mut bytes = Vec::new();
        save_pv_model(&tiny_model(), &path).unwrap();
        bytes.extend(fs::read(&path).unwrap());
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_pv_model(&path).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn pv_truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrpv");
        save_pv_model(&tiny_model(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        let err = load_pv_model(&path).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn pv_bitflip_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrpv");
        save_pv_model(&tiny_model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(load_pv_model(&path).is_err());
    }

    #[test]
    fn ml_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrml");
        let model = RegressionModel {
            weights: vec![0.25, -1.5, 3.0],
            bias: 2.75,
            loss_kind: LossKind::EpsilonInsensitive,
            epsilon: 0.1,
            l2_lambda: 1e-4,
            standardizer: Standardizer {
                mean: vec![0.1, 0.2, 0.3],
                std: vec![1.0, 2.0, 1.0],
                constant_dims: vec![false, false, true],
            },
        };
        save_regression_model(&model, &path).unwrap();
        let loaded = load_regression_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn ml_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrml");
        // hand-build a file claiming version 9
        let mut w = Writer::new(ML_MAGIC);
        w.u32(9);
        atomic_write(&path, &w.finish()).unwrap();
        let err = load_regression_model(&path).err().unwrap();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        atomic_write(&path, b"hello").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"hello");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn sha256_is_stable() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
