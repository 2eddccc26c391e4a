//! Binary model files: magic, a JSON header with the configuration and vocabularies, then
//! named little-endian `f32` tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Tensor;
use super::model::{layout, ModelConfig, ParamStore, Seq2SeqModel};
use super::vocab::{Vocab, NUM_SPECIALS, SPECIALS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VMMT1";
const FROZEN: &str = "frozen.tgt_table";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rows as u32).to_le_bytes())?;
    w.write_all(&(t.cols as u32).to_le_bytes())?;
    for x in &t.data {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(model: &Seq2SeqModel, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        src_vocab: model.src_vocab.tokens()[NUM_SPECIALS..].to_vec(),
        tgt_vocab: model.tgt_vocab.tokens()[NUM_SPECIALS..].to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(model.params.len() as u32 + 1).to_le_bytes())?;
    for (name, t) in model.params.names().iter().zip(&model.params.values) {
        write_tensor(&mut w, name, t)?;
    }
    write_tensor(&mut w, FROZEN, &model.frozen)?;
    w.flush()?;
    Ok(())
}

struct Reader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> Reader<'_, R> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::format("model checkpoint", self.path, reason)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| self.bad("truncated file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32()?;
        let name = String::from_utf8(self.bytes(n)?).map_err(|_| self.bad("tensor name is not UTF-8"))?;
        let (rows, cols) = (self.u32()?, self.u32()?);
        let raw = self.bytes(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((name, Tensor::from_vec(rows, cols, data)))
    }
}

pub fn load_model(path: &Path) -> Result<Seq2SeqModel> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        path,
    };
    if r.bytes(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(r.bad("bad magic"));
    }
    let n = r.u32()?;
    let header: Header = serde_json::from_slice(&r.bytes(n)?).map_err(|e| r.bad(format!("header: {e}")))?;
    header.config.validate()?;
    let reserved = |v: &[String]| v.iter().any(|t| SPECIALS.contains(&t.as_str()));
    if reserved(&header.src_vocab) || reserved(&header.tgt_vocab) {
        return Err(r.bad("vocabulary lists a reserved token"));
    }
    let src_vocab = Vocab::new(&header.src_vocab);
    let tgt_vocab = Vocab::new(&header.tgt_vocab);
    if src_vocab.len() != header.src_vocab.len() + NUM_SPECIALS || tgt_vocab.len() != header.tgt_vocab.len() + NUM_SPECIALS {
        return Err(r.bad("duplicate vocabulary entries"));
    }

    let expected = layout(&header.config, src_vocab.len(), tgt_vocab.len());
    let count = r.u32()?;
    if count != expected.len() + 1 {
        return Err(r.bad(format!("expected {} tensors, found {count}", expected.len() + 1)));
    }
    let mut params = ParamStore::new();
    for (name, rows, cols, _) in &expected {
        let (got, t) = r.tensor()?;
        if &got != name || (t.rows, t.cols) != (*rows, *cols) {
            return Err(r.bad(format!("expected {name} [{rows}x{cols}], found {got} [{}x{}]", t.rows, t.cols)));
        }
        params.insert(name, t);
    }
    let (got, frozen) = r.tensor()?;
    let rows = if header.config.learned_target_input { 0 } else { tgt_vocab.len() - NUM_SPECIALS };
    let want = (rows, header.config.embed_dim);
    if got != FROZEN || (frozen.rows, frozen.cols) != want {
        return Err(r.bad("missing or misshapen frozen target table"));
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(r.bad("trailing bytes"));
    }
    Ok(Seq2SeqModel {
        config: header.config,
        src_vocab,
        tgt_vocab,
        params,
        frozen,
    })
}
