use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingModel;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 5] = b"VMEB1";

/// Plain `.vec` table: a `count dim` header, then `token v1 .. vdim` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct TextVectors {
    pub dim: usize,
    pub tokens: Vec<String>,
    pub data: Vec<f32>,
}

impl TextVectors {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn read_text_vectors(path: impl AsRef<Path>) -> Result<TextVectors> {
    let path = path.as_ref();
    let bad = |reason: String| Error::format("vector file", path, reason);
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header {header:?}"))))
        .collect::<Result<_>>()?;
    let [count, dim] = nums[..] else {
        return Err(bad(format!("header needs two fields, got {header:?}")));
    };
    let mut out = TextVectors {
        dim,
        tokens: Vec::with_capacity(count),
        data: Vec::with_capacity(count * dim),
    };
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default().to_string();
        let before = out.data.len();
        for f in fields {
            let v: f32 = f.parse().map_err(|_| bad(format!("line {}: bad number {f:?}", lineno + 2)))?;
            out.data.push(v);
        }
        if out.data.len() - before != dim {
            return Err(bad(format!("line {}: expected {dim} values", lineno + 2)));
        }
        out.tokens.push(token);
    }
    if out.tokens.len() != count {
        return Err(bad(format!("header promises {count} rows, found {}", out.tokens.len())));
    }
    Ok(out)
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("value does not fit the binary format"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format("embedding model", self.path, format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.bytes(n * 4)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

impl EmbeddingModel {
    /// Writes exported vectors as text. Requires a finalized model.
    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let table = self.exported_matrix()?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (tok, row) in self.vocab.iter().zip(table.chunks(self.dim)) {
            write!(w, "{tok}")?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary layout, little endian: magic, `dim bucket_count min_n max_n vocab_size` as
    /// u32, then per token a u32 byte length, the UTF-8 bytes and a u64 count, then the token,
    /// context and bucket tables as f32, then a u8 finalized flag followed (when set) by the
    /// zero-vector flags and the exported table.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        for v in [self.dim, self.bucket_count, self.min_n, self.max_n, self.len()] {
            put_u32(&mut w, v)?;
        }
        for (tok, count) in self.vocab.iter().zip(&self.counts) {
            put_u32(&mut w, tok.len())?;
            w.write_all(tok.as_bytes())?;
            w.write_all(&count.to_le_bytes())?;
        }
        put_f32s(&mut w, &self.token_vectors)?;
        put_f32s(&mut w, &self.context_vectors)?;
        put_f32s(&mut w, &self.buckets)?;
        match &self.exported {
            None => w.write_all(&[0])?,
            Some(e) => {
                w.write_all(&[1])?;
                let flags: Vec<u8> = e.zero_flags.iter().map(|&f| f as u8).collect();
                w.write_all(&flags)?;
                put_f32s(&mut w, &e.vectors)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = Reader {
            inner: BufReader::new(fs::File::open(path)?),
            path,
        };
        if r.bytes(5)? != BINARY_MAGIC {
            return Err(Error::format("embedding model", path, "bad magic"));
        }
        let (dim, bucket_count, min_n, max_n, n) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if dim == 0 || bucket_count == 0 || min_n == 0 || min_n > max_n {
            return Err(Error::format("embedding model", path, "bad shape header"));
        }
        let mut vocab = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()?;
            let tok = String::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::format("embedding model", path, "token is not UTF-8"))?;
            vocab.push(tok);
            counts.push(r.u64()?);
        }
        let token_vectors = r.f32s(n * dim)?;
        let context_vectors = r.f32s(n * dim)?;
        let buckets = r.f32s(bucket_count * dim)?;
        let finalized = r.bytes(1)?[0];
        let mut model = EmbeddingModel::assemble(
            dim,
            min_n,
            max_n,
            bucket_count,
            vocab,
            counts,
            token_vectors,
            Some(context_vectors),
            buckets,
        )
        .map_err(|e| Error::format("embedding model", path, e.to_string()))?;
        match finalized {
            0 => {}
            1 => {
                let flags = r.bytes(n)?.into_iter().map(|b| b != 0).collect();
                let vectors = r.f32s(n * dim)?;
                model.set_exported(vectors, flags);
            }
            _ => return Err(Error::format("embedding model", path, "bad finalized flag")),
        }
        let mut rest = Vec::new();
        r.inner.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("embedding model", path, "trailing bytes"));
        }
        Ok(model)
    }
}
