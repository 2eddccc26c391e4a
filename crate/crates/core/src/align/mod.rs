//! Orthogonal Procrustes alignment of a variety embedding space into the standard space,
//! supervised by tokens spelled identically in both vocabularies.

mod svd;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};

pub use svd::{determinant, jacobi_svd, Svd};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedDictionary {
    /// `(std_index, tgt_index, surface)` for every shared surface, in std vocabulary order.
    pub pairs: Vec<(usize, usize, String)>,
}

impl SeedDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Row-vector map `v -> v W` from the variety space into the standard space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    dim: usize,
    matrix: Vec<f64>,
}

impl AlignmentMap {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("alignment dimension must be positive"));
        }
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.len(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("alignment matrix"));
        }
        Ok(AlignmentMap { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        (0..dim).for_each(|i| m[i * dim + i] = 1.0);
        AlignmentMap { dim, matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `d x d` entries.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    /// `||W^T W - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut err = 0.0;
        for i in 0..d {
            for j in 0..d {
                let g: f64 = (0..d).map(|k| self.get(k, i) * self.get(k, j)).sum();
                err += (g - if i == j { 1.0 } else { 0.0 }).powi(2);
            }
        }
        err.sqrt()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, x) in v.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.matrix[i * d..(i + 1) * d]) {
                *o += x * w;
            }
        }
        out
    }

    /// Text layout: `d` on the first line, then `d` rows of `d` numbers.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{}", self.dim)?;
        for row in self.matrix.chunks(self.dim) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let bad = |r: &str| Error::format("alignment map", path, r.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let dim: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing dimension line"))?;
        let mut matrix = Vec::with_capacity(dim * dim);
        for line in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("non-numeric entry")))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(bad("row length differs from dimension"));
            }
            matrix.extend(row);
        }
        if matrix.len() != dim * dim {
            return Err(bad("wrong number of rows"));
        }
        AlignmentMap::new(dim, matrix).map_err(|e| bad(&e.to_string()))
    }
}

/// Tokens with byte-identical surfaces in both vocabularies.
pub fn build_seed_dictionary(std_model: &EmbeddingModel, tgt_model: &EmbeddingModel) -> Result<SeedDictionary> {
    if !std_model.is_finalized() || !tgt_model.is_finalized() {
        return Err(Error::invalid("seed dictionary needs finalized models"));
    }
    let pairs: Vec<_> = std_model
        .vocab()
        .iter()
        .enumerate()
        .filter_map(|(s, tok)| tgt_model.token_index(tok).map(|t| (s, t, tok.clone())))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("no identical tokens shared by the two vocabularies"));
    }
    if pairs.len() < std_model.dim() {
        log::warn!(
            "only {} seed pairs for dimension {}; the map is underdetermined",
            pairs.len(),
            std_model.dim()
        );
    }
    Ok(SeedDictionary { pairs })
}

/// Orthogonal `W` minimizing `||X W - Y||_F`: `W = U V^T` from the SVD of `X^T Y`. When
/// `X^T Y` is rank deficient the free directions are chosen so that `det W = +1`.
pub fn procrustes(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<AlignmentMap> {
    if x.is_empty() {
        return Err(Error::Empty("Procrustes input"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::invalid("Procrustes rows are empty"));
    }
    for row in x.iter().chain(y) {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Procrustes input"));
        }
    }
    let mut m = vec![0.0; d * d];
    for (xr, yr) in x.iter().zip(y) {
        for (i, xi) in xr.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (mj, yj) in m[i * d..(i + 1) * d].iter_mut().zip(yr) {
                *mj += xi * yj;
            }
        }
    }
    let mut s = jacobi_svd(&m, d);
    let mut w = u_vt(&s, d);
    if let Some(j) = s.completed.iter().position(|c| *c) {
        if determinant(&w, d) < 0.0 {
            for i in 0..d {
                s.u[i * d + j] = -s.u[i * d + j];
            }
            w = u_vt(&s, d);
        }
    }
    AlignmentMap::new(d, w)
}

fn u_vt(s: &Svd, d: usize) -> Vec<f64> {
    let mut w = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            w[i * d + j] = (0..d).map(|k| s.u[i * d + k] * s.v[j * d + k]).sum();
        }
    }
    w
}

/// Seed dictionary plus Procrustes map on exported (unit-norm) vectors, variety → standard.
pub fn align_models(std_model: &EmbeddingModel, tgt_model: &EmbeddingModel) -> Result<(SeedDictionary, AlignmentMap)> {
    if std_model.dim() != tgt_model.dim() {
        return Err(Error::DimensionMismatch {
            expected: std_model.dim(),
            found: tgt_model.dim(),
        });
    }
    let seeds = build_seed_dictionary(std_model, tgt_model)?;
    let rows = |m: &EmbeddingModel, idx: usize| -> Vec<f64> {
        m.vector(idx).expect("finalized").iter().map(|v| *v as f64).collect()
    };
    let x: Vec<Vec<f64>> = seeds.pairs.iter().map(|(_, t, _)| rows(tgt_model, *t)).collect();
    let y: Vec<Vec<f64>> = seeds.pairs.iter().map(|(s, _, _)| rows(std_model, *s)).collect();
    let map = procrustes(&x, &y)?;
    Ok((seeds, map))
}

/// Rotates every table of a finalized model (exported vectors, token rows, context rows and
/// buckets) so the model stays self-consistent in the standard space.
pub fn apply_alignment(map: &AlignmentMap, model: &EmbeddingModel) -> Result<EmbeddingModel> {
    if !model.is_finalized() {
        return Err(Error::invalid("alignment applies to finalized models"));
    }
    if map.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: map.dim(),
        });
    }
    let mut out = model.clone();
    out.transform_rows(map.matrix());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_quarter_turn() {
        let w = procrustes(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
        let mapped = w.apply(&[1.0, 0.0]);
        assert!((mapped[0]).abs() < 1e-12 && (mapped[1] - 1.0).abs() < 1e-12);
        // the proper rotation, not a reflection
        assert!((determinant(w.matrix(), 2) - 1.0).abs() < 1e-12);
        assert!((w.get(1, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_when_targets_equal_sources() {
        let x = vec![vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let w = procrustes(&x, &x).unwrap();
        let id = AlignmentMap::identity(3);
        assert!(w.matrix().iter().zip(id.matrix()).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(procrustes(&[], &[]).is_err());
        assert!(procrustes(&[vec![1.0]], &[vec![1.0, 0.0]]).is_err());
        assert!(procrustes(&[vec![f64::NAN]], &[vec![1.0]]).is_err());
        assert!(AlignmentMap::new(2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn map_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.map");
        let w = procrustes(&[vec![0.3, 0.7], vec![-0.1, 0.2]], &[vec![0.7, 0.3], vec![0.5, -0.5]]).unwrap();
        w.save(&p).unwrap();
        assert_eq!(AlignmentMap::load(&p).unwrap(), w);
        fs::write(&p, "2\n1 0\n0\n").unwrap();
        assert!(AlignmentMap::load(&p).is_err());
    }
}
