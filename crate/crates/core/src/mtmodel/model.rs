use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{spans, Graph, Segments, Tensor, Var};
use super::vocab::{Vocab, BOS, EOS, NUM_SPECIALS};
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::vmf::ContinuousLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Continuous,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_layers_enc: usize,
    pub num_layers_dec: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub embed_dim: usize,
    pub head_kind: HeadKind,
    /// Longest output sequence produced by decoding, excluding `</s>`.
    pub max_len: usize,
    pub seed: u64,
    pub loss: ContinuousLoss,
    pub label_smoothing: f64,
    /// Softmax head only: train the decoder input table instead of using frozen pretrained
    /// vectors.
    pub learned_target_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            num_layers_enc: 2,
            num_layers_dec: 2,
            num_heads: 4,
            ffn_dim: 256,
            dropout_rate: 0.1,
            embed_dim: 300,
            head_kind: HeadKind::Continuous,
            max_len: 100,
            seed: 1,
            loss: ContinuousLoss::default(),
            label_smoothing: 0.1,
            learned_target_input: false,
        }
    }
}

impl ModelConfig {
    /// Full-size encoder and decoder: 6+6 layers.
    pub fn full_scale() -> Self {
        ModelConfig {
            d_model: 512,
            num_layers_enc: 6,
            num_layers_dec: 6,
            num_heads: 8,
            ffn_dim: 2048,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("embed_dim", self.embed_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model {name} must be positive")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::invalid("d_model must be divisible by num_heads"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 1)"));
        }
        if self.learned_target_input && self.head_kind != HeadKind::Softmax {
            return Err(Error::invalid("a learned target input table needs the softmax head"));
        }
        Ok(())
    }
}

/// Named trainable tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    pub(crate) values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn insert(&mut self, name: &str, value: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub(crate) fn replace(&mut self, name: &str, value: Tensor) {
        let id = self.index[name];
        self.values[id] = value;
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.data.len()).sum()
    }
}

/// One tokenized pair: source ids and target ids (without `<s>`/`</s>`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub(crate) config: ModelConfig,
    pub(crate) src_vocab: Vocab,
    pub(crate) tgt_vocab: Vocab,
    pub(crate) params: ParamStore,
    /// Pretrained unit vectors of the non-reserved target tokens; never trained.
    pub(crate) frozen: Tensor,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Glorot,
    Uniform(f64),
    Ones,
    Zeros,
}

/// Every trainable tensor: name, shape and initializer, in creation order.
pub(crate) fn layout(config: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Vec<(String, usize, usize, Init)> {
    let (d, f, e) = (config.d_model, config.ffn_dim, config.embed_dim);
    let mut out = Vec::new();
    let mut add = |name: String, r: usize, c: usize, init: Init| out.push((name, r, c, init));
    add("enc.embed".into(), src_vocab, d, Init::Uniform((3.0 / d as f64).sqrt()));
    let block = |add: &mut dyn FnMut(String, usize, usize, Init), prefix: String, cross: bool| {
        for i in 1..=(if cross { 3 } else { 2 }) {
            add(format!("{prefix}.ln{i}.g"), 1, d, Init::Ones);
            add(format!("{prefix}.ln{i}.b"), 1, d, Init::Zeros);
        }
        let attns: &[&str] = if cross { &["self", "cross"] } else { &["self"] };
        for a in attns {
            for w in ["q", "k", "v", "o"] {
                add(format!("{prefix}.{a}.w{w}"), d, d, Init::Glorot);
                add(format!("{prefix}.{a}.b{w}"), 1, d, Init::Zeros);
            }
        }
        add(format!("{prefix}.ffn.w1"), d, f, Init::Glorot);
        add(format!("{prefix}.ffn.b1"), 1, f, Init::Zeros);
        add(format!("{prefix}.ffn.w2"), f, d, Init::Glorot);
        add(format!("{prefix}.ffn.b2"), 1, d, Init::Zeros);
    };
    for l in 0..config.num_layers_enc {
        block(&mut add, format!("enc.{l}"), false);
    }
    add("enc.ln.g".into(), 1, d, Init::Ones);
    add("enc.ln.b".into(), 1, d, Init::Zeros);
    if config.learned_target_input {
        add("dec.embed".into(), tgt_vocab, e, Init::Uniform((3.0 / e as f64).sqrt()));
    } else {
        add("dec.special_in".into(), NUM_SPECIALS, e, Init::Uniform(1.0));
    }
    add("dec.proj.w".into(), e, d, Init::Glorot);
    add("dec.proj.b".into(), 1, d, Init::Zeros);
    for l in 0..config.num_layers_dec {
        block(&mut add, format!("dec.{l}"), true);
    }
    add("dec.ln.g".into(), 1, d, Init::Ones);
    add("dec.ln.b".into(), 1, d, Init::Zeros);
    match config.head_kind {
        HeadKind::Continuous => {
            add("head.w".into(), d, e, Init::Glorot);
            add("head.b".into(), 1, e, Init::Zeros);
            add("head.special_out".into(), NUM_SPECIALS, e, Init::Uniform(1.0));
        }
        HeadKind::Softmax => {
            add("head.w".into(), d, tgt_vocab, Init::Glorot);
            add("head.b".into(), 1, tgt_vocab, Init::Zeros);
        }
    }
    out
}

/// Pretrained vectors for `vocab[NUM_SPECIALS..]`, in vocabulary order.
pub(crate) fn frozen_rows(vocab: &Vocab, embedding: &EmbeddingModel) -> Result<Tensor> {
    let e = embedding.dim();
    let n = vocab.len() - NUM_SPECIALS;
    let mut data = Vec::with_capacity(n * e);
    for tok in &vocab.tokens()[NUM_SPECIALS..] {
        let v = embedding
            .vector_of(tok)
            .ok_or_else(|| Error::UnknownToken(tok.clone()))?;
        data.extend(v.iter().map(|x| *x as f64));
    }
    Ok(Tensor::from_vec(n, e, data))
}

/// Target vocabulary of an embedding model: reserved entries, then its tokens.
pub(crate) fn embedding_vocab(embedding: &EmbeddingModel) -> Result<Vocab> {
    if !embedding.is_finalized() {
        return Err(Error::invalid("target embeddings must be finalized"));
    }
    if let Some(t) = embedding.vocab().iter().find(|t| super::vocab::SPECIALS.contains(&t.as_str())) {
        return Err(Error::invalid(format!("embedding vocabulary contains reserved token {t}")));
    }
    Ok(Vocab::new(embedding.vocab()))
}

pub fn build_model(config: &ModelConfig, src_vocab: &Vocab, tgt_embedding: &EmbeddingModel) -> Result<Seq2SeqModel> {
    config.validate()?;
    if config.embed_dim != tgt_embedding.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.embed_dim,
            found: tgt_embedding.dim(),
        });
    }
    if config.learned_target_input {
        return Err(Error::invalid("pretrained target embeddings given for a learned input table"));
    }
    let tgt_vocab = embedding_vocab(tgt_embedding)?;
    let frozen = frozen_rows(&tgt_vocab, tgt_embedding)?;
    Ok(initialize(config, src_vocab, tgt_vocab, frozen))
}

/// Softmax model whose decoder input table is trained with the rest of the network.
pub fn build_standard_model(config: &ModelConfig, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<Seq2SeqModel> {
    let config = ModelConfig {
        head_kind: HeadKind::Softmax,
        learned_target_input: true,
        ..config.clone()
    };
    config.validate()?;
    let frozen = Tensor::zeros(0, config.embed_dim);
    Ok(initialize(&config, src_vocab, tgt_vocab.clone(), frozen))
}

fn initialize(config: &ModelConfig, src_vocab: &Vocab, tgt_vocab: Vocab, frozen: Tensor) -> Seq2SeqModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = ParamStore::new();
    for (name, rows, cols, init) in layout(config, src_vocab.len(), tgt_vocab.len()) {
        let t = match init {
            Init::Glorot => glorot(&mut rng, rows, cols),
            Init::Uniform(a) => uniform(&mut rng, rows, cols, a),
            Init::Ones => Tensor::from_vec(rows, cols, vec![1.0; rows * cols]),
            Init::Zeros => Tensor::zeros(rows, cols),
        };
        p.insert(&name, t);
    }
    Seq2SeqModel {
        config: config.clone(),
        src_vocab: src_vocab.clone(),
        tgt_vocab,
        params: p,
        frozen,
    }
}

/// Sinusoidal position encodings for positions `0..len` of each segment, stacked.
pub(crate) fn positions(lens: &[usize], d: usize) -> Tensor {
    let total: usize = lens.iter().sum();
    let mut t = Tensor::zeros(total, d);
    let mut r = 0;
    for &len in lens {
        for pos in 0..len {
            let row = t.row_mut(r);
            for i in 0..d / 2 {
                let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                row[2 * i] = angle.sin();
                row[2 * i + 1] = angle.cos();
            }
            r += 1;
        }
    }
    t
}

/// Parameter nodes of one graph, created on first use.
pub(crate) struct Binder<'m> {
    model: &'m Seq2SeqModel,
    vars: HashMap<usize, Var>,
    trainable: bool,
    frozen: Option<Var>,
}

impl<'m> Binder<'m> {
    pub(crate) fn new(model: &'m Seq2SeqModel, trainable: bool) -> Self {
        Binder {
            model,
            vars: HashMap::new(),
            trainable,
            frozen: None,
        }
    }

    pub(crate) fn p(&mut self, g: &mut Graph, name: &str) -> Var {
        let id = self
            .model
            .params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        *self
            .vars
            .entry(id)
            .or_insert_with(|| g.param(id, self.model.params.get(id).clone(), self.trainable))
    }

    fn frozen(&mut self, g: &mut Graph) -> Var {
        *self.frozen.get_or_insert_with(|| g.leaf(self.model.frozen.clone()))
    }
}

impl Seq2SeqModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Pretrained rows for target ids `NUM_SPECIALS..`, shared by decoder input and output.
    pub fn frozen_table(&self) -> &Tensor {
        &self.frozen
    }

    pub fn head_kind(&self) -> HeadKind {
        self.config.head_kind
    }

    /// Tokenizes whitespace-separated pairs. Source unknowns map to `<unk>` only when
    /// `map_unknown`; target tokens must always be known.
    pub fn prepare(&self, pairs: &[(String, String)], map_unknown: bool) -> Result<Vec<Example>> {
        pairs
            .iter()
            .map(|(s, t)| {
                let src = self.src_vocab.encode(s, map_unknown)?;
                let tgt = self.tgt_vocab.encode(t, false)?;
                if src.is_empty() || tgt.is_empty() {
                    return Err(Error::Empty("sentence pair side"));
                }
                Ok(Example { src, tgt })
            })
            .collect()
    }

    fn linear(&self, g: &mut Graph, b: &mut Binder, x: Var, prefix: &str) -> Var {
        let w = b.p(g, &format!("{prefix}.w"));
        let bias = b.p(g, &format!("{prefix}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, bias)
    }

    fn norm(&self, g: &mut Graph, b: &mut Binder, x: Var, prefix: &str) -> Var {
        let gamma = b.p(g, &format!("{prefix}.g"));
        let beta = b.p(g, &format!("{prefix}.b"));
        g.layer_norm(x, gamma, beta)
    }

    #[allow(clippy::too_many_arguments)]
    fn mha(&self, g: &mut Graph, b: &mut Binder, prefix: &str, xq: Var, xkv: Var, seg: &Segments, causal: bool) -> Var {
        let proj = |g: &mut Graph, b: &mut Binder, x: Var, w: &str| {
            let wv = b.p(g, &format!("{prefix}.w{w}"));
            let bv = b.p(g, &format!("{prefix}.b{w}"));
            let y = g.matmul(x, wv);
            g.add_row(y, bv)
        };
        let q = proj(g, b, xq, "q");
        let k = proj(g, b, xkv, "k");
        let v = proj(g, b, xkv, "v");
        let o = g.attention(q, k, v, self.config.num_heads, causal, seg);
        proj(g, b, o, "o")
    }

    fn ffn(&self, g: &mut Graph, b: &mut Binder, x: Var, prefix: &str) -> Var {
        let w1 = b.p(g, &format!("{prefix}.w1"));
        let b1 = b.p(g, &format!("{prefix}.b1"));
        let w2 = b.p(g, &format!("{prefix}.w2"));
        let b2 = b.p(g, &format!("{prefix}.b2"));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let h = g.dropout(h, self.config.dropout_rate);
        let y = g.matmul(h, w2);
        g.add_row(y, b2)
    }

    /// Residual sub-layer with pre-normalization: `x + dropout(f(norm(x)))`.
    fn residual(&self, g: &mut Graph, x: Var, y: Var) -> Var {
        let y = g.dropout(y, self.config.dropout_rate);
        g.add(x, y)
    }

    pub(crate) fn encode(&self, g: &mut Graph, b: &mut Binder, src: &[&[usize]]) -> Var {
        let d = self.config.d_model;
        let lens: Vec<usize> = src.iter().map(|s| s.len()).collect();
        let ids: Vec<usize> = src.iter().flat_map(|s| s.iter().copied()).collect();
        let table = b.p(g, "enc.embed");
        let x = g.gather(table, &ids);
        let x = g.scale(x, (d as f64).sqrt());
        let pe = g.leaf(positions(&lens, d));
        let x = g.add(x, pe);
        let mut x = g.dropout(x, self.config.dropout_rate);
        let seg = Segments::same(&lens);
        for l in 0..self.config.num_layers_enc {
            let p = format!("enc.{l}");
            let h = self.norm(g, b, x, &format!("{p}.ln1"));
            let a = self.mha(g, b, &format!("{p}.self"), h, h, &seg, false);
            x = self.residual(g, x, a);
            let h = self.norm(g, b, x, &format!("{p}.ln2"));
            let f = self.ffn(g, b, h, &format!("{p}.ffn"));
            x = self.residual(g, x, f);
        }
        self.norm(g, b, x, "enc.ln")
    }

    /// Target-side table: trainable reserved rows (unit-normalized) above the frozen rows.
    fn table(&self, g: &mut Graph, b: &mut Binder, special: &str) -> Var {
        let s = b.p(g, special);
        let s = g.normalize_rows(s);
        let f = b.frozen(g);
        g.concat_rows(s, f)
    }

    /// Decoder states for packed target prefixes; `cross` maps each prefix to its encoder rows.
    pub(crate) fn decode(&self, g: &mut Graph, b: &mut Binder, enc: Var, tgt_in: &[&[usize]], cross: &Segments) -> Var {
        let d = self.config.d_model;
        let e = self.config.embed_dim;
        let lens: Vec<usize> = tgt_in.iter().map(|s| s.len()).collect();
        let ids: Vec<usize> = tgt_in.iter().flat_map(|s| s.iter().copied()).collect();
        let table = match self.config.learned_target_input {
            true => b.p(g, "dec.embed"),
            false => self.table(g, b, "dec.special_in"),
        };
        let x = g.gather(table, &ids);
        let x = g.scale(x, (e as f64).sqrt());
        let x = self.linear(g, b, x, "dec.proj");
        let pe = g.leaf(positions(&lens, d));
        let x = g.add(x, pe);
        let mut x = g.dropout(x, self.config.dropout_rate);
        let seg = Segments::same(&lens);
        for l in 0..self.config.num_layers_dec {
            let p = format!("dec.{l}");
            let h = self.norm(g, b, x, &format!("{p}.ln1"));
            let a = self.mha(g, b, &format!("{p}.self"), h, h, &seg, true);
            x = self.residual(g, x, a);
            let h = self.norm(g, b, x, &format!("{p}.ln2"));
            let a = self.mha(g, b, &format!("{p}.cross"), h, enc, cross, false);
            x = self.residual(g, x, a);
            let h = self.norm(g, b, x, &format!("{p}.ln3"));
            let f = self.ffn(g, b, h, &format!("{p}.ffn"));
            x = self.residual(g, x, f);
        }
        self.norm(g, b, x, "dec.ln")
    }

    /// Predicted vectors (continuous) or logits (softmax) per decoder row.
    pub(crate) fn head(&self, g: &mut Graph, b: &mut Binder, h: Var) -> Var {
        self.linear(g, b, h, "head")
    }

    /// Unit rows matched against continuous predictions: reserved rows, then frozen rows.
    pub fn output_table(&self) -> Result<Tensor> {
        if self.config.head_kind != HeadKind::Continuous {
            return Err(Error::invalid("softmax models have no output table"));
        }
        let mut g = Graph::new(false, None);
        let mut b = Binder::new(self, false);
        let t = self.table(&mut g, &mut b, "head.special_out");
        Ok(g.value(t).clone())
    }

    /// Teacher-forced loss graph for a batch. Returns the graph, its binder state and the
    /// loss node.
    pub(crate) fn loss_graph(&self, batch: &[&Example], grad: bool, dropout: Option<ChaCha8Rng>) -> Result<(Graph, Var)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let mut g = Graph::new(grad, dropout);
        let mut b = Binder::new(self, grad);
        let src: Vec<&[usize]> = batch.iter().map(|e| e.src.as_slice()).collect();
        let tgt_in: Vec<Vec<usize>> = batch
            .iter()
            .map(|e| std::iter::once(BOS).chain(e.tgt.iter().copied()).collect())
            .collect();
        let gold: Vec<usize> = batch
            .iter()
            .flat_map(|e| e.tgt.iter().copied().chain(std::iter::once(EOS)))
            .collect();
        let enc = self.encode(&mut g, &mut b, &src);
        let tin: Vec<&[usize]> = tgt_in.iter().map(|v| v.as_slice()).collect();
        let cross = Segments::cross(
            &tin.iter().map(|s| s.len()).collect::<Vec<_>>(),
            &src.iter().map(|s| s.len()).collect::<Vec<_>>(),
        );
        let h = self.decode(&mut g, &mut b, enc, &tin, &cross);
        let out = self.head(&mut g, &mut b, h);
        let loss = match self.config.head_kind {
            HeadKind::Continuous => {
                let table = self.table(&mut g, &mut b, "head.special_out");
                g.vmf_loss(out, table, &gold, &self.config.loss)?
            }
            HeadKind::Softmax => g.softmax_ce(out, &gold, self.config.label_smoothing)?,
        };
        Ok((g, loss))
    }

    /// Mean per-token loss without dropout.
    pub fn loss(&self, batch: &[&Example]) -> Result<f64> {
        let (g, l) = self.loss_graph(batch, false, None)?;
        Ok(g.scalar(l))
    }

    /// Loss and gradients (indexed like [`ParamStore`]) without dropout.
    pub fn loss_and_grads(&self, batch: &[&Example]) -> Result<(f64, Vec<Option<Tensor>>)> {
        let (mut g, l) = self.loss_graph(batch, true, None)?;
        g.backward(l);
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        for (id, t) in g.param_grads() {
            grads[id] = Some(t.clone());
        }
        Ok((g.scalar(l), grads))
    }

    /// Head outputs for every teacher-forced decoder position (`<s>` + `tgt`), no dropout.
    pub fn teacher_forced_outputs(&self, src: &[usize], tgt: &[usize]) -> Result<Tensor> {
        if src.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        let mut g = Graph::new(false, None);
        let mut b = Binder::new(self, false);
        let enc = self.encode(&mut g, &mut b, &[src]);
        let tin: Vec<usize> = std::iter::once(BOS).chain(tgt.iter().copied()).collect();
        let cross = Segments {
            q: spans(&[tin.len()]),
            k: spans(&[src.len()]),
        };
        let h = self.decode(&mut g, &mut b, enc, &[&tin], &cross);
        let out = self.head(&mut g, &mut b, h);
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{finalize, train_embeddings, SkipgramConfig};
    use crate::textproc::MonoCorpus;

    pub(crate) fn tiny_embedding() -> EmbeddingModel {
        let cfg = SkipgramConfig {
            dim: 8,
            bucket_count: 50,
            epochs: 0,
            ..SkipgramConfig::default()
        };
        finalize(train_embeddings(&MonoCorpus::from_strs("t", &["x y z w"]).unwrap(), &cfg, None).unwrap())
    }

    fn tiny_config(head: HeadKind) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            num_layers_enc: 1,
            num_layers_dec: 1,
            num_heads: 2,
            ffn_dim: 16,
            dropout_rate: 0.0,
            embed_dim: 8,
            head_kind: head,
            max_len: 10,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn builds_are_seeded() {
        let emb = tiny_embedding();
        let src = Vocab::new(["a", "b"]);
        let a = build_model(&tiny_config(HeadKind::Continuous), &src, &emb).unwrap();
        let b = build_model(&tiny_config(HeadKind::Continuous), &src, &emb).unwrap();
        assert_eq!(a, b);
        let c = build_model(&ModelConfig { seed: 4, ..tiny_config(HeadKind::Continuous) }, &src, &emb).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn head_shapes_follow_head_kind() {
        let emb = tiny_embedding();
        let src = Vocab::new(["a"]);
        let c = build_model(&tiny_config(HeadKind::Continuous), &src, &emb).unwrap();
        let s = build_model(&tiny_config(HeadKind::Softmax), &src, &emb).unwrap();
        let w = |m: &Seq2SeqModel| m.params.get(m.params.id("head.w").unwrap()).cols;
        assert_eq!(w(&c), 8);
        assert_eq!(w(&s), 4 + 4);
        assert!(s.params.id("head.special_out").is_none());
        assert!(s.output_table().is_err());
        assert_eq!(c.output_table().unwrap().rows, 8);
    }

    #[test]
    fn build_rejects_mismatched_dims() {
        let emb = tiny_embedding();
        let cfg = ModelConfig { embed_dim: 9, ..tiny_config(HeadKind::Continuous) };
        assert!(build_model(&cfg, &Vocab::new(["a"]), &emb).is_err());
        let cfg = ModelConfig { num_heads: 3, ..tiny_config(HeadKind::Continuous) };
        assert!(build_model(&cfg, &Vocab::new(["a"]), &emb).is_err());
    }

    #[test]
    fn prepare_checks_vocabularies() {
        let m = build_model(&tiny_config(HeadKind::Continuous), &Vocab::new(["a"]), &tiny_embedding()).unwrap();
        let ok = m.prepare(&[("a".into(), "x y".into())], false).unwrap();
        assert_eq!(ok[0].tgt.len(), 2);
        assert!(m.prepare(&[("q".into(), "x".into())], false).is_err());
        assert!(m.prepare(&[("q".into(), "x".into())], true).is_ok());
        assert!(m.prepare(&[("a".into(), "nope".into())], true).is_err());
    }

    #[test]
    fn positions_restart_per_segment() {
        let p = positions(&[2, 1], 4);
        assert_eq!(p.row(0), p.row(2));
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
    }
}
