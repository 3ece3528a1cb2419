//! Prompt tokenization, vocabulary, and the built-in sequence encoders.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_TOKEN_LENGTH: usize = 30;

/// Lowercased word tokens: alphanumeric runs, with decimals such as `2.5`
/// kept whole. Everything else separates tokens.
pub fn words(prompt: &str) -> Vec<String> {
    let chars: Vec<char> = prompt.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let decimal_point = c == '.'
            && cur.chars().last().is_some_and(|p| p.is_ascii_digit())
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() || decimal_point {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Serialized as its token list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Vocab> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::invalid(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Reserved ids first, then the corpus words in sorted order.
    pub fn from_corpus<'a>(prompts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let words: BTreeSet<String> = prompts.into_iter().flat_map(words).collect();
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(words.into_iter().filter(|w| w != PAD_TOKEN && w != UNK_TOKEN))
            .collect();
        Vocab::from_tokens(tokens).expect("reserved tokens present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let s = std::fs::read_to_string(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
        Vocab::from_tokens(s.lines().map(str::to_string).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub ids: Vec<usize>,
    /// True for real tokens.
    pub pad_mask: Vec<bool>,
}

impl TokenizedPrompt {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_tokens(&self) -> usize {
        self.pad_mask.iter().filter(|m| **m).count()
    }
}

/// Map to ids, truncating or padding to `length`.
pub fn tokenize(prompt: &str, vocab: &Vocab, length: usize) -> Result<TokenizedPrompt> {
    let ws = words(prompt);
    if ws.is_empty() {
        return Err(Error::invalid("prompt has no tokens"));
    }
    if length == 0 {
        return Err(Error::invalid("token length must be positive"));
    }
    let mut ids: Vec<usize> = ws.iter().take(length).map(|w| vocab.id(w)).collect();
    let real = ids.len();
    ids.resize(length, PAD);
    Ok(TokenizedPrompt {
        ids,
        pad_mask: (0..length).map(|i| i < real).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    #[default]
    SelfAttention,
    BiGru,
}

impl std::str::FromStr for TextEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_attention" => Ok(TextEncoderKind::SelfAttention),
            "bi_gru" => Ok(TextEncoderKind::BiGru),
            _ => Err(Error::Config(format!("unknown text encoder {s:?}"))),
        }
    }
}

/// Seam for pretrained encoders: prompt in, `L x C_t` features and pad
/// mask out.
pub trait PromptEncoderAdapter {
    fn dim(&self) -> usize;
    fn encode(&self, prompt: &str) -> Result<(Tensor, Vec<bool>)>;
}

#[derive(Clone, Debug)]
struct AttentionLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ff1: Linear,
    ff2: Linear,
    ln1: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct GruCell {
    w: Linear,
    u: Linear,
    hidden: usize,
}

#[derive(Clone, Debug)]
enum Body {
    Attention { pos: ParamId, layers: Vec<AttentionLayer>, heads: usize },
    Gru { fwd: GruCell, bwd: GruCell },
}

/// Embedding lookup followed by a small sequence encoder.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub kind: TextEncoderKind,
    pub dim: usize,
    pub length: usize,
    embed: ParamId,
    body: Body,
}

pub const ATTENTION_LAYERS: usize = 2;
pub const ATTENTION_HEADS: usize = 4;
const LN_EPS: f64 = 1e-5;

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
        store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
    )
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: TextEncoderKind,
        vocab_size: usize,
        dim: usize,
        length: usize,
    ) -> Result<TextEncoder> {
        let embed = store.add(
            format!("{name}.embed"),
            Tensor::from_fn(&[vocab_size, dim], |_| rng.random_range(-0.5..0.5)),
        );
        let body = match kind {
            TextEncoderKind::SelfAttention => {
                let heads = ATTENTION_HEADS.min(dim);
                if dim % heads != 0 {
                    return Err(Error::Config(format!(
                        "text dim {dim} not divisible by {heads} heads"
                    )));
                }
                let pos = store.add(
                    format!("{name}.pos"),
                    Tensor::from_fn(&[length, dim], |_| rng.random_range(-0.1..0.1)),
                );
                let layers = (0..ATTENTION_LAYERS)
                    .map(|l| {
                        let p = format!("{name}.layer{l}");
                        let mut lin = |n: &str, i: usize, o: usize| {
                            Linear::new(store, rng, &format!("{p}.{n}"), i, o, true)
                        };
                        let (q, k, v, o) = (lin("q", dim, dim), lin("k", dim, dim), lin("v", dim, dim), lin("o", dim, dim));
                        let ff1 = lin("ff1", dim, 2 * dim);
                        let ff2 = lin("ff2", 2 * dim, dim);
                        AttentionLayer {
                            q,
                            k,
                            v,
                            o,
                            ff1,
                            ff2,
                            ln1: layer_norm_params(store, &format!("{p}.ln1"), dim),
                            ln2: layer_norm_params(store, &format!("{p}.ln2"), dim),
                        }
                    })
                    .collect();
                Body::Attention { pos, layers, heads }
            }
            TextEncoderKind::BiGru => {
                if dim % 2 != 0 {
                    return Err(Error::Config(format!("bi_gru needs an even text dim, got {dim}")));
                }
                let hidden = dim / 2;
                let mut cell = |n: &str| GruCell {
                    w: Linear::new(store, rng, &format!("{name}.{n}.w"), dim, 3 * hidden, true),
                    u: Linear::new(store, rng, &format!("{name}.{n}.u"), hidden, 3 * hidden, false),
                    hidden,
                };
                let fwd = cell("fwd");
                let bwd = cell("bwd");
                Body::Gru { fwd, bwd }
            }
        };
        Ok(TextEncoder {
            kind,
            dim,
            length,
            embed,
            body,
        })
    }

    /// Token embeddings `[L, C_t]`.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, tp: &TokenizedPrompt) -> Result<Var> {
        let vocab = store.get(self.embed).rows();
        if let Some(bad) = tp.ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        if tp.len() != self.length {
            return Err(Error::invalid(format!(
                "prompt has {} tokens, encoder expects {}",
                tp.len(),
                self.length
            )));
        }
        let table = g.param(store, self.embed);
        Ok(g.gather_rows(table, &tp.ids))
    }

    /// `[L, C_t]` features; padded rows are produced but carry no meaning.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tp: &TokenizedPrompt) -> Result<Var> {
        let x = self.embed(g, store, tp)?;
        Ok(self.encode_embedded(g, store, x, &tp.pad_mask))
    }

    pub fn encode_embedded(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &[bool]) -> Var {
        match &self.body {
            Body::Attention { pos, layers, heads } => {
                let p = g.param(store, *pos);
                let mut h = g.add(x, p);
                for layer in layers {
                    h = attention_layer(g, store, layer, h, mask, *heads);
                }
                h
            }
            Body::Gru { fwd, bwd } => {
                let real: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                let f = run_gru(g, store, fwd, x, &real);
                let rev: Vec<usize> = real.iter().rev().copied().collect();
                let mut b = run_gru(g, store, bwd, x, &rev);
                b.reverse();
                let hidden = fwd.hidden;
                let mut rows = Vec::with_capacity(mask.len());
                let mut it = f.into_iter().zip(b);
                for &m in mask {
                    if m {
                        let (fr, br) = it.next().expect("one output per real token");
                        rows.push(g.concat_last(&[fr, br]));
                    } else {
                        rows.push(g.constant(Tensor::zeros(&[1, 2 * hidden])));
                    }
                }
                g.concat_rows(&rows)
            }
        }
    }
}

fn layer_norm(g: &mut Graph, store: &ParamStore, x: Var, p: (ParamId, ParamId)) -> Var {
    let y = g.layer_norm_rows(x, LN_EPS);
    let gamma = g.param(store, p.0);
    let beta = g.param(store, p.1);
    let y = g.mul_row(y, gamma);
    g.add_row(y, beta)
}

/// Multi-head attention of `queries [R, D]` over `keys_values [L, D]`
/// restricted to valid keys; returns the concatenated heads `[R, D]`.
pub(crate) fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    key_valid: &[bool],
    heads: usize,
) -> Var {
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let qh = g.slice_last(q, hd * dh, dh);
        let kh = g.slice_last(k, hd * dh, dh);
        let vh = g.slice_last(v, hd * dh, dh);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let attn = g.masked_softmax_rows(scores, key_valid);
        outs.push(g.matmul(attn, vh));
    }
    g.concat_last(&outs)
}

fn attention_layer(
    g: &mut Graph,
    store: &ParamStore,
    layer: &AttentionLayer,
    x: Var,
    mask: &[bool],
    heads: usize,
) -> Var {
    let q = layer.q.forward(g, store, x);
    let k = layer.k.forward(g, store, x);
    let v = layer.v.forward(g, store, x);
    let a = multi_head_attention(g, q, k, v, mask, heads);
    let a = layer.o.forward(g, store, a);
    let h = g.add(x, a);
    let h = layer_norm(g, store, h, layer.ln1);
    let f = layer.ff1.forward(g, store, h);
    let f = g.relu(f);
    let f = layer.ff2.forward(g, store, f);
    let h2 = g.add(h, f);
    layer_norm(g, store, h2, layer.ln2)
}

/// Run a GRU over the rows of `x` at `order`, zero initial state; returns
/// one `[1, H]` state per step.
fn run_gru(g: &mut Graph, store: &ParamStore, cell: &GruCell, x: Var, order: &[usize]) -> Vec<Var> {
    let hd = cell.hidden;
    let xw = cell.w.forward(g, store, x);
    let mut h = g.constant(Tensor::zeros(&[1, hd]));
    let mut out = Vec::with_capacity(order.len());
    for &t in order {
        let xt = g.gather_rows(xw, &[t]);
        let hu = cell.u.forward(g, store, h);
        let xz = g.slice_last(xt, 0, hd);
        let xr = g.slice_last(xt, hd, hd);
        let xn = g.slice_last(xt, 2 * hd, hd);
        let hz = g.slice_last(hu, 0, hd);
        let hr = g.slice_last(hu, hd, hd);
        let hn = g.slice_last(hu, 2 * hd, hd);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let d = g.sub(h, n);
        let zd = g.mul(z, d);
        h = g.add(n, zd);
        out.push(h);
    }
    out
}

/// `[L, C]` features with a mask, as consumed by the fusion modules.
#[derive(Clone, Copy, Debug)]
pub struct TextFeatures<'a> {
    pub matrix: Var,
    pub pad_mask: &'a [bool],
}
