//! Forward pass over a disjoint union of graphs, and the pairwise margin loss.
//!
//! Each graph's rows are computed independently of the others in the union
//! (row-wise products, per-node scatter order preserved), so batching never
//! changes a graph's embedding, not even in the last bit.

use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::GnnModel;
use super::tape::{cosine, Tape, Var};
use super::tensor::Mat;
use super::vocab::edge_key;
use crate::desg::Desg;
use crate::error::{Error, Result};

/// Graphs per tape when embedding many graphs at once.
const EMBED_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }

    pub fn unit(&self) -> Vec<f64> {
        let n = self.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return self.0.clone();
        }
        self.0.iter().map(|x| x / n).collect()
    }
}

/// A graph reduced to vocabulary and edge-key indices.
#[derive(Debug, Clone)]
struct Encoded {
    tokens: Vec<usize>,
    edges: Vec<(usize, usize, usize)>,
}

fn encode(model: &GnnModel, g: &Desg) -> Result<Encoded> {
    if g.nodes.is_empty() {
        return Err(Error::Empty(format!("graph `{}` has no nodes", g.group_id())));
    }
    let tokens = g.nodes.iter().map(|n| model.vocab.lookup(&n.attr)).collect();
    let edges = g
        .edges
        .iter()
        .map(|e| Ok((e.src, e.dst, edge_key(e.kind, e.pos)?)))
        .collect::<Result<_>>()?;
    Ok(Encoded { tokens, edges })
}

struct Union {
    tokens: Rc<[usize]>,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    keys: Rc<[usize]>,
    segments: Rc<[(usize, usize)]>,
}

fn union(graphs: &[Encoded]) -> Union {
    let mut tokens = Vec::new();
    let (mut src, mut dst, mut keys) = (Vec::new(), Vec::new(), Vec::new());
    let mut segments = Vec::with_capacity(graphs.len());
    for g in graphs {
        let base = tokens.len();
        segments.push((base, g.tokens.len()));
        tokens.extend_from_slice(&g.tokens);
        for &(s, d, k) in &g.edges {
            src.push(base + s);
            dst.push(base + d);
            keys.push(k);
        }
    }
    Union {
        tokens: tokens.into(),
        src: src.into(),
        dst: dst.into(),
        keys: keys.into(),
        segments: segments.into(),
    }
}

struct Pass {
    tape: Tape,
    params: Vec<Var>,
    /// One row per graph.
    out: Var,
    pools: Vec<Var>,
}

fn run(model: &GnnModel, u: &Union) -> Pass {
    let mut t = Tape::new();
    let p: Vec<Var> = model.params.iter().map(|x| t.leaf(x.value.clone())).collect();
    let l = model.layout();
    let d = model.config.d;
    let n = u.tokens.len();

    let mut h = t.gather(p[l.node_embed], u.tokens.clone());
    let e = t.gather(p[l.edge_embed], u.keys.clone());
    // The absent orientation of each directed edge is a zero vector, so the
    // matching rows of W1 never contribute and are skipped.
    let in_w1 = t.slice_rows(p[l.msg_in.w1], 0, 3 * d);
    let out_w1_nodes = t.slice_rows(p[l.msg_out.w1], 0, 2 * d);
    let out_w1_edge = t.slice_rows(p[l.msg_out.w1], 3 * d, d);

    for _ in 0..model.config.layers {
        let hs = t.gather(h, u.src.clone());
        let hd = t.gather(h, u.dst.clone());

        // Incoming edge v -> u, seen from u = dst: (h_u, h_v, e_vu, 0).
        let x = t.concat_cols(&[hd, hs, e]);
        let pre = t.matmul(x, in_w1);
        let pre = t.add_row(pre, p[l.msg_in.b1]);
        let a = t.relu(pre);
        let msg = t.matmul(a, p[l.msg_in.w2]);
        let msg = t.add_row(msg, p[l.msg_in.b2]);
        let m_in = t.scatter_add(msg, u.dst.clone(), n);

        // Outgoing edge u -> v, seen from u = src: (h_u, h_v, 0, e_uv).
        let x = t.concat_cols(&[hs, hd]);
        let pre = t.matmul(x, out_w1_nodes);
        let pe = t.matmul(e, out_w1_edge);
        let pre = t.add(pre, pe);
        let pre = t.add_row(pre, p[l.msg_out.b1]);
        let a = t.relu(pre);
        let msg = t.matmul(a, p[l.msg_out.w2]);
        let msg = t.add_row(msg, p[l.msg_out.b2]);
        let m_out = t.scatter_add(msg, u.src.clone(), n);

        let m = t.add(m_in, m_out);
        h = gru(&mut t, &p, model, m, h);
    }

    let beta = t.exp(p[l.log_beta]);
    let mut pools = Vec::with_capacity(l.heads.len());
    for (k, head) in l.heads.iter().enumerate() {
        let x = t.matmul(h, p[head.w]);
        let x = t.add_row(x, p[head.b]);
        let x = t.relu(x);
        let x = t.layer_norm(x, p[head.ln_gamma], p[head.ln_beta]);
        let bk = t.slice_cols(beta, k, 1);
        pools.push(t.segment_softmax_pool(x, bk, u.segments.clone()));
    }
    let cat = t.concat_cols(&pools);
    let out = t.matmul(cat, p[l.out_w]);
    let out = t.add_row(out, p[l.out_b]);
    Pass {
        tape: t,
        params: p,
        out,
        pools,
    }
}

/// GRU cell: `r = s(x Wr + h Ur)`, `z = s(x Wz + h Uz)`,
/// `n = tanh(x Wn + r * (h Un))`, `h' = (1 - z) * n + z * h`.
fn gru(t: &mut Tape, p: &[Var], model: &GnnModel, x: Var, h: Var) -> Var {
    let g = model.layout().gru;
    let d = model.config.d;
    let gi = t.matmul(x, p[g.w_ih]);
    let gi = t.add_row(gi, p[g.b_ih]);
    let gh = t.matmul(h, p[g.w_hh]);
    let gh = t.add_row(gh, p[g.b_hh]);
    let mut gate = |k: usize| {
        let a = t.slice_cols(gi, k * d, d);
        let b = t.slice_cols(gh, k * d, d);
        (a, b)
    };
    let (ir, hr) = gate(0);
    let (iz, hz) = gate(1);
    let (inn, hn) = gate(2);
    let r = t.add(ir, hr);
    let r = t.sigmoid(r);
    let z = t.add(iz, hz);
    let z = t.sigmoid(z);
    let rn = t.mul(r, hn);
    let nn = t.add(inn, rn);
    let nn = t.tanh(nn);
    let keep = t.one_minus(z);
    let a = t.mul(keep, nn);
    let b = t.mul(z, h);
    t.add(a, b)
}

fn rows_of(m: &Mat) -> Vec<Embedding> {
    (0..m.rows()).map(|r| Embedding(m.row(r).to_vec())).collect()
}

fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn embed_graph(model: &GnnModel, g: &Desg) -> Result<Embedding> {
    let enc = encode(model, g)?;
    let pass = run(model, &union(std::slice::from_ref(&enc)));
    let out = pass.tape.value(pass.out);
    check_finite(out, "embedding")?;
    Ok(rows_of(out).remove(0))
}

/// Embeds many graphs, in parallel across chunks.
pub fn embed_graphs(model: &GnnModel, graphs: &[&Desg]) -> Result<Vec<Embedding>> {
    let encoded = graphs
        .iter()
        .map(|g| encode(model, g))
        .collect::<Result<Vec<_>>>()?;
    let chunks: Vec<Vec<Embedding>> = encoded
        .par_chunks(EMBED_CHUNK)
        .map(|chunk| {
            let pass = run(model, &union(chunk));
            let out = pass.tape.value(pass.out);
            check_finite(out, "embedding")?;
            Ok(rows_of(out))
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Per-head softmax pooling weights (nodes x d) for one graph.
pub fn pooling_weights(model: &GnnModel, g: &Desg) -> Result<Vec<Mat>> {
    let enc = encode(model, g)?;
    let pass = run(model, &union(std::slice::from_ref(&enc)));
    Ok(pass
        .pools
        .iter()
        .map(|v| pass.tape.pool_weights(*v).expect("pool node").clone())
        .collect())
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub positive: f64,
    pub negative: f64,
    /// Aligned with [`GnnModel::params`].
    pub grads: Vec<Mat>,
}

/// Chooses the negative for pair `i` given the embedding matrix of the batch
/// (rows `0..B` are the `p` side, rows `B..2B` the `q` side). Returning a
/// row of pair `i` itself is an error; `None` skips the negative term.
pub trait NegativeChooser: FnMut(usize, &Mat) -> Option<usize> {}
impl<F: FnMut(usize, &Mat) -> Option<usize>> NegativeChooser for F {}

/// Sum over pairs of `max(1 - cos(p,q) - m, 0) + max(cos(p, neg) - m, 0)`
/// and its gradient with respect to every parameter tensor.
pub fn loss_and_grads(
    model: &GnnModel,
    pairs: &[(&Desg, &Desg)],
    margin: f64,
    mut choose_negative: impl NegativeChooser,
) -> Result<LossGrads> {
    if pairs.is_empty() {
        return Err(Error::Empty("training batch has no pairs".into()));
    }
    let b = pairs.len();
    let mut encoded = Vec::with_capacity(2 * b);
    for (p, _) in pairs {
        encoded.push(encode(model, p)?);
    }
    for (_, q) in pairs {
        encoded.push(encode(model, q)?);
    }
    let mut pass = run(model, &union(&encoded));
    let emb = pass.tape.value(pass.out).clone();
    check_finite(&emb, "embedding")?;

    let t = &mut pass.tape;
    let mut terms = Vec::with_capacity(2 * b);
    let (mut positive, mut negative) = (0.0, 0.0);
    for i in 0..b {
        let c = t.row_cosine(pass.out, i, b + i);
        let pos = t.hinge(c, 1.0 - margin, -1.0);
        positive += t.value(pos).data()[0];
        terms.push(pos);
        if let Some(j) = choose_negative(i, &emb) {
            if j == i || j == b + i || j >= 2 * b {
                return Err(Error::InvalidArgument(format!(
                    "negative row {j} is not a different pair's embedding for pair {i}"
                )));
            }
            let c = t.row_cosine(pass.out, i, j);
            let neg = t.hinge(c, -margin, 1.0);
            negative += t.value(neg).data()[0];
            terms.push(neg);
        }
    }
    let root = t.sum(&terms);
    let loss = t.value(root).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut all = t.backward(root);
    let mut grads = Vec::with_capacity(model.params.len());
    for (param, var) in model.params.iter().zip(&pass.params) {
        let (r, c) = param.value.shape();
        let g = all[var.index()].take().unwrap_or_else(|| Mat::zeros(r, c));
        check_finite(&g, &param.name)?;
        grads.push(g);
    }
    Ok(LossGrads {
        loss,
        positive,
        negative,
        grads,
    })
}
