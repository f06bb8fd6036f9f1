//! Dynamic context representation: decayed bilinear attention over implicit
//! relations (DCRI), a relation-decayed graph transformer over explicit
//! relations (DCRE), and their fusion with the encoder states.

use std::rc::Rc;

use ctxparse_autodiff::nn::{bilstm, BiLstmParams, Linear};
use ctxparse_autodiff::{AutodiffError, ParamId, ParamStore, Rng, Tape, Var};
use thiserror::Error;

use crate::decay::DecayVector;
use crate::schema_graph::RelationType;
use crate::INIT_BOUND;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("relation id {0} is not a known relation type")]
    UnknownRelationId(usize),
    #[error("width {width} is not divisible by {heads} heads")]
    HeadWidth { width: usize, heads: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which side of each co-attention the decay weights scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Decay follows the attended keys: history-token weights scale the
    /// schema-to-utterance scores.
    #[default]
    KeyAligned,
    /// Token weights pair with the utterance-to-schema direction, applied
    /// per query row.
    AsPrintedSwapped,
}

/// `softmax((hq W hk^T) ⊙ m) hk` with `m` over keys. Returns the output and
/// the attention matrix.
pub fn dattn(tape: &mut Tape, w_att: ParamId, hq: Var, hk: Var, m: Option<Var>) -> Result<(Var, Var), AutodiffError> {
    let w = tape.param(w_att);
    let qw = tape.matmul(hq, w)?;
    let mut scores = tape.matmul_nt(qw, hk)?;
    if let Some(m) = m {
        let m_row = tape.transpose(m);
        scores = tape.mul_cols(scores, m_row)?;
    }
    let alpha = tape.softmax_rows(scores);
    Ok((tape.matmul(alpha, hk)?, alpha))
}

/// Variant of [`dattn`] whose weights scale whole query rows.
fn dattn_query_scaled(tape: &mut Tape, w_att: ParamId, hq: Var, hk: Var, m: Var) -> Result<(Var, Var), AutodiffError> {
    let w = tape.param(w_att);
    let qw = tape.matmul(hq, w)?;
    let scores = tape.matmul_nt(qw, hk)?;
    let scores = tape.mul_rows(scores, m)?;
    let alpha = tape.softmax_rows(scores);
    Ok((tape.matmul(alpha, hk)?, alpha))
}

#[derive(Debug, Clone, Copy)]
pub struct DcriParams {
    pub schema_inner: ParamId,
    pub utterance_to_schema: ParamId,
    pub schema_to_utterance: ParamId,
}

impl DcriParams {
    pub fn new(store: &mut ParamStore, width: usize, rng: &mut Rng) -> Self {
        DcriParams {
            schema_inner: store.add_uniform("dcri.inner", width, width, INIT_BOUND, rng),
            utterance_to_schema: store.add_uniform("dcri.u2s", width, width, INIT_BOUND, rng),
            schema_to_utterance: store.add_uniform("dcri.s2u", width, width, INIT_BOUND, rng),
        }
    }
}

/// Self-attention among headers; header decay is 1 by definition.
pub fn schema_inner(tape: &mut Tape, p: &DcriParams, h_s: Var) -> Result<(Var, Var), AutodiffError> {
    dattn(tape, p.schema_inner, h_s, h_s, None)
}

#[derive(Debug, Clone, Copy)]
pub struct DcriOutput {
    /// Header states after schema-inner attention.
    pub h_s: Var,
    pub r_iu: Var,
    pub r_is: Var,
    pub inner_alpha: Var,
    pub utterance_alpha: Var,
    pub schema_alpha: Var,
}

/// Co-attention between utterance tokens and headers.
pub fn co_attention(
    tape: &mut Tape,
    p: &DcriParams,
    h_u: Var,
    h_s: Var,
    m: &DecayVector,
    alignment: Alignment,
) -> Result<(Var, Var, Var, Var), AutodiffError> {
    let (r_iu, a_u, r_is, a_s) = match alignment {
        Alignment::KeyAligned => {
            let (r_iu, a_u) = dattn(tape, p.utterance_to_schema, h_u, h_s, None)?;
            let (r_is, a_s) = dattn(tape, p.schema_to_utterance, h_s, h_u, Some(m.m_iu))?;
            (r_iu, a_u, r_is, a_s)
        }
        Alignment::AsPrintedSwapped => {
            let (r_iu, a_u) = dattn_query_scaled(tape, p.utterance_to_schema, h_u, h_s, m.m_iu)?;
            let (r_is, a_s) = dattn(tape, p.schema_to_utterance, h_s, h_u, None)?;
            (r_iu, a_u, r_is, a_s)
        }
    };
    Ok((r_iu, r_is, a_u, a_s))
}

/// Schema-inner attention followed by co-attention.
pub fn dcri(
    tape: &mut Tape,
    p: &DcriParams,
    h_u: Var,
    h_s: Var,
    m: &DecayVector,
    alignment: Alignment,
) -> Result<DcriOutput, AutodiffError> {
    let (h_s, inner_alpha) = schema_inner(tape, p, h_s)?;
    let (r_iu, r_is, utterance_alpha, schema_alpha) = co_attention(tape, p, h_u, h_s, m, alignment)?;
    Ok(DcriOutput {
        h_s,
        r_iu,
        r_is,
        inner_alpha,
        utterance_alpha,
        schema_alpha,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DcreLayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Relation embeddings added on the key side, one row per relation type.
    pub rel_k: ParamId,
    /// Relation embeddings added on the value side.
    pub rel_v: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub heads: usize,
    pub width: usize,
}

impl DcreLayerParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Result<Self, ContextError> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(ContextError::HeadWidth { width, heads });
        }
        let r = RelationType::COUNT;
        let ln_gain = store.add_uniform(format!("{name}.ln_gain"), 1, width, INIT_BOUND, rng);
        store.value_mut(ln_gain).values_mut().iter_mut().for_each(|g| *g += 1.0);
        Ok(DcreLayerParams {
            w_q: store.add_uniform(format!("{name}.w_q"), width, width, INIT_BOUND, rng),
            w_k: store.add_uniform(format!("{name}.w_k"), width, width, INIT_BOUND, rng),
            w_v: store.add_uniform(format!("{name}.w_v"), width, width, INIT_BOUND, rng),
            rel_k: store.add_uniform(format!("{name}.rel_k"), r, width, INIT_BOUND, rng),
            rel_v: store.add_uniform(format!("{name}.rel_v"), r, width, INIT_BOUND, rng),
            ln_gain,
            ln_bias: store.add_uniform(format!("{name}.ln_bias"), 1, width, INIT_BOUND, rng),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), width, 4 * width, true, INIT_BOUND, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), 4 * width, width, true, INIT_BOUND, rng),
            heads,
            width,
        })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct DcreLayerOutput {
    pub r_e: Var,
    /// Scaled scores `e` per head.
    pub scores: Vec<Var>,
    /// Attention weights per head.
    pub alphas: Vec<Var>,
}

/// Checks every id in a row-major relation matrix.
pub fn validate_relations(relations: &[usize]) -> Result<(), ContextError> {
    match relations.iter().find(|&&r| r >= RelationType::COUNT) {
        Some(&r) => Err(ContextError::UnknownRelationId(r)),
        None => Ok(()),
    }
}

/// One relation-decayed transformer layer over `h_r` (`n × width`); `m` is
/// the `n × 1` decay column in the same node order.
pub fn dcre_layer(
    tape: &mut Tape,
    p: &DcreLayerParams,
    h_r: Var,
    relations: &Rc<Vec<usize>>,
    m: Var,
) -> Result<DcreLayerOutput, ContextError> {
    validate_relations(relations)?;
    let n = tape.shape(h_r)[0];
    let dk = p.head_width();
    let inv_scale = 1.0 / (dk as f64).sqrt();
    let w_q = tape.param(p.w_q);
    let w_k = tape.param(p.w_k);
    let w_v = tape.param(p.w_v);
    let q = tape.matmul(h_r, w_q)?;
    let k = tape.matmul(h_r, w_k)?;
    let v = tape.matmul(h_r, w_v)?;
    let rel_k = tape.param(p.rel_k);
    let rel_v = tape.param(p.rel_v);
    let widths = vec![dk; p.heads];
    let qs = tape.split_cols(q, &widths)?;
    let ks = tape.split_cols(k, &widths)?;
    let vs = tape.split_cols(v, &widths)?;
    let gks = tape.split_cols(rel_k, &widths)?;
    let gvs = tape.split_cols(rel_v, &widths)?;
    let mut heads = Vec::with_capacity(p.heads);
    let mut scores = Vec::with_capacity(p.heads);
    let mut alphas = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let content = tape.matmul_nt(qs[h], ks[h])?;
        let per_relation = tape.matmul_nt(qs[h], gks[h])?;
        let relational = tape.relation_gather(per_relation, relations.clone(), n)?;
        let relational = tape.mul_rows(relational, m)?;
        let e = tape.add(content, relational)?;
        let e = tape.scale(e, inv_scale);
        let alpha = tape.softmax_rows(e);
        let values = tape.matmul(alpha, vs[h])?;
        let mass = tape.relation_scatter(alpha, relations.clone(), RelationType::COUNT)?;
        let rel_values = tape.matmul(mass, gvs[h])?;
        let rel_values = tape.mul_rows(rel_values, m)?;
        heads.push(tape.add(values, rel_values)?);
        scores.push(e);
        alphas.push(alpha);
    }
    let z = tape.concat_cols(&heads)?;
    let residual = tape.add(h_r, z)?;
    let normed = tape.layer_norm_rows(residual, LAYER_NORM_EPS);
    let gain = tape.param(p.ln_gain);
    let bias = tape.param(p.ln_bias);
    let normed = tape.mul_cols(normed, gain)?;
    let normed = tape.add_row(normed, bias)?;
    let hidden = p.ffn_in.forward(tape, normed)?;
    let hidden = tape.relu(hidden);
    let r_e = p.ffn_out.forward(tape, hidden)?;
    Ok(DcreLayerOutput { r_e, scores, alphas })
}

/// Stacked DCRE layers; returns the last output and every layer's maps.
pub fn dcre(
    tape: &mut Tape,
    layers: &[DcreLayerParams],
    h_r: Var,
    relations: &Rc<Vec<usize>>,
    m: Var,
) -> Result<(Var, Vec<DcreLayerOutput>), ContextError> {
    let mut x = h_r;
    let mut outputs = Vec::with_capacity(layers.len());
    for layer in layers {
        let out = dcre_layer(tape, layer, x, relations, m)?;
        x = out.r_e;
        outputs.push(out);
    }
    Ok((x, outputs))
}

#[derive(Debug, Clone, Copy)]
pub struct FuseParams {
    pub utterance: BiLstmParams,
    pub schema: BiLstmParams,
}

impl FuseParams {
    /// Inputs are three `width` blocks; outputs are `width` wide.
    pub fn new(store: &mut ParamStore, width: usize, rng: &mut Rng) -> Self {
        FuseParams {
            utterance: BiLstmParams::new(store, "fuse.utterance", 3 * width, width / 2, INIT_BOUND, rng),
            schema: BiLstmParams::new(store, "fuse.schema", 3 * width, width / 2, INIT_BOUND, rng),
        }
    }
}

/// Splits `r_e` at the token/header boundary and runs the fusion Bi-LSTMs.
pub fn fuse(
    tape: &mut Tape,
    p: &FuseParams,
    h_u: Var,
    h_s: Var,
    r_iu: Var,
    r_is: Var,
    r_e: Var,
) -> Result<(Var, Var), AutodiffError> {
    let t = tape.shape(h_u)[0];
    let n = tape.shape(r_e)[0];
    let r_eu = tape.slice_rows(r_e, 0, t)?;
    let r_es = tape.slice_rows(r_e, t, n)?;
    let u_in = tape.concat_cols(&[h_u, r_iu, r_eu])?;
    let s_in = tape.concat_cols(&[h_s, r_is, r_es])?;
    let u = bilstm(tape, u_in, &p.utterance)?.states;
    let s = bilstm(tape, s_in, &p.schema)?.states;
    Ok((u, s))
}

#[derive(Debug, Clone)]
pub struct ContextRepresentation {
    pub h_u: Var,
    pub h_s: Var,
    pub dcri: DcriOutput,
    pub dcre: Vec<DcreLayerOutput>,
    pub r_e: Var,
}

#[derive(Debug, Clone)]
pub struct ContextParams {
    pub dcri: DcriParams,
    pub dcre: Vec<DcreLayerParams>,
    pub fuse: FuseParams,
    pub alignment: Alignment,
}

impl ContextParams {
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        heads: usize,
        layers: usize,
        alignment: Alignment,
        rng: &mut Rng,
    ) -> Result<Self, ContextError> {
        let dcri = DcriParams::new(store, width, rng);
        let dcre = (0..layers)
            .map(|l| DcreLayerParams::new(store, &format!("dcre.{l}"), width, heads, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let fuse = FuseParams::new(store, width, rng);
        Ok(ContextParams {
            dcri,
            dcre,
            fuse,
            alignment,
        })
    }
}

/// DCRI, DCRE over `[h_u ; h_s]`, then fusion.
pub fn represent(
    tape: &mut Tape,
    p: &ContextParams,
    h_u: Var,
    h_s: Var,
    relations: &Rc<Vec<usize>>,
    m: &DecayVector,
) -> Result<ContextRepresentation, ContextError> {
    let dcri_out = dcri(tape, &p.dcri, h_u, h_s, m, p.alignment)?;
    let h_r = tape.concat_rows(&[h_u, dcri_out.h_s])?;
    let m_full = m.full(tape)?;
    let (r_e, dcre_out) = dcre(tape, &p.dcre, h_r, relations, m_full)?;
    let (fu, fs) = fuse(tape, &p.fuse, h_u, dcri_out.h_s, dcri_out.r_iu, dcri_out.r_is, r_e)?;
    Ok(ContextRepresentation {
        h_u: fu,
        h_s: fs,
        dcri: dcri_out,
        dcre: dcre_out,
        r_e,
    })
}
