use super::tensor::{gelu, log_softmax, matmul, matmul_strided, softmax_in_place, View};
use super::{LangMode, Matrix, ModelError, ModelParams, Scalar};

pub(super) const LN_EPS: f64 = 1e-5;

/// Per-layer attention keys and values for positions already processed.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
    d_model: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let n = params.config.n_layers;
        KvCache {
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
            d_model: params.config.d_model,
        }
    }

    /// Positions cached.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_layers(&self) -> usize {
        self.keys.len()
    }

    /// Drops cached positions beyond `len`.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            for layer in self.keys.iter_mut().chain(self.values.iter_mut()) {
                layer.truncate(len * self.d_model);
            }
            self.len = len;
        }
    }
}

/// Row-wise layer norm. Returns the output and, for the backward pass, the
/// normalized input and reciprocal standard deviations.
pub(super) fn layer_norm<T: Scalar>(x: &Matrix<T>, g: &[T], b: &[T]) -> (Matrix<T>, Matrix<T>, Vec<T>) {
    let d = x.cols;
    let mut out = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstds = Vec::with_capacity(x.rows);
    let n = T::lit(d as f64);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstds.push(rstd);
        for j in 0..d {
            let h = (row[j] - mean) * rstd;
            xhat.data[r * d + j] = h;
            out.data[r * d + j] = h * g[j] + b[j];
        }
    }
    (out, xhat, rstds)
}

pub(super) fn check_inputs<T: Scalar>(params: &ModelParams<T>, ids: &[u32], lang: Option<usize>) -> Result<(), ModelError> {
    let config = &params.config;
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            size: config.vocab_size,
        });
    }
    if let Some(l) = lang {
        if l >= config.n_lang.max(1) {
            return Err(ModelError::LanguageOutOfRange(l));
        }
    } else if config.lang_mode == LangMode::Embedding {
        return Err(ModelError::MissingLanguage);
    }
    Ok(())
}

/// Embedding sum `W_e[id] + W_p[pos] (+ W_l[lang])` for one row.
pub(super) fn embed_row<T: Scalar>(params: &ModelParams<T>, id: u32, pos: usize, lang: Option<usize>, out: &mut [T]) {
    let te = params.wte.row(id as usize);
    let pe = params.wpe.row(pos);
    for j in 0..out.len() {
        out[j] = te[j] + pe[j];
    }
    if let (Some(wle), Some(l)) = (&params.wle, lang) {
        for (o, &v) in out.iter_mut().zip(wle.row(l)) {
            *o = *o + v;
        }
    }
}

/// Output path: `logits = (h·A)·W_eᵀ + b`.
pub(super) fn output_logits<T: Scalar>(params: &ModelParams<T>, h: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let w_pred = matmul(h.view(), params.proj_a.view());
    let mut logits = matmul(w_pred.view(), params.wte.view().t());
    logits.add_row_vector(&params.out_bias.data);
    (w_pred, logits)
}

struct Segment<'a, T> {
    cache: &'a mut KvCache<T>,
    ids: &'a [u32],
}

/// Runs contiguous row segments, each extending its own cache, through the
/// stack with shared dense products. Returns final hidden states.
fn run_segments<T: Scalar>(
    params: &ModelParams<T>,
    segments: &mut [Segment<'_, T>],
    lang: Option<usize>,
) -> Result<Matrix<T>, ModelError> {
    let config = &params.config;
    let d = config.d_model;
    let dh = config.head_dim();
    for seg in segments.iter() {
        check_inputs(params, seg.ids, lang)?;
        if seg.cache.num_layers() != config.n_layers || seg.cache.d_model != d {
            return Err(ModelError::Mismatch("cache was built for a different model".into()));
        }
        let needed = seg.cache.len + seg.ids.len();
        if needed > config.n_ctx {
            return Err(ModelError::ContextOverflow {
                needed,
                n_ctx: config.n_ctx,
            });
        }
    }
    let rows: usize = segments.iter().map(|s| s.ids.len()).sum();
    let mut x = Matrix::zeros(rows, d);
    let mut r = 0;
    for seg in segments.iter() {
        for (i, &id) in seg.ids.iter().enumerate() {
            embed_row(params, id, seg.cache.len + i, lang, x.row_mut(r));
            r += 1;
        }
    }
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for (l, block) in params.blocks.iter().enumerate() {
        let (a, _, _) = layer_norm(&x, &block.ln1_g.data, &block.ln1_b.data);
        let mut qkv = matmul(a.view(), block.w_qkv.view());
        qkv.add_row_vector(&block.b_qkv.data);
        let mut att = Matrix::zeros(rows, d);
        let mut r0 = 0;
        for seg in segments.iter_mut() {
            let n = seg.ids.len();
            let start = seg.cache.len;
            for i in 0..n {
                let row = qkv.row(r0 + i);
                seg.cache.keys[l].extend_from_slice(&row[d..2 * d]);
                seg.cache.values[l].extend_from_slice(&row[2 * d..3 * d]);
            }
            let total = start + n;
            let keys = View::row_major(&seg.cache.keys[l], total, d);
            let values = View::row_major(&seg.cache.values[l], total, d);
            let q_rows = View::row_major(&qkv.data[r0 * 3 * d..], n, 3 * d);
            for h in 0..config.n_heads {
                let q = q_rows.cols(h * dh, dh);
                let k = keys.cols(h * dh, dh);
                let v = values.cols(h * dh, dh);
                let mut scores = matmul(q, k.t());
                for i in 0..n {
                    let row = scores.row_mut(i);
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = if j > start + i { T::neg_infinity() } else { *s * scale };
                    }
                    softmax_in_place(row);
                }
                matmul_strided(scores.view(), v, T::zero(), &mut att.data[r0 * d + h * dh..], d);
            }
            r0 += n;
        }
        let mut y = matmul(att.view(), block.w_o.view());
        y.add_row_vector(&block.b_o.data);
        x.add_assign(&y);
        let (m, _, _) = layer_norm(&x, &block.ln2_g.data, &block.ln2_b.data);
        let mut f = matmul(m.view(), block.w_fc.view());
        f.add_row_vector(&block.b_fc.data);
        f.data.iter_mut().for_each(|v| *v = gelu(*v));
        let mut p = matmul(f.view(), block.w_proj.view());
        p.add_row_vector(&block.b_proj.data);
        x.add_assign(&p);
    }
    for seg in segments.iter_mut() {
        seg.cache.len += seg.ids.len();
    }
    Ok(x)
}

/// Logits (`ids.len() × |V|`) for `ids` placed after whatever `cache` holds.
/// With no cache the ids start at position 0. The cache, when given, is
/// extended with the new positions.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[u32],
    lang: Option<usize>,
    cache: Option<&mut KvCache<T>>,
) -> Result<Matrix<T>, ModelError> {
    let mut local;
    let cache = match cache {
        Some(c) => c,
        None => {
            local = KvCache::new(params);
            &mut local
        }
    };
    let h = run_segments(params, &mut [Segment { cache, ids }], lang)?;
    Ok(output_logits(params, &h).1)
}

/// One decoding step for several independent sequences: row `i` of the
/// result holds the logits for `ids[i]` appended to `caches[i]`.
pub fn forward_batch_step<T: Scalar>(
    params: &ModelParams<T>,
    caches: &mut [KvCache<T>],
    ids: &[u32],
    lang: Option<usize>,
) -> Result<Matrix<T>, ModelError> {
    if caches.len() != ids.len() {
        return Err(ModelError::Mismatch("one id per cache".into()));
    }
    let mut segments: Vec<Segment<'_, T>> = caches
        .iter_mut()
        .zip(ids.chunks(1))
        .map(|(cache, ids)| Segment { cache, ids })
        .collect();
    let h = run_segments(params, &mut segments, lang)?;
    Ok(output_logits(params, &h).1)
}

/// Hidden states after the last block, for the classification head.
pub(super) fn hidden_states<T: Scalar>(params: &ModelParams<T>, ids: &[u32], lang: Option<usize>) -> Result<Matrix<T>, ModelError> {
    let mut cache = KvCache::new(params);
    run_segments(params, &mut [Segment { cache: &mut cache, ids }], lang)
}

/// Mean next-token negative log-likelihood over all targets (positions
/// 1..len of every sample), without dropout.
pub fn eval_loss<T: Scalar>(params: &ModelParams<T>, samples: &[super::Sample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for sample in samples {
        if sample.ids.len() < 2 {
            continue;
        }
        let logits = forward(params, &sample.ids, sample.lang, None)?;
        for t in 0..sample.ids.len() - 1 {
            let lp = log_softmax(logits.row(t));
            total -= lp[sample.ids[t + 1] as usize];
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(total / count as f64)
}
