use rand::Rng;

use super::forward::{check_inputs, embed_row, layer_norm, output_logits};
use super::tensor::{gelu, gelu_grad, matmul, matmul_into, matmul_strided, softmax_in_place, View};
use super::{forward, LangMode, Matrix, ModelError, ModelParams, Scalar};

/// One training sequence. `lang` is the language index where the model's
/// language mode needs it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub ids: Vec<u32>,
    pub lang: Option<usize>,
}

impl Sample {
    pub fn new(ids: Vec<u32>, lang: Option<usize>) -> Self {
        Sample { ids, lang }
    }
}

/// Knobs for [`loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub struct LossOptions<'a, T> {
    /// Apply dropout with the config's keep probability.
    pub dropout: bool,
    /// Soft targets: mixes the teacher's next-token distribution into the
    /// target with the given weight. Experimental.
    pub teacher: Option<(&'a ModelParams<T>, f64)>,
}

impl<T> Default for LossOptions<'_, T> {
    fn default() -> Self {
        LossOptions {
            dropout: false,
            teacher: None,
        }
    }
}

struct LayerActs<T> {
    x_in: Matrix<T>,
    ln1_xhat: Matrix<T>,
    ln1_rstd: Vec<T>,
    a: Matrix<T>,
    qkv: Matrix<T>,
    probs: Vec<Matrix<T>>,
    att: Matrix<T>,
    mask1: Option<Vec<T>>,
    ln2_xhat: Matrix<T>,
    ln2_rstd: Vec<T>,
    m: Matrix<T>,
    fc_pre: Matrix<T>,
    f: Matrix<T>,
    mask2: Option<Vec<T>>,
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, keep: f64, rng: &mut R) -> Vec<T> {
    let scale = T::lit(1.0 / keep);
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect()
}

fn apply_mask<T: Scalar>(x: &mut Matrix<T>, mask: &Option<Vec<T>>) {
    if let Some(mask) = mask {
        for (v, &m) in x.data.iter_mut().zip(mask) {
            *v = *v * m;
        }
    }
}

/// Backward through `y = g·xhat + b`; returns dx and accumulates dg, db.
fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    g: &[T],
    xhat: &Matrix<T>,
    rstd: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Matrix<T> {
    let d = dy.cols;
    let n = T::lit(d as f64);
    let mut dx = Matrix::zeros(dy.rows, d);
    for r in 0..dy.rows {
        let (dyr, xr) = (dy.row(r), xhat.row(r));
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            dg[j] = dg[j] + dyr[j] * xr[j];
            db[j] = db[j] + dyr[j];
            let dxhat = dyr[j] * g[j];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xr[j];
        }
        let (mean1, mean2) = (sum_dxhat / n, sum_dxhat_xhat / n);
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = rstd[r] * (dyr[j] * g[j] - mean1 - xr[j] * mean2);
        }
    }
    dx
}

fn acc<T: Scalar>(a: View<'_, T>, b: View<'_, T>, c: &mut Matrix<T>) {
    matmul_into(a, b, T::one(), c);
}

/// Forward and backward for one sequence. Adds gradients scaled so that the
/// batch loss is `Σ lm / lm_count + λ Σ cls / batch`, and returns the
/// unscaled summed LM loss and classification loss.
fn sequence_grad<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    sample: &Sample,
    opts: &LossOptions<'_, T>,
    lm_scale: T,
    cls_scale: T,
    grads: &mut ModelParams<T>,
    rng: &mut R,
) -> Result<(f64, f64), ModelError> {
    let config = &params.config;
    let ids = &sample.ids;
    let n = ids.len();
    let d = config.d_model;
    let dh = config.head_dim();
    let keep = config.keep_prob;
    let use_dropout = opts.dropout && keep < 1.0;
    check_inputs(params, ids, sample.lang)?;
    if n > config.n_ctx {
        return Err(ModelError::ContextOverflow {
            needed: n,
            n_ctx: config.n_ctx,
        });
    }
    let double_heads = config.lang_mode == LangMode::DoubleHeads;
    let cls_lang = if double_heads {
        Some(sample.lang.ok_or(ModelError::MissingLanguage)?)
    } else {
        None
    };

    // Forward.
    let mut x = Matrix::zeros(n, d);
    for (t, &id) in ids.iter().enumerate() {
        embed_row(params, id, t, sample.lang, x.row_mut(t));
    }
    let mask0 = use_dropout.then(|| dropout_mask::<T, R>(n * d, keep, rng));
    apply_mask(&mut x, &mask0);
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut acts = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let x_in = x.clone();
        let (a, ln1_xhat, ln1_rstd) = layer_norm(&x, &block.ln1_g.data, &block.ln1_b.data);
        let mut qkv = matmul(a.view(), block.w_qkv.view());
        qkv.add_row_vector(&block.b_qkv.data);
        let mut att = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let q = qkv.cols_view(h * dh, dh);
            let k = qkv.cols_view(d + h * dh, dh);
            let v = qkv.cols_view(2 * d + h * dh, dh);
            let mut p = matmul(q, k.t());
            for i in 0..n {
                let row = p.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if j > i { T::neg_infinity() } else { *s * scale };
                }
                softmax_in_place(row);
            }
            matmul_strided(p.view(), v, T::zero(), &mut att.data[h * dh..], d);
            probs.push(p);
        }
        let mut y = matmul(att.view(), block.w_o.view());
        y.add_row_vector(&block.b_o.data);
        let mask1 = use_dropout.then(|| dropout_mask::<T, R>(n * d, keep, rng));
        apply_mask(&mut y, &mask1);
        x.add_assign(&y);
        let (m, ln2_xhat, ln2_rstd) = layer_norm(&x, &block.ln2_g.data, &block.ln2_b.data);
        let mut fc_pre = matmul(m.view(), block.w_fc.view());
        fc_pre.add_row_vector(&block.b_fc.data);
        let mut f = fc_pre.clone();
        f.data.iter_mut().for_each(|v| *v = gelu(*v));
        let mut p = matmul(f.view(), block.w_proj.view());
        p.add_row_vector(&block.b_proj.data);
        let mask2 = use_dropout.then(|| dropout_mask::<T, R>(n * d, keep, rng));
        apply_mask(&mut p, &mask2);
        x.add_assign(&p);
        acts.push(LayerActs {
            x_in,
            ln1_xhat,
            ln1_rstd,
            a,
            qkv,
            probs,
            att,
            mask1,
            ln2_xhat,
            ln2_rstd,
            m,
            fc_pre,
            f,
            mask2,
        });
    }
    let h_final = x;
    let (w_pred, mut dlogits) = output_logits(params, &h_final);

    // Loss and output gradient.
    let teacher_logits = match opts.teacher {
        Some((teacher, _)) if n >= 2 => Some(forward(teacher, ids, sample.lang, None)?),
        _ => None,
    };
    let mut lm_loss = 0.0;
    for t in 0..n {
        let row = dlogits.row_mut(t);
        if t + 1 >= n {
            row.fill(T::zero());
            continue;
        }
        softmax_in_place(row);
        let target = ids[t + 1] as usize;
        let mut target_dist = vec![0.0f64; row.len()];
        target_dist[target] = 1.0;
        if let (Some(tl), Some((_, w))) = (&teacher_logits, opts.teacher) {
            let mut q = tl.row(t).to_vec();
            softmax_in_place(&mut q);
            for (td, qv) in target_dist.iter_mut().zip(&q) {
                *td = (1.0 - w) * *td + w * qv.to_f64().unwrap_or(0.0);
            }
        }
        for (j, p) in row.iter_mut().enumerate() {
            let pf = p.to_f64().unwrap_or(f64::NAN);
            if target_dist[j] > 0.0 {
                lm_loss -= target_dist[j] * pf.max(f64::MIN_POSITIVE).ln();
            }
            *p = (*p - T::lit(target_dist[j])) * lm_scale;
        }
    }

    // Backward through the tied output layer.
    dlogits.col_sums_into(&mut grads.out_bias.data);
    acc(dlogits.view().t(), w_pred.view(), &mut grads.wte);
    let dw_pred = matmul(dlogits.view(), params.wte.view());
    acc(h_final.view().t(), dw_pred.view(), &mut grads.proj_a);
    let mut dx = matmul(dw_pred.view(), params.proj_a.view().t());

    let mut cls_loss = 0.0;
    if let (Some(lang), Some(head)) = (cls_lang, &params.cls_head) {
        let last = h_final.row(n - 1);
        let mut z = matmul(View::row_major(last, 1, d), head.view());
        softmax_in_place(&mut z.data);
        cls_loss = -z.data[lang].to_f64().unwrap_or(f64::NAN).max(f64::MIN_POSITIVE).ln();
        z.data[lang] = z.data[lang] - T::one();
        z.data.iter_mut().for_each(|v| *v = *v * cls_scale);
        let gh = grads.cls_head.as_mut().expect("double heads carry a head");
        acc(View::row_major(last, 1, d).t(), z.view(), gh);
        let dlast = matmul(z.view(), head.view().t());
        for (o, &g) in dx.row_mut(n - 1).iter_mut().zip(&dlast.data) {
            *o = *o + g;
        }
    }

    for (l, block) in params.blocks.iter().enumerate().rev() {
        let act = &acts[l];
        let gb = &mut grads.blocks[l];
        // MLP.
        let mut dp = dx.clone();
        apply_mask(&mut dp, &act.mask2);
        acc(act.f.view().t(), dp.view(), &mut gb.w_proj);
        dp.col_sums_into(&mut gb.b_proj.data);
        let mut dfc = matmul(dp.view(), block.w_proj.view().t());
        for (g, &pre) in dfc.data.iter_mut().zip(&act.fc_pre.data) {
            *g = *g * gelu_grad(pre);
        }
        acc(act.m.view().t(), dfc.view(), &mut gb.w_fc);
        dfc.col_sums_into(&mut gb.b_fc.data);
        let dm = matmul(dfc.view(), block.w_fc.view().t());
        let dln2 = layer_norm_backward(&dm, &block.ln2_g.data, &act.ln2_xhat, &act.ln2_rstd, &mut gb.ln2_g.data, &mut gb.ln2_b.data);
        dx.add_assign(&dln2);
        // Attention.
        let mut dy = dx.clone();
        apply_mask(&mut dy, &act.mask1);
        acc(act.att.view().t(), dy.view(), &mut gb.w_o);
        dy.col_sums_into(&mut gb.b_o.data);
        let datt = matmul(dy.view(), block.w_o.view().t());
        let mut dqkv = Matrix::zeros(n, 3 * d);
        for h in 0..config.n_heads {
            let p = &act.probs[h];
            let q = act.qkv.cols_view(h * dh, dh);
            let k = act.qkv.cols_view(d + h * dh, dh);
            let v = act.qkv.cols_view(2 * d + h * dh, dh);
            let d_out = datt.cols_view(h * dh, dh);
            let mut ds = matmul(d_out, v.t());
            for i in 0..n {
                let (pr, dr) = (p.row(i), ds.row_mut(i));
                let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                for (dv, &pv) in dr.iter_mut().zip(pr) {
                    *dv = pv * (*dv - dot) * scale;
                }
            }
            matmul_strided(ds.view(), k, T::zero(), &mut dqkv.data[h * dh..], 3 * d);
            matmul_strided(ds.view().t(), q, T::zero(), &mut dqkv.data[d + h * dh..], 3 * d);
            matmul_strided(p.view().t(), d_out, T::zero(), &mut dqkv.data[2 * d + h * dh..], 3 * d);
        }
        acc(act.a.view().t(), dqkv.view(), &mut gb.w_qkv);
        dqkv.col_sums_into(&mut gb.b_qkv.data);
        let da = matmul(dqkv.view(), block.w_qkv.view().t());
        let dln1 = layer_norm_backward(&da, &block.ln1_g.data, &act.ln1_xhat, &act.ln1_rstd, &mut gb.ln1_g.data, &mut gb.ln1_b.data);
        dx.add_assign(&dln1);
        debug_assert_eq!(act.x_in.rows, n);
    }

    apply_mask(&mut dx, &mask0);
    for (t, &id) in ids.iter().enumerate() {
        let row = dx.row(t);
        for (g, &v) in grads.wte.row_mut(id as usize).iter_mut().zip(row) {
            *g = *g + v;
        }
        for (g, &v) in grads.wpe.row_mut(t).iter_mut().zip(row) {
            *g = *g + v;
        }
        if let (Some(gl), Some(lang)) = (grads.wle.as_mut(), sample.lang) {
            for (g, &v) in gl.row_mut(lang).iter_mut().zip(row) {
                *g = *g + v;
            }
        }
    }
    Ok((lm_loss, cls_loss))
}

/// Mean next-token cross-entropy over every target in the batch (positions
/// 1..len of each sample), plus `cls_weight ×` the mean language
/// classification loss under double heads, with gradients for every tensor.
pub fn loss_and_grad<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    batch: &[Sample],
    opts: &LossOptions<'_, T>,
    rng: &mut R,
) -> Result<(f64, ModelParams<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if let Some((teacher, _)) = opts.teacher {
        super::params::check_compatible(&teacher.config, &params.config)?;
    }
    let targets: usize = batch.iter().map(|s| s.ids.len().saturating_sub(1)).sum();
    let double_heads = params.config.lang_mode == LangMode::DoubleHeads;
    let lambda = if double_heads { params.config.cls_weight } else { 0.0 };
    let lm_scale = if targets > 0 { 1.0 / targets as f64 } else { 0.0 };
    let cls_scale = lambda / batch.len() as f64;
    let mut grads = params.zeros_like();
    let (mut lm, mut cls) = (0.0, 0.0);
    for sample in batch {
        if sample.ids.is_empty() {
            continue;
        }
        let (l, c) = sequence_grad(params, sample, opts, T::lit(lm_scale), T::lit(cls_scale), &mut grads, rng)?;
        lm += l;
        cls += c;
    }
    Ok((lm * lm_scale + cls * cls_scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gptc::{eval_loss, init, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(mode: LangMode) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 8,
            d_x: 8,
            n_heads: 2,
            n_ctx: 8,
            vocab_size: 11,
            lang_mode: mode,
            n_lang: 2,
            ..ModelConfig::desk(11)
        }
    }

    fn batch() -> Vec<Sample> {
        vec![Sample::new(vec![0, 3, 5, 7, 2], Some(0)), Sample::new(vec![1, 4, 4, 9], Some(1))]
    }

    fn loss_of(params: &ModelParams<f64>, batch: &[Sample]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        loss_and_grad(params, batch, &LossOptions::default(), &mut rng).unwrap().0
    }

    /// Central differences over every element; per-tensor relative error of
    /// the gradient vectors.
    fn gradient_check(mode: LangMode) {
        let mut params = init::<f64>(&micro(mode), 11).unwrap();
        // Non-trivial gains and biases so their gradients are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (_, t) in params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let data = batch();
        let mut rng0 = ChaCha8Rng::seed_from_u64(0);
        let (_, grads) = loss_and_grad(&params, &data, &LossOptions::default(), &mut rng0).unwrap();
        let eps = 1e-3;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = params.tensors()[ti].1.len();
            let mut num = vec![0.0; len];
            for i in 0..len {
                let orig = params.tensors()[ti].1.data[i];
                params.tensors_mut()[ti].1.data[i] = orig + eps;
                let up = loss_of(&params, &data);
                params.tensors_mut()[ti].1.data[i] = orig - eps;
                let down = loss_of(&params, &data);
                params.tensors_mut()[ti].1.data[i] = orig;
                num[i] = (up - down) / (2.0 * eps);
            }
            let ana = &grads.tensors()[ti].1.data;
            let diff: f64 = ana.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = if norm == 0.0 { 0.0 } else { diff / norm };
            assert!(rel < 1e-3, "{mode:?} {name}: relative error {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(LangMode::None);
    }

    #[test]
    fn gradients_with_language_embedding_and_heads() {
        gradient_check(LangMode::Embedding);
        gradient_check(LangMode::DoubleHeads);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut params = init::<f64>(&micro(LangMode::None), 1).unwrap();
        params.wte.fill(0.0);
        params.out_bias.fill(0.0);
        let loss = loss_of(&params, &[Sample::new(vec![3, 4], None)]);
        assert!((loss - (11f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_class_weight_matches_plain_lm() {
        let plain = init::<f64>(&micro(LangMode::None), 2).unwrap();
        let mut heads = init::<f64>(&ModelConfig { cls_weight: 0.0, ..micro(LangMode::DoubleHeads) }, 2).unwrap();
        heads.wte = plain.wte.clone();
        heads.wpe = plain.wpe.clone();
        heads.blocks = plain.blocks.clone();
        heads.proj_a = plain.proj_a.clone();
        let a = loss_of(&plain, &batch());
        let b = loss_of(&heads, &batch());
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn training_loss_agrees_with_inference_path() {
        let params = init::<f64>(&micro(LangMode::None), 3).unwrap();
        let data = batch();
        let train = loss_of(&params, &data);
        let eval = eval_loss(&params, &data).unwrap();
        assert!((train - eval).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let params = init::<f64>(&micro(LangMode::None), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            loss_and_grad(&params, &[], &LossOptions::default(), &mut rng),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn soft_targets_with_zero_weight_change_nothing() {
        let params = init::<f64>(&micro(LangMode::None), 4).unwrap();
        let teacher = init::<f64>(&ModelConfig { n_layers: 2, ..micro(LangMode::None) }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = LossOptions { dropout: false, teacher: Some((&teacher, 0.0)) };
        let (a, ga) = loss_and_grad(&params, &batch(), &opts, &mut rng).unwrap();
        let (b, gb) = loss_and_grad(&params, &batch(), &LossOptions::default(), &mut rng).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(ga.proj_a, gb.proj_a);
    }
}
