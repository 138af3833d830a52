use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{LangMode, Matrix, ModelConfig, ModelError, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_g: Matrix<T>,
    pub ln1_b: Matrix<T>,
    /// `d × 3d`: query, key and value projections side by side.
    pub w_qkv: Matrix<T>,
    pub b_qkv: Matrix<T>,
    pub w_o: Matrix<T>,
    pub b_o: Matrix<T>,
    pub ln2_g: Matrix<T>,
    pub ln2_b: Matrix<T>,
    pub w_fc: Matrix<T>,
    pub b_fc: Matrix<T>,
    pub w_proj: Matrix<T>,
    pub b_proj: Matrix<T>,
}

impl<T: Scalar> Block<T> {
    fn zeros(d: usize) -> Self {
        Block {
            ln1_g: Matrix::zeros(1, d),
            ln1_b: Matrix::zeros(1, d),
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: Matrix::zeros(1, 3 * d),
            w_o: Matrix::zeros(d, d),
            b_o: Matrix::zeros(1, d),
            ln2_g: Matrix::zeros(1, d),
            ln2_b: Matrix::zeros(1, d),
            w_fc: Matrix::zeros(d, 4 * d),
            b_fc: Matrix::zeros(1, 4 * d),
            w_proj: Matrix::zeros(4 * d, d),
            b_proj: Matrix::zeros(1, d),
        }
    }

    fn named(&self) -> [(&'static str, &Matrix<T>); 12] {
        [
            ("ln1.g", &self.ln1_g),
            ("ln1.b", &self.ln1_b),
            ("attn.w_qkv", &self.w_qkv),
            ("attn.b_qkv", &self.b_qkv),
            ("attn.w_o", &self.w_o),
            ("attn.b_o", &self.b_o),
            ("ln2.g", &self.ln2_g),
            ("ln2.b", &self.ln2_b),
            ("mlp.w_fc", &self.w_fc),
            ("mlp.b_fc", &self.b_fc),
            ("mlp.w_proj", &self.w_proj),
            ("mlp.b_proj", &self.b_proj),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Matrix<T>); 12] {
        [
            ("ln1.g", &mut self.ln1_g),
            ("ln1.b", &mut self.ln1_b),
            ("attn.w_qkv", &mut self.w_qkv),
            ("attn.b_qkv", &mut self.b_qkv),
            ("attn.w_o", &mut self.w_o),
            ("attn.b_o", &mut self.b_o),
            ("ln2.g", &mut self.ln2_g),
            ("ln2.b", &mut self.ln2_b),
            ("mlp.w_fc", &mut self.w_fc),
            ("mlp.b_fc", &mut self.b_fc),
            ("mlp.w_proj", &mut self.w_proj),
            ("mlp.b_proj", &mut self.b_proj),
        ]
    }
}

/// All trainable tensors. Gradients use the same type.
///
/// Tensor names, in checkpoint order: `wte` (|V|×d_x), `wpe` (N_ctx×d_x),
/// `wle` (N_lang×d_x, embedding mode only), `h{i}.ln1.g`, `h{i}.ln1.b`,
/// `h{i}.attn.w_qkv`, `h{i}.attn.b_qkv`, `h{i}.attn.w_o`, `h{i}.attn.b_o`,
/// `h{i}.ln2.g`, `h{i}.ln2.b`, `h{i}.mlp.w_fc`, `h{i}.mlp.b_fc`,
/// `h{i}.mlp.w_proj`, `h{i}.mlp.b_proj` per block, `proj_a` (d_model×d_x),
/// `out_bias` (1×|V|) and `cls_head` (d_model×N_lang, double heads only).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub wte: Matrix<T>,
    pub wpe: Matrix<T>,
    pub wle: Option<Matrix<T>>,
    pub blocks: Vec<Block<T>>,
    pub proj_a: Matrix<T>,
    pub out_bias: Matrix<T>,
    pub cls_head: Option<Matrix<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero tensors shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, dx, d) = (config.vocab_size, config.d_x, config.d_model);
        ModelParams {
            config: config.clone(),
            wte: Matrix::zeros(v, dx),
            wpe: Matrix::zeros(config.n_ctx, dx),
            wle: (config.lang_mode == LangMode::Embedding).then(|| Matrix::zeros(config.n_lang, dx)),
            blocks: (0..config.n_layers).map(|_| Block::zeros(d)).collect(),
            proj_a: Matrix::zeros(d, dx),
            out_bias: Matrix::zeros(1, v),
            cls_head: (config.lang_mode == LangMode::DoubleHeads).then(|| Matrix::zeros(d, config.n_lang)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("wte".to_string(), &self.wte), ("wpe".to_string(), &self.wpe)];
        if let Some(wle) = &self.wle {
            out.push(("wle".to_string(), wle));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            out.extend(block.named().into_iter().map(|(n, t)| (format!("h{i}.{n}"), t)));
        }
        out.push(("proj_a".to_string(), &self.proj_a));
        out.push(("out_bias".to_string(), &self.out_bias));
        if let Some(cls) = &self.cls_head {
            out.push(("cls_head".to_string(), cls));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = vec![("wte".to_string(), &mut self.wte), ("wpe".to_string(), &mut self.wpe)];
        if let Some(wle) = &mut self.wle {
            out.push(("wle".to_string(), wle));
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            out.extend(block.named_mut().into_iter().map(|(n, t)| (format!("h{i}.{n}"), t)));
        }
        out.push(("proj_a".to_string(), &mut self.proj_a));
        out.push(("out_bias".to_string(), &mut self.out_bias));
        if let Some(cls) = &mut self.cls_head {
            out.push(("cls_head".to_string(), cls));
        }
        out
    }

    /// Total element count of all tensors.
    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            wte: self.wte.cast(),
            wpe: self.wpe.cast(),
            wle: self.wle.as_ref().map(Matrix::cast),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_g: b.ln1_g.cast(),
                    ln1_b: b.ln1_b.cast(),
                    w_qkv: b.w_qkv.cast(),
                    b_qkv: b.b_qkv.cast(),
                    w_o: b.w_o.cast(),
                    b_o: b.b_o.cast(),
                    ln2_g: b.ln2_g.cast(),
                    ln2_b: b.ln2_b.cast(),
                    w_fc: b.w_fc.cast(),
                    b_fc: b.b_fc.cast(),
                    w_proj: b.w_proj.cast(),
                    b_proj: b.b_proj.cast(),
                })
                .collect(),
            proj_a: self.proj_a.cast(),
            out_bias: self.out_bias.cast(),
            cls_head: self.cls_head.as_ref().map(Matrix::cast),
        }
    }
}

/// Exact parameter count for `config`, derived from tensor shapes.
pub fn count_params(config: &ModelConfig) -> usize {
    let (v, dx, d) = (config.vocab_size, config.d_x, config.d_model);
    let mut total = dx * (v + config.n_ctx) + config.n_layers * (12 * d * d + 13 * d) + d * dx + v;
    if config.lang_mode == LangMode::Embedding {
        total += config.n_lang * dx;
    }
    if config.lang_mode == LangMode::DoubleHeads {
        total += d * config.n_lang;
    }
    total
}

/// Seeded initialization: weights and embeddings ~ N(0, 0.02), layer-norm
/// gains 1, biases 0, `A` ~ U(−0.05, 0.05).
pub fn init<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let uniform = Uniform::new(-0.05, 0.05).expect("valid range");
    let mut params = ModelParams::<T>::zeros(config);
    for (name, tensor) in params.tensors_mut() {
        if name == "proj_a" {
            tensor.data.iter_mut().for_each(|x| *x = T::lit(uniform.sample(&mut rng)));
        } else if name.ends_with(".g") {
            tensor.fill(T::one());
        } else if name.contains(".b") || name == "out_bias" {
            // Biases (ln*.b, b_*) stay zero.
        } else {
            tensor.data.iter_mut().for_each(|x| *x = T::lit(normal.sample(&mut rng)));
        }
    }
    Ok(params)
}

/// Student initialization from a deeper teacher: embeddings, projection,
/// output bias and heads are copied; student block `i` copies teacher block
/// `floor(i·n_teacher / n_student)`.
pub fn distill_init<T: Scalar>(teacher: &ModelParams<T>, student_layers: usize) -> Result<ModelParams<T>, ModelError> {
    let n_teacher = teacher.config.n_layers;
    if student_layers == 0 || student_layers >= n_teacher {
        return Err(ModelError::Mismatch(format!(
            "student needs 1..{n_teacher} blocks, got {student_layers}"
        )));
    }
    let mut student = teacher.clone();
    student.config.n_layers = student_layers;
    student.blocks = (0..student_layers)
        .map(|i| teacher.blocks[i * n_teacher / student_layers].clone())
        .collect();
    Ok(student)
}

/// Checks that two models share everything but depth.
pub(crate) fn check_compatible(a: &ModelConfig, b: &ModelConfig) -> Result<(), ModelError> {
    let same = a.d_model == b.d_model
        && a.d_x == b.d_x
        && a.vocab_size == b.vocab_size
        && a.n_ctx == b.n_ctx
        && a.n_heads == b.n_heads
        && a.lang_mode == b.lang_mode
        && a.n_lang == b.n_lang;
    if same {
        Ok(())
    } else {
        Err(ModelError::Mismatch("d_model, d_x, |V|, N_ctx, heads and language setup must match".into()))
    }
}
