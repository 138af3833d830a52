use super::forward::hidden_states;
use super::tensor::{matmul, softmax_in_place, View};
use super::{LangMode, ModelError, ModelParams, Scalar};
use crate::language::Language;
use crate::vocab::SubtokenVocabulary;

/// Inserts `<LANG:x> <SEP>` after a leading `<BOF>` (or at the front when
/// there is none). Identity unless `mode` is [`LangMode::ControlCodes`].
pub fn prepend_control_code(
    ids: &[u32],
    lang: Language,
    vocab: &SubtokenVocabulary,
    mode: LangMode,
) -> Result<Vec<u32>, ModelError> {
    if mode != LangMode::ControlCodes {
        return Ok(ids.to_vec());
    }
    let code = vocab
        .control_code(lang)
        .map_err(|_| ModelError::UnregisteredLanguage(lang.to_string()))?;
    let codes: Vec<u32> = Language::ALL.iter().filter_map(|&l| vocab.control_code(l).ok()).collect();
    let at = usize::from(ids.first() == Some(&vocab.bof()));
    if ids.get(at).is_some_and(|id| codes.contains(id)) {
        return Err(ModelError::AlreadyPrefixed);
    }
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.extend_from_slice(&ids[..at]);
    out.push(code);
    out.push(vocab.sep());
    out.extend_from_slice(&ids[at..]);
    Ok(out)
}

/// Language predicted by the classification head from the final position's
/// hidden state, with the class probabilities.
pub fn classify_language<T: Scalar>(params: &ModelParams<T>, ids: &[u32]) -> Result<(usize, Vec<f64>), ModelError> {
    let head = match (&params.cls_head, params.config.lang_mode) {
        (Some(head), LangMode::DoubleHeads) => head,
        (_, actual) => {
            return Err(ModelError::Capability {
                needed: LangMode::DoubleHeads,
                actual,
            })
        }
    };
    if ids.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let h = hidden_states(params, ids, None)?;
    let d = params.config.d_model;
    let mut z = matmul(View::row_major(h.row(ids.len() - 1), 1, d), head.view());
    softmax_in_place(&mut z.data);
    let probs: Vec<f64> = z.data.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}
