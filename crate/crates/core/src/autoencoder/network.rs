use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::{tensor, ModelConfig, Params, NUM_CODEBOOKS};
use crate::error::Result;
use crate::symbols::{BoundedWord, END};
use crate::vq::Codebook;

/// One training example with its loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub word: BoundedWord,
    pub weight: f64,
}

/// Decoder targets: the word's symbols, followed by END unless the word
/// already ends with EOW.
pub fn targets(word: &BoundedWord) -> Vec<usize> {
    let mut t: Vec<usize> = word.symbols().iter().map(|&s| s as usize).collect();
    if !word.has_eow() {
        t.push(END as usize);
    }
    t
}

/// The `width` symbols preceding position `t`, oldest first, END-padded.
pub fn history_window(prefix: &[usize], t: usize, width: usize) -> impl Iterator<Item = usize> + '_ {
    (0..width).map(move |j| {
        let pos = t as isize - width as isize + j as isize;
        if pos < 0 {
            END as usize
        } else {
            prefix[pos as usize]
        }
    })
}

pub(crate) struct EncoderPass {
    pooled: Array2<f64>,
    acts: Vec<Array2<f64>>,
    hidden: Array2<f64>,
    pub latents: [Array2<f64>; NUM_CODEBOOKS],
}

pub(crate) fn encoder_forward(p: &Params, cfg: &ModelConfig, words: &[&BoundedWord]) -> EncoderPass {
    let t = &p.tensors;
    let he = cfg.encoder_embed_dim;
    let b = words.len();
    let mut pooled = Array2::<f64>::zeros((b, he));
    let mut acts = Vec::with_capacity(b);
    for (i, w) in words.iter().enumerate() {
        let syms = w.symbols();
        let mut a = Array2::<f64>::zeros((syms.len(), he));
        for (pos, &sym) in syms.iter().enumerate() {
            let emb = t[tensor::ENC_EMBED].row(sym as usize);
            let pe = t[tensor::ENC_POS].row(pos);
            let mut row = a.row_mut(pos);
            for k in 0..he {
                row[k] = (emb[k] + pe[k]).tanh();
            }
        }
        pooled
            .row_mut(i)
            .assign(&a.mean_axis(Axis(0)).expect("non-empty word"));
        acts.push(a);
    }
    let mut hidden = pooled.dot(&t[tensor::ENC_W1].t()) + &t[tensor::ENC_B1].row(0);
    hidden.mapv_inplace(f64::tanh);
    let latents = std::array::from_fn(|c| {
        hidden.dot(&t[tensor::HEAD_W[c]].t()) + &t[tensor::HEAD_B[c]].row(0)
    });
    EncoderPass {
        pooled,
        acts,
        hidden,
        latents,
    }
}

pub(crate) fn encoder_backward(
    p: &Params,
    words: &[&BoundedWord],
    pass: &EncoderPass,
    d_latents: &[Array2<f64>; NUM_CODEBOOKS],
    grads: &mut Params,
) {
    let t = &p.tensors;
    let mut d_hidden = Array2::<f64>::zeros(pass.hidden.dim());
    for c in 0..NUM_CODEBOOKS {
        let g = &d_latents[c];
        general_mat_mul(1.0, &g.t(), &pass.hidden, 1.0, &mut grads.tensors[tensor::HEAD_W[c]]);
        grads.tensors[tensor::HEAD_B[c]]
            .row_mut(0)
            .scaled_add(1.0, &g.sum_axis(Axis(0)));
        general_mat_mul(1.0, g, &t[tensor::HEAD_W[c]], 1.0, &mut d_hidden);
    }
    let d_pre = d_hidden * pass.hidden.mapv(|h| 1.0 - h * h);
    general_mat_mul(1.0, &d_pre.t(), &pass.pooled, 1.0, &mut grads.tensors[tensor::ENC_W1]);
    grads.tensors[tensor::ENC_B1]
        .row_mut(0)
        .scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
    let d_pooled = d_pre.dot(&t[tensor::ENC_W1]);
    for (i, w) in words.iter().enumerate() {
        let a = &pass.acts[i];
        let inv_len = 1.0 / w.len() as f64;
        let dp = d_pooled.row(i);
        for (pos, &sym) in w.symbols().iter().enumerate() {
            let act = a.row(pos);
            let d_act: Vec<f64> = dp
                .iter()
                .zip(act.iter())
                .map(|(g, u)| g * inv_len * (1.0 - u * u))
                .collect();
            for (dst, v) in grads.tensors[tensor::ENC_EMBED]
                .row_mut(sym as usize)
                .iter_mut()
                .zip(&d_act)
            {
                *dst += v;
            }
            for (dst, v) in grads.tensors[tensor::ENC_POS]
                .row_mut(pos)
                .iter_mut()
                .zip(&d_act)
            {
                *dst += v;
            }
        }
    }
}

struct DecoderRows {
    x: Array2<f64>,
    /// (example, position, target symbol, history symbols) per row.
    meta: Vec<(usize, usize, usize, Vec<usize>)>,
}

fn decoder_rows(
    p: &Params,
    cfg: &ModelConfig,
    words: &[&BoundedWord],
    inputs: &[Array2<f64>; NUM_CODEBOOKS],
) -> DecoderRows {
    let t = &p.tensors;
    let d = cfg.latent_dim;
    let e = cfg.decoder_embed_dim;
    let c = cfg.context_width;
    let mut meta = Vec::new();
    for (b, w) in words.iter().enumerate() {
        let tg = targets(w);
        for pos in 0..tg.len() {
            let hist: Vec<usize> = history_window(&tg, pos, c).collect();
            meta.push((b, pos, tg[pos], hist));
        }
    }
    let mut x = Array2::<f64>::zeros((meta.len(), cfg.decoder_input_dim()));
    for (r, (b, pos, _, hist)) in meta.iter().enumerate() {
        let mut row = x.row_mut(r);
        for ch in 0..NUM_CODEBOOKS {
            row.slice_mut(s![ch * d..(ch + 1) * d])
                .assign(&inputs[ch].row(*b));
        }
        let base = NUM_CODEBOOKS * d;
        for (j, &h) in hist.iter().enumerate() {
            row.slice_mut(s![base + j * e..base + (j + 1) * e])
                .assign(&t[tensor::DEC_EMBED].row(h));
        }
        row.slice_mut(s![base + c * e..base + (c + 1) * e])
            .assign(&t[tensor::DEC_POS].row(*pos));
    }
    DecoderRows { x, meta }
}

/// Teacher-forced negative log-likelihood of each word given the decoder
/// inputs (one `B × D` matrix per channel).
///
/// With `grads`, accumulates the gradient of `Σ_b weights[b]·nll_b` into the
/// decoder tensors and returns the gradient with respect to the inputs.
pub fn decoder_nll(
    p: &Params,
    cfg: &ModelConfig,
    words: &[&BoundedWord],
    inputs: &[Array2<f64>; NUM_CODEBOOKS],
    weights: &[f64],
    grads: Option<&mut Params>,
) -> (Vec<f64>, Option<[Array2<f64>; NUM_CODEBOOKS]>) {
    let t = &p.tensors;
    let rows = decoder_rows(p, cfg, words, inputs);
    let mut hidden = rows.x.dot(&t[tensor::DEC_W1].t()) + &t[tensor::DEC_B1].row(0);
    hidden.mapv_inplace(f64::tanh);
    let mut logits = hidden.dot(&t[tensor::DEC_W2].t()) + &t[tensor::DEC_B2].row(0);

    let mut nll = vec![0.0; words.len()];
    // Turn logits into softmax probabilities in place, collecting the NLL.
    for (r, (b, _, target, _)) in rows.meta.iter().enumerate() {
        let mut row = logits.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        nll[*b] -= row[*target] - lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    let Some(grads) = grads else {
        return (nll, None);
    };

    let mut g = logits;
    for (r, (b, _, target, _)) in rows.meta.iter().enumerate() {
        let mut row = g.row_mut(r);
        row[*target] -= 1.0;
        row *= weights[*b];
    }
    general_mat_mul(1.0, &g.t(), &hidden, 1.0, &mut grads.tensors[tensor::DEC_W2]);
    grads.tensors[tensor::DEC_B2]
        .row_mut(0)
        .scaled_add(1.0, &g.sum_axis(Axis(0)));
    let d_hidden = g.dot(&t[tensor::DEC_W2]);
    let d_pre = d_hidden * hidden.mapv(|h| 1.0 - h * h);
    general_mat_mul(1.0, &d_pre.t(), &rows.x, 1.0, &mut grads.tensors[tensor::DEC_W1]);
    grads.tensors[tensor::DEC_B1]
        .row_mut(0)
        .scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
    let dx = d_pre.dot(&t[tensor::DEC_W1]);

    let d = cfg.latent_dim;
    let e = cfg.decoder_embed_dim;
    let c = cfg.context_width;
    let base = NUM_CODEBOOKS * d;
    let mut d_inputs: [Array2<f64>; NUM_CODEBOOKS] =
        std::array::from_fn(|_| Array2::zeros((words.len(), d)));
    for (r, (b, pos, _, hist)) in rows.meta.iter().enumerate() {
        let row = dx.row(r);
        for ch in 0..NUM_CODEBOOKS {
            d_inputs[ch]
                .row_mut(*b)
                .scaled_add(1.0, &row.slice(s![ch * d..(ch + 1) * d]));
        }
        for (j, &h) in hist.iter().enumerate() {
            grads.tensors[tensor::DEC_EMBED]
                .row_mut(h)
                .scaled_add(1.0, &row.slice(s![base + j * e..base + (j + 1) * e]));
        }
        grads.tensors[tensor::DEC_POS]
            .row_mut(*pos)
            .scaled_add(1.0, &row.slice(s![base + c * e..base + (c + 1) * e]));
    }
    (nll, Some(d_inputs))
}

/// Everything one optimisation step needs from the forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `Σ_b (w_b / B)·(nll_b + β·Σ_c ‖e_bc − z_bc‖²)`.
    pub loss: f64,
    /// Weighted mean reconstruction NLL.
    pub reconstruction: f64,
    /// Weighted mean commitment loss (summed over channels).
    pub commitment: f64,
    /// Encoder outputs before quantization, one `B × D` matrix per channel.
    pub latents: [Array2<f64>; NUM_CODEBOOKS],
    pub quantized: [Array2<f64>; NUM_CODEBOOKS],
    pub assignments: Vec<[usize; NUM_CODEBOOKS]>,
    pub grads: Params,
}

/// Forward pass, quantization, straight-through backward pass.
pub fn step_forward_backward(
    p: &Params,
    cfg: &ModelConfig,
    codebooks: &[Codebook; NUM_CODEBOOKS],
    samples: &[Sample],
) -> Result<StepOutput> {
    let words: Vec<&BoundedWord> = samples.iter().map(|s| &s.word).collect();
    let b = samples.len();
    let weights: Vec<f64> = samples.iter().map(|s| s.weight / b as f64).collect();
    let pass = encoder_forward(p, cfg, &words);

    let mut assignments = vec![[0usize; NUM_CODEBOOKS]; b];
    let mut quantized: [Array2<f64>; NUM_CODEBOOKS] =
        std::array::from_fn(|_| Array2::zeros((b, cfg.latent_dim)));
    for ch in 0..NUM_CODEBOOKS {
        for i in 0..b {
            let k = codebooks[ch].nearest(pass.latents[ch].row(i))?;
            assignments[i][ch] = k;
            quantized[ch].row_mut(i).assign(&codebooks[ch].vector(k));
        }
    }

    let mut grads = p.zeros_like();
    let (nll, d_inputs) = decoder_nll(p, cfg, &words, &quantized, &weights, Some(&mut grads));
    let mut d_latents = d_inputs.expect("gradients requested");

    let mut reconstruction = 0.0;
    let mut commitment = 0.0;
    for i in 0..b {
        reconstruction += weights[i] * nll[i];
        for ch in 0..NUM_CODEBOOKS {
            let diff = &pass.latents[ch].row(i) - &quantized[ch].row(i);
            commitment += weights[i] * diff.dot(&diff);
            d_latents[ch]
                .row_mut(i)
                .scaled_add(2.0 * cfg.beta * weights[i], &diff);
        }
    }
    encoder_backward(p, &words, &pass, &d_latents, &mut grads);

    Ok(StepOutput {
        loss: reconstruction + cfg.beta * commitment,
        reconstruction,
        commitment,
        latents: pass.latents,
        quantized,
        assignments,
        grads,
    })
}

/// Loss whose exact gradient is the straight-through gradient at the point
/// where `base_latents` were computed: the decoder receives
/// `quantized + e(θ) − base_latents`, and the commitment term uses `e(θ)`.
pub fn surrogate_loss(
    p: &Params,
    cfg: &ModelConfig,
    samples: &[Sample],
    base_latents: &[Array2<f64>; NUM_CODEBOOKS],
    quantized: &[Array2<f64>; NUM_CODEBOOKS],
) -> f64 {
    let words: Vec<&BoundedWord> = samples.iter().map(|s| &s.word).collect();
    let b = samples.len();
    let weights: Vec<f64> = samples.iter().map(|s| s.weight / b as f64).collect();
    let pass = encoder_forward(p, cfg, &words);
    let inputs: [Array2<f64>; NUM_CODEBOOKS] =
        std::array::from_fn(|ch| &quantized[ch] + &pass.latents[ch] - &base_latents[ch]);
    let (nll, _) = decoder_nll(p, cfg, &words, &inputs, &weights, None);
    let mut loss = 0.0;
    for i in 0..b {
        let mut commit = 0.0;
        for ch in 0..NUM_CODEBOOKS {
            let diff = &pass.latents[ch].row(i) - &quantized[ch].row(i);
            commit += diff.dot(&diff);
        }
        loss += weights[i] * (nll[i] + cfg.beta * commit);
    }
    loss
}
