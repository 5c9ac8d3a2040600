//! Ranking objective: the embedding of a frame should align with the average
//! embedding of its temporal context better than negative frames do, by a
//! unit margin. Three context forms exist — symmetric past+future, past
//! only, and a single random frame of the same video (the order-free
//! control).

use rand::Rng;

use crate::dataset::Dataset;
use crate::model::{EmbeddingModel, Mode, ParamGrads};
use crate::sampler::TrainingExample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextVariant {
    /// Mean of the embeddings of frames at `target ± t*stride`, `t = 1..=T`.
    Full,
    /// Mean over the past half of the window only.
    NoFuture,
    /// One uniformly chosen other frame of the same video, resampled on
    /// every visit.
    NoTemporal,
}

impl ContextVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContextVariant::Full => "full",
            ContextVariant::NoFuture => "no_future",
            ContextVariant::NoTemporal => "no_temporal",
        }
    }
}

impl std::str::FromStr for ContextVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ContextVariant::Full),
            "no_future" => Ok(ContextVariant::NoFuture),
            "no_temporal" => Ok(ContextVariant::NoTemporal),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant {other:?} (expected full, no_future, or no_temporal)"
            ))),
        }
    }
}

/// A context embedding together with the form that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub h: Vec<f64>,
    pub variant: ContextVariant,
}

fn mean_of(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings.first().ok_or(Error::EmptyInput("context embedding set"))?;
    let dim = first.len();
    let mut h = vec![0.0; dim];
    for e in embeddings {
        if e.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: e.len() });
        }
        for (acc, v) in h.iter_mut().zip(e) {
            *acc += v;
        }
    }
    let inv = 1.0 / embeddings.len() as f64;
    for v in &mut h {
        *v *= inv;
    }
    Ok(h)
}

/// Symmetric context: mean of an even number (2T) of frame embeddings.
pub fn context_full(embeddings: &[Vec<f64>]) -> Result<ContextVector> {
    if embeddings.is_empty() || embeddings.len() % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "symmetric context needs an even, positive frame count; got {}",
            embeddings.len()
        )));
    }
    Ok(ContextVector { h: mean_of(embeddings)?, variant: ContextVariant::Full })
}

/// Past-only context: mean of T >= 1 frame embeddings.
pub fn context_no_future(embeddings: &[Vec<f64>]) -> Result<ContextVector> {
    Ok(ContextVector { h: mean_of(embeddings)?, variant: ContextVariant::NoFuture })
}

/// Draws the order-free context frame: uniform over the video's frames
/// excluding the target itself.
pub fn context_no_temporal<R: Rng + ?Sized>(
    sequence_len: usize,
    target_idx: usize,
    rng: &mut R,
) -> usize {
    assert!(sequence_len >= 2, "need a second frame to draw from");
    assert!(target_idx < sequence_len);
    let k = rng.gen_range(0..sequence_len - 1);
    if k >= target_idx {
        k + 1
    } else {
        k
    }
}

/// One hinge term `max(0, 1 - (f_t - f_n) . h)` with its subgradients.
/// Inactive terms (zero loss) carry zero gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeTerm {
    pub loss: f64,
    pub active: bool,
    pub d_target: Vec<f64>,
    pub d_negative: Vec<f64>,
    pub d_context: Vec<f64>,
}

pub fn hinge_term(f_target: &[f64], f_negative: &[f64], h: &[f64]) -> HingeTerm {
    assert_eq!(f_target.len(), h.len());
    assert_eq!(f_negative.len(), h.len());
    let dot: f64 = f_target
        .iter()
        .zip(f_negative)
        .zip(h)
        .map(|((t, n), c)| (t - n) * c)
        .sum();
    let loss = (1.0 - dot).max(0.0);
    let active = loss > 0.0;
    if active {
        HingeTerm {
            loss,
            active,
            d_target: h.iter().map(|v| -v).collect(),
            d_negative: h.to_vec(),
            d_context: f_negative.iter().zip(f_target).map(|(n, t)| n - t).collect(),
        }
    } else {
        let z = vec![0.0; h.len()];
        HingeTerm { loss: 0.0, active, d_target: z.clone(), d_negative: z.clone(), d_context: z }
    }
}

/// Loss of one training example — the sum of its hinge terms — plus the
/// parameter gradients flowing through the target, every negative, and every
/// context embedding. In train mode each forward pass draws its own dropout
/// mask from `rng`.
pub fn example_loss<R: Rng + ?Sized>(
    model: &EmbeddingModel,
    d: &Dataset,
    ex: &TrainingExample,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, ParamGrads)> {
    let fwd = |model: &EmbeddingModel, x: &[f32], rng: &mut R| match mode {
        Mode::Train => model.forward_train(x, rng),
        Mode::Eval => model.forward_eval(x),
    };

    let target_trace = fwd(model, d.frame(ex.seq, ex.target), rng);
    let context_traces: Vec<_> = ex
        .context
        .iter()
        .map(|&idx| fwd(model, d.frame(ex.seq, idx), rng))
        .collect();
    let context_outputs: Vec<Vec<f64>> =
        context_traces.iter().map(|t| t.output.clone()).collect();
    let ctx = match ex.variant {
        ContextVariant::Full => context_full(&context_outputs)?,
        ContextVariant::NoFuture => context_no_future(&context_outputs)?,
        ContextVariant::NoTemporal => {
            if context_outputs.len() != 1 {
                return Err(Error::InvalidConfig(
                    "order-free context expects exactly one frame".into(),
                ));
            }
            ContextVector { h: context_outputs[0].clone(), variant: ContextVariant::NoTemporal }
        }
    };

    let mut grads = ParamGrads::zeros(model.in_dim(), model.emb_dim());
    let mut loss = 0.0;
    let mut d_target = vec![0.0; model.emb_dim()];
    let mut d_context = vec![0.0; model.emb_dim()];
    let mut any_active = false;

    for &(nseq, nidx) in &ex.negatives {
        let neg_trace = fwd(model, d.frame(nseq, nidx), rng);
        let term = hinge_term(&target_trace.output, &neg_trace.output, &ctx.h);
        loss += term.loss;
        if term.active {
            any_active = true;
            for (acc, v) in d_target.iter_mut().zip(&term.d_target) {
                *acc += v;
            }
            for (acc, v) in d_context.iter_mut().zip(&term.d_context) {
                *acc += v;
            }
            model.backward(&neg_trace, &term.d_negative, &mut grads);
        }
    }

    if any_active {
        model.backward(&target_trace, &d_target, &mut grads);
        // h averages the context embeddings, so each receives 1/C of d_h.
        let inv = 1.0 / context_traces.len() as f64;
        for v in &mut d_context {
            *v *= inv;
        }
        for t in &context_traces {
            model.backward(t, &d_context, &mut grads);
        }
    }

    Ok((loss, grads))
}
