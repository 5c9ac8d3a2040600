//! Training example sampling: multi-resolution context windows around a
//! uniformly chosen target frame, hard negatives from the same video outside
//! the window, and cross-video negatives for the rest.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::objective::{context_no_temporal, ContextVariant};
use crate::rng::{derive, DOMAIN_SAMPLER};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Context half-width T: the window covers `target ± t*stride`, `t = 1..=T`.
    pub window: usize,
    /// Candidate temporal strides; infeasible ones are skipped per sequence.
    pub strides: Vec<usize>,
    pub negatives_per_target: usize,
    /// Fraction of negatives drawn hard (same video, outside the window).
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            window: 2,
            strides: vec![1, 2, 4],
            negatives_per_target: 4,
            hard_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.strides.is_empty() || self.strides.iter().any(|&r| r == 0) {
            return Err(Error::InvalidConfig("strides must be non-empty and positive".into()));
        }
        if self.negatives_per_target == 0 {
            return Err(Error::InvalidConfig("need at least one negative per target".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::InvalidConfig("hard_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// The sampler's own stream, for use outside a training loop.
    pub fn rng(&self) -> ChaCha8Rng {
        derive(self.seed, DOMAIN_SAMPLER)
    }
}

/// One sampled target with its context window and negatives. Negative frames
/// are (sequence, frame) pairs and never equal the target pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub seq: usize,
    pub target: usize,
    pub stride: usize,
    pub context: Vec<usize>,
    pub negatives: Vec<(usize, usize)>,
    pub variant: ContextVariant,
}

/// A sequence admits stride `r` iff some target keeps the whole window in
/// bounds: `n >= 2*T*r + 1`.
fn feasible_strides<'a>(
    n: usize,
    cfg: &'a SamplerConfig,
) -> impl Iterator<Item = usize> + 'a {
    cfg.strides.iter().copied().filter(move |r| n >= 2 * cfg.window * r + 1)
}

fn feasible_sequences(d: &Dataset, cfg: &SamplerConfig) -> Vec<usize> {
    (0..d.len())
        .filter(|&i| feasible_strides(d.sequence(i).num_frames, cfg).next().is_some())
        .collect()
}

fn sample_one<R: Rng + ?Sized>(
    d: &Dataset,
    cfg: &SamplerConfig,
    variant: ContextVariant,
    feasible: &[usize],
    rng: &mut R,
) -> Result<TrainingExample> {
    let seq = *feasible.choose(rng).expect("feasible set checked non-empty");
    let n = d.sequence(seq).num_frames;
    let strides: Vec<usize> = feasible_strides(n, cfg).collect();
    let stride = *strides.choose(rng).expect("sequence admits a stride by construction");
    let span = cfg.window * stride;
    let target = rng.gen_range(span..=n - 1 - span);

    let context: Vec<usize> = match variant {
        ContextVariant::Full => (1..=cfg.window)
            .rev()
            .map(|t| target - t * stride)
            .chain((1..=cfg.window).map(|t| target + t * stride))
            .collect(),
        ContextVariant::NoFuture => {
            (1..=cfg.window).rev().map(|t| target - t * stride).collect()
        }
        ContextVariant::NoTemporal => vec![context_no_temporal(n, target, rng)],
    };

    let want = cfg.negatives_per_target;
    let n_hard = ((cfg.hard_fraction * want as f64).ceil() as usize).min(want);
    let mut negatives = Vec::with_capacity(want);
    if n_hard > 0 {
        let pool: Vec<usize> =
            (0..n).filter(|&i| i + span < target || i > target + span).collect();
        for &idx in pool.choose_multiple(rng, n_hard) {
            negatives.push((seq, idx));
        }
    }
    while negatives.len() < want {
        if d.len() < 2 {
            return Err(Error::NoCrossSequence);
        }
        let mut other = rng.gen_range(0..d.len() - 1);
        if other >= seq {
            other += 1;
        }
        let frame = rng.gen_range(0..d.sequence(other).num_frames);
        negatives.push((other, frame));
    }

    Ok(TrainingExample { seq, target, stride, context, negatives, variant })
}

/// Draws one training example: sequence uniform over those admitting any
/// stride, stride uniform over that sequence's feasible strides, target
/// uniform over positions with a complete window.
pub fn sample_example<R: Rng + ?Sized>(
    d: &Dataset,
    cfg: &SamplerConfig,
    variant: ContextVariant,
    rng: &mut R,
) -> Result<TrainingExample> {
    cfg.validate()?;
    let feasible = feasible_sequences(d, cfg);
    if feasible.is_empty() {
        return Err(Error::NoFeasibleTarget);
    }
    sample_one(d, cfg, variant, &feasible, rng)
}

/// Draws `batch_size` examples independently.
pub fn assemble_batch<R: Rng + ?Sized>(
    d: &Dataset,
    cfg: &SamplerConfig,
    variant: ContextVariant,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    let feasible = feasible_sequences(d, cfg);
    if feasible.is_empty() {
        return Err(Error::NoFeasibleTarget);
    }
    (0..batch_size).map(|_| sample_one(d, cfg, variant, &feasible, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSequence;
    use proptest::prelude::*;

    fn flat_dataset(lens: &[usize]) -> Dataset {
        let sequences = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| FeatureSequence {
                id: format!("s{i}"),
                num_frames: n,
                features: (0..n * 2).map(|j| j as f32).collect(),
                label: None,
                states: None,
            })
            .collect();
        Dataset::new(2, sequences).unwrap()
    }

    #[test]
    fn sequences_chosen_uniformly_not_length_weighted() {
        let d = flat_dataset(&[9, 30]);
        let cfg = SamplerConfig { strides: vec![1], ..Default::default() };
        let mut rng = cfg.rng();
        let draws = 100_000;
        let mut first = 0usize;
        for _ in 0..draws {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            if ex.seq == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.01, "sequence 0 frequency {freq}");
    }

    #[test]
    fn too_short_sequences_are_silently_skipped() {
        // Window 2, stride 1 needs 5 frames; the 4-frame sequence never appears.
        let d = flat_dataset(&[4, 9]);
        let cfg = SamplerConfig { strides: vec![1], ..Default::default() };
        let mut rng = cfg.rng();
        for _ in 0..2000 {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            assert_eq!(ex.seq, 1);
        }
    }

    #[test]
    fn no_sequence_long_enough_is_an_error() {
        let d = flat_dataset(&[4, 3]);
        let cfg = SamplerConfig { strides: vec![1], ..Default::default() };
        let mut rng = cfg.rng();
        assert!(matches!(
            sample_example(&d, &cfg, ContextVariant::Full, &mut rng),
            Err(Error::NoFeasibleTarget)
        ));
    }

    #[test]
    fn minimal_sequences_pin_stride_and_target() {
        // Length 5 with window 2: only stride 1 fits and only target 2 keeps
        // the window in bounds, so the whole example is forced.
        let d = flat_dataset(&[5, 5]);
        let cfg = SamplerConfig { strides: vec![1, 2, 4], ..Default::default() };
        let mut rng = cfg.rng();
        for _ in 0..200 {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            assert_eq!((ex.stride, ex.target), (1, 2));
            assert_eq!(ex.context, vec![0, 1, 3, 4]);
            // The window covers the whole sequence: no hard pool, all
            // negatives must come from the other sequence.
            assert!(ex.negatives.iter().all(|&(s, _)| s != ex.seq));
        }
    }

    #[test]
    fn hard_negatives_stay_outside_the_window() {
        let d = flat_dataset(&[40, 40]);
        let cfg = SamplerConfig::default();
        let mut rng = cfg.rng();
        for _ in 0..2000 {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            let span = cfg.window * ex.stride;
            // ceil(0.5 * 4) = 2 hard + 2 cross; the pool is ample at length 40.
            let hard: Vec<_> = ex.negatives.iter().filter(|(s, _)| *s == ex.seq).collect();
            let cross: Vec<_> = ex.negatives.iter().filter(|(s, _)| *s != ex.seq).collect();
            assert_eq!(hard.len(), 2);
            assert_eq!(cross.len(), 2);
            for &&(_, idx) in &hard {
                let dist = idx.abs_diff(ex.target);
                assert!(dist > span, "hard negative {idx} within span of {}", ex.target);
            }
        }
    }

    #[test]
    fn disabled_hard_fraction_draws_only_cross_negatives() {
        let d = flat_dataset(&[40, 40, 40]);
        let cfg = SamplerConfig { hard_fraction: 0.0, ..Default::default() };
        let mut rng = cfg.rng();
        for _ in 0..500 {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            assert!(ex.negatives.iter().all(|(s, _)| *s != ex.seq));
        }
    }

    #[test]
    fn short_hard_pool_backfills_across_sequences() {
        // Length 6, window 2, stride 1: pool outside the span has 1 index at
        // most, so at least one of the two hard picks becomes cross-sequence.
        let d = flat_dataset(&[6, 20]);
        let cfg = SamplerConfig { strides: vec![1], ..Default::default() };
        let mut rng = cfg.rng();
        for _ in 0..500 {
            let ex = sample_example(&d, &cfg, ContextVariant::Full, &mut rng).unwrap();
            assert_eq!(ex.negatives.len(), 4);
            if ex.seq == 0 {
                let hard = ex.negatives.iter().filter(|(s, _)| *s == 0).count();
                assert!(hard <= 1);
            }
        }
    }

    #[test]
    fn single_sequence_cross_backfill_is_an_error() {
        let d = flat_dataset(&[9]);
        let cfg = SamplerConfig { hard_fraction: 0.0, ..Default::default() };
        let mut rng = cfg.rng();
        assert!(matches!(
            sample_example(&d, &cfg, ContextVariant::Full, &mut rng),
            Err(Error::NoCrossSequence)
        ));
    }

    #[test]
    fn order_free_context_is_another_frame_of_the_same_video() {
        let d = flat_dataset(&[25, 25]);
        let cfg = SamplerConfig::default();
        let mut rng = cfg.rng();
        for _ in 0..1000 {
            let ex = sample_example(&d, &cfg, ContextVariant::NoTemporal, &mut rng).unwrap();
            assert_eq!(ex.context.len(), 1);
            assert_ne!(ex.context[0], ex.target);
            assert!(ex.context[0] < d.sequence(ex.seq).num_frames);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sampled_examples_satisfy_structural_invariants(
            lens in proptest::collection::vec(2usize..60, 2..6),
            window in 1usize..4,
            negatives in 1usize..7,
            hard in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let d = flat_dataset(&lens);
            let cfg = SamplerConfig {
                window,
                strides: vec![1, 2, 4],
                negatives_per_target: negatives,
                hard_fraction: hard,
                seed,
            };
            let mut rng = cfg.rng();
            for variant in [ContextVariant::Full, ContextVariant::NoFuture, ContextVariant::NoTemporal] {
                match sample_example(&d, &cfg, variant, &mut rng) {
                    Ok(ex) => {
                        let n = d.sequence(ex.seq).num_frames;
                        let span = window * ex.stride;
                        prop_assert!(ex.target >= span && ex.target + span <= n - 1);
                        match variant {
                            ContextVariant::Full => {
                                let want: Vec<usize> = (1..=window).rev()
                                    .map(|t| ex.target - t * ex.stride)
                                    .chain((1..=window).map(|t| ex.target + t * ex.stride))
                                    .collect();
                                prop_assert_eq!(&ex.context, &want);
                            }
                            ContextVariant::NoFuture => {
                                let want: Vec<usize> = (1..=window).rev()
                                    .map(|t| ex.target - t * ex.stride)
                                    .collect();
                                prop_assert_eq!(&ex.context, &want);
                            }
                            ContextVariant::NoTemporal => {
                                prop_assert_eq!(ex.context.len(), 1);
                                prop_assert!(ex.context[0] != ex.target);
                            }
                        }
                        prop_assert!(ex.context.iter().all(|&i| i < n));
                        prop_assert_eq!(ex.negatives.len(), negatives);
                        for &(s, f) in &ex.negatives {
                            prop_assert!(f < d.sequence(s).num_frames);
                            prop_assert!((s, f) != (ex.seq, ex.target));
                            if s == ex.seq {
                                prop_assert!(f.abs_diff(ex.target) > span);
                            }
                        }
                    }
                    Err(Error::NoFeasibleTarget) | Err(Error::NoCrossSequence) => {}
                    Err(e) => return Err(TestCaseError::fail(format!("unexpected {e:?}"))),
                }
            }
        }
    }
}
