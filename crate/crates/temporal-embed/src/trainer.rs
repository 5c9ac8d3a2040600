//! Vanilla SGD on the ranking objective with step-annealed learning rate,
//! periodic checkpointing, and a CSV loss log.
//!
//! Every random draw comes from a stream derived from (seed, iteration), so
//! a run is fully determined by its configuration: resuming from a
//! checkpoint at iteration i replays exactly what an uninterrupted run would
//! have done.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::model::{save_checkpoint, EmbeddingModel, Mode, ParamGrads};
use crate::objective::{example_loss, ContextVariant};
use crate::par;
use crate::rng::{derive, DOMAIN_TRAIN};
use crate::sampler::{assemble_batch, SamplerConfig, TrainingExample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// The learning rate halves (by `anneal_factor`) every this many iterations.
    pub anneal_every: u64,
    pub anneal_factor: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub variant: ContextVariant,
    /// When false the sampler draws every negative cross-sequence.
    pub hard_negatives: bool,
    /// Interval checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Ordered gradient reduction (bit-reproducible). Unordered reduction is
    /// only available with the `parallel` feature.
    pub deterministic: bool,
    /// Recorded in checkpoint headers so resumes can detect config drift.
    pub config_digest: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            anneal_every: 5000,
            anneal_factor: 0.5,
            batch_size: 256,
            iterations: 5000,
            seed: 0,
            variant: ContextVariant::Full,
            hard_negatives: true,
            checkpoint_every: 0,
            deterministic: true,
            config_digest: String::new(),
        }
    }
}

/// Step-annealed schedule: `lr0 * factor^floor(iteration / anneal_every)`.
pub fn lr_at(cfg: &TrainConfig, iteration: u64) -> f64 {
    cfg.lr0 * cfg.anneal_factor.powi((iteration / cfg.anneal_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Per-iteration mean batch loss and learning rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,loss,lr\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.iteration, e.loss, e.lr));
        }
        fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

/// Mean loss and mean parameter gradient over a batch. Per-example work can
/// run concurrently; with `deterministic` the reduction folds in example
/// order, making the result independent of scheduling.
pub fn batch_gradient(
    model: &EmbeddingModel,
    d: &Dataset,
    batch: &[TrainingExample],
    dropout_seeds: &[u64],
    deterministic: bool,
) -> Result<(f64, ParamGrads)> {
    assert_eq!(batch.len(), dropout_seeds.len());
    let per_example = |i: usize| -> Result<(f64, ParamGrads)> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seeds[i]);
        example_loss(model, d, &batch[i], Mode::Train, &mut rng)
    };

    #[cfg(feature = "parallel")]
    if !deterministic {
        use rayon::prelude::*;
        let zero = || (0.0, ParamGrads::zeros(model.in_dim(), model.emb_dim()));
        let (loss, mut grads) = (0..batch.len())
            .into_par_iter()
            .map(per_example)
            .try_reduce(zero, |mut a, b| {
                a.0 += b.0;
                a.1.add(&b.1);
                Ok(a)
            })?;
        let inv = 1.0 / batch.len() as f64;
        grads.scale(inv);
        return Ok((loss * inv, grads));
    }
    let _ = deterministic;

    let results = par::map_range(batch.len(), per_example);
    let mut loss = 0.0;
    let mut grads = ParamGrads::zeros(model.in_dim(), model.emb_dim());
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.add(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:07}.ckpt"))
}

/// Final checkpoint name within a checkpoint directory.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint_final.ckpt")
}

/// Runs iterations `start_iteration..cfg.iterations` on `model`, which is
/// how a checkpoint resume continues: pass the loaded model and its stored
/// iteration. The log covers only the iterations this call ran.
pub fn train_from(
    d: &Dataset,
    mut model: EmbeddingModel,
    scfg: &SamplerConfig,
    tcfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    start_iteration: u64,
) -> Result<(EmbeddingModel, TrainLog)> {
    if tcfg.anneal_every == 0 {
        return Err(Error::InvalidConfig("anneal_every must be at least 1".into()));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if !(tcfg.lr0.is_finite() && tcfg.lr0 >= 0.0 && tcfg.anneal_factor > 0.0) {
        return Err(Error::InvalidConfig("bad learning-rate schedule".into()));
    }
    if start_iteration > tcfg.iterations {
        return Err(Error::InvalidConfig(format!(
            "start iteration {start_iteration} is past the end ({})",
            tcfg.iterations
        )));
    }
    if model.in_dim() != d.dim() {
        return Err(Error::DimMismatch { expected: d.dim(), got: model.in_dim() });
    }
    scfg.validate()?;
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }

    let mut eff = scfg.clone();
    if !tcfg.hard_negatives {
        eff.hard_fraction = 0.0;
    }

    let mut log = TrainLog::default();
    for iteration in start_iteration..tcfg.iterations {
        let lr = lr_at(tcfg, iteration);
        let mut it_rng = derive(tcfg.seed, DOMAIN_TRAIN | iteration);
        let batch = assemble_batch(d, &eff, tcfg.variant, tcfg.batch_size, &mut it_rng)?;
        let dropout_seeds: Vec<u64> = (0..batch.len()).map(|_| it_rng.gen()).collect();

        let (loss, grads) =
            batch_gradient(&model, d, &batch, &dropout_seeds, tcfg.deterministic)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient { iteration });
        }

        model.sgd_step(&grads, lr);
        // A finite gradient scaled by an extreme learning rate can still
        // saturate the 32-bit parameter grid; past this point the model
        // would collapse silently, so stop at the iteration it happens.
        if !model.params_finite() {
            return Err(Error::NonFiniteUpdate { iteration });
        }
        log.entries.push(LogEntry { iteration, loss, lr });

        if let Some(dir) = checkpoint_dir {
            let done = iteration + 1;
            if tcfg.checkpoint_every > 0
                && done % tcfg.checkpoint_every == 0
                && done != tcfg.iterations
            {
                save_checkpoint(&model, &checkpoint_path(dir, done), done, &tcfg.config_digest)?;
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        save_checkpoint(
            &model,
            &final_checkpoint_path(dir),
            tcfg.iterations,
            &tcfg.config_digest,
        )?;
    }
    Ok((model, log))
}

/// Trains from scratch (iteration 0).
pub fn train(
    d: &Dataset,
    model: EmbeddingModel,
    scfg: &SamplerConfig,
    tcfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(EmbeddingModel, TrainLog)> {
    train_from(d, model, scfg, tcfg, checkpoint_dir, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSequence;
    use crate::model::load_checkpoint;

    fn toy_dataset(seed: u64, num: usize, len: usize, dim: usize) -> Dataset {
        let mut rng = derive(seed, 900);
        let sequences = (0..num)
            .map(|i| FeatureSequence {
                id: format!("s{i}"),
                num_frames: len,
                features: (0..len * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                label: None,
                states: None,
            })
            .collect();
        Dataset::new(dim, sequences).unwrap()
    }

    fn toy_config(iterations: u64) -> TrainConfig {
        TrainConfig { batch_size: 8, iterations, ..Default::default() }
    }

    #[test]
    fn lr_schedule_matches_hand_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.01);
        assert_eq!(lr_at(&cfg, 4999), 0.01);
        assert_eq!(lr_at(&cfg, 5000), 0.005);
        assert_eq!(lr_at(&cfg, 9999), 0.005);
        assert_eq!(lr_at(&cfg, 10_000), 0.0025);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let d = toy_dataset(1, 4, 12, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(2, 0));
        let cfg = TrainConfig { lr0: 0.0, ..toy_config(5) };
        let (trained, log) = train(&d, init.clone(), &SamplerConfig::default(), &cfg, None).unwrap();
        assert_eq!(trained, init);
        assert_eq!(log.entries.len(), 5);
    }

    #[test]
    fn same_seed_reproduces_run_exactly() {
        let d = toy_dataset(3, 5, 14, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(4, 0));
        let cfg = toy_config(6);
        let scfg = SamplerConfig::default();
        let (m1, l1) = train(&d, init.clone(), &scfg, &cfg, None).unwrap();
        let (m2, l2) = train(&d, init, &scfg, &cfg, None).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let d = toy_dataset(5, 5, 14, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(6, 0));
        let scfg = SamplerConfig::default();
        let cfg = toy_config(10);

        let (full, full_log) = train(&d, init.clone(), &scfg, &cfg, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let cfg_half = TrainConfig { iterations: 5, ..cfg.clone() };
        train(&d, init, &scfg, &cfg_half, Some(dir.path())).unwrap();
        let (half, at, _) = load_checkpoint(&final_checkpoint_path(dir.path())).unwrap();
        assert_eq!(at, 5);
        let (resumed, resumed_log) = train_from(&d, half, &scfg, &cfg, None, at).unwrap();

        assert_eq!(resumed, full);
        assert_eq!(&resumed_log.entries[..], &full_log.entries[5..]);
    }

    #[test]
    fn interval_checkpoints_record_their_iteration() {
        let d = toy_dataset(7, 4, 14, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(8, 0));
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { checkpoint_every: 2, config_digest: "abc".into(), ..toy_config(5) };
        train(&d, init, &SamplerConfig::default(), &cfg, Some(dir.path())).unwrap();
        let (_, at, digest) = load_checkpoint(&checkpoint_path(dir.path(), 2)).unwrap();
        assert_eq!((at, digest.as_str()), (2, "abc"));
        assert!(checkpoint_path(dir.path(), 4).exists());
        assert!(final_checkpoint_path(dir.path()).exists());
        // Iteration 5 is the final write, not an interval one.
        assert!(!checkpoint_path(dir.path(), 5).exists());
    }

    #[test]
    fn loss_log_is_written_as_csv() {
        let d = toy_dataset(9, 4, 12, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(10, 0));
        let (_, log) = train(&d, init, &SamplerConfig::default(), &toy_config(3), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,loss,lr"));
        assert_eq!(lines.count(), 3);
        assert!(text.contains("0,"));
    }

    #[test]
    fn exploding_update_aborts_naming_the_iteration() {
        let d = toy_dataset(11, 4, 12, 3);
        let init = EmbeddingModel::init(3, 4, &mut derive(12, 0));
        // A colossal learning rate saturates the 32-bit parameter grid on the
        // very first step. The forward pass alone would not notice: infinite
        // weights produce NaN pre-activations that the relu gate silences, so
        // the divergence has to be caught at the update itself.
        let cfg = TrainConfig { lr0: 1e300, ..toy_config(5) };
        match train(&d, init, &SamplerConfig::default(), &cfg, None) {
            Err(e) => {
                assert!(e.is_numerical(), "unexpected error {e:?}");
                assert!(matches!(e, Error::NonFiniteUpdate { iteration: 0 }), "got {e:?}");
                let msg = e.to_string();
                assert!(msg.contains("iteration 0"), "message was {msg:?}");
            }
            Ok(_) => panic!("expected a numerical failure"),
        }
    }
}
