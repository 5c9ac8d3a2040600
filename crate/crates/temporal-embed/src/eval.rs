//! Evaluation protocols over frame embeddings: event retrieval, temporal
//! retrieval, order recovery, and linear classification, plus the metric
//! primitives they share. Every protocol is generic over a [`FrameEmbedder`]
//! so trained models and raw features run through identical code.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataset::{uniform_indices, Dataset};
use crate::model::EmbeddingModel;
use crate::par;
use crate::rng::{derive, DOMAIN_EVAL};
use crate::{Error, Result};

/// Maps one frame's features to the space being evaluated.
pub trait FrameEmbedder: Sync {
    fn embed_frame(&self, features: &[f32]) -> Vec<f64>;
}

/// The identity embedder: evaluates raw features directly.
pub struct RawFeatures;

impl FrameEmbedder for RawFeatures {
    fn embed_frame(&self, features: &[f32]) -> Vec<f64> {
        features.iter().map(|&v| v as f64).collect()
    }
}

impl FrameEmbedder for EmbeddingModel {
    fn embed_frame(&self, features: &[f32]) -> Vec<f64> {
        self.embed_eval(features)
    }
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Average precision of a ranked relevance list: the mean, over relevant
/// positions k (1-based), of the precision within the top k.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevantItems);
    }
    Ok(sum / hits as f64)
}

fn merge_count(v: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = v.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = merge_count(left, buf) + merge_count(right, buf);
    let (mut i, mut j) = (0, 0);
    for slot in buf[..n].iter_mut() {
        if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            // right[j] jumps ahead of every remaining left element.
            inv += (left.len() - i) as u64;
            *slot = right[j];
            j += 1;
        }
    }
    v.copy_from_slice(&buf[..n]);
    inv
}

/// Normalized Kendall tau distance between two orderings of the same items:
/// 100 * discordant_pairs / (m * (m-1) / 2). 0 means identical order, 100
/// fully reversed.
pub fn kendall_tau_distance(order_a: &[usize], order_b: &[usize]) -> Result<f64> {
    let m = order_a.len();
    if m < 2 || order_b.len() != m {
        return Err(Error::InvalidConfig(
            "tau distance needs two equal-length orderings of at least 2 items".into(),
        ));
    }
    let mut pos_a = HashMap::with_capacity(m);
    for (rank, &item) in order_a.iter().enumerate() {
        if pos_a.insert(item, rank).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate item {item} in ordering")));
        }
    }
    let mut relabeled = Vec::with_capacity(m);
    for &item in order_b {
        match pos_a.get(&item) {
            Some(&rank) => relabeled.push(rank),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "orderings disagree on the item set (extra {item})"
                )))
            }
        }
    }
    if relabeled.len() != pos_a.len() {
        return Err(Error::InvalidConfig("orderings disagree on the item set".into()));
    }
    let mut buf = vec![0usize; m];
    let discordant = merge_count(&mut relabeled, &mut buf);
    let pairs = (m * (m - 1) / 2) as f64;
    Ok(100.0 * discordant as f64 / pairs)
}

/// Greedy sequence reconstruction given the true first two frames: the query
/// is the mean of the last two placed embeddings and the closest remaining
/// frame by cosine joins next (ties to the lowest index). Returns positions
/// into `embeddings`, starting [0, 1].
pub fn recover_order_greedy(embeddings: &[Vec<f64>]) -> Vec<usize> {
    let m = embeddings.len();
    assert!(m >= 3, "order recovery needs at least 3 frames");
    let dim = embeddings[0].len();
    let mut order = vec![0usize, 1];
    let mut remaining: Vec<usize> = (2..m).collect();
    let mut query = vec![0.0; dim];
    while !remaining.is_empty() {
        let a = &embeddings[order[order.len() - 2]];
        let b = &embeddings[order[order.len() - 1]];
        for (q, (x, y)) in query.iter_mut().zip(a.iter().zip(b)) {
            *q = 0.5 * (x + y);
        }
        let mut best_pos = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (pos, &cand) in remaining.iter().enumerate() {
            let s = cosine(&query, &embeddings[cand]);
            // Strict improvement keeps the earliest (lowest) index on ties;
            // `remaining` stays sorted ascending.
            if s > best_score {
                best_score = s;
                best_pos = pos;
            }
        }
        order.push(remaining.remove(best_pos));
    }
    order
}

/// One evaluation outcome: an aggregate score plus the per-query breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub aggregate: f64,
    pub per_query: Vec<QueryScore>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("report serialization");
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query,score\n");
        for q in &self.per_query {
            out.push_str(&format!("{},{}\n", q.id, q.score));
        }
        out.push_str(&format!("aggregate,{}\n", self.aggregate));
        fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

/// Number of frames sampled to represent a whole video.
pub const VIDEO_SAMPLE_FRAMES: usize = 4;

/// A video's representation: the mean embedding of uniformly sampled frames.
pub fn video_embedding<E: FrameEmbedder>(d: &Dataset, seq: usize, embedder: &E) -> Vec<f64> {
    let n = d.sequence(seq).num_frames;
    let idxs = uniform_indices(n, VIDEO_SAMPLE_FRAMES);
    let mut acc: Vec<f64> = embedder.embed_frame(d.frame(seq, idxs[0]));
    for &idx in &idxs[1..] {
        for (a, v) in acc.iter_mut().zip(embedder.embed_frame(d.frame(seq, idx))) {
            *a += v;
        }
    }
    let inv = 1.0 / idxs.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    acc
}

/// Ranks every other video by cosine to the query video's representation
/// (ties by sequence id) and scores same-label hits by average precision.
pub fn event_retrieval_map<E: FrameEmbedder>(d: &Dataset, embedder: &E) -> Result<EvalReport> {
    let labels = d.require_labels()?;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in &labels {
        *counts.entry(l).or_default() += 1;
    }
    for (i, &l) in labels.iter().enumerate() {
        if counts[&l] < 2 {
            return Err(Error::SingletonClass { label: l, id: d.sequence(i).id.clone() });
        }
    }
    if d.len() < 2 {
        return Err(Error::EmptyInput("retrieval pool"));
    }

    let reprs = par::map_range(d.len(), |i| video_embedding(d, i, embedder));
    let aps = par::map_range(d.len(), |q| {
        let mut ranked: Vec<(f64, &str, bool)> = (0..d.len())
            .filter(|&o| o != q)
            .map(|o| (cosine(&reprs[q], &reprs[o]), d.sequence(o).id.as_str(), labels[o] == labels[q]))
            .collect();
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)));
        let relevance: Vec<bool> = ranked.iter().map(|r| r.2).collect();
        average_precision(&relevance).expect("singleton classes were rejected above")
    });

    let aggregate = aps.iter().sum::<f64>() / aps.len() as f64;
    let per_query = d
        .sequences()
        .iter()
        .zip(&aps)
        .map(|(s, &score)| QueryScore { id: s.id.clone(), score })
        .collect();
    Ok(EvalReport { task: "event_retrieval".into(), aggregate, per_query })
}

/// Minimum frames for the temporal retrieval protocol: 4 context + 3
/// positives + 12 same-video distractors.
pub const TEMPORAL_MIN_LEN: usize = 19;

/// Index layout for one temporal retrieval query: 4 context frames spread
/// over the video, 3 positives evenly spaced strictly between the middle two
/// context frames, and 12 evenly spaced same-video distractors from outside
/// that middle span (context excluded; entries repeat when the pool is
/// smaller than 12).
fn temporal_indices(n: usize) -> Option<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let context = uniform_indices(n, 4);
    let (c1, c2) = (context[1], context[2]);
    if c2 <= c1 + 1 {
        return None;
    }
    let interior = c2 - c1 - 1;
    if interior < 3 {
        return None;
    }
    let positives: Vec<usize> =
        uniform_indices(interior, 3).into_iter().map(|i| c1 + 1 + i).collect();
    let pool: Vec<usize> = (0..c1)
        .chain(c2 + 1..n)
        .filter(|i| !context.contains(i))
        .collect();
    if pool.is_empty() {
        return None;
    }
    let negatives: Vec<usize> =
        uniform_indices(pool.len(), 12).into_iter().map(|i| pool[i]).collect();
    Some((context, positives, negatives))
}

/// Queries each long-enough video by the mean embedding of its 4 context
/// frames and measures average precision of the 3 in-between positives
/// against the same-video distractors plus every frame of every other video.
pub fn temporal_retrieval_map<E: FrameEmbedder>(
    d: &Dataset,
    embedder: &E,
    min_len: usize,
) -> Result<EvalReport> {
    let qualifying: Vec<usize> =
        (0..d.len()).filter(|&i| d.sequence(i).num_frames >= min_len).collect();
    if qualifying.is_empty() {
        return Err(Error::NoQualifyingVideo { needed: min_len });
    }

    // All frame embeddings, since every other video's frames distract.
    let frames: Vec<Vec<Vec<f64>>> = par::map_range(d.len(), |s| {
        (0..d.sequence(s).num_frames).map(|f| embedder.embed_frame(d.frame(s, f))).collect()
    });

    let scores = par::map_collect(&qualifying, |&q| {
        let n = d.sequence(q).num_frames;
        let (context, positives, negatives) =
            temporal_indices(n).expect("qualifying videos admit the index layout");
        let dim = frames[q][0].len();
        let mut query = vec![0.0; dim];
        for &c in &context {
            for (acc, v) in query.iter_mut().zip(&frames[q][c]) {
                *acc += v;
            }
        }
        for v in &mut query {
            *v *= 1.0 / context.len() as f64;
        }

        let mut ranked: Vec<(f64, &str, usize, bool)> = Vec::new();
        for &p in &positives {
            ranked.push((cosine(&query, &frames[q][p]), d.sequence(q).id.as_str(), p, true));
        }
        for &g in &negatives {
            ranked.push((cosine(&query, &frames[q][g]), d.sequence(q).id.as_str(), g, false));
        }
        for o in 0..d.len() {
            if o == q {
                continue;
            }
            for (f, emb) in frames[o].iter().enumerate() {
                ranked.push((cosine(&query, emb), d.sequence(o).id.as_str(), f, false));
            }
        }
        ranked.sort_by(|x, y| {
            y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)).then_with(|| x.2.cmp(&y.2))
        });
        let relevance: Vec<bool> = ranked.iter().map(|r| r.3).collect();
        average_precision(&relevance).expect("three positives are always present")
    });

    let aggregate = scores.iter().sum::<f64>() / scores.len() as f64;
    let per_query = qualifying
        .iter()
        .zip(&scores)
        .map(|(&q, &score)| QueryScore { id: d.sequence(q).id.clone(), score })
        .collect();
    Ok(EvalReport { task: "temporal_retrieval".into(), aggregate, per_query })
}

/// Samples `frames_per_video` frames uniformly from each long-enough video,
/// reconstructs their order greedily from the first two, and reports the
/// Kendall tau distance (0-100) of the reconstructed tail against true
/// order. The two given frames are not scored: with them included, even
/// chance-level reconstruction would look better than chance.
pub fn order_recovery_eval<E: FrameEmbedder>(
    d: &Dataset,
    embedder: &E,
    frames_per_video: usize,
) -> Result<EvalReport> {
    if frames_per_video < 4 {
        return Err(Error::InvalidConfig(
            "order recovery needs at least 4 frames per video".into(),
        ));
    }
    let qualifying: Vec<usize> =
        (0..d.len()).filter(|&i| d.sequence(i).num_frames >= frames_per_video).collect();
    if qualifying.is_empty() {
        return Err(Error::NoQualifyingVideo { needed: frames_per_video });
    }

    let truth: Vec<usize> = (2..frames_per_video).collect();
    let distances = par::map_collect(&qualifying, |&q| {
        let n = d.sequence(q).num_frames;
        let embs: Vec<Vec<f64>> = uniform_indices(n, frames_per_video)
            .into_iter()
            .map(|f| embedder.embed_frame(d.frame(q, f)))
            .collect();
        let order = recover_order_greedy(&embs);
        kendall_tau_distance(&order[2..], &truth).expect("tail is a permutation of the truth")
    });

    let aggregate = distances.iter().sum::<f64>() / distances.len() as f64;
    let per_query = qualifying
        .iter()
        .zip(&distances)
        .map(|(&q, &score)| QueryScore { id: d.sequence(q).id.clone(), score })
        .collect();
    Ok(EvalReport { task: "order_recovery".into(), aggregate, per_query })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub reg_lambda: f64,
    pub epochs: usize,
    pub lr0: f64,
    /// The classifier learning rate halves every this many epochs.
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { reg_lambda: 1e-4, epochs: 100, lr0: 0.1, halve_every: 25, seed: 0 }
    }
}

/// One-vs-rest linear classifier trained with the hinge loss plus L2.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    classes: Vec<usize>,
    dim: usize,
    w: Vec<f64>, // classes.len() x dim, row-major
    b: Vec<f64>,
}

impl LinearClassifier {
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }
}

/// SGD over per-sample hinge subgradients for a fixed epoch budget; sample
/// order reshuffles every epoch from the config seed, independent of labels.
pub fn train_classifier(
    train: &[(Vec<f64>, usize)],
    cfg: &ClassifierConfig,
) -> Result<LinearClassifier> {
    let (first, _) = train.first().ok_or(Error::EmptyInput("training set"))?;
    let dim = first.len();
    if dim == 0 || train.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::InvalidConfig("inconsistent training feature dims".into()));
    }
    if cfg.epochs == 0 || cfg.halve_every == 0 {
        return Err(Error::InvalidConfig("classifier epochs and halve_every must be positive".into()));
    }
    let mut classes: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut w = vec![0.0; classes.len() * dim];
    let mut b = vec![0.0; classes.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * 0.5f64.powi((epoch / cfg.halve_every) as i32);
        order.shuffle(&mut derive(cfg.seed, DOMAIN_EVAL | epoch as u64));
        for &i in &order {
            let (x, y) = &train[i];
            for (ci, &class) in classes.iter().enumerate() {
                let row = &mut w[ci * dim..(ci + 1) * dim];
                let score: f64 =
                    row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>() + b[ci];
                let yy = if *y == class { 1.0 } else { -1.0 };
                let shrink = 1.0 - lr * cfg.reg_lambda;
                if yy * score < 1.0 {
                    for (wv, xv) in row.iter_mut().zip(x) {
                        *wv = *wv * shrink + lr * yy * xv;
                    }
                    b[ci] += lr * yy;
                } else {
                    for wv in row.iter_mut() {
                        *wv *= shrink;
                    }
                }
            }
        }
    }
    Ok(LinearClassifier { classes, dim, w, b })
}

/// Highest-scoring class wins; exact ties go to the lowest class id.
pub fn classify(clf: &LinearClassifier, x: &[f64]) -> usize {
    assert_eq!(x.len(), clf.dim);
    let mut best = clf.classes[0];
    let mut best_score = f64::NEG_INFINITY;
    for (ci, &class) in clf.classes.iter().enumerate() {
        let row = &clf.w[ci * clf.dim..(ci + 1) * clf.dim];
        let score: f64 = row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>() + clf.b[ci];
        if score > best_score {
            best_score = score;
            best = class;
        }
    }
    best
}

/// Fraction of test samples classified correctly.
pub fn classify_eval(clf: &LinearClassifier, test: &[(Vec<f64>, usize)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let correct = test.iter().filter(|(x, y)| classify(clf, x) == *y).count();
    Ok(correct as f64 / test.len() as f64)
}

// Stream index for the train/test split draw, clear of per-epoch streams.
const SPLIT_STREAM: u64 = 1 << 40;

/// Splits labeled videos by a seeded shuffle, trains a linear classifier on
/// video embeddings, and reports test accuracy (per-query scores are 1 or 0
/// per test video).
pub fn classification_report<E: FrameEmbedder>(
    d: &Dataset,
    embedder: &E,
    cfg: &ClassifierConfig,
    train_frac: f64,
) -> Result<EvalReport> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidConfig("train_frac must be in (0, 1)".into()));
    }
    let labels = d.require_labels()?;
    if d.len() < 2 {
        return Err(Error::EmptyInput("labeled video set"));
    }
    let reprs = par::map_range(d.len(), |i| video_embedding(d, i, embedder));

    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut derive(cfg.seed, DOMAIN_EVAL | SPLIT_STREAM));
    let n_train = ((train_frac * d.len() as f64).round() as usize).clamp(1, d.len() - 1);

    let train_set: Vec<(Vec<f64>, usize)> =
        idx[..n_train].iter().map(|&i| (reprs[i].clone(), labels[i])).collect();
    let clf = train_classifier(&train_set, cfg)?;

    let mut per_query: Vec<QueryScore> = idx[n_train..]
        .iter()
        .map(|&i| QueryScore {
            id: d.sequence(i).id.clone(),
            score: if classify(&clf, &reprs[i]) == labels[i] { 1.0 } else { 0.0 },
        })
        .collect();
    per_query.sort_by(|a, b| a.id.cmp(&b.id));
    let aggregate = per_query.iter().map(|q| q.score).sum::<f64>() / per_query.len() as f64;
    Ok(EvalReport { task: "classification".into(), aggregate, per_query })
}

/// Writes every frame's embedding as TSV rows: id, frame index, then one
/// column per component.
pub fn export_embeddings_tsv<E: FrameEmbedder>(
    d: &Dataset,
    embedder: &E,
    path: &Path,
) -> Result<()> {
    let frames: Vec<Vec<Vec<f64>>> = par::map_range(d.len(), |s| {
        (0..d.sequence(s).num_frames).map(|f| embedder.embed_frame(d.frame(s, f))).collect()
    });
    let mut out = String::new();
    for (s, seq_frames) in frames.iter().enumerate() {
        let id = &d.sequence(s).id;
        for (f, emb) in seq_frames.iter().enumerate() {
            out.push_str(id);
            out.push('\t');
            out.push_str(&f.to_string());
            for v in emb {
                out.push('\t');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
