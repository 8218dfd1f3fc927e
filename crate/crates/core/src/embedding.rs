//! Paragraph-vector learning (PV-DM with negative sampling).
//!
//! The model predicts each center word from the mean of the document vector
//! and the context word vectors inside a fixed window, discriminating the
//! true center word against `negatives` noise words with logistic loss.
//! Training is single-threaded SGD over documents in corpus order, so a
//! given (seed, corpus, hyperparameters) triple always produces the same
//! model, bit for bit.
//!
//! Inference for unseen documents runs the same SGD on one fresh vector
//! with both word matrices frozen.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hash_tokens;
use crate::matrix::Matrix;
use crate::real::Real;
use crate::vocab::{NoiseTable, Vocabulary};

/// Training hyperparameters. `subsample_t = 0` disables frequent-word
/// subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PvHyperparams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub alpha_start: f32,
    pub alpha_end: f32,
    pub min_count: u64,
    pub seed: u64,
    pub subsample_t: f32,
}

impl Default for PvHyperparams {
    fn default() -> Self {
        PvHyperparams {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 10,
            alpha_start: 0.025,
            alpha_end: 0.0001,
            min_count: 2,
            seed: 42,
            subsample_t: 0.0,
        }
    }
}

/// A trained paragraph-vector model: the vocabulary, both word matrices,
/// one vector per training document, and the noise distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphVectorModel {
    pub vocab: Vocabulary,
    pub params: PvHyperparams,
    pub word_in: Matrix<f32>,
    pub word_out: Matrix<f32>,
    pub doc_vecs: Matrix<f32>,
    pub noise: NoiseTable,
}

/// Vector inferred for an unseen document. `degenerate` is set when every
/// token was out of vocabulary and the zero vector was returned untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredVector {
    pub values: Vec<f32>,
    pub degenerate: bool,
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub alpha: f32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainError {
    /// `dim` or `epochs` was zero.
    BadHyperparams(&'static str),
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::BadHyperparams(what) => write!(f, "invalid hyperparameter: {what}"),
        }
    }
}

/// Negative-sampling logistic loss for one prediction step, plus gradients.
///
/// For each output row `u_i` with label `l_i` and score `s_i = h·u_i` the
/// loss contribution is `softplus(-s_i)` for the target and `softplus(s_i)`
/// for noise rows. On return `g[i] = σ(s_i) − l_i` (so `dL/du_i = g_i·h`)
/// and `grad_h = Σ g_i·u_i`.
///
/// Generic over the float type: training runs it at `f32`, the gradient
/// verification suite at `f64` against central finite differences.
pub fn ns_loss_and_grads<T: Real>(
    h: &[T],
    rows: &[&[T]],
    labels: &[bool],
    grad_h: &mut [T],
    g: &mut Vec<T>,
) -> T {
    debug_assert_eq!(rows.len(), labels.len());
    for v in grad_h.iter_mut() {
        *v = T::ZERO;
    }
    g.clear();
    let mut loss = T::ZERO;
    for (row, &label) in rows.iter().zip(labels) {
        let s = dot(h, row);
        loss += if label { (-s).softplus() } else { s.softplus() };
        let gi = s.sigmoid() - if label { T::ONE } else { T::ZERO };
        g.push(gi);
        for (gh, &u) in grad_h.iter_mut().zip(row.iter()) {
            *gh += gi * u;
        }
    }
    loss
}

/// Loss only, same definition as [`ns_loss_and_grads`]. Kept separate so
/// finite-difference checks can evaluate the objective without touching
/// gradient code.
pub fn ns_loss<T: Real>(h: &[T], rows: &[&[T]], labels: &[bool]) -> T {
    let mut loss = T::ZERO;
    for (row, &label) in rows.iter().zip(labels) {
        let s = dot(h, row);
        loss += if label { (-s).softplus() } else { s.softplus() };
    }
    loss
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Incremental PV-DM trainer. The caller drives it with one call to
/// [`PvTrainer::train_epoch`] per configured epoch, feeding encoded
/// documents in corpus order each time, then takes the model with
/// [`PvTrainer::into_model`].
pub struct PvTrainer {
    vocab: Vocabulary,
    params: PvHyperparams,
    word_in: Matrix<f32>,
    word_out: Matrix<f32>,
    doc_vecs: Matrix<f32>,
    noise: NoiseTable,
    rng: ChaCha8Rng,
    processed: u64,
    schedule_total: u64,
    epochs_done: usize,
    // step scratch, reused across positions
    h: Vec<f32>,
    grad_h: Vec<f32>,
    g: Vec<f32>,
    samples: Vec<(u32, bool)>,
}

impl PvTrainer {
    pub fn new(
        vocab: Vocabulary,
        n_docs: usize,
        params: PvHyperparams,
    ) -> Result<PvTrainer, TrainError> {
        if params.dim == 0 {
            return Err(TrainError::BadHyperparams("dim must be >= 1"));
        }
        if params.epochs == 0 {
            return Err(TrainError::BadHyperparams("epochs must be >= 1"));
        }
        let dim = params.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let bound = 0.5 / dim as f32;
        let mut word_in = Matrix::zeros(vocab.len(), dim);
        word_in.fill_with(|| rng.gen_range(-bound..bound));
        let mut doc_vecs = Matrix::zeros(n_docs, dim);
        doc_vecs.fill_with(|| rng.gen_range(-bound..bound));
        let word_out = Matrix::zeros(vocab.len(), dim);
        let noise = NoiseTable::build(&vocab);
        let schedule_total = params.epochs as u64 * vocab.total_kept();
        Ok(PvTrainer {
            vocab,
            word_in,
            word_out,
            doc_vecs,
            noise,
            rng,
            processed: 0,
            schedule_total,
            epochs_done: 0,
            h: vec![0.0; dim],
            grad_h: vec![0.0; dim],
            g: Vec::new(),
            samples: Vec::new(),
            params,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn alpha(&self) -> f32 {
        let span = self.params.alpha_start - self.params.alpha_end;
        let progress = if self.schedule_total == 0 {
            1.0
        } else {
            (self.processed as f64 / self.schedule_total as f64).min(1.0) as f32
        };
        self.params.alpha_start - span * progress
    }

    /// Run one epoch over `documents`, each item `(doc_index, encoded ids)`.
    /// Documents must arrive in the same order every epoch.
    pub fn train_epoch<I>(&mut self, documents: I) -> EpochStats
    where
        I: IntoIterator<Item = (usize, Vec<u32>)>,
    {
        let mut loss_sum = 0.0f64;
        let mut positions = 0u64;
        for (doc_index, ids) in documents {
            let (l, n) = self.train_document(doc_index, &ids);
            loss_sum += l;
            positions += n;
        }
        self.epochs_done += 1;
        EpochStats {
            epoch: self.epochs_done,
            mean_loss: if positions == 0 {
                0.0
            } else {
                loss_sum / positions as f64
            },
            alpha: self.alpha(),
        }
    }

    /// Like [`PvTrainer::train_epoch`], but for raw token documents:
    /// encoding against the trainer's vocabulary happens on the fly, which
    /// is what a caller streaming the corpus from disk each epoch wants.
    pub fn train_epoch_tokens<I>(&mut self, documents: I) -> EpochStats
    where
        I: IntoIterator<Item = (usize, Vec<String>)>,
    {
        let mut loss_sum = 0.0f64;
        let mut positions = 0u64;
        for (doc_index, tokens) in documents {
            let ids = self.vocab.encode(&tokens);
            let (l, n) = self.train_document(doc_index, &ids);
            loss_sum += l;
            positions += n;
        }
        self.epochs_done += 1;
        EpochStats {
            epoch: self.epochs_done,
            mean_loss: if positions == 0 {
                0.0
            } else {
                loss_sum / positions as f64
            },
            alpha: self.alpha(),
        }
    }

    /// Train on one encoded document; returns (loss sum, positions trained).
    pub fn train_document(&mut self, doc_index: usize, ids: &[u32]) -> (f64, u64) {
        let kept: Vec<u32> = if self.params.subsample_t > 0.0 {
            let t = self.params.subsample_t as f64;
            let total = self.vocab.total_kept() as f64;
            let mut kept = Vec::with_capacity(ids.len());
            for &id in ids {
                let f = self.vocab.count_of(id) as f64;
                let keep = (libm::sqrt(f / (t * total)) + 1.0) * (t * total) / f;
                if keep >= 1.0 || self.rng.gen_range(0.0..1.0) < keep {
                    kept.push(id);
                }
            }
            kept
        } else {
            ids.to_vec()
        };

        let window = self.params.window;
        let mut loss_sum = 0.0f64;
        let start = self.processed;

        for t in 0..kept.len() {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(kept.len().saturating_sub(1));
            let alpha = self.alpha();
            loss_sum += self.train_position(doc_index, kept[t], &kept[lo..t], &kept[t + 1..=hi], alpha);
            self.processed += 1;
        }
        // the schedule advances by the pre-subsampling token count, so
        // dropped tokens still move alpha towards alpha_end on time
        self.processed = start + ids.len() as u64;
        (loss_sum, kept.len() as u64)
    }

    fn train_position(
        &mut self,
        doc_index: usize,
        center: u32,
        left: &[u32],
        right: &[u32],
        alpha: f32,
    ) -> f64 {
        let n_ctx = left.len() + right.len();
        let scale = 1.0 / (1 + n_ctx) as f32;

        // h = mean of doc vector and context input vectors
        self.h.copy_from_slice(self.doc_vecs.row(doc_index));
        for &c in left.iter().chain(right) {
            let row = self.word_in.row(c as usize);
            for (hv, &x) in self.h.iter_mut().zip(row) {
                *hv += x;
            }
        }
        for hv in self.h.iter_mut() {
            *hv *= scale;
        }

        self.samples.clear();
        self.samples.push((center, true));
        for _ in 0..self.params.negatives {
            let n = self.noise.sample(&mut self.rng);
            if n != center {
                self.samples.push((n, false));
            }
        }

        // forward pass and gradients at the pre-update weights
        let rows: Vec<&[f32]> = self
            .samples
            .iter()
            .map(|&(id, _)| self.word_out.row(id as usize))
            .collect();
        let labels: Vec<bool> = self.samples.iter().map(|&(_, l)| l).collect();
        let loss = ns_loss_and_grads(&self.h, &rows, &labels, &mut self.grad_h, &mut self.g);
        drop(rows);

        // output rows: u_i -= α g_i h
        for (&(id, _), &gi) in self.samples.iter().zip(&self.g) {
            let row = self.word_out.row_mut(id as usize);
            for (u, &hv) in row.iter_mut().zip(&self.h) {
                *u -= alpha * gi * hv;
            }
        }

        // input side: every constituent of the mean moves by α·grad_h/(1+C)
        let doc_row = self.doc_vecs.row_mut(doc_index);
        for (v, &gh) in doc_row.iter_mut().zip(&self.grad_h) {
            *v -= alpha * scale * gh;
        }
        for &c in left.iter().chain(right) {
            let row = self.word_in.row_mut(c as usize);
            for (v, &gh) in row.iter_mut().zip(&self.grad_h) {
                *v -= alpha * scale * gh;
            }
        }

        loss.to_f64()
    }

    pub fn into_model(self) -> ParagraphVectorModel {
        ParagraphVectorModel {
            vocab: self.vocab,
            params: self.params,
            word_in: self.word_in,
            word_out: self.word_out,
            doc_vecs: self.doc_vecs,
            noise: self.noise,
        }
    }
}

impl ParagraphVectorModel {
    /// Embed an unseen document: initialize a fresh vector from a seed
    /// derived from the model seed and the token content, then run
    /// `infer_steps` SGD passes over the document with both word matrices
    /// frozen. All-OOV input short-circuits to the zero vector with the
    /// degenerate flag set.
    pub fn infer_vector(&self, tokens: &[String], infer_steps: usize) -> InferredVector {
        let dim = self.params.dim;
        let ids = self.vocab.encode(tokens);
        if ids.is_empty() {
            return InferredVector {
                values: vec![0.0; dim],
                degenerate: true,
            };
        }

        let seed = self.params.seed.wrapping_add(hash_tokens(tokens));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / dim as f32;
        let mut v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-bound..bound)).collect();

        let mut h = vec![0.0f32; dim];
        let mut grad_h = vec![0.0f32; dim];
        let mut g: Vec<f32> = Vec::new();
        let mut samples: Vec<(u32, bool)> = Vec::new();
        let window = self.params.window;
        let span = self.params.alpha_start - self.params.alpha_end;
        let steps = infer_steps.max(1);

        for step in 0..steps {
            let alpha = self.params.alpha_start - span * (step as f32 / steps as f32);
            for t in 0..ids.len() {
                let lo = t.saturating_sub(window);
                let hi = (t + window).min(ids.len() - 1);
                let ctx = || ids[lo..t].iter().chain(&ids[t + 1..=hi]);
                let n_ctx = (t - lo) + (hi - t);
                let scale = 1.0 / (1 + n_ctx) as f32;

                h.copy_from_slice(&v);
                for &c in ctx() {
                    for (hv, &x) in h.iter_mut().zip(self.word_in.row(c as usize)) {
                        *hv += x;
                    }
                }
                for hv in h.iter_mut() {
                    *hv *= scale;
                }

                samples.clear();
                samples.push((ids[t], true));
                for _ in 0..self.params.negatives {
                    let n = self.noise.sample(&mut rng);
                    if n != ids[t] {
                        samples.push((n, false));
                    }
                }
                let rows: Vec<&[f32]> = samples
                    .iter()
                    .map(|&(id, _)| self.word_out.row(id as usize))
                    .collect();
                let labels: Vec<bool> = samples.iter().map(|&(_, l)| l).collect();
                ns_loss_and_grads(&h, &rows, &labels, &mut grad_h, &mut g);

                // only the fresh document vector moves
                for (vv, &gh) in v.iter_mut().zip(&grad_h) {
                    *vv -= alpha * scale * gh;
                }
            }
        }

        InferredVector {
            values: v,
            degenerate: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn toy_vocab() -> Vocabulary {
        let docs: Vec<Vec<String>> = vec![
            vec!["a", "b", "c", "a"].iter().map(|s| s.to_string()).collect(),
            vec!["b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        ];
        Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap()
    }

    #[test]
    fn rejects_zero_epochs() {
        let v = toy_vocab();
        let params = PvHyperparams {
            epochs: 0,
            ..PvHyperparams::default()
        };
        assert!(PvTrainer::new(v, 2, params).is_err());
    }

    #[test]
    fn rejects_zero_dim() {
        let v = toy_vocab();
        let params = PvHyperparams {
            dim: 0,
            ..PvHyperparams::default()
        };
        assert!(PvTrainer::new(v, 2, params).is_err());
    }

    #[test]
    fn deterministic_training() {
        let params = PvHyperparams {
            dim: 8,
            epochs: 3,
            window: 2,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let docs: Vec<Vec<u32>> = vec![vec![0, 1, 2, 0], vec![1, 2, 3]];
        let run = || {
            let mut t = PvTrainer::new(toy_vocab(), 2, params.clone()).unwrap();
            for _ in 0..3 {
                t.train_epoch(docs.iter().cloned().enumerate());
            }
            t.into_model()
        };
        let m1 = run();
        let m2 = run();
        assert_eq!(m1.doc_vecs.as_slice(), m2.doc_vecs.as_slice());
        assert_eq!(m1.word_in.as_slice(), m2.word_in.as_slice());
        assert_eq!(m1.word_out.as_slice(), m2.word_out.as_slice());
    }

    #[test]
    fn infer_is_deterministic_and_isolated() {
        let params = PvHyperparams {
            dim: 8,
            epochs: 2,
            window: 2,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let docs: Vec<Vec<u32>> = vec![vec![0, 1, 2, 0], vec![1, 2, 3]];
        let mut t = PvTrainer::new(toy_vocab(), 2, params).unwrap();
        for _ in 0..2 {
            t.train_epoch(docs.iter().cloned().enumerate());
        }
        let model = t.into_model();
        let before_in = model.word_in.clone();
        let before_out = model.word_out.clone();

        let tokens: Vec<String> = vec!["a".to_string(), "c".to_string()];
        let v1 = model.infer_vector(&tokens, 10);
        let v2 = model.infer_vector(&tokens, 10);
        assert_eq!(v1, v2);
        assert!(!v1.degenerate);
        assert_eq!(before_in, model.word_in);
        assert_eq!(before_out, model.word_out);
    }

    #[test]
    fn all_oov_is_zero_and_flagged() {
        let params = PvHyperparams {
            dim: 8,
            epochs: 1,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let mut t = PvTrainer::new(toy_vocab(), 2, params).unwrap();
        t.train_epoch(vec![(0usize, vec![0, 1]), (1, vec![2, 3])]);
        let model = t.into_model();
        let out = model.infer_vector(&["zzz".to_string()], 10);
        assert!(out.degenerate);
        assert!(out.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn alpha_decays_linearly() {
        let params = PvHyperparams {
            dim: 4,
            epochs: 2,
            window: 1,
            alpha_start: 0.025,
            alpha_end: 0.001,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let mut t = PvTrainer::new(toy_vocab(), 2, params).unwrap();
        let docs: Vec<Vec<u32>> = vec![vec![0, 1, 2, 0], vec![1, 2, 3]];
        assert!((t.alpha() - 0.025).abs() < 1e-6);
        let s1 = t.train_epoch(docs.iter().cloned().enumerate());
        // halfway through the schedule after 1 of 2 epochs
        assert!((s1.alpha - 0.013).abs() < 1e-6);
        let s2 = t.train_epoch(docs.iter().cloned().enumerate());
        assert!((s2.alpha - 0.001).abs() < 1e-6);
    }
}
