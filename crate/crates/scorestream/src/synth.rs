//! Seeded synthetic review corpus: documents mix words from a positive and
//! a negative pool with fraction `p ~ U[0,1]`, and carry the score
//! `1 + 4p + noise` clipped to [1, 5]. Desk-scale stand-in for a real
//! labeled review dump, with a known ground truth for evaluation runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const POSITIVE_POOL: [&str; 30] = [
    "great", "excellent", "love", "perfect", "amazing", "fantastic", "wonderful", "best",
    "awesome", "superb", "delightful", "outstanding", "brilliant", "pleased", "happy",
    "impressive", "reliable", "sturdy", "beautiful", "smooth", "comfortable", "fast",
    "quality", "recommend", "satisfied", "flawless", "solid", "gorgeous", "handy", "joy",
];

const NEGATIVE_POOL: [&str; 30] = [
    "terrible", "awful", "hate", "broken", "horrible", "worst", "disappointing", "bad",
    "useless", "cheap", "flimsy", "defective", "slow", "ugly", "uncomfortable", "annoying",
    "poor", "waste", "regret", "failure", "faulty", "noisy", "weak", "refund", "damaged",
    "unreliable", "frustrating", "junk", "leaky", "sad",
];

const SCORE_NOISE: f64 = 0.25;
const MIN_TOKENS: usize = 10;
const MAX_TOKENS: usize = 50;

/// Generative parameters and sanity statistics for one generated corpus.
#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub n_docs: usize,
    pub seed: u64,
    pub path: String,
    pub score_noise: f64,
    pub token_range: (usize, usize),
    pub positive_pool: usize,
    pub negative_pool: usize,
    /// Pearson correlation between score and positive-word fraction.
    pub score_mix_correlation: f64,
}

/// Write `n_docs` synthetic documents as JSON lines (default field mapping
/// schema) to `out`. Identical (n_docs, seed) always produce identical
/// files.
pub fn generate_synthetic_corpus(n_docs: usize, seed: u64, out: &Path) -> Result<SynthSummary> {
    if n_docs < 10 {
        return Err(Error::Precondition(format!(
            "synthetic corpus needs at least 10 documents, asked for {n_docs}"
        )));
    }
    let file = File::create(out).map_err(|e| Error::io("cannot create corpus file", out, e))?;
    let mut w = BufWriter::new(file);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mixes = Vec::with_capacity(n_docs);
    let mut scores = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let p: f64 = rng.gen_range(0.0..=1.0);
        let len = rng.gen_range(MIN_TOKENS..=MAX_TOKENS);
        let mut text = String::new();
        for t in 0..len {
            if t > 0 {
                text.push(' ');
            }
            let word = if rng.gen_range(0.0..1.0) < p {
                POSITIVE_POOL[rng.gen_range(0..POSITIVE_POOL.len())]
            } else {
                NEGATIVE_POOL[rng.gen_range(0..NEGATIVE_POOL.len())]
            };
            text.push_str(word);
        }
        let noise: f64 = rng.gen_range(-SCORE_NOISE..=SCORE_NOISE);
        let score = (1.0 + 4.0 * p + noise).clamp(1.0, 5.0);
        mixes.push(p);
        scores.push(score);

        let line = serde_json::json!({
            "id": format!("synth-{i}"),
            "reviewText": text,
            "overall": score,
        });
        writeln!(w, "{line}").map_err(|e| Error::io("cannot write corpus file", out, e))?;
    }
    w.flush().map_err(|e| Error::io("cannot flush corpus file", out, e))?;

    Ok(SynthSummary {
        n_docs,
        seed,
        path: out.display().to_string(),
        score_noise: SCORE_NOISE,
        token_range: (MIN_TOKENS, MAX_TOKENS),
        positive_pool: POSITIVE_POOL.len(),
        negative_pool: NEGATIVE_POOL.len(),
        score_mix_correlation: pearson(&mixes, &scores),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}
