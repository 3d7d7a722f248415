//! Data model, dataset I/O, interval preprocessing, synthetic stream
//! generation and word-label bias analysis.
//!
//! An [`Instance`] is a labeled claim with its chronologically ordered posts.
//! Post timestamps are stored relative to the earliest post of the instance,
//! so the timelines of different instances are aligned at zero. Before being
//! fed to the detector, the post stream is chopped into intervals whose
//! merged text becomes one classification step.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{HeardError, Result};

/// One post: text plus elapsed seconds since the instance's first post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub text: String,
    pub tau: f64,
}

/// A labeled claim with its ordered post stream. `label` is 1 for rumor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub label: u8,
    pub posts: Vec<Post>,
}

impl Instance {
    pub fn n_posts(&self) -> usize {
        self.posts.len()
    }

    /// Elapsed seconds covered by the stream (tau of the last post).
    pub fn span(&self) -> f64 {
        self.posts.last().map(|p| p.tau).unwrap_or(0.0)
    }
}

/// One merged interval: concatenated text and the tau of its last post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub text: String,
    pub t: f64,
}

/// The chopped stream consumed step-by-step by the detector.
///
/// `last_post_index[i]` is the 1-based index (within the source instance) of
/// the last post merged into interval `i`; metrics that are defined over
/// posts rather than intervals use it to map a stop interval back to a post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSequence {
    pub intervals: Vec<Interval>,
    pub source_id: String,
    pub last_post_index: Vec<usize>,
}

impl IntervalSequence {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// How to chop a post stream into intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "param", rename_all = "snake_case")]
pub enum IntervalStrategy {
    /// Merge every `n` consecutive posts.
    FixedCount(usize),
    /// Merge posts falling into the same window of `seconds`.
    FixedTime(f64),
}

impl IntervalStrategy {
    /// Preprocessing profile used for a known dataset family: every 10 posts
    /// for BEARD, every 2 for TWITTER, and same-second grouping for PHEME.
    pub fn from_profile(name: &str) -> Option<IntervalStrategy> {
        match name.to_ascii_lowercase().as_str() {
            "beard" => Some(IntervalStrategy::FixedCount(10)),
            "twitter" => Some(IntervalStrategy::FixedCount(2)),
            "pheme" => Some(IntervalStrategy::FixedTime(1.0)),
            _ => None,
        }
    }

    pub fn chop(&self, instance: &Instance) -> Result<IntervalSequence> {
        match *self {
            IntervalStrategy::FixedCount(k) => chop_fixed_count(instance, k),
            IntervalStrategy::FixedTime(w) => chop_fixed_time(instance, w),
        }
    }
}

#[derive(Deserialize)]
struct RawPost {
    text: String,
    ts: f64,
}

#[derive(Deserialize)]
struct RawInstance {
    id: String,
    label: u8,
    posts: Vec<RawPost>,
}

/// Load a JSONL dataset: one instance per line, posts carrying absolute or
/// relative timestamps. Timestamps are normalized so the earliest post of
/// each instance sits at tau = 0; posts are sorted by tau, ties keeping
/// their original order.
pub fn load_dataset(path: &Path) -> Result<Vec<Instance>> {
    let content = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawInstance = serde_json::from_str(line).map_err(|e| HeardError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.label > 1 {
            return Err(HeardError::Parse {
                line: line_no,
                message: format!("label must be 0 or 1, got {}", raw.label),
            });
        }
        out.push(instance_from_raw(raw, line_no)?);
    }
    Ok(out)
}

fn instance_from_raw(raw: RawInstance, line_no: usize) -> Result<Instance> {
    if raw.posts.is_empty() {
        return Err(HeardError::Validation(format!(
            "instance {:?} (line {}) has no posts",
            raw.id, line_no
        )));
    }
    for p in &raw.posts {
        if !p.ts.is_finite() {
            return Err(HeardError::Parse {
                line: line_no,
                message: format!("non-finite timestamp in instance {:?}", raw.id),
            });
        }
    }
    let base = raw.posts.iter().map(|p| p.ts).fold(f64::INFINITY, f64::min);
    let mut posts: Vec<Post> = raw
        .posts
        .into_iter()
        .map(|p| Post {
            text: p.text,
            tau: p.ts - base,
        })
        .collect();
    posts.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    Ok(Instance {
        id: raw.id,
        label: raw.label,
        posts,
    })
}

/// Serialize instances back to the JSONL on-disk form (tau stored as `ts`).
pub fn write_dataset(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut buf = String::new();
    for inst in instances {
        let posts: Vec<serde_json::Value> = inst
            .posts
            .iter()
            .map(|p| serde_json::json!({"text": p.text, "ts": p.tau}))
            .collect();
        let line = serde_json::json!({"id": inst.id, "label": inst.label, "posts": posts});
        buf.push_str(&line.to_string());
        buf.push('\n');
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Merge every `k` consecutive posts into one interval. The interval
/// timestamp is the tau of its last post; the last interval may be short.
pub fn chop_fixed_count(instance: &Instance, k: usize) -> Result<IntervalSequence> {
    if k == 0 {
        return Err(HeardError::Validation("interval post count must be >= 1".into()));
    }
    let mut intervals = Vec::new();
    let mut last_post_index = Vec::new();
    for (chunk_idx, chunk) in instance.posts.chunks(k).enumerate() {
        intervals.push(Interval {
            text: merge_texts(chunk),
            t: chunk.last().unwrap().tau,
        });
        last_post_index.push((chunk_idx * k + chunk.len()).min(instance.posts.len()));
    }
    Ok(IntervalSequence {
        intervals,
        source_id: instance.id.clone(),
        last_post_index,
    })
}

/// Group posts whose tau falls in the same `[j*window, (j+1)*window)` bucket.
/// Empty windows produce no interval.
pub fn chop_fixed_time(instance: &Instance, window: f64) -> Result<IntervalSequence> {
    if !(window > 0.0) {
        return Err(HeardError::Validation("interval window must be > 0".into()));
    }
    let mut intervals = Vec::new();
    let mut last_post_index = Vec::new();
    let mut current_bucket: Option<u64> = None;
    let mut start = 0usize;
    for (i, post) in instance.posts.iter().enumerate() {
        let bucket = (post.tau / window).floor() as u64;
        match current_bucket {
            Some(b) if b == bucket => {}
            Some(_) => {
                let chunk = &instance.posts[start..i];
                intervals.push(Interval {
                    text: merge_texts(chunk),
                    t: chunk.last().unwrap().tau,
                });
                last_post_index.push(i);
                start = i;
                current_bucket = Some(bucket);
            }
            None => current_bucket = Some(bucket),
        }
    }
    let chunk = &instance.posts[start..];
    intervals.push(Interval {
        text: merge_texts(chunk),
        t: chunk.last().unwrap().tau,
    });
    last_post_index.push(instance.posts.len());
    Ok(IntervalSequence {
        intervals,
        source_id: instance.id.clone(),
        last_post_index,
    })
}

fn merge_texts(posts: &[Post]) -> String {
    posts
        .iter()
        .map(|p| p.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Three-way split of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub tune: Vec<Instance>,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

// The tune set is held out once, independent of the split seed, so that
// several train/test splits can be averaged against the same tuning data.
const TUNE_HOLDOUT_SEED: u64 = 0x7e57_0123_4567_89ab;

/// Hold out 20% of instances for tuning (seed-independent), then split the
/// remainder 3:1 into train/test using `seed`. Both stages are stratified by
/// class, keeping class proportions within one instance per class.
pub fn split_dataset(instances: &[Instance], seed: u64) -> Result<DatasetSplit> {
    if instances.len() < 5 {
        return Err(HeardError::Validation(format!(
            "need at least 5 instances to split, got {}",
            instances.len()
        )));
    }
    let mut tune = Vec::new();
    let mut rest = Vec::new();
    stratified_take(
        instances.iter().cloned().collect(),
        0.2,
        TUNE_HOLDOUT_SEED,
        &mut tune,
        &mut rest,
    );
    let mut train = Vec::new();
    let mut test = Vec::new();
    stratified_take(rest, 0.75, seed, &mut train, &mut test);
    Ok(DatasetSplit { tune, train, test })
}

/// Shuffle each class with its own deterministic stream and move `fraction`
/// of it into `taken`, the rest into `left`. Output order follows the input
/// order so the split is stable under relabeling of the RNG draws.
fn stratified_take(
    pool: Vec<Instance>,
    fraction: f64,
    seed: u64,
    taken: &mut Vec<Instance>,
    left: &mut Vec<Instance>,
) {
    let mut by_class: [Vec<Instance>; 2] = [Vec::new(), Vec::new()];
    for inst in pool {
        by_class[inst.label as usize].push(inst);
    }
    for (c, class_pool) in by_class.into_iter().enumerate() {
        let mut order: Vec<usize> = (0..class_pool.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (c as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let n_take = (fraction * class_pool.len() as f64).round() as usize;
        let mut is_taken = vec![false; class_pool.len()];
        for &i in order.iter().take(n_take) {
            is_taken[i] = true;
        }
        for (i, inst) in class_pool.into_iter().enumerate() {
            if is_taken[i] {
                taken.push(inst);
            } else {
                left.push(inst);
            }
        }
    }
}

/// Configuration of the synthetic stream generator.
///
/// Class-indicative tokens appear only in posts after `onset_fraction` of an
/// instance's post sequence; before that both classes emit the same neutral
/// token distribution. `noise_rate` is the probability that an indicative
/// token is drawn from the opposite class's pool instead of its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_instances: usize,
    pub posts_min: usize,
    pub posts_max: usize,
    pub onset_fraction: f64,
    pub neutral_vocab: usize,
    pub rumor_vocab: usize,
    pub nonrumor_vocab: usize,
    pub noise_rate: f64,
    #[serde(default = "default_tokens_per_post")]
    pub tokens_per_post: usize,
    #[serde(default = "default_indicative_fraction")]
    pub indicative_fraction: f64,
    #[serde(default = "default_mean_gap_secs")]
    pub mean_gap_secs: f64,
    #[serde(default = "default_rumor_fraction")]
    pub rumor_fraction: f64,
}

fn default_tokens_per_post() -> usize {
    8
}
fn default_indicative_fraction() -> f64 {
    0.4
}
fn default_mean_gap_secs() -> f64 {
    600.0
}
fn default_rumor_fraction() -> f64 {
    0.5
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(HeardError::Validation("n_instances must be >= 1".into()));
        }
        if self.posts_min == 0 || self.posts_max < self.posts_min {
            return Err(HeardError::Validation("invalid posts per instance range".into()));
        }
        if !(self.onset_fraction > 0.0 && self.onset_fraction < 1.0) {
            return Err(HeardError::Validation("onset_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(HeardError::Validation("noise_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.rumor_fraction) {
            return Err(HeardError::Validation("rumor_fraction must lie in [0, 1]".into()));
        }
        if self.neutral_vocab == 0 || self.rumor_vocab == 0 || self.nonrumor_vocab == 0 {
            return Err(HeardError::Validation("vocabulary sizes must be >= 1".into()));
        }
        if self.tokens_per_post == 0 {
            return Err(HeardError::Validation("tokens_per_post must be >= 1".into()));
        }
        if !(self.indicative_fraction > 0.0 && self.indicative_fraction <= 1.0) {
            return Err(HeardError::Validation("indicative_fraction must lie in (0, 1]".into()));
        }
        if !(self.mean_gap_secs > 0.0) {
            return Err(HeardError::Validation("mean_gap_secs must be > 0".into()));
        }
        Ok(())
    }
}

/// Generate a labeled synthetic dataset. Deterministic given the seed.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Vec<Instance>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap_dist = Exp::new(1.0 / config.mean_gap_secs)
        .map_err(|e| HeardError::Validation(format!("bad gap distribution: {e}")))?;
    let n_indicative = ((config.tokens_per_post as f64) * config.indicative_fraction)
        .round()
        .max(1.0) as usize;

    let mut out = Vec::with_capacity(config.n_instances);
    for idx in 0..config.n_instances {
        let label = u8::from(rng.gen_bool(config.rumor_fraction));
        let n_posts = rng.gen_range(config.posts_min..=config.posts_max);
        let onset = ((config.onset_fraction * n_posts as f64).floor() as usize).min(n_posts - 1);
        let mut tau = 0.0;
        let mut posts = Vec::with_capacity(n_posts);
        for p in 0..n_posts {
            if p > 0 {
                tau += gap_dist.sample(&mut rng);
            }
            let indicative = if p >= onset { n_indicative } else { 0 };
            let mut tokens = Vec::with_capacity(config.tokens_per_post);
            for slot in 0..config.tokens_per_post {
                if slot < indicative {
                    let own_pool = rng.gen_bool(1.0 - config.noise_rate);
                    let effective = if own_pool { label } else { 1 - label };
                    tokens.push(if effective == 1 {
                        format!("rum{:04}", rng.gen_range(0..config.rumor_vocab))
                    } else {
                        format!("fac{:04}", rng.gen_range(0..config.nonrumor_vocab))
                    });
                } else {
                    tokens.push(format!("neu{:04}", rng.gen_range(0..config.neutral_vocab)));
                }
            }
            posts.push(Post {
                text: tokens.join(" "),
                tau,
            });
        }
        out.push(Instance {
            id: format!("syn{idx:05}"),
            label,
            posts,
        });
    }
    Ok(out)
}

/// Word-label association statistics over source posts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordLabelStats {
    pub word: String,
    pub lmi: f64,
    pub pmi: f64,
    pub count: usize,
}

/// Rank words of the instances' source posts (their first posts) by local
/// mutual information with the rumor class. Tokens are lowercased whitespace
/// splits; probabilities come from word-label co-occurrence counts.
pub fn lmi_pmi_rank(instances: &[Instance], top_k: usize) -> Result<Vec<WordLabelStats>> {
    if instances.is_empty() {
        return Err(HeardError::Validation("no instances for bias ranking".into()));
    }
    let mut pair_counts: HashMap<String, [usize; 2]> = HashMap::new();
    let mut class_totals = [0usize; 2];
    for inst in instances {
        let source = &inst.posts[0].text;
        for token in source.split_whitespace() {
            let token = token.to_lowercase();
            pair_counts.entry(token).or_default()[inst.label as usize] += 1;
            class_totals[inst.label as usize] += 1;
        }
    }
    let total: usize = class_totals[0] + class_totals[1];
    if total == 0 {
        return Err(HeardError::Validation("empty vocabulary in source posts".into()));
    }

    let mut stats: Vec<WordLabelStats> = pair_counts
        .into_iter()
        .filter(|(_, counts)| counts[1] > 0)
        .map(|(word, counts)| {
            let p_wc = counts[1] as f64 / total as f64;
            let p_w = (counts[0] + counts[1]) as f64 / total as f64;
            let p_c = class_totals[1] as f64 / total as f64;
            let ratio = p_wc / (p_w * p_c);
            WordLabelStats {
                word,
                lmi: p_wc * ratio.ln(),
                pmi: ratio.ln(),
                count: counts[1],
            }
        })
        .collect();
    stats.sort_by(|a, b| {
        b.lmi
            .partial_cmp(&a.lmi)
            .unwrap()
            .then_with(|| a.word.cmp(&b.word))
    });
    stats.truncate(top_k);
    Ok(stats)
}
