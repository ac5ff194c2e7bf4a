//! Per-example scoring over the unlabeled pool: temperature-scaled
//! predictions, temporal ensembling, ID/OOD detection, and the
//! transferability weights that drive recycling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax;
use crate::data::Role;
use crate::error::{Error, Result};
use crate::exec;
use crate::net::{classify, discriminate_eval, feature_extract_eval, ModelBundle};

/// Guard for mean-normalization denominators.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Softmax temperature.
    pub temperature: f64,
    /// Detection threshold: scores strictly above are tagged ID.
    pub delta: f64,
    /// Momentum of the prediction EMA.
    pub ema_momentum: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            temperature: 0.8,
            delta: 0.9,
            ema_momentum: 0.6,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "ema momentum must be in [0, 1], got {}",
                self.ema_momentum
            )));
        }
        Ok(())
    }
}

/// Current partition tag of an unlabeled example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    Id,
    Ood,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Id => "ID",
            Tag::Ood => "OOD",
        }
    }
}

/// Persistent per-example state of the unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    /// Assembled (EMA) prediction; unset before the first refresh.
    pub ema: Option<Vec<f64>>,
    /// Stabilized softmax score, max component of `ema`.
    pub score: f64,
    pub tag: Tag,
    /// Domain similarity, normalized over the full pool.
    pub w_domain: f64,
    /// Class tendency, normalized over the full pool.
    pub w_class: f64,
    /// Transferability: variance-adaptive blend of the two scores.
    pub w: f64,
}

impl PoolRecord {
    fn new() -> Self {
        PoolRecord {
            ema: None,
            score: 0.0,
            tag: Tag::Ood,
            w_domain: 0.0,
            w_class: 0.0,
            w: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledPoolState {
    pub records: Vec<PoolRecord>,
}

impl UnlabeledPoolState {
    pub fn new(size: usize) -> Self {
        UnlabeledPoolState {
            records: (0..size).map(|_| PoolRecord::new()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices_tagged(&self, tag: Tag) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.tag == tag)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Temperature-scaled prediction: `softmax(logits / temperature)`.
pub fn scaled_prediction(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Diagnostic("non-finite logits".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    Ok(softmax(&scaled))
}

/// Max component of a prediction on the simplex.
pub fn softmax_score(prediction: &[f64]) -> f64 {
    prediction.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// EMA update of an assembled prediction. An unset state adopts the new
/// prediction outright.
pub fn ema_update(old: Option<&[f64]>, new: &[f64], momentum: f64) -> Result<Vec<f64>> {
    match old {
        None => Ok(new.to_vec()),
        Some(old) => {
            if old.len() != new.len() {
                return Err(Error::Usage(format!(
                    "ema dimension mismatch: {} vs {}",
                    old.len(),
                    new.len()
                )));
            }
            Ok(old
                .iter()
                .zip(new)
                .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
                .collect())
        }
    }
}

/// Threshold detection: ID iff the stabilized score strictly exceeds delta.
pub fn detect(score: f64, delta: f64) -> Tag {
    if score > delta {
        Tag::Id
    } else {
        Tag::Ood
    }
}

/// Normalize raw scores by their mean over the whole pool; the result has
/// mean 1. All-zero raw scores fall back to all ones.
fn normalize_by_mean(raw: &[f64]) -> Vec<f64> {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if mean.abs() < NORM_EPS {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|r| r / mean).collect()
}

/// Domain similarity scores: discriminator outputs normalized to mean 1
/// over all unlabeled examples.
pub fn domain_similarity_scores(disc_outputs: &[f64]) -> Result<Vec<f64>> {
    if disc_outputs.is_empty() {
        return Err(Error::Usage("empty pool for domain similarity".into()));
    }
    Ok(normalize_by_mean(disc_outputs))
}

/// Top-1 minus top-2 margin of one prediction. Two equal maxima give 0.
pub fn prediction_margin(prediction: &[f64]) -> f64 {
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &p in prediction {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    top1 - top2
}

/// Class tendency scores: prediction margins normalized to mean 1 over all
/// unlabeled examples.
pub fn class_tendency_scores(predictions: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predictions.is_empty() {
        return Err(Error::Usage("empty pool for class tendency".into()));
    }
    let raw: Vec<f64> = predictions.iter().map(|p| prediction_margin(p)).collect();
    Ok(normalize_by_mean(&raw))
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Variance-adaptive convex combination of domain similarity and class
/// tendency, restricted to one index set (the current OOD subset).
///
/// `alpha = var(w_d) / (var(w_d) + var(w_c))` with population variances;
/// both variances zero falls back to `alpha = 0.5`.
pub fn transferability(w_domain: &[f64], w_class: &[f64]) -> Result<(f64, Vec<f64>)> {
    if w_domain.len() != w_class.len() || w_domain.is_empty() {
        return Err(Error::Usage(format!(
            "transferability needs two equal nonempty score vectors, got {} and {}",
            w_domain.len(),
            w_class.len()
        )));
    }
    let var_d = population_variance(w_domain);
    let var_c = population_variance(w_class);
    let alpha = if var_d + var_c < NORM_EPS {
        0.5
    } else {
        var_d / (var_d + var_c)
    };
    let w = w_domain
        .iter()
        .zip(w_class)
        .map(|(d, c)| alpha * d + (1.0 - alpha) * c)
        .collect();
    Ok((alpha, w))
}

/// One full scoring pass over the unlabeled pool.
///
/// For every example: eval-mode `F` then `C`, temperature scaling, EMA
/// update, stabilized score, threshold detection; then eval-mode `D` and
/// the normalized similarity/tendency scores; finally the adaptive blend
/// whose mixing weight comes from the current OOD subset. Per-example work
/// fans out; the pool state is rewritten in one commit.
pub fn refresh_pool(
    pool: &mut UnlabeledPoolState,
    bundle: &ModelBundle,
    config: &ScoringConfig,
    examples: &[Vec<f64>],
) -> Result<()> {
    if examples.len() != pool.len() {
        return Err(Error::Usage(format!(
            "pool has {} records but {} examples were supplied",
            pool.len(),
            examples.len()
        )));
    }
    if pool.is_empty() {
        return Ok(());
    }

    let old_emas: Vec<Option<Vec<f64>>> = pool.records.iter().map(|r| r.ema.clone()).collect();
    let per_example: Vec<Result<(Vec<f64>, f64)>> = exec::map_indexed(examples.len(), |i| {
        let (feature, _) = feature_extract_eval(bundle, &examples[i])?;
        let (logits, _) = classify(bundle, &feature)?;
        let pred = scaled_prediction(&logits, config.temperature)?;
        let ema = ema_update(old_emas[i].as_deref(), &pred, config.ema_momentum)?;
        let disc = discriminate_eval(bundle, &feature)?;
        Ok((ema, disc))
    });

    let mut emas = Vec::with_capacity(examples.len());
    let mut disc_outputs = Vec::with_capacity(examples.len());
    for r in per_example {
        let (ema, disc) = r?;
        emas.push(ema);
        disc_outputs.push(disc);
    }

    let w_domain = domain_similarity_scores(&disc_outputs)?;
    let w_class = class_tendency_scores(&emas)?;

    // Stage tags first; the blend weight depends on the new OOD subset.
    let scores: Vec<f64> = emas.iter().map(|e| softmax_score(e)).collect();
    let tags: Vec<Tag> = scores.iter().map(|&s| detect(s, config.delta)).collect();

    let ood_idx: Vec<usize> = (0..tags.len()).filter(|&i| tags[i] == Tag::Ood).collect();
    let alpha = if ood_idx.is_empty() {
        0.5
    } else {
        let d: Vec<f64> = ood_idx.iter().map(|&i| w_domain[i]).collect();
        let c: Vec<f64> = ood_idx.iter().map(|&i| w_class[i]).collect();
        transferability(&d, &c)?.0
    };

    for i in 0..pool.records.len() {
        let r = &mut pool.records[i];
        r.score = scores[i];
        r.tag = tags[i];
        r.w_domain = w_domain[i];
        r.w_class = w_class[i];
        r.w = alpha * w_domain[i] + (1.0 - alpha) * w_class[i];
        r.ema = Some(std::mem::take(&mut emas[i]));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pool-state dump
// ---------------------------------------------------------------------------

pub const POOL_DUMP_HEADER: &str = "index,score,tag,w_d,w_c,w,truth";

/// One row of a pool-state dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolDumpRow {
    pub index: usize,
    pub score: f64,
    pub tag: Tag,
    pub w_domain: f64,
    pub w_class: f64,
    pub w: f64,
    pub truth: Role,
}

/// Serialize the pool state with its ground-truth provenance tags.
pub fn write_pool_dump(
    pool: &UnlabeledPoolState,
    truths: &[Role],
    path: &Path,
) -> Result<()> {
    if truths.len() != pool.len() {
        return Err(Error::Usage(format!(
            "pool has {} records but {} truth tags were supplied",
            pool.len(),
            truths.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "{POOL_DUMP_HEADER}").map_err(io_err)?;
    for (i, (r, truth)) in pool.records.iter().zip(truths).enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{}",
            r.score,
            r.tag.as_str(),
            r.w_domain,
            r.w_class,
            r.w,
            truth.as_str()
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Parse a pool-state dump written by [`write_pool_dump`].
pub fn read_pool_dump(path: &Path) -> Result<Vec<PoolDumpRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no + 1,
            message,
        };
        if line_no == 0 {
            if line.trim() != POOL_DUMP_HEADER {
                return Err(parse_err(format!("expected header '{POOL_DUMP_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| parse_err(format!("bad {what} '{s}'")))
        };
        let tag = match fields[2] {
            "ID" => Tag::Id,
            "OOD" => Tag::Ood,
            other => return Err(parse_err(format!("bad tag '{other}'"))),
        };
        let truth = Role::parse(fields[6])
            .ok_or_else(|| parse_err(format!("bad truth tag '{}'", fields[6])))?;
        rows.push(PoolDumpRow {
            index: fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad index '{}'", fields[0])))?,
            score: num(fields[1], "score")?,
            tag,
            w_domain: num(fields[3], "w_d")?,
            w_class: num(fields[4], "w_c")?,
            w: num(fields[5], "w")?,
            truth,
        });
    }
    Ok(rows)
}
