//! End-to-end training: supervised pretraining, then the iterated
//! detect/weigh/optimize loop, plus evaluation, reports, and checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{adversarial_batch_loss, ScheduleConfig};
use crate::autodiff::{softmax_cross_entropy, Mode, StackGrads};
use crate::data::{Role, Splits};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::precision_recall;
use crate::net::{
    classify, feature_extract, feature_extract_eval, save_checkpoint, ModelBundle, NetworkConfig,
};
use crate::rng::{stream, stream_at, Stream};
use crate::scoring::{refresh_pool, write_pool_dump, ScoringConfig, Tag, UnlabeledPoolState};
use crate::ssl::{ssl_loss_into, SslConfig, SslVariant};

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Detection + filtered SSL + weighted adversarial recycling.
    Toor,
    /// Labeled data only.
    Supervised,
    /// SSL consistency over the whole unlabeled pool, no detection.
    PiModel,
    /// Pseudo-labeling over the whole unlabeled pool, no detection.
    PseudoLabel,
    /// Detection + filtered SSL, recycling disabled (gamma forced to 0).
    ToorNoRecycle,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "toor" => Some(Method::Toor),
            "supervised" => Some(Method::Supervised),
            "pi-model" => Some(Method::PiModel),
            "pseudo-label" => Some(Method::PseudoLabel),
            "toor-no-recycle" => Some(Method::ToorNoRecycle),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Toor => "toor",
            Method::Supervised => "supervised",
            Method::PiModel => "pi-model",
            Method::PseudoLabel => "pseudo-label",
            Method::ToorNoRecycle => "toor-no-recycle",
        }
    }

    pub fn uses_detection(self) -> bool {
        matches!(self, Method::Toor | Method::ToorNoRecycle)
    }

    pub fn uses_ssl(self) -> bool {
        !matches!(self, Method::Supervised)
    }

    /// Whether the SSL term is restricted to detected-ID unlabeled examples.
    pub fn ssl_filtered(self) -> bool {
        self.uses_detection()
    }

    pub fn uses_adversarial(self) -> bool {
        matches!(self, Method::Toor)
    }

    fn forced_ssl_variant(self) -> Option<SslVariant> {
        match self {
            Method::PiModel => Some(SslVariant::PiModel),
            Method::PseudoLabel => Some(SslVariant::PseudoLabel { threshold: 0.95 }),
            _ => None,
        }
    }

    /// The SSL configuration this method actually trains with. Baseline
    /// methods pin their own variant; a mismatched configured variant is
    /// replaced together with its coefficient.
    pub fn effective_ssl(self, configured: SslConfig) -> SslConfig {
        match self.forced_ssl_variant() {
            None => configured,
            Some(v) if std::mem::discriminant(&v) == std::mem::discriminant(&configured.variant) => {
                configured
            }
            Some(v) => SslConfig {
                variant: v,
                coeff: v.default_coeff(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iter: u64,
    pub pretrain_iter: u64,
    pub batch_size: usize,
    /// Labeled share of each mini-batch.
    pub labeled_fraction: f64,
    /// Pool refresh cadence, in unlabeled-pool epochs.
    pub refresh_epochs: f64,
    pub report_interval: u64,
    pub lr: f64,
    pub disc_lr: f64,
    /// Learning-rate decay factor, applied from `lr_decay_frac * max_iter`.
    pub lr_decay_factor: f64,
    pub lr_decay_frac: f64,
    /// Ramp horizons as fractions of `max_iter`.
    pub lambda_frac: f64,
    pub gamma_frac: f64,
    pub flip_frac: f64,
    pub ssl: SslConfig,
    pub scoring: ScoringConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iter: 20_000,
            pretrain_iter: 200,
            batch_size: 100,
            labeled_fraction: 0.5,
            refresh_epochs: 1.0,
            report_interval: 500,
            lr: 3e-4,
            disc_lr: 1e-3,
            lr_decay_factor: 0.2,
            lr_decay_frac: 0.8,
            lambda_frac: 0.4,
            gamma_frac: 0.8,
            flip_frac: 0.8,
            ssl: SslConfig::default(),
            scoring: ScoringConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_iter > self.max_iter {
            return Err(Error::Config(format!(
                "pretrain_iter {} exceeds max_iter {}",
                self.pretrain_iter, self.max_iter
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::Config(format!(
                "labeled fraction must be in (0,1), got {}",
                self.labeled_fraction
            )));
        }
        // Fractions above 1 are allowed: a truncated run keeps the schedule
        // of a longer budget by scaling its horizons past max_iter.
        for (name, v) in [
            ("lambda_frac", self.lambda_frac),
            ("gamma_frac", self.gamma_frac),
            ("flip_frac", self.flip_frac),
            ("lr_decay_frac", self.lr_decay_frac),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.refresh_epochs <= 0.0 {
            return Err(Error::Config("refresh cadence must be positive".into()));
        }
        if self.report_interval == 0 {
            return Err(Error::Config("report interval must be positive".into()));
        }
        self.ssl.validate()?;
        self.scoring.validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> ScheduleConfig {
        let horizon = |frac: f64| ((frac * self.max_iter as f64).round() as u64).max(1);
        ScheduleConfig {
            pretrain_iter: self.pretrain_iter,
            lambda_horizon: horizon(self.lambda_frac),
            gamma_horizon: horizon(self.gamma_frac),
            flip_scale: horizon(self.flip_frac),
        }
    }

    fn labeled_batch(&self) -> usize {
        ((self.batch_size as f64 * self.labeled_fraction).round() as usize)
            .clamp(1, self.batch_size - 1)
    }

    fn unlabeled_batch(&self) -> usize {
        self.batch_size - self.labeled_batch()
    }

    fn lr_scale_at(&self, iter: u64) -> f64 {
        if (iter as f64) >= self.lr_decay_frac * self.max_iter as f64 {
            self.lr_decay_factor
        } else {
            1.0
        }
    }
}

/// One per-interval row of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub iteration: u64,
    pub supervised_loss: f64,
    pub ssl_loss: f64,
    pub adversarial_loss: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub n_id: Option<usize>,
    pub n_ood: Option<usize>,
    pub det_precision: Option<f64>,
    pub det_recall: Option<f64>,
    pub mean_w_near: Option<f64>,
    pub mean_w_far: Option<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub records: Vec<IntervalRecord>,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
}

/// Loss decomposition of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub supervised: f64,
    pub ssl: f64,
    pub adversarial: f64,
    /// `supervised + lambda * ssl + gamma * adversarial`.
    pub total: f64,
}

/// Epoch-based index sampler: shuffles, deals, reshuffles when exhausted.
struct Shuffler {
    indices: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Shuffler {
    fn new(n: usize, mut rng: rand_chacha::ChaCha8Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        Shuffler {
            indices,
            cursor: 0,
            rng,
        }
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.indices.len() {
                self.indices.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.indices[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Mean cross-entropy and gradients over one labeled mini-batch.
fn supervised_batch(
    bundle: &ModelBundle,
    items: &[(&[f64], usize)],
    iter: u64,
    master: u64,
) -> Result<(f64, StackGrads, StackGrads)> {
    let scale = 1.0 / items.len().max(1) as f64;
    exec::try_fold_chunks(
        items.len(),
        || {
            (
                0.0f64,
                StackGrads::zeros_of(&bundle.extractor),
                StackGrads::zeros_of(&bundle.classifier),
            )
        },
        |acc, slot| {
            let (x, label) = items[slot];
            let mut rng = stream_at(master, Stream::Dropout, iter, slot as u64);
            let (feature, tape_f) = feature_extract(bundle, x, Mode::Train, &mut rng)?;
            let (logits, tape_c) = classify(bundle, &feature)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
            let dfeature = bundle
                .classifier
                .backward_into(&tape_c, &dlogits, &mut acc.2, scale)?;
            bundle
                .extractor
                .backward_into(&tape_f, &dfeature, &mut acc.1, scale)?;
            acc.0 += loss * scale;
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1.add_scaled(&b.1, 1.0);
            a.2.add_scaled(&b.2, 1.0);
        },
    )
}

/// Mean SSL loss and gradients over the exploration set of one step.
fn ssl_batch(
    bundle: &ModelBundle,
    ssl_cfg: &SslConfig,
    items: &[&[f64]],
    iter: u64,
    master: u64,
) -> Result<(f64, StackGrads, StackGrads)> {
    let scale = 1.0 / items.len().max(1) as f64;
    exec::try_fold_chunks(
        items.len(),
        || {
            (
                0.0f64,
                StackGrads::zeros_of(&bundle.extractor),
                StackGrads::zeros_of(&bundle.classifier),
            )
        },
        |acc, slot| {
            let mut rng_a = stream_at(master, Stream::Noise, iter, 2 * slot as u64);
            let mut rng_b = stream_at(master, Stream::Noise, iter, 2 * slot as u64 + 1);
            let (loss, f_acc, c_acc) = (&mut acc.0, &mut acc.1, &mut acc.2);
            *loss += scale
                * ssl_loss_into(
                    bundle,
                    ssl_cfg,
                    items[slot],
                    &mut rng_a,
                    &mut rng_b,
                    f_acc,
                    c_acc,
                    scale,
                )?;
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1.add_scaled(&b.1, 1.0);
            a.2.add_scaled(&b.2, 1.0);
        },
    )
}

/// Predicted class per example: argmax logit, ties to the lowest index.
pub fn predict(bundle: &ModelBundle, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let preds = exec::map_indexed(inputs.len(), |i| -> Result<usize> {
        let (feature, _) = feature_extract_eval(bundle, &inputs[i])?;
        let (logits, _) = classify(bundle, &feature)?;
        let mut best = 0;
        for (j, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = j;
            }
        }
        Ok(best)
    });
    preds.into_iter().collect()
}

/// Fraction of argmax-correct predictions, eval mode.
pub fn evaluate(bundle: &ModelBundle, test: &[(Vec<f64>, usize)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("empty test set".into()));
    }
    let inputs: Vec<Vec<f64>> = test.iter().map(|(x, _)| x.clone()).collect();
    let preds = predict(bundle, &inputs)?;
    let correct = preds
        .iter()
        .zip(test)
        .filter(|(p, (_, y))| *p == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Supervised-only training of `F` and `C`; `D` is untouched.
pub fn pretrain(
    bundle: &mut ModelBundle,
    labeled: &[(Vec<f64>, usize)],
    iters: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if labeled.is_empty() {
        return Err(Error::Config("pretraining needs a nonempty labeled set".into()));
    }
    let mut shuffler = Shuffler::new(labeled.len(), stream(cfg.seed, Stream::ShuffleLabeled));
    let nl = cfg.labeled_batch();
    for iter in 0..iters {
        let idx = shuffler.next_batch(nl.min(labeled.len()));
        let batch: Vec<(&[f64], usize)> = idx
            .iter()
            .map(|&i| (labeled[i].0.as_slice(), labeled[i].1))
            .collect();
        let (_, f_grads, c_grads) = supervised_batch(bundle, &batch, iter, cfg.seed)?;
        let lr_scale = cfg.lr_scale_at(iter);
        bundle.opt_extractor.apply(&mut bundle.extractor, &f_grads, lr_scale)?;
        bundle.opt_classifier.apply(&mut bundle.classifier, &c_grads, lr_scale)?;
    }
    Ok(())
}

fn check_finite(term: &str, value: f64, iter: u64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Diagnostic(format!(
            "{term} loss became non-finite ({value}) at iteration {iter}"
        )));
    }
    Ok(())
}

/// Run one full training. When `out_dir` is given, writes `report.json`,
/// `metrics.csv`, `model.ckpt`, and (for detection methods) `pool.csv`.
pub fn run(
    method: Method,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    splits: &Splits,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    net.validate()?;
    if net.input_dim != splits.dim {
        return Err(Error::Config(format!(
            "network input dim {} does not match data dim {}",
            net.input_dim, splits.dim
        )));
    }
    if net.classes != splits.classes {
        return Err(Error::Config(format!(
            "network has {} classes, data has {}",
            net.classes, splits.classes
        )));
    }
    if splits.labeled.is_empty() {
        return Err(Error::Config("labeled set is empty".into()));
    }
    if splits.test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }

    let master = cfg.seed;
    let mut bundle = ModelBundle::new(
        net,
        cfg.lr,
        cfg.disc_lr,
        &mut stream(master, Stream::InitExtractor),
        &mut stream(master, Stream::InitClassifier),
        &mut stream(master, Stream::InitDiscriminator),
    )?;

    let ssl_cfg = method.effective_ssl(cfg.ssl);
    let schedule = cfg.schedule();
    let nl = cfg.labeled_batch().min(splits.labeled.len());
    let nu = cfg.unlabeled_batch();
    let needs_unlabeled =
        method.uses_ssl() && !splits.unlabeled.is_empty() && method != Method::Supervised;

    let mut labeled_shuffler =
        Shuffler::new(splits.labeled.len(), stream(master, Stream::ShuffleLabeled));
    let mut unlabeled_shuffler = if needs_unlabeled {
        Some(Shuffler::new(
            splits.unlabeled.len(),
            stream(master, Stream::ShuffleUnlabeled),
        ))
    } else {
        None
    };

    let mut pool = UnlabeledPoolState::new(splits.unlabeled.len());
    let mut pool_fresh = false;
    let steps_per_epoch = if nu > 0 && !splits.unlabeled.is_empty() {
        (splits.unlabeled.len() + nu - 1) / nu
    } else {
        1
    };
    let refresh_every =
        ((cfg.refresh_epochs * steps_per_epoch as f64).round() as u64).max(1);

    let mut records: Vec<IntervalRecord> = Vec::new();
    let mut acc_ce = 0.0;
    let mut acc_ssl = 0.0;
    let mut acc_adv = 0.0;
    let mut acc_count = 0u64;

    for iter in 0..cfg.max_iter {
        let sched = schedule.at(iter);
        let pretraining = iter < cfg.pretrain_iter;

        // Detection before the step, on cadence (Algorithm-1 ordering:
        // first refresh right after pretraining finishes).
        if method.uses_detection()
            && !pretraining
            && !splits.unlabeled.is_empty()
            && (iter - cfg.pretrain_iter) % refresh_every == 0
        {
            refresh_pool(&mut pool, &bundle, &cfg.scoring, &splits.unlabeled)?;
            pool_fresh = true;
        }

        // Supervised fidelity term.
        let labeled_idx = labeled_shuffler.next_batch(nl);
        let labeled_batch: Vec<(&[f64], usize)> = labeled_idx
            .iter()
            .map(|&i| (splits.labeled[i].0.as_slice(), splits.labeled[i].1))
            .collect();
        let (ce_loss, mut f_grads, mut c_grads) =
            supervised_batch(&bundle, &labeled_batch, iter, master)?;
        check_finite("supervised", ce_loss, iter)?;

        let mut ssl_value = 0.0;
        let mut adv_value = 0.0;
        let mut step_gamma = 0.0;

        if !pretraining {
            // ID data exploration term.
            if method.uses_ssl() {
                let unlabeled_idx = unlabeled_shuffler
                    .as_mut()
                    .map(|s| s.next_batch(nu.min(splits.unlabeled.len())))
                    .unwrap_or_default();
                let mut ssl_items: Vec<&[f64]> = labeled_batch.iter().map(|(x, _)| *x).collect();
                for &i in &unlabeled_idx {
                    let include = if method.ssl_filtered() {
                        pool_fresh && pool.records[i].tag == Tag::Id
                    } else {
                        true
                    };
                    if include {
                        ssl_items.push(splits.unlabeled[i].as_slice());
                    }
                }
                let (l, sf, sc) = ssl_batch(&bundle, &ssl_cfg, &ssl_items, iter, master)?;
                check_finite("ssl", l, iter)?;
                ssl_value = l;
                f_grads.add_scaled(&sf, sched.lambda);
                c_grads.add_scaled(&sc, sched.lambda);
            }

            // OOD data recycling term.
            if method.uses_adversarial() && pool_fresh {
                step_gamma = sched.gamma;
                let ood_pool = pool.indices_tagged(Tag::Ood);
                let id_pool = pool.indices_tagged(Tag::Id);
                let half = (cfg.batch_size / 2).max(1);
                let mut rng = stream_at(master, Stream::AdversarialSample, iter, 0);
                let ood_batch: Vec<(&[f64], f64)> = sample_with_replacement(
                    &ood_pool,
                    if ood_pool.is_empty() { 0 } else { half },
                    &mut rng,
                )
                .into_iter()
                .map(|i| (splits.unlabeled[i].as_slice(), pool.records[i].w))
                .collect();
                // The ID side draws from detected-ID unlabeled data plus the
                // labeled set.
                let id_universe = id_pool.len() + splits.labeled.len();
                let id_slots: Vec<usize> = sample_with_replacement(
                    &(0..id_universe).collect::<Vec<_>>(),
                    half,
                    &mut rng,
                );
                let id_batch: Vec<&[f64]> = id_slots
                    .into_iter()
                    .map(|s| {
                        if s < id_pool.len() {
                            splits.unlabeled[id_pool[s]].as_slice()
                        } else {
                            splits.labeled[s - id_pool.len()].0.as_slice()
                        }
                    })
                    .collect();
                let (l, d_adv, f_adv) = adversarial_batch_loss(
                    &bundle,
                    &ood_batch,
                    &id_batch,
                    sched.kappa,
                    |slot| stream_at(master, Stream::Dropout, iter, 1000 + slot as u64),
                )?;
                check_finite("adversarial", l, iter)?;
                adv_value = l;
                f_grads.add_scaled(&f_adv, sched.gamma);
                let mut d_grads = d_adv;
                d_grads.scale(sched.gamma);
                let lr_scale = cfg.lr_scale_at(iter);
                bundle
                    .opt_discriminator
                    .apply(&mut bundle.discriminator, &d_grads, lr_scale)?;
            }
        }

        let lr_scale = cfg.lr_scale_at(iter);
        bundle.opt_extractor.apply(&mut bundle.extractor, &f_grads, lr_scale)?;
        bundle.opt_classifier.apply(&mut bundle.classifier, &c_grads, lr_scale)?;

        acc_ce += ce_loss;
        acc_ssl += ssl_value;
        acc_adv += adv_value;
        acc_count += 1;
        let _ = StepMetrics {
            supervised: ce_loss,
            ssl: ssl_value,
            adversarial: adv_value,
            total: ce_loss + sched.lambda * ssl_value + step_gamma * adv_value,
        };

        let done = iter + 1 == cfg.max_iter;
        if (iter + 1) % cfg.report_interval == 0 || done {
            let record = make_record(
                iter + 1,
                &schedule.at(iter + 1),
                acc_ce / acc_count as f64,
                acc_ssl / acc_count as f64,
                acc_adv / acc_count as f64,
                pool_fresh.then_some(&pool),
                &splits.unlabeled_truth,
                evaluate(&bundle, &splits.test)?,
            );
            records.push(record);
            acc_ce = 0.0;
            acc_ssl = 0.0;
            acc_adv = 0.0;
            acc_count = 0;
        }
    }

    if records.last().map(|r| r.iteration) != Some(cfg.max_iter) {
        // Degenerate loop (max_iter == 0): still evaluate once.
        records.push(make_record(
            cfg.max_iter,
            &schedule.at(cfg.max_iter),
            0.0,
            0.0,
            0.0,
            pool_fresh.then_some(&pool),
            &splits.unlabeled_truth,
            evaluate(&bundle, &splits.test)?,
        ));
    }

    let final_accuracy = records.last().map(|r| r.test_accuracy).unwrap_or(0.0);
    let best_accuracy = records
        .iter()
        .map(|r| r.test_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = TrainReport {
        method: method.as_str().to_string(),
        seed: cfg.seed,
        records,
        best_accuracy,
        final_accuracy,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_report_json(&report, &dir.join("report.json"))?;
        write_metrics_csv(&report.records, &dir.join("metrics.csv"))?;
        save_checkpoint(&bundle, cfg.max_iter, &dir.join("model.ckpt"))?;
        if method.uses_detection() && pool_fresh {
            write_pool_dump(&pool, &splits.unlabeled_truth, &dir.join("pool.csv"))?;
        }
    }
    Ok(report)
}

fn sample_with_replacement(
    pool: &[usize],
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    use rand::Rng;
    if pool.is_empty() {
        return Vec::new();
    }
    (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    iteration: u64,
    sched: &crate::adversarial::ScheduleState,
    supervised_loss: f64,
    ssl_loss: f64,
    adversarial_loss: f64,
    pool: Option<&UnlabeledPoolState>,
    truths: &[Role],
    test_accuracy: f64,
) -> IntervalRecord {
    let detection = pool.map(|pool| {
        let predicted: Vec<bool> = pool.records.iter().map(|r| r.tag == Tag::Id).collect();
        let truth_id: Vec<bool> = truths.iter().map(|r| !r.is_ood()).collect();
        let (precision, recall) = precision_recall(&predicted, &truth_id);
        let mean_w = |role: Role| {
            let ws: Vec<f64> = pool
                .records
                .iter()
                .zip(truths)
                .filter(|(_, t)| **t == role)
                .map(|(r, _)| r.w)
                .collect();
            if ws.is_empty() {
                None
            } else {
                Some(ws.iter().sum::<f64>() / ws.len() as f64)
            }
        };
        (
            pool.indices_tagged(Tag::Id).len(),
            pool.indices_tagged(Tag::Ood).len(),
            precision,
            recall,
            mean_w(Role::NearOod),
            mean_w(Role::FarOod),
        )
    });
    IntervalRecord {
        iteration,
        supervised_loss,
        ssl_loss,
        adversarial_loss,
        lambda: sched.lambda,
        gamma: sched.gamma,
        kappa: sched.kappa,
        n_id: detection.map(|d| d.0),
        n_ood: detection.map(|d| d.1),
        det_precision: detection.map(|d| d.2),
        det_recall: detection.map(|d| d.3),
        mean_w_near: detection.and_then(|d| d.4),
        mean_w_far: detection.and_then(|d| d.5),
        test_accuracy,
    }
}

pub const METRICS_CSV_HEADER: &str = "iteration,supervised_loss,ssl_loss,adversarial_loss,\
lambda,gamma,kappa,n_id,n_ood,det_precision,det_recall,mean_w_near,mean_w_far,test_accuracy";

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Write the per-interval records as CSV, one row per record.
pub fn write_metrics_csv(records: &[IntervalRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "{METRICS_CSV_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.supervised_loss,
            r.ssl_loss,
            r.adversarial_loss,
            r.lambda,
            r.gamma,
            r.kappa,
            opt_str(&r.n_id),
            opt_str(&r.n_ood),
            opt_str(&r.det_precision),
            opt_str(&r.det_recall),
            opt_str(&r.mean_w_near),
            opt_str(&r.mean_w_far),
            r.test_accuracy
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn write_report_json(report: &TrainReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|e| Error::Config(format!("failed to serialize report: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_mismatch_split, generate_mixture, Component, MixtureSpec, SplitSpec};

    fn two_blob_splits(seed: u64) -> Splits {
        let spec = MixtureSpec {
            dim: 2,
            components: vec![
                Component {
                    mean: vec![-2.0, 0.0],
                    std: 0.5,
                    role: Role::Id,
                    count: 260,
                    label: Some(0),
                },
                Component {
                    mean: vec![2.0, 0.0],
                    std: 0.5,
                    role: Role::Id,
                    count: 260,
                    label: Some(1),
                },
                Component {
                    mean: vec![0.0, 6.0],
                    std: 0.5,
                    role: Role::FarOod,
                    count: 120,
                    label: None,
                },
            ],
            seed,
        };
        let data = generate_mixture(&spec).unwrap();
        build_mismatch_split(
            &data,
            &SplitSpec {
                labeled_per_class: 100,
                unlabeled_size: 200,
                zeta: 0.5,
                near_fraction: 0.0,
                test_per_class: 50,
                seed,
            },
        )
        .unwrap()
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            max_iter: 300,
            pretrain_iter: 50,
            batch_size: 20,
            report_interval: 100,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pretrain_zero_iterations_is_identity() {
        let splits = two_blob_splits(1);
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(1);
        let mut bundle = ModelBundle::new(
            &net,
            cfg.lr,
            cfg.disc_lr,
            &mut stream(1, Stream::InitExtractor),
            &mut stream(1, Stream::InitClassifier),
            &mut stream(1, Stream::InitDiscriminator),
        )
        .unwrap();
        let before = bundle.clone();
        pretrain(&mut bundle, &splits.labeled, 0, &cfg).unwrap();
        assert_eq!(before.extractor, bundle.extractor);
        assert_eq!(before.classifier, bundle.classifier);
    }

    #[test]
    fn pretrain_separates_linearly_separable_data() {
        // Brute-force check that the data is separable by a coordinate
        // threshold before asking the network to learn it.
        let splits = two_blob_splits(2);
        assert!(splits
            .labeled
            .iter()
            .all(|(x, y)| (x[0] > 0.0) == (*y == 1)));

        let net = NetworkConfig::new(2, 2);
        let mut cfg = small_cfg(2);
        cfg.lr = 3e-3;
        let mut bundle = ModelBundle::new(
            &net,
            cfg.lr,
            cfg.disc_lr,
            &mut stream(2, Stream::InitExtractor),
            &mut stream(2, Stream::InitClassifier),
            &mut stream(2, Stream::InitDiscriminator),
        )
        .unwrap();
        pretrain(&mut bundle, &splits.labeled, 2000, &cfg).unwrap();
        let acc = evaluate(
            &bundle,
            &splits
                .labeled
                .iter()
                .map(|(x, y)| (x.clone(), *y))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(acc > 0.99, "training accuracy {acc}");
    }

    #[test]
    fn pretrain_is_deterministic() {
        let splits = two_blob_splits(3);
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(3);
        let run_once = || {
            let mut bundle = ModelBundle::new(
                &net,
                cfg.lr,
                cfg.disc_lr,
                &mut stream(3, Stream::InitExtractor),
                &mut stream(3, Stream::InitClassifier),
                &mut stream(3, Stream::InitDiscriminator),
            )
            .unwrap();
            pretrain(&mut bundle, &splits.labeled, 100, &cfg).unwrap();
            bundle
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a.extractor, b.extractor);
        assert_eq!(a.classifier, b.classifier);
    }

    #[test]
    fn empty_labeled_set_is_config_error() {
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(0);
        let mut bundle = ModelBundle::new(
            &net,
            cfg.lr,
            cfg.disc_lr,
            &mut stream(0, Stream::InitExtractor),
            &mut stream(0, Stream::InitClassifier),
            &mut stream(0, Stream::InitDiscriminator),
        )
        .unwrap();
        assert!(matches!(
            pretrain(&mut bundle, &[], 10, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn evaluate_rejects_empty_test_set() {
        let net = NetworkConfig::new(2, 2);
        let bundle = ModelBundle::new(
            &net,
             3e-4,
            1e-3,
            &mut stream(0, Stream::InitExtractor),
            &mut stream(0, Stream::InitClassifier),
            &mut stream(0, Stream::InitDiscriminator),
        )
        .unwrap();
        assert!(evaluate(&bundle, &[]).is_err());
    }

    #[test]
    fn zero_weight_classifier_hits_one_class_rate() {
        let splits = two_blob_splits(4);
        let net = NetworkConfig::new(2, 2);
        let mut bundle = ModelBundle::new(
            &net,
            3e-4,
            1e-3,
            &mut stream(4, Stream::InitExtractor),
            &mut stream(4, Stream::InitClassifier),
            &mut stream(4, Stream::InitDiscriminator),
        )
        .unwrap();
        for block in bundle.classifier.param_blocks_mut() {
            for w in block.iter_mut() {
                *w = 0.0;
            }
        }
        // Balanced two-class test set, constant predictor: exactly 0.5.
        let acc = evaluate(&bundle, &splits.test).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn run_is_deterministic_and_reports_are_consistent() {
        let splits = two_blob_splits(5);
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(5);
        let a = run(Method::Toor, &net, &cfg, &splits, None).unwrap();
        let b = run(Method::Toor, &net, &cfg, &splits, None).unwrap();
        assert_eq!(a, b);
        assert!(!a.records.is_empty());
        let mut prev = 0;
        for r in &a.records {
            assert!(r.iteration > prev || prev == 0);
            assert!(r.supervised_loss.is_finite());
            assert!(r.ssl_loss.is_finite());
            assert!(r.adversarial_loss.is_finite());
            prev = r.iteration;
        }
        assert_eq!(a.records.last().unwrap().iteration, cfg.max_iter);
    }

    #[test]
    fn degenerate_run_reports_pretraining_only() {
        let splits = two_blob_splits(6);
        let net = NetworkConfig::new(2, 2);
        let mut cfg = small_cfg(6);
        cfg.max_iter = cfg.pretrain_iter;
        let report = run(Method::Toor, &net, &cfg, &splits, None).unwrap();
        // No main-loop records carry detection state.
        assert!(report.records.iter().all(|r| r.n_id.is_none()));
        assert!(report.final_accuracy >= 0.0);
    }

    #[test]
    fn supervised_ignores_unlabeled_permutation_and_zeta() {
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(7);
        let mut splits = two_blob_splits(7);
        let a = run(Method::Supervised, &net, &cfg, &splits, None).unwrap();
        // Permute the unlabeled pool; the supervised trajectory must not move.
        splits.unlabeled.reverse();
        splits.unlabeled_truth.reverse();
        let b = run(Method::Supervised, &net, &cfg, &splits, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toor_with_zeroed_gates_matches_supervised_trajectory() {
        let splits = two_blob_splits(8);
        let net = NetworkConfig::new(2, 2);
        let mut cfg = small_cfg(8);
        cfg.ssl.coeff = 0.0;
        let gated = run(Method::ToorNoRecycle, &net, &cfg, &splits, None).unwrap();
        let supervised = run(Method::Supervised, &net, &cfg, &splits, None).unwrap();
        let accs_a: Vec<f64> = gated.records.iter().map(|r| r.test_accuracy).collect();
        let accs_b: Vec<f64> = supervised.records.iter().map(|r| r.test_accuracy).collect();
        assert_eq!(accs_a, accs_b);
    }

    #[test]
    fn run_writes_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let splits = two_blob_splits(9);
        let net = NetworkConfig::new(2, 2);
        let cfg = small_cfg(9);
        run(Method::Toor, &net, &cfg, &splits, Some(dir.path())).unwrap();
        for name in ["report.json", "metrics.csv", "model.ckpt", "pool.csv"] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
    }
}
