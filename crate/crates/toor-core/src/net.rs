//! The three networks of the pipeline: feature extractor `F`, classifier
//! `C`, and discriminator `D`, plus checkpoint serialization.
//!
//! `F` is a small leaky-ReLU MLP with an additive-noise input layer (active
//! only for perturbed forwards). `C` is a single linear layer mapping the
//! feature to class logits. `D` is `GRL -> linear -> relu -> dropout ->
//! linear -> relu -> dropout -> linear -> sigmoid` and outputs the
//! probability that its input feature belongs to the in-distribution pool.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamHyper, AdamState, Layer, LayerStack, Linear, Mode, Tape, PROB_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input dimension `d`.
    pub input_dim: usize,
    /// Dimension of the extracted feature (input to both `C` and `D`).
    pub feature_dim: usize,
    /// Hidden widths of `F` before the feature layer.
    pub extractor_hidden: Vec<usize>,
    /// Number of known classes `c`.
    pub classes: usize,
    /// Hidden width of both discriminator hidden layers.
    pub disc_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Std of the additive input noise used by perturbed forwards.
    pub noise_sigma: f64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        NetworkConfig {
            input_dim,
            feature_dim: 16,
            extractor_hidden: vec![32],
            classes,
            disc_hidden: 64,
            dropout: 0.5,
            leaky_slope: 0.1,
            noise_sigma: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.feature_dim < 1 || self.disc_hidden < 1 {
            return Err(Error::Config("network dimensions must be >= 1".into()));
        }
        if self.extractor_hidden.iter().any(|&w| w < 1) {
            return Err(Error::Config("extractor hidden widths must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Parameters and optimizer state for the `F`/`C`/`D` triple.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub extractor: LayerStack,
    pub classifier: LayerStack,
    pub discriminator: LayerStack,
    pub opt_extractor: AdamState,
    pub opt_classifier: AdamState,
    pub opt_discriminator: AdamState,
}

impl ModelBundle {
    /// Build and initialize all three stacks. Each stack draws from its own
    /// rng so adding or removing one network does not shift the others'
    /// initialization.
    pub fn new(
        config: &NetworkConfig,
        lr: f64,
        disc_lr: f64,
        rng_f: &mut ChaCha8Rng,
        rng_c: &mut ChaCha8Rng,
        rng_d: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut f_layers = vec![Layer::GaussianNoise {
            sigma: config.noise_sigma,
        }];
        let mut in_dim = config.input_dim;
        for &width in &config.extractor_hidden {
            f_layers.push(Layer::Linear(Linear::glorot(in_dim, width, rng_f)));
            f_layers.push(Layer::LeakyRelu {
                slope: config.leaky_slope,
            });
            in_dim = width;
        }
        f_layers.push(Layer::Linear(Linear::glorot(in_dim, config.feature_dim, rng_f)));
        f_layers.push(Layer::LeakyRelu {
            slope: config.leaky_slope,
        });
        let extractor = LayerStack::new(f_layers);

        let classifier = LayerStack::new(vec![Layer::Linear(Linear::glorot(
            config.feature_dim,
            config.classes,
            rng_c,
        ))]);

        let discriminator = LayerStack::new(vec![
            Layer::GradReversal { coeff: 0.0 },
            Layer::Linear(Linear::glorot(config.feature_dim, config.disc_hidden, rng_d)),
            Layer::Relu,
            Layer::Dropout { p: config.dropout },
            Layer::Linear(Linear::glorot(config.disc_hidden, config.disc_hidden, rng_d)),
            Layer::Relu,
            Layer::Dropout { p: config.dropout },
            Layer::Linear(Linear::glorot(config.disc_hidden, 1, rng_d)),
            Layer::Sigmoid,
        ]);

        let opt_extractor = AdamState::new(&extractor, AdamHyper::with_lr(lr));
        let opt_classifier = AdamState::new(&classifier, AdamHyper::with_lr(lr));
        let opt_discriminator = AdamState::new(&discriminator, AdamHyper::with_lr(disc_lr));
        Ok(ModelBundle {
            extractor,
            classifier,
            discriminator,
            opt_extractor,
            opt_classifier,
            opt_discriminator,
        })
    }
}

/// Run `F`, producing the feature vector and the tape for backprop.
pub fn feature_extract(
    bundle: &ModelBundle,
    x: &[f64],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Tape)> {
    bundle.extractor.forward(x, mode, rng)
}

/// Eval-mode feature extraction; pure in (parameters, input).
pub fn feature_extract_eval(bundle: &ModelBundle, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
    bundle.extractor.forward_eval(x)
}

/// Run `C` on a feature, producing raw logits of length `classes`.
pub fn classify(bundle: &ModelBundle, feature: &[f64]) -> Result<(Vec<f64>, Tape)> {
    bundle.classifier.forward_eval(feature)
}

/// Run `D` on a feature with the given flip coefficient, producing a
/// probability in `[PROB_EPS, 1 - PROB_EPS]`. The forward value does not
/// depend on `flip_coeff`; only the backward pass does.
pub fn discriminate(
    bundle: &ModelBundle,
    feature: &[f64],
    flip_coeff: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Tape)> {
    let (out, tape) = bundle
        .discriminator
        .forward_with_flip(feature, mode, rng, flip_coeff)?;
    Ok((out[0].clamp(PROB_EPS, 1.0 - PROB_EPS), tape))
}

/// Eval-mode discriminator probability; pure in (parameters, input).
pub fn discriminate_eval(bundle: &ModelBundle, feature: &[f64]) -> Result<f64> {
    let (out, _) = bundle.discriminator.forward_eval(feature)?;
    Ok(out[0].clamp(PROB_EPS, 1.0 - PROB_EPS))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 9] = b"TOORCKPT1";

fn write_block(w: &mut impl Write, block: &[f64]) -> std::io::Result<()> {
    w.write_all(&(block.len() as u64).to_le_bytes())?;
    for v in block {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_block(r: &mut impl Read, expected_len: usize, what: &str) -> Result<Vec<f64>> {
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)
        .map_err(|e| Error::Config(format!("checkpoint truncated reading {what}: {e}")))?;
    let len = u64::from_le_bytes(len_buf) as usize;
    if len != expected_len {
        return Err(Error::Config(format!(
            "checkpoint {what} has length {len}, model expects {expected_len}"
        )));
    }
    let mut out = vec![0.0; len];
    let mut buf = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Config(format!("checkpoint truncated reading {what}: {e}")))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(out)
}

fn write_stack(w: &mut impl Write, stack: &LayerStack, opt: &AdamState) -> std::io::Result<()> {
    let blocks = stack.param_blocks();
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for b in blocks {
        write_block(w, b)?;
    }
    w.write_all(&opt.step.to_le_bytes())?;
    for b in &opt.m {
        write_block(w, b)?;
    }
    for b in &opt.v {
        write_block(w, b)?;
    }
    Ok(())
}

fn read_stack(
    r: &mut impl Read,
    stack: &mut LayerStack,
    opt: &mut AdamState,
    name: &str,
) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Config(format!("checkpoint truncated at {name}: {e}")))?;
    let n_blocks = u64::from_le_bytes(buf) as usize;
    let expected: Vec<usize> = stack.param_blocks().iter().map(|b| b.len()).collect();
    if n_blocks != expected.len() {
        return Err(Error::Config(format!(
            "checkpoint {name} has {n_blocks} parameter blocks, model expects {}",
            expected.len()
        )));
    }
    for (i, block) in stack.param_blocks_mut().into_iter().enumerate() {
        *block = read_block(r, expected[i], &format!("{name} params[{i}]"))?;
    }
    r.read_exact(&mut buf)
        .map_err(|e| Error::Config(format!("checkpoint truncated at {name} step: {e}")))?;
    opt.step = u64::from_le_bytes(buf);
    for (i, m) in opt.m.iter_mut().enumerate() {
        *m = read_block(r, expected[i], &format!("{name} m[{i}]"))?;
    }
    for (i, v) in opt.v.iter_mut().enumerate() {
        *v = read_block(r, expected[i], &format!("{name} v[{i}]"))?;
    }
    Ok(())
}

/// Write all parameter blocks, Adam state, and the iteration counter.
pub fn save_checkpoint(bundle: &ModelBundle, iteration: u64, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&iteration.to_le_bytes()).map_err(io_err)?;
    write_stack(&mut w, &bundle.extractor, &bundle.opt_extractor).map_err(io_err)?;
    write_stack(&mut w, &bundle.classifier, &bundle.opt_classifier).map_err(io_err)?;
    write_stack(&mut w, &bundle.discriminator, &bundle.opt_discriminator).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Load a checkpoint into an architecture-compatible bundle; returns the
/// stored iteration counter.
pub fn load_checkpoint(bundle: &mut ModelBundle, path: &Path) -> Result<u64> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Config(format!(
            "{} is not a TOORCKPT1 checkpoint",
            path.display()
        )));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let iteration = u64::from_le_bytes(buf);
    read_stack(&mut r, &mut bundle.extractor, &mut bundle.opt_extractor, "F")?;
    read_stack(&mut r, &mut bundle.classifier, &mut bundle.opt_classifier, "C")?;
    read_stack(
        &mut r,
        &mut bundle.discriminator,
        &mut bundle.opt_discriminator,
        "D",
    )?;
    Ok(iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn bundle(seed: u64) -> ModelBundle {
        let cfg = NetworkConfig::new(2, 6);
        ModelBundle::new(
            &cfg,
            3e-4,
            1e-3,
            &mut stream(seed, Stream::InitExtractor),
            &mut stream(seed, Stream::InitClassifier),
            &mut stream(seed, Stream::InitDiscriminator),
        )
        .unwrap()
    }

    #[test]
    fn feature_has_configured_dimension() {
        let b = bundle(1);
        let (feat, _) = feature_extract_eval(&b, &[0.5, -0.5]).unwrap();
        assert_eq!(feat.len(), 16);
    }

    #[test]
    fn eval_extraction_is_repeatable() {
        let b = bundle(1);
        let (f1, _) = feature_extract_eval(&b, &[1.0, 2.0]).unwrap();
        let (f2, _) = feature_extract_eval(&b, &[1.0, 2.0]).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn input_dim_mismatch_is_config_error() {
        let b = bundle(1);
        assert!(matches!(
            feature_extract_eval(&b, &[1.0, 2.0, 3.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn logits_have_class_count_length() {
        let b = bundle(2);
        let (feat, _) = feature_extract_eval(&b, &[0.1, 0.2]).unwrap();
        let (logits, _) = classify(&b, &feat).unwrap();
        assert_eq!(logits.len(), 6);
    }

    #[test]
    fn zero_weight_classifier_gives_zero_logits() {
        let mut b = bundle(2);
        for block in b.classifier.param_blocks_mut() {
            for w in block.iter_mut() {
                *w = 0.0;
            }
        }
        let (logits, _) = classify(&b, &vec![0.37; 16]).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn zero_weight_discriminator_outputs_half() {
        let mut b = bundle(3);
        for block in b.discriminator.param_blocks_mut() {
            for w in block.iter_mut() {
                *w = 0.0;
            }
        }
        let p = discriminate_eval(&b, &vec![1.0; 16]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn discriminator_forward_independent_of_flip() {
        let b = bundle(4);
        let feat: Vec<f64> = (0..16).map(|i| (i as f64) * 0.1 - 0.8).collect();
        let mut r0 = stream(0, Stream::Dropout);
        let mut r1 = stream(0, Stream::Dropout);
        let (p0, _) = discriminate(&b, &feat, 0.0, Mode::Eval, &mut r0).unwrap();
        let (p1, _) = discriminate(&b, &feat, 1.0, Mode::Eval, &mut r1).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn discriminator_output_clamped() {
        let b = bundle(5);
        let huge = vec![1e9; 16];
        let p = discriminate_eval(&b, &huge).unwrap();
        assert!(p >= PROB_EPS && p <= 1.0 - PROB_EPS);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut src = bundle(6);
        src.opt_extractor.step = 42;
        src.opt_extractor.m[0][0] = 0.123456789;
        save_checkpoint(&src, 777, &path).unwrap();

        let mut dst = bundle(7);
        let iter = load_checkpoint(&mut dst, &path).unwrap();
        assert_eq!(iter, 777);
        assert_eq!(src.extractor, dst.extractor);
        assert_eq!(src.classifier, dst.classifier);
        assert_eq!(src.discriminator, dst.discriminator);
        assert_eq!(src.opt_extractor, dst.opt_extractor);
        assert_eq!(src.opt_discriminator, dst.opt_discriminator);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT!plus some bytes").unwrap();
        let mut b = bundle(8);
        assert!(matches!(
            load_checkpoint(&mut b, &path),
            Err(Error::Config(_))
        ));
    }
}
