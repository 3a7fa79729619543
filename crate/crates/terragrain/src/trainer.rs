//! InfoNCE training of the projection head.
//!
//! Each step samples one query anchor from a random eligible frame, composes
//! a fresh neighborhood crop for the query, one positive and up to `negatives`
//! negative crops, augments them, featurizes, and takes an SGD-with-momentum
//! step on the temperature-scaled contrastive loss
//!
//! ```text
//! L = -log( exp(q.p / t) / (exp(q.p / t) + sum_i exp(q.n_i / t)) )
//! ```
//!
//! There is no memory bank: features live only for the duration of a step.
//! Training is single-threaded and fully determined by the seed.

use crate::dataset::{AnchorPatch, Dataset};
use crate::embed::EmbedSpec;
use crate::encoder::{
    backward, dot, forward_cached, init_params, Embedding, EncoderParams, ParamGrads,
};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, featurize_foreground, FULL_DIM, HALF_DIM};
use crate::image::{read_ppm, RasterImage};
use crate::rng::Rng64;
use crate::sampling::{augment, compose_sample, neighborhood_clip, split_by_label, AugmentParams};

/// Hyper-parameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Softmax temperature; must be positive.
    pub temperature: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Cap on negatives per step; the effective count is
    /// `min(negatives, available)`.
    pub negatives: usize,
    pub fg_size: u32,
    pub bg_size: u32,
    pub seed: u64,
    pub augmentation: bool,
    pub background: bool,
    pub hidden_size: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.1,
            steps: 3000,
            learning_rate: 0.05,
            momentum: 0.9,
            negatives: 10,
            fg_size: 64,
            bg_size: 320,
            seed: 1,
            augmentation: true,
            background: true,
            hidden_size: 64,
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::numeric("temperature must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::numeric("steps must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(Error::numeric("negatives must be at least 1"));
        }
        if self.bg_size < self.fg_size {
            return Err(Error::data("bg_size must be at least fg_size"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        if self.background {
            FULL_DIM
        } else {
            HALF_DIM
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        vec![self.feature_dim(), self.hidden_size, self.embed_dim]
    }

    pub fn embed_spec(&self) -> EmbedSpec {
        EmbedSpec {
            fg_size: self.fg_size,
            bg_size: self.bg_size,
            background: self.background,
        }
    }
}

/// Per-step losses plus the trailing moving average (window 100).
#[derive(Debug, Clone)]
pub struct LossReport {
    pub losses: Vec<f64>,
    pub final_moving_average: f64,
}

impl LossReport {
    pub fn moving_average(losses: &[f64], window: usize) -> f64 {
        let tail = &losses[losses.len().saturating_sub(window)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// One frame preloaded for training: image plus its anchors.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub frame_id: u32,
    pub image: RasterImage,
    pub anchors: Vec<AnchorPatch>,
}

/// Training frames with at least two distinct anchor labels, preloaded.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub frames: Vec<TrainFrame>,
    /// Training frames dropped for lacking label diversity or anchors.
    pub skipped_frames: usize,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset) -> Result<TrainingSet> {
        let mut frames = Vec::new();
        let mut skipped = 0usize;
        let mut ids = dataset.manifest.training_frame_ids.clone();
        ids.sort_unstable();
        for frame_id in ids {
            let record = dataset
                .manifest
                .frame(frame_id)
                .ok_or_else(|| Error::data(format!("training frame {frame_id} not found")))?;
            let anchors = match dataset.anchors.get(&frame_id) {
                Some(a) if !a.is_empty() => a.clone(),
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            let mut labels: Vec<u32> = anchors.iter().map(|a| a.label_id).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.len() < 2 {
                skipped += 1;
                continue;
            }
            let image = read_ppm(dataset.manifest.image_path(record))?;
            frames.push(TrainFrame {
                frame_id,
                image,
                anchors,
            });
        }
        Ok(TrainingSet {
            frames,
            skipped_frames: skipped,
        })
    }
}

/// Gradients of the InfoNCE loss with respect to each embedding.
#[derive(Debug, Clone)]
pub struct InfoNceGrads {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Temperature-scaled contrastive loss over one (query, positive, negatives)
/// triple-set, with analytic gradients for every embedding.
pub fn info_nce_loss(
    query: &Embedding,
    positive: &Embedding,
    negatives: &[Embedding],
    temperature: f64,
) -> Result<(f64, InfoNceGrads)> {
    if temperature <= 0.0 {
        return Err(Error::numeric("temperature must be positive"));
    }
    if negatives.is_empty() {
        return Err(Error::numeric("InfoNCE needs at least one negative"));
    }
    let dim = query.dim();
    let pos_logit = dot(&query.0, &positive.0) / temperature;
    let neg_logits: Vec<f64> = negatives
        .iter()
        .map(|n| dot(&query.0, &n.0) / temperature)
        .collect();

    // Stable softmax over [positive, negatives...].
    let max_logit = neg_logits.iter().fold(pos_logit, |m, &l| m.max(l));
    let exp_pos = (pos_logit - max_logit).exp();
    let exp_negs: Vec<f64> = neg_logits.iter().map(|l| (l - max_logit).exp()).collect();
    let denom = exp_pos + exp_negs.iter().sum::<f64>();
    let loss = -(exp_pos / denom).ln();

    let p_pos = exp_pos / denom;
    let p_negs: Vec<f64> = exp_negs.iter().map(|e| e / denom).collect();

    // dL/d(pos_logit) = p_pos - 1, dL/d(neg_logit_i) = p_i.
    let mut grad_query = vec![0.0; dim];
    for (gq, zp) in grad_query.iter_mut().zip(&positive.0) {
        *gq += (p_pos - 1.0) / temperature * zp;
    }
    for (pi, neg) in p_negs.iter().zip(negatives) {
        for (gq, zn) in grad_query.iter_mut().zip(&neg.0) {
            *gq += pi / temperature * zn;
        }
    }
    let grad_positive: Vec<f64> = query
        .0
        .iter()
        .map(|zq| (p_pos - 1.0) / temperature * zq)
        .collect();
    let grad_negatives: Vec<Vec<f64>> = p_negs
        .iter()
        .map(|pi| query.0.iter().map(|zq| pi / temperature * zq).collect())
        .collect();

    Ok((
        loss,
        InfoNceGrads {
            query: grad_query,
            positive: grad_positive,
            negatives: grad_negatives,
        },
    ))
}

fn sample_features(
    frame: &TrainFrame,
    config: &TrainConfig,
    rng: &mut Rng64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let query_idx = rng.below(frame.anchors.len() as u64) as usize;
    let (positives, negatives) = split_by_label(&frame.anchors, query_idx)?;
    let pos_idx = positives[rng.below(positives.len() as u64) as usize];
    let n = config.negatives.min(negatives.len());
    let neg_picks = rng.choose_indices(negatives.len(), n);

    let (w, h) = (frame.image.width, frame.image.height);
    let aug_params = AugmentParams::default();
    let mut crop_features = |anchor: &AnchorPatch, rng: &mut Rng64| -> Result<Vec<f64>> {
        let center = neighborhood_clip(anchor, w, h, rng);
        let crop = compose_sample(&frame.image, center, config.fg_size, config.bg_size)?;
        let crop = if config.augmentation {
            augment(&crop, rng, &aug_params)
        } else {
            crop
        };
        Ok(if config.background {
            featurize(&crop)
        } else {
            featurize_foreground(&crop)
        })
    };

    let query = crop_features(&frame.anchors[query_idx], rng)?;
    let positive = crop_features(&frame.anchors[pos_idx], rng)?;
    let mut negs = Vec::with_capacity(n);
    for pick in neg_picks {
        negs.push(crop_features(&frame.anchors[negatives[pick]], rng)?);
    }
    Ok((query, positive, negs))
}

/// One optimization step; returns the loss at this step.
pub fn train_step(
    params: &mut EncoderParams,
    velocity: &mut ParamGrads,
    set: &TrainingSet,
    config: &TrainConfig,
    rng: &mut Rng64,
) -> Result<f64> {
    if set.frames.is_empty() {
        return Err(Error::data(
            "no eligible training frame (need >= 2 distinct anchor labels)",
        ));
    }
    let frame = &set.frames[rng.below(set.frames.len() as u64) as usize];
    let (query_x, pos_x, neg_xs) = sample_features(frame, config, rng)?;

    let query_cache = forward_cached(params, &query_x)?;
    let pos_cache = forward_cached(params, &pos_x)?;
    let neg_caches: Vec<_> = neg_xs
        .iter()
        .map(|x| forward_cached(params, x))
        .collect::<Result<_>>()?;
    let neg_embeddings: Vec<Embedding> = neg_caches
        .iter()
        .map(|c| c.embedding.clone())
        .collect();

    let (loss, grads) = info_nce_loss(
        &query_cache.embedding,
        &pos_cache.embedding,
        &neg_embeddings,
        config.temperature,
    )?;

    let mut total = backward(params, &query_cache, &grads.query)?;
    total.add_assign(&backward(params, &pos_cache, &grads.positive)?);
    for (cache, g) in neg_caches.iter().zip(&grads.negatives) {
        total.add_assign(&backward(params, cache, g)?);
    }

    // v <- momentum * v + g;  theta <- theta - lr * v
    for (layer, (v, g)) in params
        .layers
        .iter_mut()
        .zip(velocity.layers.iter_mut().zip(&total.layers))
    {
        for ((w, vw), gw) in layer.weight.iter_mut().zip(v.weight.iter_mut()).zip(&g.weight) {
            *vw = config.momentum * *vw + gw;
            *w -= config.learning_rate * *vw;
        }
        for ((b, vb), gb) in layer.bias.iter_mut().zip(v.bias.iter_mut()).zip(&g.bias) {
            *vb = config.momentum * *vb + gb;
            *b -= config.learning_rate * *vb;
        }
    }
    Ok(loss)
}

/// Run `config.steps` steps from a fresh seeded initialization.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<(EncoderParams, LossReport)> {
    config.validate()?;
    let mut params = init_params(config.seed, &config.layer_sizes())?;
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut rng = Rng64::derive(config.seed, 1);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let loss = train_step(&mut params, &mut velocity, set, config, &mut rng)?;
        losses.push(loss);
    }
    let final_moving_average = LossReport::moving_average(&losses, 100);
    Ok((params, LossReport {
        losses,
        final_moving_average,
    }))
}

/// Write the loss curve as `step,loss` CSV (steps are 1-based).
pub fn write_loss_csv(report: &LossReport, path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut out = String::from("step,loss\n");
    for (i, loss) in report.losses.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, loss).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RasterImage;

    fn unit(v: Vec<f64>) -> Embedding {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Embedding(v.into_iter().map(|x| x / n).collect())
    }

    #[test]
    fn equal_logits_give_log_n_plus_one() {
        // All dot products equal with 5 negatives: L = log 6.
        let q = unit(vec![1.0, 0.0]);
        let p = unit(vec![0.0, 1.0]);
        let negs = vec![unit(vec![0.0, 1.0]); 5];
        let (loss, _) = info_nce_loss(&q, &p, &negs, 1.0).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn hand_evaluated_single_negative() {
        // t = 1, q.p = 1, q.n = -1: L = log(1 + e^{-2}).
        let q = Embedding(vec![1.0, 0.0]);
        let p = Embedding(vec![1.0, 0.0]);
        let negs = vec![Embedding(vec![-1.0, 0.0])];
        let (loss, _) = info_nce_loss(&q, &p, &negs, 1.0).unwrap();
        let expected = (-2.0f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn separated_limit_vanishes() {
        // Sharp temperature with a fully separated pair: loss below 1e-9.
        let q = Embedding(vec![1.0, 0.0]);
        let p = Embedding(vec![1.0, 0.0]);
        let negs = vec![Embedding(vec![-1.0, 0.0]); 4];
        let (loss, _) = info_nce_loss(&q, &p, &negs, 0.05).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
        assert!(loss >= 0.0);
    }

    #[test]
    fn rejects_empty_negatives_and_bad_temperature() {
        let q = Embedding(vec![1.0, 0.0]);
        assert!(info_nce_loss(&q, &q, &[], 1.0).is_err());
        assert!(info_nce_loss(&q, &q, &[q.clone()], 0.0).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // Perturb raw embedding coordinates; the loss is smooth in them.
        let mut rng = Rng64::new(17);
        for _ in 0..10 {
            let dim = 6;
            let q = unit((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let p = unit((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let negs: Vec<Embedding> = (0..3)
                .map(|_| unit((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()))
                .collect();
            let tau = 0.5;
            let (_, grads) = info_nce_loss(&q, &p, &negs, tau).unwrap();
            let h = 1e-6;
            let loss_at = |q: &Embedding, p: &Embedding, negs: &[Embedding]| {
                info_nce_loss(q, p, negs, tau).unwrap().0
            };
            for d in 0..dim {
                let mut qp = q.clone();
                qp.0[d] += h;
                let mut qm = q.clone();
                qm.0[d] -= h;
                let fd = (loss_at(&qp, &p, &negs) - loss_at(&qm, &p, &negs)) / (2.0 * h);
                let denom = fd.abs().max(grads.query[d].abs()).max(1e-8);
                assert!((fd - grads.query[d]).abs() / denom < 1e-4);
            }
            for d in 0..dim {
                let mut pp = p.clone();
                pp.0[d] += h;
                let mut pm = p.clone();
                pm.0[d] -= h;
                let fd = (loss_at(&q, &pp, &negs) - loss_at(&q, &pm, &negs)) / (2.0 * h);
                let denom = fd.abs().max(grads.positive[d].abs()).max(1e-8);
                assert!((fd - grads.positive[d]).abs() / denom < 1e-4);
            }
        }
    }

    fn tiny_training_set() -> TrainingSet {
        // Two-band image: left dark green, right light brown.
        let mut image = RasterImage::new(128, 96);
        for v in 0..96 {
            for u in 0..128 {
                let rgb = if u < 64 { [32, 96, 32] } else { [160, 96, 32] };
                image.set_pixel(u, v, rgb);
            }
        }
        let anchors = vec![
            AnchorPatch { frame_id: 0, center_u: 20, center_v: 30, size: 16, label_id: 0 },
            AnchorPatch { frame_id: 0, center_u: 30, center_v: 60, size: 16, label_id: 0 },
            AnchorPatch { frame_id: 0, center_u: 90, center_v: 30, size: 16, label_id: 1 },
            AnchorPatch { frame_id: 0, center_u: 100, center_v: 70, size: 16, label_id: 1 },
        ];
        TrainingSet {
            frames: vec![TrainFrame { frame_id: 0, image, anchors }],
            skipped_frames: 0,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            steps: 60,
            fg_size: 16,
            bg_size: 48,
            hidden_size: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let set = tiny_training_set();
        let config = TrainConfig {
            learning_rate: 0.0,
            steps: 5,
            ..small_config()
        };
        let (params, report) = train(&set, &config).unwrap();
        let fresh = init_params(config.seed, &config.layer_sizes()).unwrap();
        assert_eq!(params, fresh);
        assert!(report.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn fixed_seed_reproduces_trajectory() {
        let set = tiny_training_set();
        let config = small_config();
        let (pa, ra) = train(&set, &config).unwrap();
        let (pb, rb) = train(&set, &config).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra.losses, rb.losses);
    }

    #[test]
    fn single_step_single_loss() {
        let set = tiny_training_set();
        let config = TrainConfig {
            steps: 1,
            ..small_config()
        };
        let (_, report) = train(&set, &config).unwrap();
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let set = tiny_training_set();
        let config = TrainConfig {
            steps: 400,
            ..small_config()
        };
        let (_, report) = train(&set, &config).unwrap();
        let early = LossReport::moving_average(&report.losses[..100], 100);
        assert!(
            report.final_moving_average < early,
            "final {} vs early {}",
            report.final_moving_average,
            early
        );
    }

    #[test]
    fn no_eligible_frame_errors() {
        let set = TrainingSet {
            frames: Vec::new(),
            skipped_frames: 1,
        };
        let err = train(&set, &small_config()).unwrap_err();
        assert!(err.to_string().contains("no eligible training frame"), "{err}");
    }
}
