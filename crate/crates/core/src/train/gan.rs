use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::GanTrainConfig;
use super::log::{TrainLog, TrainRecord};
use crate::data::{iterate_batches, BatchPlan, OodTask};
use crate::error::{Error, Result};
use crate::nets::{Adam, AdamConfig, Discriminator, FeatureMap, Generator, Mode, Parameterized, NOISE_DIM};

/// Random streams carved out of one seed.
pub(super) const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const POOL_STREAM: u64 = 2;
const SHUFFLE_SALT: u64 = 0x5eed_ba7c;

#[derive(Clone, Debug)]
pub struct GanState {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

pub(super) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean cross-entropy of logits against a constant target, and its
/// gradient per logit.
fn bce(logits: &[f32], real: bool) -> (f64, Vec<f32>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .map(|&l| {
            let l = f64::from(l);
            let p = 1.0 / (1.0 + (-l).exp());
            if real {
                loss += softplus(-l);
                ((p - 1.0) / n) as f32
            } else {
                loss += softplus(l);
                (p / n) as f32
            }
        })
        .collect();
    (loss / n, grad)
}

fn sample_noise(rng: &mut ChaCha8Rng, batch: usize) -> Vec<f32> {
    (0..batch * NOISE_DIM).map(|_| StandardNormal.sample(rng)).collect()
}

/// Adversarial pre-training on the task's unlabeled pool.
///
/// The discriminator minimises binary cross-entropy on real versus
/// generated images; the generator minimises `-log D(G(noise))`.
pub fn pretrain_gan(task: &OodTask, cfg: &GanTrainConfig) -> Result<(GanState, TrainLog)> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let pool = &task.pretrain_pool;
    if pool.is_empty() {
        return Err(Error::EmptyInput("pre-training pool is empty".into()));
    }
    if pool.count_label(task.ood_class) > 0 {
        return Err(Error::Consistency(format!(
            "pre-training pool contains class {}",
            task.ood_class
        )));
    }
    let subset;
    let pool = match cfg.pool_limit {
        Some(limit) if limit < pool.len() => {
            let mut picked = index::sample(&mut stream(cfg.seed, POOL_STREAM), pool.len(), limit).into_vec();
            picked.sort_unstable();
            subset = pool.select(&picked);
            &subset
        }
        _ => pool,
    };
    if pool.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "pool of {} images is smaller than batch_size {}",
            pool.len(),
            cfg.batch_size
        )));
    }

    let mut init = stream(cfg.seed, INIT_STREAM);
    let mut generator = Generator::new(&mut init);
    let mut disc = Discriminator::new(&mut init);
    let adam = |lr| AdamConfig {
        lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let mut opt_g = Adam::new(adam(cfg.lr_generator));
    let mut opt_d = Adam::new(adam(cfg.lr_discriminator));
    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        shuffle_seed: cfg.seed ^ SHUFFLE_SALT,
        drop_last: true,
    };

    let mut log = TrainLog::default();
    let started = Instant::now();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for batch in iterate_batches(pool, &plan, epoch)? {
            let n = batch.len();
            log.audit.record(&batch.labels);
            let real = FeatureMap::from_images(&batch.pixels, n, pool.height(), pool.width(), pool.channels())?;
            let noise = sample_noise(&mut noise_rng, n);
            let (fake, g_tape) = generator.forward(&noise, n, Mode::Train)?;

            // Discriminator update.
            let real_tape = disc.forward_features(&real, Mode::Train)?;
            let (loss_real, d_real) = bce(&disc.head_logits(real_tape.features(), n), true);
            let fake_tape = disc.forward_features(&fake, Mode::Train)?;
            let (loss_fake, d_fake) = bce(&disc.head_logits(fake_tape.features(), n), false);
            let d_loss = loss_real + loss_fake;
            let df = disc.head_backward(real_tape.features(), n, &d_real);
            disc.backward_features(&real_tape, &df, false);
            let df = disc.head_backward(fake_tape.features(), n, &d_fake);
            disc.backward_features(&fake_tape, &df, false);
            // Running statistics follow real images only; they normalise
            // the embeddings of real digits later.
            disc.commit(&real_tape);
            opt_d.step(disc.params_mut());

            // Generator update through the refreshed discriminator.
            let tape = disc.forward_features(&fake, Mode::Train)?;
            let (g_loss, d_logits) = bce(&disc.head_logits(tape.features(), n), true);
            let df = disc.head_backward(tape.features(), n, &d_logits);
            let d_images = disc.backward_features(&tape, &df, true).expect("dx requested");
            disc.zero_grad();
            generator.backward(&g_tape, &d_images);
            generator.commit(&g_tape);
            opt_g.step(generator.params_mut());

            if !(d_loss.is_finite() && g_loss.is_finite()) {
                return Err(Error::Divergence {
                    phase: "gan".into(),
                    step,
                    detail: format!("epoch {epoch}: d_loss {d_loss}, g_loss {g_loss}"),
                });
            }
            log.push(TrainRecord::Gan {
                step,
                epoch,
                d_loss,
                g_loss,
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            step += 1;
        }
    }
    Ok((
        GanState {
            generator,
            discriminator: disc,
        },
        log,
    ))
}
