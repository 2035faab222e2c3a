use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};

use super::config::{IBTrainConfig, PrototypeInit, TrainScope};
use super::gan::{stream, INIT_STREAM};
use super::log::{TrainLog, TrainRecord};
use crate::data::OodTask;
use crate::error::{Error, Result};
use crate::loss::{ib_loss_with_grad, ClassPrototypes, EmbeddingBatch};
use crate::matrix::Matrix;
use crate::nets::{digest_params, Adam, AdamConfig, Discriminator, EmbeddingHead, FeatureMap, Mode, Parameterized};

/// Adam state for the f64 prototype tensors.
struct PrototypeAdam {
    cfg: AdamConfig,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PrototypeAdam {
    fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            moments: Vec::new(),
        }
    }

    fn step(&mut self, tensors: [(&mut [f64], &[f64]); 2]) {
        if self.moments.is_empty() {
            self.moments = tensors.iter().map(|(v, _)| (vec![0.0; v.len()], vec![0.0; v.len()])).collect();
        }
        self.t += 1;
        let (lr, b1, b2, eps) = (
            f64::from(self.cfg.lr),
            f64::from(self.cfg.beta1),
            f64::from(self.cfg.beta2),
            f64::from(self.cfg.eps),
        );
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((values, grads), (m, v)) in tensors.into_iter().zip(&mut self.moments) {
            for i in 0..values.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
                values[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

fn support_batch(task: &OodTask) -> Result<(FeatureMap, Vec<usize>)> {
    let targets = task.support_targets()?;
    let k = task.num_classes();
    let mut counts = vec![0usize; k];
    for &t in &targets {
        counts[t] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "support set has no example of class {}",
            task.in_dist_classes[missing]
        )));
    }
    if counts.iter().any(|&c| c != counts[0]) {
        log::warn!("unbalanced support set: {counts:?}");
    }
    let s = &task.support_set;
    let images = FeatureMap::from_images(s.pixels(), s.len(), s.height(), s.width(), s.channels())?;
    Ok((images, targets))
}

/// Batch-norm mode of the conv stack during re-training: batch statistics
/// when the stack trains, running statistics when it is frozen.
fn scope_mode(scope: TrainScope) -> Mode {
    match scope {
        TrainScope::FullDiscriminatorStack => Mode::Train,
        TrainScope::EmbeddingHeadOnly => Mode::Eval,
    }
}

/// Prototypes at the start of re-training, per `cfg.prototype_init`. Class
/// means are taken from embeddings computed exactly as the first training
/// step computes them.
pub fn initial_prototypes(
    disc: &Discriminator,
    head: &EmbeddingHead,
    task: &OodTask,
    cfg: &IBTrainConfig,
) -> Result<ClassPrototypes> {
    let (images, targets) = support_batch(task)?;
    let tape = disc.forward_features(&images, scope_mode(cfg.scope))?;
    let z = Matrix::from_f32(images.batch, head.dim(), &head.forward(tape.features(), images.batch))?;
    let batch = EmbeddingBatch::new(z, targets, task.num_classes())?;
    let protos = match cfg.prototype_init {
        PrototypeInit::SupportClassMeans => ClassPrototypes::from_class_means(&batch)?,
        PrototypeInit::Random => {
            let mut rng = stream(cfg.seed, INIT_STREAM);
            let (k, d) = (task.num_classes(), head.dim());
            let mu = (0..k * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            ClassPrototypes::new(Matrix::from_vec(k, d, mu)?, vec![0.0; k], vec![0.0; k])?
        }
    };
    Ok(if cfg.log_prior_bias {
        protos.with_log_prior_bias(&batch)
    } else {
        protos
    })
}

/// Full-batch IB re-training over the support set.
///
/// Updates the embedding head, the conv stack when `cfg.scope` includes
/// it, and the class centers and scales. Batch-norm running statistics stay
/// as pre-training left them. On a non-finite loss the networks are rolled
/// back to the last step with a finite loss before the error is returned.
pub fn retrain_ib(
    disc: &mut Discriminator,
    head: &mut EmbeddingHead,
    task: &OodTask,
    cfg: &IBTrainConfig,
) -> Result<(ClassPrototypes, TrainLog)> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let (images, targets) = support_batch(task)?;
    let n = images.batch;
    let k = task.num_classes();
    let full = cfg.scope == TrainScope::FullDiscriminatorStack;
    let mut protos = initial_prototypes(disc, head, task, cfg)?;
    let frozen = (!full).then(|| digest_params(disc.stack_params()));
    let fixed_tape = if full {
        None
    } else {
        Some(disc.forward_features(&images, Mode::Eval)?)
    };

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt_net = Adam::new(adam);
    let mut opt_proto = PrototypeAdam::new(adam);
    let mut log = TrainLog::default();
    let mut last_good: Option<(Option<Discriminator>, EmbeddingHead)> = None;
    let started = Instant::now();
    for step in 0..cfg.steps {
        let live_tape;
        let tape = match &fixed_tape {
            Some(t) => t,
            None => {
                live_tape = disc.forward_features(&images, Mode::Train)?;
                &live_tape
            }
        };
        let z = head.forward(tape.features(), n);
        let batch = EmbeddingBatch::new(Matrix::from_f32(n, head.dim(), &z)?, targets.clone(), k)?;
        let (loss, grads) = ib_loss_with_grad(&batch, &protos, &cfg.loss)?;
        if !loss.total.is_finite() || !grads.z.is_finite() {
            if let Some((d, h)) = last_good.take() {
                if let Some(d) = d {
                    *disc = d;
                }
                *head = h;
            }
            return Err(Error::Divergence {
                phase: "ib".into(),
                step,
                detail: format!(
                    "compression {}, relevance {}; networks restored to step {}",
                    loss.compression,
                    loss.relevance,
                    step.saturating_sub(1)
                ),
            });
        }
        last_good = Some((full.then(|| disc.clone()), head.clone()));
        log.audit.record(task.support_set.labels());
        log.push(TrainRecord::Ib {
            step,
            loss,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        let dz = grads.z.to_f32();
        let d_features = head.backward(tape.features(), n, &dz);
        let mut params = head.params_mut();
        if full {
            disc.backward_features(tape, &d_features, false);
            params.extend(disc.stack_params_mut());
        }
        opt_net.step(params);
        opt_proto.step([
            (protos.mu.as_mut_slice(), grads.mu.as_slice()),
            (&mut protos.log_sigma, &grads.log_sigma),
        ]);
    }
    if let Some(before) = frozen {
        if digest_params(disc.stack_params()) != before {
            return Err(Error::Consistency("conv stack changed under embedding_head_only".into()));
        }
    }
    Ok((protos, log))
}
