use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_image, normalize, DatasetManifest, ImagePair, Partition};
use crate::error::{Error, Result};
use crate::layers::{DiscriminatorNet, GeneratorNet, Parameterized};
use crate::numerics::Tensor;
use crate::rng::{self, StreamRng};
use crate::training::checkpoint::{save_checkpoint, Checkpoint};
use crate::training::config::TrainConfig;
use crate::training::losses::{discriminator_loss, generator_loss_traced};

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

/// Checkpoint file name of the expert for `partition`.
pub fn expert_file(partition: Partition) -> String {
    format!("expert_{}.ckpt", partition.as_str().to_lowercase())
}

/// A manifest record with its images loaded and normalized to [−1, 1].
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub record: ImagePair,
    pub input: Tensor,
    pub target: Tensor,
}

pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<LoadedPair>> {
    manifest
        .records()
        .par_iter()
        .map(|r| {
            let input = load_image(manifest.resolve(&r.input))?;
            let target = load_image(manifest.resolve(&r.target))?;
            if input.shape() != target.shape() {
                return Err(Error::dim(format!(
                    "{} is {:?} but its target is {:?}",
                    r.input,
                    input.shape(),
                    target.shape()
                )));
            }
            Ok(LoadedPair {
                record: r.clone(),
                input: normalize(&input),
                target: normalize(&target),
            })
        })
        .collect()
}

fn check_sizes(pairs: &[LoadedPair], config: &TrainConfig) -> Result<()> {
    let n = config.discriminator.input_size;
    for p in pairs {
        let s = p.input.shape();
        if s != [config.generator.in_channels, n, n] {
            return Err(Error::config(format!(
                "{} has shape {s:?}; the networks are configured for [{}, {n}, {n}]",
                p.record.input, config.generator.in_channels
            )));
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    /// Partition tag of the drawn record.
    pub partition: Partition,
    pub input: String,
    /// Generator that received the update: `"base"` or an expert tag.
    pub generator: String,
    /// `(generator, source partition)` of every fake the discriminator saw.
    pub od_fakes: Vec<(String, Partition)>,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_adversarial: f64,
    pub g_reconstruction: f64,
    pub d_real_score: f64,
    pub d_fake_scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingLog {
    pub iteration: u64,
    pub wall_seconds: f64,
}

/// Endless epoch-shuffled traversal of a fixed index set.
struct EpochSampler {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl EpochSampler {
    fn new(items: Vec<usize>, rng: StreamRng) -> Self {
        Self {
            items,
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = self.items.clone();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn ensure_finite(iteration: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        log::error!("iteration {iteration}: {what} is {v}; aborting");
        Err(Error::NonFinite(format!(
            "iteration {iteration}: {what} evaluated to {v}"
        )))
    }
}

fn step<N: Parameterized>(ckpt: &mut Checkpoint<N>, grads: &[Tensor], lr: f64) -> Result<()> {
    ckpt.adam.step(ckpt.net.params_mut(), grads, lr)
}

/// Trained networks plus the per-iteration log.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub generator: Checkpoint<GeneratorNet>,
    pub discriminator: Checkpoint<DiscriminatorNet>,
    pub log: Vec<IterationLog>,
    pub timing: Vec<TimingLog>,
}

#[derive(Debug, Clone)]
pub struct ExpertOutcome {
    /// Experts in LQ, MQ, HQ order.
    pub experts: Vec<Checkpoint<GeneratorNet>>,
    pub discriminator: Checkpoint<DiscriminatorNet>,
    pub log: Vec<IterationLog>,
    pub timing: Vec<TimingLog>,
}

/// Freshly initialized generator and discriminator for `config`.
pub fn initialize(
    config: &TrainConfig,
) -> Result<(Checkpoint<GeneratorNet>, Checkpoint<DiscriminatorNet>)> {
    config.validate()?;
    let g = GeneratorNet::build(
        &config.generator,
        &mut rng::stream(config.seed, "init/generator"),
    )?;
    let d = DiscriminatorNet::build(
        &config.discriminator,
        &mut rng::stream(config.seed, "init/discriminator"),
    )?;
    Ok((
        Checkpoint::new(g, config.adam, config.seed),
        Checkpoint::new(d, config.adam, config.seed),
    ))
}

/// Trains one generator and the discriminator on every pair. Each draw
/// performs one discriminator update followed by one generator update.
pub fn pretrain(pairs: &[LoadedPair], config: &TrainConfig) -> Result<PretrainOutcome> {
    let (mut g, mut d) = initialize(config)?;
    if pairs.is_empty() {
        return Err(Error::config("pretraining needs a non-empty manifest"));
    }
    check_sizes(pairs, config)?;
    let mut sampler = EpochSampler::new(
        (0..pairs.len()).collect(),
        rng::stream(config.seed, "pretrain/order"),
    );
    let mut labels = rng::stream(config.seed, "pretrain/labels");
    let mut log = Vec::with_capacity(config.max_iterations as usize);
    let mut timing = Vec::with_capacity(config.max_iterations as usize);
    let started = Instant::now();
    for it in 0..config.max_iterations {
        let pair = &pairs[sampler.next()];
        let trace = g.net.forward_trace(&pair.input)?;
        let fake = trace.output().clone();
        let dl = discriminator_loss(&d.net, &[fake], &pair.target, config.label_eps, &mut labels)?;
        ensure_finite(it, "discriminator loss", dl.loss)?;
        step(&mut d, &dl.grads, config.lr)?;
        let gl = generator_loss_traced(&g.net, &trace, &d.net, &pair.target, config.lambda_rec)?;
        ensure_finite(it, "generator loss", gl.loss)?;
        step(&mut g, &gl.grads, config.lr)?;
        g.iteration = it + 1;
        d.iteration = it + 1;
        log.push(IterationLog {
            iteration: it,
            partition: pair.record.partition,
            input: pair.record.input.clone(),
            generator: "base".into(),
            od_fakes: vec![("base".into(), pair.record.partition)],
            d_loss: dl.loss,
            g_loss: gl.loss,
            g_adversarial: gl.adversarial,
            g_reconstruction: gl.reconstruction,
            d_real_score: dl.real_score,
            d_fake_scores: dl.fake_scores,
        });
        timing.push(TimingLog {
            iteration: it,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!(
            "pretrain iteration {it}: d_loss {:.5} g_loss {:.5}",
            dl.loss,
            gl.loss
        );
    }
    Ok(PretrainOutcome {
        generator: g,
        discriminator: d,
        log,
        timing,
    })
}

/// Specializes three copies of the base generator. Draw `t` comes from
/// partition `t mod 3` (LQ, MQ, HQ); the discriminator sees that image
/// through all three experts plus its ground truth, then the matching
/// expert alone is updated.
pub fn train_experts(
    pairs: &[LoadedPair],
    base_generator: &Checkpoint<GeneratorNet>,
    base_discriminator: &Checkpoint<DiscriminatorNet>,
    config: &TrainConfig,
) -> Result<ExpertOutcome> {
    config.validate()?;
    if base_generator.net.config != config.generator
        || base_discriminator.net.config != config.discriminator
    {
        return Err(Error::config(
            "base checkpoints do not match the configured architectures",
        ));
    }
    check_sizes(pairs, config)?;
    let mut samplers = Vec::with_capacity(3);
    for p in Partition::EXPERTS {
        let members: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].record.partition == p)
            .collect();
        if members.is_empty() {
            return Err(Error::config(format!("partition {p} is empty")));
        }
        samplers.push(EpochSampler::new(
            members,
            rng::stream(config.seed, &format!("experts/order/{p}")),
        ));
    }
    let mut experts: Vec<Checkpoint<GeneratorNet>> = Partition::EXPERTS
        .iter()
        .map(|_| Checkpoint {
            iteration: 0,
            seed: config.seed,
            ..base_generator.clone()
        })
        .collect();
    let mut d = Checkpoint {
        iteration: 0,
        seed: config.seed,
        ..base_discriminator.clone()
    };
    let mut labels = rng::stream(config.seed, "experts/labels");
    let mut log = Vec::with_capacity(config.max_iterations as usize);
    let mut timing = Vec::with_capacity(config.max_iterations as usize);
    let started = Instant::now();
    for it in 0..config.max_iterations {
        let k = (it % 3) as usize;
        let source = Partition::EXPERTS[k];
        let pair = &pairs[samplers[k].next()];
        let traces = experts
            .par_iter()
            .map(|e| e.net.forward_trace(&pair.input))
            .collect::<Result<Vec<_>>>()?;
        let fakes: Vec<Tensor> = traces.iter().map(|t| t.output().clone()).collect();
        let dl = discriminator_loss(&d.net, &fakes, &pair.target, config.label_eps, &mut labels)?;
        ensure_finite(it, "discriminator loss", dl.loss)?;
        step(&mut d, &dl.grads, config.lr)?;
        let gl = generator_loss_traced(
            &experts[k].net,
            &traces[k],
            &d.net,
            &pair.target,
            config.lambda_rec,
        )?;
        ensure_finite(it, "generator loss", gl.loss)?;
        step(&mut experts[k], &gl.grads, config.lr)?;
        for e in &mut experts {
            e.iteration = it + 1;
        }
        d.iteration = it + 1;
        log.push(IterationLog {
            iteration: it,
            partition: pair.record.partition,
            input: pair.record.input.clone(),
            generator: source.as_str().into(),
            od_fakes: Partition::EXPERTS
                .iter()
                .map(|g| (g.as_str().into(), source))
                .collect(),
            d_loss: dl.loss,
            g_loss: gl.loss,
            g_adversarial: gl.adversarial,
            g_reconstruction: gl.reconstruction,
            d_real_score: dl.real_score,
            d_fake_scores: dl.fake_scores,
        });
        timing.push(TimingLog {
            iteration: it,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!(
            "expert iteration {it} ({source}): d_loss {:.5} g_loss {:.5}",
            dl.loss,
            gl.loss
        );
    }
    Ok(ExpertOutcome {
        experts,
        discriminator: d,
        log,
        timing,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<IterationLog>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl PretrainOutcome {
    /// Writes both checkpoints, the training log and the wall-time log.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        save_checkpoint(&self.generator, dir.join(GENERATOR_FILE))?;
        save_checkpoint(&self.discriminator, dir.join(DISCRIMINATOR_FILE))?;
        write_jsonl(&dir.join(TRAIN_LOG_FILE), &self.log)?;
        write_jsonl(&dir.join(TIMING_FILE), &self.timing)
    }
}

impl ExpertOutcome {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        for (e, p) in self.experts.iter().zip(Partition::EXPERTS) {
            save_checkpoint(e, dir.join(expert_file(p)))?;
        }
        save_checkpoint(&self.discriminator, dir.join(DISCRIMINATOR_FILE))?;
        write_jsonl(&dir.join(TRAIN_LOG_FILE), &self.log)?;
        write_jsonl(&dir.join(TIMING_FILE), &self.timing)
    }

    pub fn expert(&self, partition: Partition) -> Option<&Checkpoint<GeneratorNet>> {
        partition.expert_index().map(|i| &self.experts[i])
    }
}
