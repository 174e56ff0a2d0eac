use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use xopgan::data::{
    denormalize, load_image, normalize, partition_by_psnr, save_image, synth_dataset,
    DatasetManifest, Partition, Split, SynthConfig,
};
use xopgan::inference::{evaluate, restore_select, ExpertSet, GRID_DIR, REPORT_FILE};
use xopgan::layers::{DiscriminatorNet, GeneratorNet};
use xopgan::training::{
    load_checkpoint, load_pairs, pretrain, train_experts, TrainConfig, DISCRIMINATOR_FILE,
    GENERATOR_FILE,
};
use xopgan::verify::{standard_gradchecks, NETWORK_PROBES_PER_TENSOR};

const CONFIG_FILE: &str = "config.json";
const PARTITION_REPORT_FILE: &str = "partition_report.json";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "xopgan",
    version,
    about = "Operational GAN experts for image restoration"
)]
struct Cli {
    /// Worker threads for per-image parallelism; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic degraded/clean dataset.
    Synth(SynthArgs),
    /// Tag records LQ/MQ/HQ by input PSNR terciles.
    Partition(PartitionArgs),
    /// Train one generator and the discriminator on the whole manifest.
    Pretrain(TrainArgs),
    /// Specialize three experts starting from pretrained checkpoints.
    Train(ExpertArgs),
    /// Restore a single image and report the discriminator's choice.
    Restore(RestoreArgs),
    /// Evaluate experts and selection rules on a manifest.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Fraction of pairs written to test.jsonl.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the tagged manifest and boundary report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOverrides {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    label_eps: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct ExpertArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory of `pretrain`.
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    image: PathBuf,
    /// Directory holding the expert and discriminator checkpoints.
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Where to write the restorations; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pretrained generator checkpoint to report alongside the experts.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Write a comparison strip per image.
    #[arg(long)]
    grids: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Sampled coordinates per tensor for the full networks.
    #[arg(long, default_value_t = NETWORK_PROBES_PER_TENSOR)]
    probes: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XOPGAN_LOG", "info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Partition(a) => partition(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Restore(a) => restore(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    create_dir(&a.out)?;
    let manifest = synth_dataset(&SynthConfig::new(a.n, a.size, a.seed), &a.out)?;
    let (train, test) = manifest.split_train_test(a.test_fraction, a.seed)?;
    train.write(a.out.join("train.jsonl"))?;
    test.write(a.out.join("test.jsonl"))?;
    log::info!(
        "wrote {} pairs ({} train, {} test) to {}",
        manifest.len(),
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn partition(a: PartitionArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest, Split::Train)?;
    let (tagged, report) = partition_by_psnr(&manifest)?;
    for g in &report.groups {
        println!(
            "{}: {} records, PSNR {:.4} to {:.4} dB",
            g.partition, g.count, g.min_psnr_db, g.max_psnr_db
        );
    }
    if let Some(out) = a.out {
        create_dir(&out)?;
        let tagged = tagged.rebase_to(&out)?;
        let name = a
            .manifest
            .file_name()
            .map_or_else(|| "manifest.jsonl".into(), |n| n.to_owned());
        tagged.write(out.join(name))?;
        write_json(&out.join(PARTITION_REPORT_FILE), &report)?;
    }
    Ok(())
}

fn resolve_config(o: &TrainOverrides, fallback: Option<&Path>) -> Result<TrainConfig> {
    let source = o.config.as_deref().or(fallback.filter(|p| p.is_file()));
    let mut cfg = match source {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = o.seed;
    if let Some(v) = o.iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.lambda_rec {
        cfg.lambda_rec = v;
    }
    if let Some(v) = o.label_eps {
        cfg.label_eps = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pretrain_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.overrides, None)?;
    let manifest = DatasetManifest::read(&a.manifest, Split::Train)?;
    create_dir(&a.out)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let pairs = load_pairs(&manifest)?;
    log::info!(
        "pretraining on {} pairs for {} iterations",
        pairs.len(),
        cfg.max_iterations
    );
    let outcome = pretrain(&pairs, &cfg)?;
    outcome.save(&a.out)?;
    if let Some(last) = outcome.log.last() {
        log::info!("final d_loss {:.5}, g_loss {:.5}", last.d_loss, last.g_loss);
    }
    Ok(())
}

fn train_cmd(a: ExpertArgs) -> Result<()> {
    let cfg = resolve_config(&a.overrides, Some(&a.base.join(CONFIG_FILE)))?;
    let mut manifest = DatasetManifest::read(&a.manifest, Split::Train)?;
    if manifest
        .records()
        .iter()
        .any(|r| r.partition == Partition::Unassigned)
    {
        log::info!("manifest is not fully partitioned; assigning PSNR terciles");
        manifest = partition_by_psnr(&manifest)?.0;
    }
    let g = load_checkpoint::<GeneratorNet>(a.base.join(GENERATOR_FILE), Some(&cfg.generator))?;
    let d = load_checkpoint::<DiscriminatorNet>(
        a.base.join(DISCRIMINATOR_FILE),
        Some(&cfg.discriminator),
    )?;
    create_dir(&a.out)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let pairs = load_pairs(&manifest)?;
    log::info!(
        "training experts on {} pairs for {} iterations",
        pairs.len(),
        cfg.max_iterations
    );
    let outcome = train_experts(&pairs, &g, &d, &cfg)?;
    outcome.save(&a.out)?;
    Ok(())
}

fn restore(a: RestoreArgs) -> Result<()> {
    let experts = ExpertSet::load(&a.ckpt_dir)?;
    let img = load_image(&a.image)?;
    let sel = restore_select(
        &normalize(&img),
        &experts.generators,
        &experts.discriminator,
    )?;
    for (p, s) in Partition::EXPERTS.iter().zip(&sel.scores) {
        println!("{p} score {s:.6}");
    }
    println!(
        "chosen {} ({})",
        sel.chosen_index,
        Partition::EXPERTS[sel.chosen_index]
    );
    if let Some(out) = a.out {
        create_dir(&out)?;
        for (p, o) in Partition::EXPERTS.iter().zip(&sel.outputs) {
            save_image(
                &denormalize(o),
                out.join(format!("restored_{}.png", p.as_str().to_lowercase())),
            )?;
        }
        save_image(&denormalize(sel.chosen()), out.join("restored.png"))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest, Split::Test)?;
    let experts = ExpertSet::load(&a.ckpt_dir)?;
    let pretrained = a
        .pretrained
        .as_ref()
        .map(|p| load_checkpoint::<GeneratorNet>(p, Some(&experts.generators[0].config)))
        .transpose()?;
    create_dir(&a.out)?;
    let grids = a.grids.then(|| a.out.join(GRID_DIR));
    let report = evaluate(
        &manifest,
        &experts,
        pretrained.as_ref().map(|c| &c.net),
        grids.as_deref(),
    )?;
    report.write(a.out.join(REPORT_FILE))?;
    let m = &report.means;
    println!("input     {:.4} dB", m.input);
    for (p, v) in Partition::EXPERTS.iter().zip(&m.experts) {
        println!("expert {p} {v:.4} dB");
    }
    if let Some(v) = m.pretrained {
        println!("pretrained {v:.4} dB");
    }
    println!("selected  {:.4} dB", m.selected);
    println!("oracle    {:.4} dB", m.oracle);
    println!("agreement {:.4}", report.agreement_rate);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let reports = standard_gradchecks(a.seed, a.probes)?;
    let mut worst = 0.0f64;
    for r in &reports {
        println!(
            "{:<22} max relative error {:.3e} over {} coordinates",
            r.name, r.report.max_rel_error, r.report.checked
        );
        worst = worst.max(r.report.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if worst >= GRADCHECK_TOLERANCE {
        bail!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}
