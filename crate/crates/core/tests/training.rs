use std::collections::BTreeSet;

use xopgan::data::{partition_by_psnr, synth_dataset, Partition, SynthConfig};
use xopgan::layers::{DiscriminatorConfig, GeneratorConfig, Parameterized};
use xopgan::rng;
use xopgan::training::{
    discriminator_loss, generator_loss, initialize, load_pairs, pretrain, read_log, train_experts,
    LoadedPair, TrainConfig, GENERATOR_FILE, TRAIN_LOG_FILE,
};

fn small_config(seed: u64, iterations: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        max_iterations: iterations,
        lambda_rec: 1.0,
        seed,
        generator: GeneratorConfig {
            encoder_channels: vec![4, 4, 8, 8, 8],
            order: 2,
            ..GeneratorConfig::default()
        },
        discriminator: DiscriminatorConfig {
            channels: vec![4, 8, 8, 8, 8],
            dense_hidden: 8,
            ..DiscriminatorConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn dataset(n: usize, seed: u64) -> (tempfile::TempDir, Vec<LoadedPair>) {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(&SynthConfig::new(n, 32, seed), dir.path()).unwrap();
    let (m, _) = partition_by_psnr(&m).unwrap();
    let pairs = load_pairs(&m).unwrap();
    (dir, pairs)
}

fn bits(net: &impl Parameterized) -> Vec<u64> {
    net.params()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn zero_iterations_keep_initialization() {
    let (_d, pairs) = dataset(6, 1);
    let cfg = small_config(3, 0);
    let out = pretrain(&pairs, &cfg).unwrap();
    let (g0, d0) = initialize(&cfg).unwrap();
    assert_eq!(out.generator, g0);
    assert_eq!(out.discriminator, d0);
    assert!(out.log.is_empty());

    let experts = train_experts(&pairs, &out.generator, &out.discriminator, &cfg).unwrap();
    let probe = &pairs[0].input;
    let base = out.generator.net.forward(probe).unwrap();
    for e in &experts.experts {
        assert_eq!(bits(&e.net), bits(&out.generator.net));
        assert_eq!(e.net.forward(probe).unwrap(), base);
    }
}

#[test]
fn pretraining_is_reproducible_on_disk() {
    let (_d, pairs) = dataset(6, 2);
    let cfg = small_config(5, 6);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pretrain(&pairs, &cfg).unwrap().save(a.path()).unwrap();
    pretrain(&pairs, &cfg).unwrap().save(b.path()).unwrap();
    for f in [GENERATOR_FILE, TRAIN_LOG_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    let log = read_log(a.path().join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.len(), 6);
    let other = pretrain(&pairs, &small_config(6, 6)).unwrap();
    assert_ne!(
        bits(&other.generator.net),
        bits(&pretrain(&pairs, &cfg).unwrap().generator.net)
    );
}

#[test]
fn experts_see_only_their_partition_and_discriminator_sees_all_pairs() {
    let (_d, pairs) = dataset(9, 4);
    let cfg = small_config(7, 0);
    let base = pretrain(&pairs, &cfg).unwrap();
    let cfg = small_config(7, 12);
    let out = train_experts(&pairs, &base.generator, &base.discriminator, &cfg).unwrap();
    let mut combos = BTreeSet::new();
    for row in &out.log {
        assert_eq!(
            row.generator,
            row.partition.as_str(),
            "iteration {}",
            row.iteration
        );
        for (g, k) in &row.od_fakes {
            combos.insert((g.clone(), *k));
        }
    }
    assert_eq!(combos.len(), 9);
    // experts untouched by draws from other partitions stay distinct from each other
    let lq = bits(&out.experts[0].net);
    assert_ne!(lq, bits(&out.experts[1].net));
    assert_ne!(lq, bits(&base.generator.net));
}

#[test]
fn losses_only_touch_their_own_network() {
    let (_d, pairs) = dataset(3, 5);
    let cfg = small_config(8, 0);
    let (mut g, mut d) = initialize(&cfg).unwrap();
    let p = &pairs[0];

    let g_bits = bits(&g.net);
    let fake = g.net.forward(&p.input).unwrap();
    let dl = discriminator_loss(
        &d.net,
        std::slice::from_ref(&fake),
        &p.target,
        0.05,
        &mut rng::stream(0, "t"),
    )
    .unwrap();
    assert_eq!(dl.grads.len(), d.net.params().len());
    let d_bits = bits(&d.net);
    d.adam.step(d.net.params_mut(), &dl.grads, cfg.lr).unwrap();
    assert_ne!(bits(&d.net), d_bits);
    assert_eq!(bits(&g.net), g_bits);
    assert_eq!(g.net.forward(&p.input).unwrap(), fake);

    let d_bits = bits(&d.net);
    let score = d.net.score(&p.target).unwrap();
    let gl = generator_loss(&g.net, &d.net, &p.input, &p.target, 1.0).unwrap();
    assert_eq!(gl.grads.len(), g.net.params().len());
    for (grad, (_, param)) in gl.grads.iter().zip(g.net.params()) {
        assert_eq!(grad.shape(), param.shape());
    }
    g.adam.step(g.net.params_mut(), &gl.grads, cfg.lr).unwrap();
    assert_ne!(bits(&g.net), g_bits);
    assert_eq!(bits(&d.net), d_bits);
    assert_eq!(d.net.score(&p.target).unwrap(), score);
}

#[test]
fn discriminator_loss_falls_during_pretraining() {
    let (_d, pairs) = dataset(50, 6);
    let cfg = TrainConfig {
        lr: 1e-4,
        ..small_config(9, 120)
    };
    let out = pretrain(&pairs, &cfg).unwrap();
    let ma = |rows: &[xopgan::training::IterationLog]| {
        rows.iter().map(|r| r.d_loss).sum::<f64>() / rows.len() as f64
    };
    let first = ma(&out.log[..20]);
    let last = ma(&out.log[out.log.len() - 20..]);
    assert!(last < first, "initial {first}, final {last}");
}

#[test]
fn empty_partition_is_rejected() {
    let (_d, mut pairs) = dataset(6, 7);
    pairs.retain(|p| p.record.partition != Partition::Hq);
    let cfg = small_config(1, 3);
    let (g, d) = initialize(&cfg).unwrap();
    assert!(matches!(
        train_experts(&pairs, &g, &d, &cfg),
        Err(xopgan::Error::Config(_))
    ));
}
