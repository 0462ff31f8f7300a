//! Acceptance suite. Runs every criterion in sequence inside one test so the
//! runtime budgets are measured without competing test threads, prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use handgen::autoencoder::{disentangle_loss, FeatureExtractor, HandAutoencoder};
use handgen::data::{generate_synthetic, save_sequence, split_dataset, HandPoseSequence, Split, SplitRatios};
use handgen::diversify::{
    langevin_posterior, langevin_prior, retrieve_prototypes, second_difference_norm, stage_two_grad_step,
    temporal_smooth, GenerationModel, LangevinConfig, Likelihood, ResidualMode, SamplingHeader, Stage2Batch,
    GENERATOR_PREFIX, HEADER_PREFIX,
};
use handgen::harness::{
    evaluate, sample_diverse, sample_hands, train_stage_one, train_stage_two, Pretrained, StageOneBundle,
    StageOneTrainer, StageTwoBundle, StageTwoTrainer, TrainConfig,
};
use handgen::losses::{loss_adv, loss_perc, loss_rec, loss_stage2, loss_total_stage1};
use handgen::memory::{build_prototype_memory, MemoryBank};
use handgen::metrics::{
    diversity_from_features, frechet_distance, metric_diversity, metric_fhd, metric_l2, metric_mpjre,
    sequence_features, PairSampling,
};
use handgen::model::{ModelConfig, MotionDiscriminator, StageOneModel};
use handgen::nn::{finite_diff_check, GradCheckOptions, Graph, Mat, Mlp, MlpSpec, MultiHeadAttention, ParameterStore, Var};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Array2::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Mat {
    Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
}

// ---------------------------------------------------------------- criterion 1

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn memory_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let slots = rng.random_range(1..64);
        let dim = rng.random_range(1..32);
        let m = randn(&mut rng, slots, dim, 1.0);
        let q: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let bank = MemoryBank::new("oracle", m.clone(), 0.8).map_err(|e| e.to_string())?;

        let sims: Vec<f64> = m.rows().into_iter().map(|r| oracle_cosine(r.as_slice().unwrap(), &q)).collect();
        let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut agg = vec![0.0; dim];
        for (pi, row) in p.iter().zip(m.rows()) {
            for (a, x) in agg.iter_mut().zip(row.iter()) {
                *a += pi * x;
            }
        }
        let mut best = 0;
        for (i, s) in sims.iter().enumerate() {
            if *s > sims[best] {
                best = i;
            }
        }

        let qv = Array1::from(q.clone());
        let (got_agg, got_p) = bank.read_soft(qv.view()).map_err(|e| e.to_string())?;
        for (a, b) in got_agg.iter().zip(&agg).chain(got_p.iter().zip(&p)) {
            worst = worst.max((a - b).abs());
        }
        let (slot, idx) = bank.read_hard(qv.view()).map_err(|e| e.to_string())?;
        ensure(idx == best, || format!("case {case}: hard read picked {idx}, oracle {best}"))?;
        ensure(slot.iter().zip(m.row(best).iter()).all(|(a, b)| a == b), || format!("case {case}: hard read slot differs"))?;

        let mut updated = bank.clone();
        let u = updated.update_slot_ema(qv.view()).map_err(|e| e.to_string())?;
        ensure(u == best, || format!("case {case}: EMA updated slot {u}, oracle {best}"))?;
        for (j, row) in updated.slots().rows().into_iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let expect = if j == best { 0.8 * m[[j, k]] + (1.0 - 0.8) * q[k] } else { m[[j, k]] };
                ensure(v.to_bits() == expect.to_bits(), || format!("case {case}: EMA slot {j}[{k}] = {v}, expected {expect}"))?;
            }
        }
    }
    ensure(worst < 1e-6, || format!("soft read max deviation {worst:e}"))?;
    Ok(format!("100 cases, soft-read max deviation {worst:.1e}, hard read and EMA exact"))
}

// ---------------------------------------------------------------- criterion 2

fn gradcheck<F>(name: &str, store: &mut ParameterStore, tol: f64, entries: usize, f: F) -> Result<String, String>
where
    F: FnMut(&mut Graph, &ParameterStore) -> handgen::Result<Var>,
{
    let opts = GradCheckOptions {
        max_entries_per_param: entries,
        ..GradCheckOptions::default()
    };
    let r = finite_diff_check(store, &opts, f).map_err(|e| format!("{name}: {e}"))?;
    ensure(r.max_rel_error < tol, || format!("{name}: rel err {:.2e} at {} {:?}", r.max_rel_error, r.worst_param, r.worst_index))?;
    Ok(format!("{name} {:.1e}", r.max_rel_error))
}

fn insert(store: &mut ParameterStore, name: &str, v: Mat) {
    store.insert(name, v).unwrap();
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lines = Vec::new();

    // sampling energy, with respect to header weights and w
    let header = SamplingHeader::new(4, 8, 0.7).unwrap();
    let mut s = ParameterStore::new();
    header.init(&mut s, &mut rng).unwrap();
    insert(&mut s, "w", randn(&mut rng, 5, 4, 1.0));
    lines.push(gradcheck("sampling_energy", &mut s, 1e-3, 16, |g, s| {
        let w = g.param(s, "w")?;
        let e = header.energy(g, s, w)?;
        Ok(g.mean(e))
    })?);

    // reconstruction, stage-two and total losses
    let mut s = ParameterStore::new();
    insert(&mut s, "truth", uniform(&mut rng, 6, 90, -0.5, 0.5));
    insert(&mut s, "pred", uniform(&mut rng, 6, 90, -0.5, 0.5));
    lines.push(gradcheck("loss_rec", &mut s, 1e-3, 16, |g, s| {
        let (t, p) = (g.param(s, "truth")?, g.param(s, "pred")?);
        loss_rec(g, t, p)
    })?);
    lines.push(gradcheck("loss_stage2", &mut s, 1e-3, 16, |g, s| {
        let (t, p) = (g.param(s, "truth")?, g.param(s, "pred")?);
        loss_stage2(g, t, p)
    })?);

    // perceptual loss through a frozen extractor
    let ae = HandAutoencoder::two_hand(8).unwrap();
    let mut phi = ParameterStore::new();
    ae.init(&mut phi, &mut rng).unwrap();
    let ext = FeatureExtractor::new(ae, &phi, true).unwrap();
    lines.push(gradcheck("loss_perc", &mut s, 1e-3, 16, |g, s| {
        let (t, p) = (g.param(s, "truth")?, g.param(s, "pred")?);
        loss_perc(g, &ext, t, p)
    })?);

    // adversarial objectives through the discriminator
    let disc = MotionDiscriminator::new(8, 5).unwrap();
    let mut s = ParameterStore::new();
    disc.init(&mut s, &mut rng).unwrap();
    insert(&mut s, "real", uniform(&mut rng, 8, 90, -0.5, 0.5));
    insert(&mut s, "fake", uniform(&mut rng, 8, 90, -0.5, 0.5));
    for which in ["generator", "discriminator"] {
        lines.push(gradcheck(&format!("loss_adv.{which}"), &mut s, 1e-3, 8, |g, s| {
            let (r, f) = (g.param(s, "real")?, g.param(s, "fake")?);
            let (dr, df) = (disc.forward(g, s, r)?, disc.forward(g, s, f)?);
            let t = loss_adv(g, dr, df)?;
            Ok(if which == "generator" { t.generator } else { t.discriminator })
        })?);
    }

    // disentanglement through a frozen single-hand decoder
    let single = HandAutoencoder::single_hand(8).unwrap();
    let mut ae_store = ParameterStore::new();
    single.init(&mut ae_store, &mut rng).unwrap();
    ae_store.freeze();
    let mut s = ParameterStore::new();
    insert(&mut s, "f_recon", randn(&mut rng, 6, 8, 1.0));
    insert(&mut s, "f", randn(&mut rng, 6, 8, 1.0));
    lines.push(gradcheck("disentangle_loss", &mut s, 1e-3, 16, |g, s| {
        let (a, b) = (g.param(s, "f_recon")?, g.param(s, "f")?);
        disentangle_loss(g, a, b, |g, x| single.decode(g, &ae_store, x))
    })?);

    let mut s = ParameterStore::new();
    for n in ["rec", "adv", "perc", "dis"] {
        insert(&mut s, n, randn(&mut rng, 1, 1, 1.0));
    }
    lines.push(gradcheck("loss_total_stage1", &mut s, 1e-3, 16, |g, s| {
        let v: Vec<Var> = ["rec", "adv", "perc", "dis"].iter().map(|n| g.param(s, n)).collect::<handgen::Result<_>>()?;
        loss_total_stage1(g, v[0], v[1], v[2], v[3])
    })?);

    // MLP and multi-head attention
    let mlp = Mlp::new("mlp", MlpSpec::new(vec![6, 10, 10, 3]).unwrap()).unwrap();
    let mut s = ParameterStore::new();
    mlp.init(&mut s, &mut rng).unwrap();
    insert(&mut s, "x", randn(&mut rng, 5, 6, 1.0));
    lines.push(gradcheck("mlp", &mut s, 1e-3, 16, |g, s| {
        let x = g.param(s, "x")?;
        let y = mlp.forward(g, s, x)?;
        let sq = g.square(y);
        Ok(g.mean(sq))
    })?);

    let mha = MultiHeadAttention::new("mha", 8, 2).unwrap();
    let mut s = ParameterStore::new();
    mha.init(&mut s, &mut rng).unwrap();
    insert(&mut s, "q", randn(&mut rng, 4, 8, 1.0));
    insert(&mut s, "kv", randn(&mut rng, 6, 8, 1.0));
    lines.push(gradcheck("mha", &mut s, 1e-3, 16, |g, s| {
        let (q, kv) = (g.param(s, "q")?, g.param(s, "kv")?);
        let y = mha.forward(g, s, q, kv, kv)?;
        let sq = g.square(y);
        Ok(g.mean(sq))
    })?);

    // small end-to-end stage-one model
    let cfg = ModelConfig {
        channels: 16,
        heads: 4,
        frames: 8,
        attention_blocks: 3,
        srm_slots: 6,
        tmm_slots: 5,
        ..ModelConfig::default()
    };
    let model = StageOneModel::new(cfg).unwrap();
    let mut s = ParameterStore::new();
    model.init(&mut s, &mut rng).unwrap();
    let rec = generate_synthetic(9, 1, 8).records.remove(0);
    lines.push(gradcheck("stage_one_end_to_end", &mut s, 1e-2, 3, |g, s| {
        let x = g.constant(rec.body.frames().clone());
        let trace = model.forward(g, s, x)?;
        let target = g.constant(rec.hands.frames().clone());
        let d = g.sub(trace.hands, target)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    })?);
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- criterion 3

fn zero_header(dim: usize) -> (SamplingHeader, ParameterStore) {
    let header = SamplingHeader::new(dim, 1, 1.0).unwrap();
    let mut s = ParameterStore::new();
    header.init(&mut s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (_, p) in s.iter_mut() {
        p.value.fill(0.0);
    }
    (header, s)
}

struct LinearGaussian {
    a: f64,
    y: f64,
    sigma: f64,
}

impl Likelihood for LinearGaussian {
    fn energy_grad(&self, w: &Mat) -> handgen::Result<Mat> {
        Ok(w.mapv(|x| self.a * (self.a * x - self.y) / (self.sigma * self.sigma)))
    }
}

fn langevin_stationarity() -> Outcome {
    let (header, store) = zero_header(1);
    let cfg = LangevinConfig {
        steps: 50_000,
        delta_prior: 0.01,
        ..LangevinConfig::default()
    };
    let w = langevin_prior(&header, &store, &cfg, 10_000, 17).map_err(|e| e.to_string())?;
    let mean = w.mean().unwrap();
    let var = w.mapv(|x| (x - mean) * (x - mean)).sum() / (w.len() as f64 - 1.0);
    ensure(mean.abs() < 0.05, || format!("stationary mean {mean:.4}"))?;
    ensure((0.95..=1.05).contains(&var), || format!("stationary variance {var:.4}"))?;

    // Prior N(0, 1), y = a·w + N(0, σ²): posterior mean a·y / (a² + σ²).
    let lik = LinearGaussian { a: 2.0, y: 2.0, sigma: 1.0 };
    let analytic = lik.a * lik.y / (lik.a * lik.a + lik.sigma * lik.sigma);
    let pcfg = LangevinConfig {
        steps: 5_000,
        delta_posterior: 0.01,
        ..LangevinConfig::default()
    };
    let wp = langevin_posterior(&header, &store, &lik, &pcfg, 10_000, 23).map_err(|e| e.to_string())?;
    let post = wp.mean().unwrap();
    let rel = (post - analytic).abs() / analytic;
    ensure(rel < 0.05, || format!("posterior mean {post:.4} vs analytic {analytic:.4}"))?;
    Ok(format!(
        "mean {mean:.4}, variance {var:.4}; conjugate posterior mean {post:.4} vs {analytic:.4} ({:.2}%)",
        100.0 * rel
    ))
}

// ---------------------------------------------------------------- criterion 4

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = randn(&mut rng, 50_000, 2, 1.0);
    let mut b = randn(&mut rng, 50_000, 2, 1.0);
    b.column_mut(0).mapv_inplace(|x| x + 1.0);
    let fhd = frechet_distance(&a, &b).map_err(|e| e.to_string())?;
    ensure((fhd - 1.0).abs() <= 0.02, || format!("FHD {fhd:.4} vs closed form 1.0"))?;

    let seqs: Vec<Mat> = generate_synthetic(4, 6, 16).records.into_iter().map(|r| r.hands.frames().clone()).collect();
    let preds: Vec<Mat> = seqs.iter().map(|s| s + &uniform(&mut rng, 16, 90, -0.1, 0.1)).collect();
    let mut worst = 0.0f64;
    for (t, p) in seqs.iter().zip(&preds) {
        let mut l2 = 0.0;
        let mut abs = 0.0;
        for i in 0..t.nrows() {
            let mut sq = 0.0;
            for j in 0..t.ncols() {
                let d = t[[i, j]] - p[[i, j]];
                sq += d * d;
                abs += d.abs();
            }
            l2 += sq.sqrt();
        }
        l2 /= t.nrows() as f64;
        let mpjre = abs / t.len() as f64 * 180.0 / std::f64::consts::PI;
        worst = worst.max((metric_l2(t, p).unwrap() - l2).abs());
        worst = worst.max((metric_mpjre(t, p).unwrap() - mpjre).abs());
    }

    let ae = HandAutoencoder::two_hand(8).unwrap();
    let mut phi = ParameterStore::new();
    ae.init(&mut phi, &mut rng).unwrap();
    let ext = FeatureExtractor::new(ae, &phi, true).unwrap();
    let feats: Vec<Array1<f64>> = preds
        .iter()
        .map(|p| ext.encode_frames(p).unwrap().mean_axis(Axis(0)).unwrap())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            total += (&feats[i] - &feats[j]).mapv(|x| x * x).sum().sqrt();
            pairs += 1.0;
        }
    }
    let div = metric_diversity(&preds, &ext, PairSampling::Exhaustive, 0).map_err(|e| e.to_string())?;
    worst = worst.max((div.mean - total / pairs).abs());
    ensure(worst < 1e-9, || format!("brute-force mismatch {worst:e}"))?;

    let same_l2 = metric_l2(&seqs[0], &seqs[0]).unwrap();
    let same_mpjre = metric_mpjre(&seqs[0], &seqs[0]).unwrap();
    let same_fhd = metric_fhd(&seqs, &seqs, &ext).map_err(|e| e.to_string())?;
    let copies = vec![seqs[0].clone(); 4];
    let same_div = diversity_from_features(&sequence_features(&ext, &copies).unwrap(), PairSampling::Exhaustive, 0)
        .map_err(|e| e.to_string())?;
    ensure(same_l2 == 0.0 && same_mpjre == 0.0 && same_div.mean == 0.0, || {
        format!("identical inputs: l2 {same_l2}, mpjre {same_mpjre}, diversity {}", same_div.mean)
    })?;
    ensure(same_fhd.abs() < 1e-6, || format!("identical-set FHD {same_fhd:e}"))?;
    Ok(format!(
        "FHD {fhd:.4} (closed form 1.0), brute-force max deviation {worst:.1e}, identical-input FHD {same_fhd:.1e}"
    ))
}

// ------------------------------------------------------------ criteria 5 and 6

/// Weight of the adversarial term in the overfit run. At weight 1 the
/// generator and discriminator oscillate on 8 sequences and L_rec stalls
/// between 0.1 and 0.6, so the sanity run uses a reduced weight.
const OVERFIT_ADVERSARIAL_WEIGHT: f64 = 0.01;

struct Overfit {
    first: StageOneBundle,
    second: StageTwoBundle,
    body: handgen::data::BodyPoseSequence,
}

fn overfit_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.channels = 32;
    cfg.model.heads = 4;
    cfg.loss.adversarial = OVERFIT_ADVERSARIAL_WEIGHT;
    cfg.pretrain.synthetic_sequences = 0;
    cfg.memory.proto_slots = 8;
    cfg
}

fn overfit(keep: &mut Option<Overfit>) -> Outcome {
    let cfg = overfit_config();
    let data = generate_synthetic(0, 8, 64);
    let records: Vec<_> = data.records.iter().collect();
    let pre = Pretrained::train(&cfg, &data, None).map_err(|e| e.to_string())?;
    let mut one = StageOneTrainer::new(cfg.clone(), pre).map_err(|e| e.to_string())?;
    let mut rec = f64::INFINITY;
    let mut best = f64::INFINITY;
    while one.steps() < 2000 {
        rec = one.train_batch(&records).map_err(|e| e.to_string())?.rec;
        best = best.min(rec);
        if rec < 0.05 {
            break;
        }
    }
    let steps1 = one.steps();
    ensure(one.generator_store().all_finite() && one.discriminator_store().all_finite(), || "non-finite stage-one parameters".into())?;
    let first = StageOneBundle::from_checkpoint(&one.checkpoint("overfit")).map_err(|e| e.to_string())?;

    let mut two = StageTwoTrainer::new(cfg, first.phi.clone(), &records).map_err(|e| e.to_string())?;
    let mut reached = None;
    let mut loss = f64::INFINITY;
    // Runs a fixed minimum so the diversity checks see a trained generator.
    while two.steps() < 2000 && (reached.is_none() || two.steps() < 200) {
        loss = two.train_batch(&records).map_err(|e| e.to_string())?;
        if loss < 0.1 && reached.is_none() {
            reached = Some(two.steps());
        }
    }
    ensure(two.store().all_finite(), || "non-finite stage-two parameters".into())?;
    *keep = Some(Overfit {
        first,
        second: two.bundle().map_err(|e| e.to_string())?,
        body: data.records[0].body.clone(),
    });
    ensure(rec < 0.05, || format!("stage one L_rec {rec:.4} after {steps1} steps (best {best:.4})"))?;
    let at = reached.ok_or_else(|| format!("stage-two loss {loss:.4} after {} steps", two.steps()))?;
    Ok(format!(
        "adversarial weight {OVERFIT_ADVERSARIAL_WEIGHT}: stage one L_rec {rec:.4} at step {steps1}; stage two loss < 0.1 at step {at}, {loss:.4} after {} steps",
        two.steps()
    ))
}

fn diversity_behavior(model: &Option<Overfit>) -> Outcome {
    let m = model.as_ref().ok_or("overfit model unavailable")?;
    let div = |second: &StageTwoBundle| -> Result<f64, String> {
        let samples: Vec<Mat> = sample_hands(&m.first, second, &m.body, 10, 100)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(HandPoseSequence::into_frames)
            .collect();
        Ok(metric_diversity(&samples, &m.first.phi, PairSampling::Exhaustive, 0).map_err(|e| e.to_string())?.mean)
    };
    let base = div(&m.second)?;
    ensure(base > 0.0, || format!("diversity {base}"))?;
    let mut sweep = Vec::new();
    for sigma in [1.0, 0.1, 0.01] {
        let mut b = m.second.clone();
        b.header = b.header.with_sigma_w(sigma).map_err(|e| e.to_string())?;
        b.config.mcmc.delta_prior = 0.4 * sigma * sigma;
        sweep.push((sigma, div(&b)?));
    }
    for w in sweep.windows(2) {
        ensure(w[1].1 <= w[0].1 + 1e-3, || format!("diversity not monotone: {sweep:?}"))?;
    }
    Ok(format!(
        "k=10 diversity {base:.4}; sweep {}",
        sweep.iter().map(|(s, d)| format!("σ_w={s}: {d:.2e}")).collect::<Vec<_>>().join(", ")
    ))
}

// ---------------------------------------------------------------- criterion 7

fn stage_two_gradient_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ae = HandAutoencoder::two_hand(8).unwrap();
    let mut phi = ParameterStore::new();
    ae.init(&mut phi, &mut rng).unwrap();
    let ext = FeatureExtractor::new(ae, &phi, true).unwrap();
    let seqs: Vec<Mat> = generate_synthetic(7, 6, 8).records.into_iter().map(|r| r.hands.frames().clone()).collect();
    let bank = build_prototype_memory("proto", &sequence_features(&ext, &seqs).unwrap(), 4, 0.8, 7).unwrap();
    let model = GenerationModel::new(8, 4, 16).unwrap();
    let header = SamplingHeader::new(4, 8, 1.0).unwrap();
    let mut store = ParameterStore::new();
    model.init(&mut store, &mut rng).unwrap();
    header.init(&mut store, &mut rng).unwrap();
    let batch = Stage2Batch {
        prototypes: retrieve_prototypes(&bank, &ext, &seqs[0]).unwrap(),
        hands: seqs[0].clone(),
        target: seqs[1].clone(),
    };
    let w_plus = randn(&mut rng, 8, 4, 1.0);
    let w_minus = randn(&mut rng, 8, 4, 1.0);

    let mut hand = store.clone();
    hand.zero_grad();
    stage_two_grad_step(&model, &header, &mut hand, &batch, &w_minus, &w_plus, ResidualMode::L1, 1.0).map_err(|e| e.to_string())?;
    let mut auto = store.clone();
    auto.zero_grad();
    let mut g = Graph::new();
    let (h, p, w) = (g.constant(batch.hands.clone()), g.constant(batch.prototypes.clone()), g.constant(w_plus.clone()));
    let out = model.forward(&mut g, &auto, h, p, w).unwrap();
    let t = g.constant(batch.target.clone());
    let loss = loss_stage2(&mut g, t, out).unwrap();
    let grads = g.backward(loss).unwrap();
    g.accumulate_into(&grads, &mut auto).unwrap();
    let mut worst = 0.0f64;
    let mut nonzero = false;
    for (name, param) in hand.iter().filter(|(n, _)| n.starts_with(GENERATOR_PREFIX)) {
        for (a, b) in param.grad.iter().zip(auto.grad(name).unwrap().iter()) {
            worst = worst.max((a - b).abs());
            nonzero |= *a != 0.0;
        }
    }
    ensure(nonzero, || "θ-gradient is identically zero".into())?;
    ensure(worst < 1e-6, || format!("θ-gradient deviation {worst:e}"))?;

    let mut same = store.clone();
    same.zero_grad();
    stage_two_grad_step(&model, &header, &mut same, &batch, &w_plus, &w_plus, ResidualMode::L1, 1.0).map_err(|e| e.to_string())?;
    let alpha_zero = same
        .iter()
        .filter(|(n, _)| n.starts_with(HEADER_PREFIX))
        .all(|(_, p)| p.grad.iter().all(|x| *x == 0.0));
    ensure(alpha_zero, || "α-gradient not exactly zero for w⁺ = w⁻".into())?;
    Ok(format!("θ-gradient max deviation {worst:.1e}; α-gradient exactly 0 for equal chains"))
}

// ---------------------------------------------------------------- criterion 8

const TINY: &str = r#"
seed = 5
epochs = 2
batch_size = 4
[model]
channels = 16
heads = 4
attention_blocks = 1
srm_slots = 8
tmm_slots = 8
disc_channels = 8
[memory]
proto_slots = 2
[stage2]
w_dim = 4
hidden = 16
header_hidden = 8
samples = 3
diversity_pairs = 20
[pretrain]
epochs = 3
batch_size = 64
synthetic_sequences = 2
"#;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let cfg = TrainConfig::from_toml_str(TINY).map_err(|e| e.to_string())?;
    let data = split_dataset(&generate_synthetic(8, 20, 64), SplitRatios::STANDARD, 8).unwrap();
    let run = |root: &Path| -> Result<(Vec<(String, Vec<u8>)>, Vec<(String, Vec<u8>)>, String, Vec<(String, Vec<u8>)>), String> {
        let e = |e: handgen::Error| e.to_string();
        let (s1, s2, out) = (root.join("s1"), root.join("s2"), root.join("samples"));
        let first = train_stage_one(&cfg, &data, &s1).map_err(e)?;
        let second = train_stage_two(&cfg, &data, &s1, &s2).map_err(e)?;
        let report = evaluate(&first, Some(&second), &data, Split::Test).map_err(e)?;
        let body = root.join("body.json");
        save_sequence(data.subset(Split::Test)[0], &body).map_err(e)?;
        sample_diverse(&s1, &s2, &body, 3, 9, &out, None).map_err(e)?;
        Ok((dir_bytes(&s1), dir_bytes(&s2), serde_json::to_string(&report).unwrap(), dir_bytes(&out)))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run(a.path())?;
    let rb = run(b.path())?;
    ensure(ra.0 == rb.0, || "stage-one checkpoints differ".into())?;
    ensure(ra.1 == rb.1, || "stage-two checkpoints differ".into())?;
    ensure(ra.2 == rb.2, || "metric reports differ".into())?;
    ensure(ra.3 == rb.3, || "sampled files differ".into())?;
    Ok(format!(
        "{} + {} checkpoint files, metric report and {} sample files bit-identical",
        ra.0.len(),
        ra.1.len(),
        ra.3.len()
    ))
}

// ---------------------------------------------------------------- criterion 9

fn smoothing() -> Outcome {
    let constant = HandPoseSequence::new(Array2::from_elem((64, 90), 0.3), 30).unwrap();
    let smoothed = temporal_smooth(&constant, 5).map_err(|e| e.to_string())?;
    let dev = (smoothed.frames() - constant.frames()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    ensure(dev < 1e-12, || format!("constant changed by {dev:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noisy = HandPoseSequence::new(uniform(&mut rng, 64, 90, -0.5, 0.5), 30).unwrap();
    ensure(temporal_smooth(&noisy, 1).unwrap() == noisy, || "window 1 is not the identity".into())?;

    let mut impulse = Array2::zeros((64, 90));
    impulse.row_mut(32).fill(0.5);
    let impulse = HandPoseSequence::new(impulse, 30).unwrap();
    let before = second_difference_norm(impulse.frames());
    let after = second_difference_norm(temporal_smooth(&impulse, 5).unwrap().frames());
    let reduction = 1.0 - after / before;
    ensure(reduction > 0.5, || format!("second-difference reduction {:.1}%", 100.0 * reduction))?;
    Ok(format!("constant deviation {dev:.1e}, identity at window 1, impulse second-difference reduced {:.1}%", 100.0 * reduction))
}

// ------------------------------------------------------------------- runner

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over budget")),
        Err(e) => (false, e),
    };
    // Written to the raw handle so the line shows even when output is captured.
    let line = format!(
        "criterion {id} {} {name}: {detail} [{:.1}s / {}s]\n",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(run(1, "memory oracle equivalence", secs(10), memory_oracle));
    results.push(run(2, "gradient checks", secs(120), gradient_checks));
    results.push(run(3, "Langevin stationarity", secs(300), langevin_stationarity));
    results.push(run(4, "metric oracles", secs(60), metric_oracles));
    let mut model = None;
    results.push(run(5, "overfit sanity", secs(900), || overfit(&mut model)));
    results.push(run(6, "diversity behavior", secs(120), || diversity_behavior(&model)));
    results.push(run(7, "stage-two gradient consistency", secs(10), stage_two_gradient_consistency));
    results.push(run(8, "determinism", secs(600), determinism));
    results.push(run(9, "smoothing contract", secs(1), smoothing));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
