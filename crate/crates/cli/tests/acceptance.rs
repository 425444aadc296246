//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p fairdiff-cli --test acceptance`. Extra numeric
//! arguments select criteria, e.g. `-- 1 2 9`. Failures are reported but
//! only change the exit status under `--strict`.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fairdiff_core::conditioning::{balance, dataset_conditions, draw_conditions, empirical_joint, BalancingLevel, ConditionTable};
use fairdiff_core::data::{split_dataset, BlockLayout, Column, ColumnData, Dataset, EncodedBatch, TableSchema, TabularEncoder};
use fairdiff_core::denoiser::{
    corrupt, train, ConditionCards, ConditionSpec, Denoiser, DenoiserConfig, LatentCodec, TrainedModel, TrainingData,
};
use fairdiff_core::diffusion::{gaussian, multinomial, NoiseSchedule, ScheduleKind};
use fairdiff_core::eval::{
    self, composite, dcr, dpr, eor, eor_detailed, ClassifierKind, EvalInputs, MetricWeights,
};
use fairdiff_core::guidance::{label_guided_sample, reverse_sample, GuidanceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -r.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn schema(cols: Vec<Column>, target: &str, sensitive: &[&str]) -> TableSchema {
    TableSchema::new(cols, target, sensitive.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn binary(name: &str) -> Column {
    Column::categorical(name, ["0", "1"])
}

fn fit_model(ds: &Dataset, enc: &TabularEncoder, config: DenoiserConfig, timesteps: usize) -> TrainedModel {
    let x0 = enc.encode(ds).unwrap();
    let conds = dataset_conditions(ds);
    let schema = ds.schema();
    let cards = ConditionCards {
        label: schema.target_cardinality(),
        sensitive: schema.sensitive_cardinalities(),
    };
    let mut model = Denoiser::new(config, x0.layout().clone(), cards).unwrap();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine, timesteps).unwrap();
    train(
        &mut model,
        &TrainingData {
            x0: &x0,
            conditions: &conds,
        },
        &schedule,
        |_, _| {},
    )
    .unwrap();
    TrainedModel {
        model,
        codec: LatentCodec::Identity,
        data_layout: x0.layout().clone(),
        schedule,
    }
}

// 1 -------------------------------------------------------------------------

fn random_table(r: &mut ChaCha8Rng) -> ConditionTable {
    let labels = r.gen_range(1..=5);
    let cards: Vec<usize> = (0..r.gen_range(0..=3)).map(|_| r.gen_range(1..=4)).collect();
    let combos: usize = cards.iter().product();
    let rows = (0..labels)
        .map(|_| {
            if r.gen_bool(0.2) {
                // a degenerate row with all mass on one combination
                let mut v = vec![0.0; combos];
                v[r.gen_range(0..combos)] = 1.0;
                v
            } else {
                random_simplex(r, combos)
            }
        })
        .collect();
    ConditionTable::new(random_simplex(r, labels), rows, cards).unwrap()
}

fn balancing_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    for case in 0..1000 {
        let table = random_table(&mut r);
        let levels: Vec<ConditionTable> = BalancingLevel::all().map(|l| balance(&table, l)).collect();
        ensure(levels[0] == table, format!("case {case}: level 0 is not the identity"))?;
        let combos = table.combos();
        for (k, row) in table.rows.iter().enumerate() {
            let mean = row.iter().sum::<f64>() / combos as f64;
            let mut last = f64::INFINITY;
            for (i, b) in levels.iter().enumerate() {
                let s: f64 = b.rows[k].iter().sum();
                ensure((s - 1.0).abs() <= 1e-12, format!("case {case} level {i}: row sum {s}"))?;
                let dev = b.rows[k].iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
                ensure(dev <= last, format!("case {case}: deviation grows at level {i}"))?;
                last = dev;
                ensure(b.label_marginal == table.label_marginal, "label marginal changed")?;
            }
            let uniform = 1.0 / combos as f64;
            let worst = levels[10].rows[k].iter().map(|v| (v - uniform).abs()).fold(0.0, f64::max);
            ensure(worst <= 1e-12, format!("case {case}: level 10 off uniform by {worst:e}"))?;
        }
    }
    let el = start.elapsed();
    ensure(el < Duration::from_secs(1), format!("took {el:?}"))?;
    Ok(format!("1000 tables in {el:?}"))
}

// 2 -------------------------------------------------------------------------

/// `q(x_{t-1} | x0)` by chaining one-step kernels, then Bayes' rule with
/// the one-step likelihood of the observed `x_t`.
fn brute_force_posterior(x_t: usize, x0: &[f64], t: usize, betas: &[f64]) -> Vec<f64> {
    let k = x0.len();
    let step = |p: &[f64], beta: f64| -> Vec<f64> {
        // Σ_j p_j · [(1−β)·1{i=j} + β/K]
        let total: f64 = p.iter().sum();
        (0..k).map(|i| (1.0 - beta) * p[i] + beta / k as f64 * total).collect()
    };
    let mut prior = x0.to_vec();
    for &b in &betas[..t - 1] {
        prior = step(&prior, b);
    }
    let beta_t = betas[t - 1];
    let joint: Vec<f64> = (0..k)
        .map(|j| {
            let lik = (1.0 - beta_t) * f64::from(u8::from(j == x_t)) + beta_t / k as f64;
            lik * prior[j]
        })
        .collect();
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|v| v / z).collect()
}

fn multinomial_posterior_oracle() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for k in 1..=4 {
        for big_t in 1..=10 {
            let betas: Vec<f64> = (0..big_t).map(|_| r.gen_range(0.001..0.6)).collect();
            let sched = NoiseSchedule::from_betas(betas.clone()).unwrap();
            for t in 1..=big_t {
                for _ in 0..1000 {
                    let x0 = if r.gen_bool(0.5) {
                        let mut v = vec![0.0; k];
                        v[r.gen_range(0..k)] = 1.0;
                        v
                    } else {
                        random_simplex(&mut r, k)
                    };
                    let xi = r.gen_range(0..k);
                    let mut x_t = vec![0.0; k];
                    x_t[xi] = 1.0;
                    let got = multinomial::posterior(&x_t, &x0, t, &sched).unwrap().probs;
                    let want = brute_force_posterior(xi, &x0, t, &betas);
                    for (a, b) in got.iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                    checked += 1;
                }
            }
        }
    }
    ensure(worst <= 1e-10, format!("max abs diff {worst:e}"))?;
    Ok(format!("{checked} instances, max abs diff {worst:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn gaussian_posterior_equivalence() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let schedules: Vec<NoiseSchedule> = vec![
        NoiseSchedule::new(ScheduleKind::Linear, 100).unwrap(),
        NoiseSchedule::new(ScheduleKind::Cosine, 100).unwrap(),
        NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap(),
        NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap(),
        NoiseSchedule::from_betas((0..50).map(|_| r.gen_range(1e-4..0.3)).collect()).unwrap(),
    ];
    for s in &schedules {
        ensure(s.posterior_variance(1) == 0.0, "posterior variance at t=1 is not exactly 0")?;
    }
    for _ in 0..10_000 {
        let sched = &schedules[r.gen_range(0..schedules.len())];
        let t = r.gen_range(1..=sched.timesteps());
        let d = r.gen_range(1..6);
        let x0: Vec<f64> = (0..d).map(|_| 2.0 * normal(&mut r)).collect();
        let eps: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let x_t = gaussian::forward_sample(&x0, t, &eps, sched).unwrap();
        let post = gaussian::posterior_mean(&x_t, &eps, t, sched).unwrap();
        let (ab, ab_prev, a, b) = (
            sched.alpha_bar(t),
            sched.alpha_bar(t - 1),
            sched.alpha(t),
            sched.beta(t),
        );
        for j in 0..d {
            let x0_form = ab_prev.sqrt() * b / (1.0 - ab) * x0[j] + a.sqrt() * (1.0 - ab_prev) / (1.0 - ab) * x_t[j];
            worst = worst.max((post.mean[j] - x0_form).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max abs diff {worst:e}"))?;
    Ok(format!("10^4 instances, max abs diff {worst:.1e}; variance at t=1 is 0"))
}

// 4 -------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let sched = NoiseSchedule::new(ScheduleKind::Linear, 10).unwrap();
    let layout = BlockLayout::new(2, vec![3, 2]);
    let cards = ConditionCards {
        label: 2,
        sensitive: vec![2],
    };
    let config = DenoiserConfig {
        hidden: 8,
        depth: 2,
        time_dim: 4,
        cond_dim: 4,
        ..Default::default()
    };
    let model = Denoiser::new(config.clone(), layout.clone(), cards.clone()).unwrap();
    let mut r = rng(4);
    let rows = 6;
    let mut x0 = Vec::new();
    let mut conds = Vec::new();
    for i in 0..rows {
        x0.extend([normal(&mut r), normal(&mut r)]);
        let a = r.gen_range(0..3);
        let b = r.gen_range(0..2);
        x0.extend((0..3).map(|j| f64::from(u8::from(j == a))));
        x0.extend((0..2).map(|j| f64::from(u8::from(j == b))));
        conds.push(match i % 3 {
            0 => ConditionSpec::full(1, &[0]),
            1 => ConditionSpec::absent(1),
            _ => ConditionSpec {
                label: None,
                sensitive: vec![Some(1)],
            },
        });
    }
    let mut batch = corrupt(&model, &x0, conds, &sched, &mut r);
    batch.ts[0] = 1;
    batch.ts[1] = 10;
    let (_, grad) = model.loss_and_gradient(&batch, &sched);
    let rebuild = |params: Vec<f64>| {
        Denoiser::from_parts(config.clone(), layout.clone(), cards.clone(), model.param_layout().clone(), params, 0).unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let base = model.params().to_vec();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        let up = rebuild(p.clone()).loss(&batch, &sched);
        p[i] = base[i] - h;
        let down = rebuild(p).loss(&batch, &sched);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("{} parameters, max relative error {worst:.1e}", base.len()))
}

// 5 -------------------------------------------------------------------------

fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn toy_fidelity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let n = 5000;
    let (mut x1, mut x2, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let k = r.gen_bool(0.3);
        x1.push(2.0 * f64::from(u8::from(k)) + normal(&mut r));
        // skewed: a sum of squares
        let (a, b) = (normal(&mut r), normal(&mut r));
        x2.push(a * a + b * b + 0.5 * f64::from(u8::from(k)));
        c.push(u32::from(k));
    }
    let ds = Dataset::new(
        schema(vec![Column::numerical("x1"), Column::numerical("x2"), binary("c")], "c", &[]),
        vec![ColumnData::Numerical(x1), ColumnData::Numerical(x2), ColumnData::Categorical(c)],
    )
    .unwrap();
    let enc = TabularEncoder::fit(&ds, false).unwrap();
    let config = DenoiserConfig {
        epochs: 100,
        ..Default::default()
    };
    let tm = fit_model(&ds, &enc, config, 100);
    let conds = draw_conditions(2000, &empirical_joint(&ds).unwrap(), 5);
    let synth = enc.decode(&reverse_sample(&tm, &conds, &GuidanceConfig::default(), 5, 1).unwrap()).unwrap();
    let k1 = ks(ds.numerical(0), synth.numerical(0));
    let k2 = ks(ds.numerical(1), synth.numerical(1));
    let rate = |v: &[u32]| v.iter().filter(|x| **x == 1).count() as f64 / v.len() as f64;
    let tv = (rate(ds.categorical(2)) - rate(synth.categorical(2))).abs();
    let el = start.elapsed();
    let detail = format!("KS {k1:.3}, {k2:.3}; TV {tv:.3}; {el:.0?}");
    ensure(k1 <= 0.10 && k2 <= 0.10 && tv <= 0.05, detail.clone())?;
    ensure(el <= Duration::from_secs(300), detail.clone())?;
    Ok(detail)
}

// 6 -------------------------------------------------------------------------

/// Binary label and sensitive attribute with `P(s=0 | y=1) = 0.8`; both
/// shape the numeric columns.
fn planted_joint(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (mut x1, mut x2, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let yi = r.gen_bool(0.4);
        let si = !r.gen_bool(if yi { 0.8 } else { 0.3 });
        let (yf, sf) = (f64::from(u8::from(yi)), f64::from(u8::from(si)));
        x1.push(1.5 * yf + 0.5 * sf + normal(&mut r));
        x2.push(sf - yf + normal(&mut r));
        s.push(u32::from(si));
        y.push(u32::from(yi));
    }
    Dataset::new(
        schema(
            vec![Column::numerical("x1"), Column::numerical("x2"), binary("s"), binary("y")],
            "y",
            &["s"],
        ),
        vec![
            ColumnData::Numerical(x1),
            ColumnData::Numerical(x2),
            ColumnData::Categorical(s),
            ColumnData::Categorical(y),
        ],
    )
    .unwrap()
}

fn conditioning_fidelity() -> Outcome {
    let mut total = 0.0;
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let ds = planted_joint(4000, 100 + seed);
        let enc = TabularEncoder::fit(&ds, false).unwrap();
        let config = DenoiserConfig {
            epochs: 100,
            seed,
            ..Default::default()
        };
        let tm = fit_model(&ds, &enc, config, 100);
        let table = balance(&empirical_joint(&ds).unwrap(), BalancingLevel::new(10).unwrap());
        let n = 2000;
        let conds = draw_conditions(n, &table, seed);
        let synth = enc.decode(&reverse_sample(&tm, &conds, &GuidanceConfig::default(), seed, 1).unwrap()).unwrap();
        let mut joint = [0.0; 4];
        for i in 0..n {
            joint[(synth.target()[i] * 2 + synth.categorical(2)[i]) as usize] += 1.0 / n as f64;
        }
        let target: Vec<f64> = table.joint().into_iter().flatten().collect();
        let tv = 0.5 * joint.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        per_seed.push(format!("{tv:.3}"));
        total += tv / 3.0;
    }
    let detail = format!("mean TV {total:.3} (per seed {})", per_seed.join(", "));
    ensure(total <= 0.10, detail.clone())?;
    Ok(detail)
}

// 7 -------------------------------------------------------------------------

/// The sensitive attribute shifts the label rate and leaks into `x2`.
fn planted_bias(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (mut x1, mut x2, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let si = r.gen_bool(0.5);
        let yi = r.gen_bool(if si { 0.7 } else { 0.2 });
        x1.push(2.0 * f64::from(u8::from(yi)) + normal(&mut r));
        x2.push(2.0 * f64::from(u8::from(si)) + normal(&mut r));
        s.push(u32::from(si));
        y.push(u32::from(yi));
    }
    Dataset::new(
        schema(
            vec![Column::numerical("x1"), Column::numerical("x2"), binary("s"), binary("y")],
            "y",
            &["s"],
        ),
        vec![
            ColumnData::Numerical(x1),
            ColumnData::Numerical(x2),
            ColumnData::Categorical(s),
            ColumnData::Categorical(y),
        ],
    )
    .unwrap()
}

fn fairness_improvement() -> Outcome {
    // [level][auc, dpr, eor]
    let mut m = [[0.0; 3]; 2];
    for seed in 0..3u64 {
        let split = split_dataset(&planted_bias(8000, 200 + seed), seed).unwrap();
        let enc = TabularEncoder::fit(&split.train, false).unwrap();
        let config = DenoiserConfig {
            epochs: 100,
            seed,
            ..Default::default()
        };
        let tm = fit_model(&split.train, &enc, config, 100);
        let empirical = empirical_joint(&split.train).unwrap();
        for (li, level) in [0u8, 10].into_iter().enumerate() {
            let table = balance(&empirical, BalancingLevel::new(level).unwrap());
            let conds = draw_conditions(split.train.n_rows(), &table, seed);
            let z = reverse_sample(&tm, &conds, &GuidanceConfig::default(), seed, 1).unwrap();
            let synth = enc.decode(&z).unwrap();
            let rep = eval::evaluate(&EvalInputs {
                encoder: &enc,
                train: &split.train,
                test: &split.test,
                synthetic: &synth,
                classifier: ClassifierKind::BoostedStumps,
                weights: MetricWeights::default(),
                fairness_attribute: "s",
                seed,
            })
            .unwrap();
            m[li][0] += rep.auc / 3.0;
            m[li][1] += rep.dpr / 3.0;
            m[li][2] += rep.eor / 3.0;
        }
    }
    let (d_auc, d_dpr, d_eor) = (m[0][0] - m[1][0], m[1][1] - m[0][1], m[1][2] - m[0][2]);
    let detail = format!(
        "level 0 auc/dpr/eor {:.3}/{:.3}/{:.3}, level 10 {:.3}/{:.3}/{:.3}; DPR {d_dpr:+.3}, EOR {d_eor:+.3}, AUC drop {d_auc:.3}",
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]
    );
    ensure(d_dpr >= 0.15 && d_eor >= 0.10 && d_auc <= 0.05, detail.clone())?;
    Ok(detail)
}

// 8 -------------------------------------------------------------------------

fn bits(b: &EncodedBatch) -> Vec<u64> {
    b.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn reduction_identity() -> Outcome {
    let config = DenoiserConfig {
        hidden: 16,
        epochs: 5,
        batch_size: 64,
        ..Default::default()
    };
    // no sensitive attributes at all
    let ds = planted_joint(400, 7);
    let plain = Dataset::new(
        schema(
            vec![Column::numerical("x1"), Column::numerical("x2"), binary("y")],
            "y",
            &[],
        ),
        vec![ds.columns()[0].clone(), ds.columns()[1].clone(), ds.columns()[3].clone()],
    )
    .unwrap();
    let enc = TabularEncoder::fit(&plain, false).unwrap();
    let tm = fit_model(&plain, &enc, config.clone(), 20);
    let conds = draw_conditions(150, &empirical_joint(&plain).unwrap(), 1);
    let g = GuidanceConfig::default();
    let a = reverse_sample(&tm, &conds, &g, 11, 1).unwrap();
    let b = label_guided_sample(&tm, &conds, g.w_g, 11, 1).unwrap();
    ensure(bits(&a) == bits(&b), "S empty: output differs from the label-only sampler")?;

    // sensitive attributes present, but absent from every condition
    let enc = TabularEncoder::fit(&ds, false).unwrap();
    let tm = fit_model(&ds, &enc, config, 20);
    let full = draw_conditions(150, &balance(&empirical_joint(&ds).unwrap(), BalancingLevel::new(10).unwrap()), 2);
    let label_only: Vec<ConditionSpec> = full.iter().map(ConditionSpec::label_only).collect();
    let a = reverse_sample(&tm, &label_only, &g, 12, 1).unwrap();
    let b = label_guided_sample(&tm, &label_only, g.w_g, 12, 1).unwrap();
    ensure(bits(&a) == bits(&b), "absent S: output differs from the label-only sampler")?;

    // warm-up past T switches the sensitive term off whatever S says
    let late = GuidanceConfig {
        delta: 21,
        ..Default::default()
    };
    let flipped: Vec<ConditionSpec> = full
        .iter()
        .map(|c| ConditionSpec::full(c.label.unwrap(), &[1 - c.sensitive[0].unwrap()]))
        .collect();
    let reference = bits(&label_guided_sample(&tm, &full, late.w_g, 13, 1).unwrap());
    for conds in [&full, &flipped, &label_only] {
        let out = reverse_sample(&tm, conds, &late, 13, 1).unwrap();
        ensure(bits(&out) == reference, "delta > T: output depends on S")?;
    }
    Ok("S empty and delta > T both byte-identical to label-only guidance".into())
}

// 9 -------------------------------------------------------------------------

fn by_rates(rates: &[usize]) -> (Vec<bool>, Vec<u32>) {
    let mut p = Vec::new();
    let mut g = Vec::new();
    for (k, &r) in rates.iter().enumerate() {
        for i in 0..10 {
            p.push(i < r);
            g.push(k as u32);
        }
    }
    (p, g)
}

fn gaussian_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> EncodedBatch {
    EncodedBatch::new(BlockLayout::new(d, vec![]), (0..n * d).map(|_| normal(r)).collect()).unwrap()
}

fn metric_suite() -> Outcome {
    for (rates, want) in [(vec![2, 4], 0.5), (vec![3, 3], 1.0), (vec![1, 2, 5], 0.2)] {
        let (p, g) = by_rates(&rates);
        let got = dpr(&p, &g).unwrap();
        ensure(got == want, format!("DPR {rates:?}: {got} != {want}"))?;
    }
    // TPRs (0.8, 0.9), FPRs (0.1, 0.3)
    let (mut p, mut y, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for (grp, tp, fp) in [(0u32, 8, 1), (1, 9, 3)] {
        for i in 0..10 {
            p.push(i < tp);
            y.push(true);
            g.push(grp);
        }
        for i in 0..10 {
            p.push(i < fp);
            y.push(false);
            g.push(grp);
        }
    }
    let e = eor(&p, &y, &g).unwrap();
    ensure(e == (0.1f64 / 0.3).min(0.8 / 0.9), format!("EOR {e}"))?;
    let same: Vec<u32> = g.iter().map(|_| 0).chain(g.iter().map(|_| 1)).collect();
    let p2: Vec<bool> = p.iter().chain(&p).copied().collect();
    let y2: Vec<bool> = y.iter().chain(&y).copied().collect();
    ensure(eor_detailed(&p2, &y2, &same).unwrap().value == 1.0, "identical tables do not give EOR 1")?;
    let w = MetricWeights::default();
    for (a, d, o, want) in [(0.8, 0.6, 0.4, 0.65), (1.0, 1.0, 1.0, 1.0), (0.0, 0.0, 0.0, 0.0)] {
        let got = composite(a, d, o, &w);
        ensure((got - want).abs() <= 1e-15, format!("composite({a},{d},{o}) = {got}"))?;
    }

    let mut r = rng(9);
    let n = 2000;
    let train = gaussian_rows(&mut r, n, 4);
    let holdout = gaussian_rows(&mut r, n, 4);
    let fresh = gaussian_rows(&mut r, n, 4);
    let copied = dcr(&train, &holdout, &train).unwrap().closeness;
    ensure(copied >= 0.99, format!("copied-train closeness {copied}"))?;
    let same = dcr(&train, &holdout, &fresh).unwrap().closeness;
    ensure((same - 0.5).abs() <= 0.05, format!("same-distribution closeness {same}"))?;
    Ok(format!(
        "DPR/EOR/composite examples exact; closeness copied {copied:.3}, same-distribution {same:.3}"
    ))
}

// 10 ------------------------------------------------------------------------

fn write_cli_inputs(dir: &Path) {
    let ds = planted_bias(400, 10);
    let mut buf = Vec::new();
    ds.write_csv(&mut buf, &[]).unwrap();
    std::fs::write(dir.join("data.csv"), buf).unwrap();
    let schema = serde_json::json!({
        "columns": [
            {"name": "x1", "kind": "numerical"},
            {"name": "x2", "kind": "numerical"},
            {"name": "s", "kind": "categorical"},
            {"name": "y", "kind": "categorical", "values": ["0", "1"]}
        ],
        "target": "y",
        "sensitive": ["s"]
    });
    std::fs::write(dir.join("schema.json"), schema.to_string()).unwrap();
    let config = serde_json::json!({
        "paths": {"data": "data.csv", "schema": "schema.json", "out": "run"},
        "seed": 3,
        "schedule": {"timesteps": 10},
        "denoiser": {"hidden": 16, "epochs": 3, "batch_size": 64},
        "sweep": {"levels": [0, 5, 10], "seeds": [0, 1]}
    });
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
}

fn fairdiff(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fairdiff"))
        .current_dir(dir)
        .env("FAIRDIFF_LOG", "error")
        .args(args)
        .args(["--config", "config.json"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("fairdiff {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()),
    )
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    write_cli_inputs(dir);
    let read = |name: &str| std::fs::read(dir.join("run").join(name)).map_err(|e| e.to_string());
    fairdiff(dir, &["prepare"])?;
    fairdiff(dir, &["train"])?;
    fairdiff(dir, &["sample", "--jobs", "1"])?;
    let first = read("synthetic.csv")?;
    fairdiff(dir, &["sample", "--jobs", "1"])?;
    ensure(read("synthetic.csv")? == first, "sample differs between identical runs")?;
    fairdiff(dir, &["sample", "--jobs", "3"])?;
    ensure(read("synthetic.csv")? == first, "sample differs across --jobs")?;
    fairdiff(dir, &["sweep", "--jobs", "1"])?;
    let sweep = read("sweep.csv")?;
    fairdiff(dir, &["sweep", "--jobs", "1"])?;
    ensure(read("sweep.csv")? == sweep, "sweep differs between identical runs")?;
    fairdiff(dir, &["sweep", "--jobs", "3"])?;
    ensure(read("sweep.csv")? == sweep, "sweep differs across --jobs")?;
    let rows = String::from_utf8_lossy(&first).lines().count() - 1;
    Ok(format!("{rows} sampled rows and {} sweep rows byte-identical", String::from_utf8_lossy(&sweep).lines().count() - 1))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "balancing exactness", balancing_exactness),
        (2, "multinomial posterior oracle", multinomial_posterior_oracle),
        (3, "gaussian posterior equivalence", gaussian_posterior_equivalence),
        (4, "gradient correctness", gradient_correctness),
        (5, "toy generative fidelity", toy_fidelity),
        (6, "conditioning fidelity", conditioning_fidelity),
        (7, "fairness improvement", fairness_improvement),
        (8, "guidance reduction identity", reduction_identity),
        (9, "metric unit suite", metric_suite),
        (10, "determinism", cli_determinism),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let (mut ran, mut failed) = (0, 0);
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let el = start.elapsed();
        match outcome {
            Ok(d) => println!("PASS criterion {id} ({name}): {d} [{el:.1?}]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {d} [{el:.1?}]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
