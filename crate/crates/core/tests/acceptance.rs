//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line
//! to the real stdout, so the lines show up even under output capture.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use semidec::cli::{load_split, run_from_args};
use semidec::config::{load_config, ExperimentConfig};
use semidec::data::{MultimodalSample, Sentiment};
use semidec::dec::{
    class_probabilities, clustering_loss, clustering_loss_grad, combined_loss,
    disentanglement_loss, disentanglement_loss_grad, reconstruction_loss,
    reconstruction_loss_grad, soft_assign, soft_assign_backward, supervised_loss,
    supervised_loss_grad_q, target_distribution, ClusterState, LossTerms, LossWeights,
};
use semidec::model::{count_parameters, ArchConfig, Batch, EncoderStack, EncoderStackConfig};
use semidec::nn::{Mode, Params};
use semidec::objective::{composite_loss_and_grad, ClusterTargets};
use semidec::pipeline::{
    pretrain_autoencoder, pretrain_dec, train_baseline, transfer_and_finetune, StageContext,
};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n} {name} ... {verdict} ({detail})\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || scale * randn(rng))
}

// Loop oracles written straight from the formulas.

fn oracle_q(z: &Array2<f64>, mu: &Array2<f64>, a: f64) -> Vec<Vec<f64>> {
    let (n, k, d) = (z.nrows(), mu.nrows(), z.ncols());
    let mut q = vec![vec![0.0; k]; n];
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..k {
            let mut dist = 0.0;
            for t in 0..d {
                dist += (z[[i, t]] - mu[[j, t]]).powi(2);
            }
            q[i][j] = (1.0 + dist / a).powf(-(a + 1.0) / 2.0);
            denom += q[i][j];
        }
        for j in 0..k {
            q[i][j] /= denom;
        }
    }
    q
}

fn oracle_p(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k) = (q.len(), q[0].len());
    let mut f = vec![0.0; k];
    for row in q {
        for j in 0..k {
            f[j] += row[j];
        }
    }
    let mut p = vec![vec![0.0; k]; n];
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..k {
            denom += q[i][j] * q[i][j] / f[j];
        }
        for j in 0..k {
            p[i][j] = (q[i][j] * q[i][j] / f[j]) / denom;
        }
    }
    p
}

fn oracle_kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in 0..p[i].len() {
            s += p[i][j] * (p[i][j] / q[i][j]).ln();
        }
    }
    s
}

fn oracle_recon(x: &[Array2<f64>], xh: &[Array2<f64>]) -> f64 {
    let n = x[0].nrows();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for (a, b) in x.iter().zip(xh) {
            for t in 0..a.ncols() {
                row += (a[[i, t]] - b[[i, t]]).powi(2);
            }
        }
        s += row;
    }
    s / n as f64
}

fn oracle_dis(z: &Array2<f64>) -> f64 {
    let (n, d) = z.dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for t in 0..d {
            mean[t] += z[[i, t]] / n as f64;
        }
    }
    let mut s = 0.0;
    for a in 0..d {
        for b in 0..d {
            if a == b {
                continue;
            }
            let mut c = 0.0;
            for i in 0..n {
                c += (z[[i, a]] - mean[a]) * (z[[i, b]] - mean[b]);
            }
            c /= n as f64;
            s += c * c;
        }
    }
    s
}

fn oracle_sup(q: &[Vec<f64>], map: &[Sentiment], labels: &[Option<Sentiment>]) -> f64 {
    let mut s = 0.0;
    let mut nl = 0;
    for (i, y) in labels.iter().enumerate() {
        let Some(y) = y else { continue };
        nl += 1;
        for c in [Sentiment::Negative, Sentiment::Positive] {
            let yic = if c == *y { 1.0 } else { 0.0 };
            let mut yhat = 0.0;
            for (j, m) in map.iter().enumerate() {
                if *m == c {
                    yhat += q[i][j];
                }
            }
            if yic > 0.0 {
                s -= yic * yhat.ln();
            }
        }
    }
    if nl == 0 {
        0.0
    } else {
        s / nl as f64
    }
}

fn max_rel(a: &Array2<f64>, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m = m.max(rel(a[[i, j]], v));
        }
    }
    m
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<Sentiment>> {
    let mut labels: Vec<Option<Sentiment>> = (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => None,
            1 => Some(Sentiment::Negative),
            _ => Some(Sentiment::Positive),
        })
        .collect();
    labels[0] = Some(Sentiment::Positive);
    labels
}

fn random_map(rng: &mut ChaCha8Rng, k: usize) -> Vec<Sentiment> {
    let mut map = vec![Sentiment::Negative, Sentiment::Positive];
    for _ in 2..k {
        map.push(if rng.random_bool(0.5) {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        });
    }
    map
}

#[test]
fn criterion_1_loss_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(2..=3);
        let a = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let z = matrix(&mut rng, n, d, 1.0);
        let mu = matrix(&mut rng, k, d, 1.0);
        let state = ClusterState::new(mu.clone(), a).unwrap();

        let q = soft_assign(&z, &state).unwrap();
        let q_o = oracle_q(&z, &mu, a);
        worst = worst.max(max_rel(&q, &q_o));

        let p = target_distribution(&q).unwrap();
        let p_o = oracle_p(&q_o);
        worst = worst.max(max_rel(&p, &p_o));

        let kl = clustering_loss(&p, &q).unwrap();
        let kl_o = oracle_kl(&p_o, &q_o);
        worst = worst.max(rel(kl, kl_o));

        let dims = [rng.random_range(1..=4), rng.random_range(1..=4)];
        let x: Vec<_> = dims.iter().map(|&c| matrix(&mut rng, n, c, 1.0)).collect();
        let xh: Vec<_> = dims.iter().map(|&c| matrix(&mut rng, n, c, 1.0)).collect();
        let r = reconstruction_loss(&x, &xh).unwrap();
        worst = worst.max(rel(r, oracle_recon(&x, &xh)));

        let dis = disentanglement_loss(&z).unwrap();
        let dis_o = oracle_dis(&z);
        if d > 1 {
            worst = worst.max(rel(dis, dis_o));
        } else {
            assert_eq!(dis, 0.0);
            assert_eq!(dis_o, 0.0);
        }

        let labels = random_labels(&mut rng, n);
        let map = random_map(&mut rng, k);
        let probs = class_probabilities(&q, &map).unwrap();
        let sup = supervised_loss(&probs, &labels).unwrap().value;
        let sup_o = oracle_sup(&q_o, &map, &labels);
        worst = worst.max(rel(sup, sup_o));

        let w = LossWeights {
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
            gamma: rng.random_range(0.0..2.0),
        };
        let terms = LossTerms {
            cluster: kl,
            recon: r,
            supervised: sup,
            disentangle: dis,
        };
        let total = combined_loss(&terms, &w);
        let total_o =
            kl_o + w.alpha * oracle_recon(&x, &xh) + w.beta * sup_o + w.gamma * dis_o;
        worst = worst.max(rel(total, total_o));
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && elapsed < Duration::from_secs(30);
    report(
        1,
        "loss oracles",
        pass,
        &format!("200 instances, max rel err {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

fn toy_stack(seed: u64) -> (EncoderStack, Vec<MultimodalSample>) {
    let arch = ArchConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ff_dim: 12,
        dropout: 0.0,
        encoder_dropout: 0.0,
        latent_dim: 4,
        head_widths: vec![6, 3],
        decoder_widths: vec![5],
        positional_encoding: true,
    };
    let config = EncoderStackConfig::new([5, 3, 4], 3, arch);
    let stack = EncoderStack::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let samples = (0..5)
        .map(|i| {
            let t = matrix(&mut rng, 3, 5, 1.0);
            let v = matrix(&mut rng, 3, 3, 1.0);
            let a = matrix(&mut rng, 3, 4, 1.0);
            let label = if i % 2 == 0 { 1.2 } else { -0.7 };
            MultimodalSample::new(format!("s{i}"), t, v, a, Some(label)).unwrap()
        })
        .collect();
    (stack, samples)
}

fn perturb(p: &mut impl Params, idx: usize, delta: f64) {
    let mut k = 0;
    p.visit_mut("", &mut |_, _, d| {
        if idx >= k && idx < k + d.len() {
            d[idx - k] += delta;
        }
        k += d.len();
    });
}

/// Relative error with an absolute floor for gradients that are ~0.
fn grad_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5)
}

#[test]
fn criterion_2_gradients() {
    let start = Instant::now();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;

    // Latents and centroids directly: cluster + beta * supervised + gamma * disentangle.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (n, d, k) = (6, 4, 3);
        let z = matrix(&mut rng, n, d, 1.0);
        let mu = matrix(&mut rng, k, d, 1.0);
        let labels = random_labels(&mut rng, n);
        let map = random_map(&mut rng, k);
        let (beta, gamma) = (0.5, 0.3);
        let p = target_distribution(&soft_assign(&z, &ClusterState::new(mu.clone(), 1.0).unwrap()).unwrap())
            .unwrap();
        let f = |z: &Array2<f64>, mu: &Array2<f64>| {
            let s = ClusterState::new(mu.clone(), 1.0).unwrap();
            let q = soft_assign(z, &s).unwrap();
            let sup = supervised_loss(&class_probabilities(&q, &map).unwrap(), &labels).unwrap();
            clustering_loss(&p, &q).unwrap() + beta * sup.value + gamma * disentanglement_loss(z).unwrap()
        };
        let state = ClusterState::new(mu.clone(), 1.0).unwrap();
        let q = soft_assign(&z, &state).unwrap();
        let dq = clustering_loss_grad(&p, &q) + supervised_loss_grad_q(&q, &map, &labels).unwrap() * beta;
        let (mut dz, dmu) = soft_assign_backward(&z, &state, &q, &dq);
        dz = dz + disentanglement_loss_grad(&z).unwrap() * gamma;
        for idx in 0..n * d {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.as_slice_mut().unwrap()[idx] += h;
            zm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&zp, &mu) - f(&zm, &mu)) / (2.0 * h);
            worst = worst.max(grad_err(dz.as_slice().unwrap()[idx], fd));
            checked += 1;
        }
        for idx in 0..k * d {
            let (mut mp, mut mm) = (mu.clone(), mu.clone());
            mp.as_slice_mut().unwrap()[idx] += h;
            mm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&z, &mp) - f(&z, &mm)) / (2.0 * h);
            worst = worst.max(grad_err(dmu.as_slice().unwrap()[idx], fd));
            checked += 1;
        }
        // Reconstruction w.r.t. the reconstructions.
        let x = vec![matrix(&mut rng, n, 3, 1.0), matrix(&mut rng, n, 2, 1.0)];
        let xh = vec![matrix(&mut rng, n, 3, 1.0), matrix(&mut rng, n, 2, 1.0)];
        let g = reconstruction_loss_grad(&x, &xh);
        for b in 0..2 {
            for idx in 0..xh[b].len() {
                let (mut xp, mut xm) = (xh.clone(), xh.clone());
                xp[b].as_slice_mut().unwrap()[idx] += h;
                xm[b].as_slice_mut().unwrap()[idx] -= h;
                let fd = (reconstruction_loss(&x, &xp).unwrap() - reconstruction_loss(&x, &xm).unwrap())
                    / (2.0 * h);
                worst = worst.max(grad_err(g[b].as_slice().unwrap()[idx], fd));
                checked += 1;
            }
        }
    }

    // Every encoder, latent and decoder parameter plus the centroids, through
    // the full composite objective.
    let (stack, samples) = toy_stack(11);
    let refs: Vec<&MultimodalSample> = samples.iter().collect();
    let batch = Batch::new(&refs, &stack.config).unwrap();
    let z = stack.latents(&batch);
    let mut state = ClusterState::new(matrix(&mut rng, 2, 4, 0.5), 1.0).unwrap();
    state.cluster_to_class = Some(vec![Sentiment::Negative, Sentiment::Positive]);
    let p = target_distribution(&soft_assign(&z, &state).unwrap()).unwrap();
    let labels = vec![
        Some(Sentiment::Positive),
        None,
        Some(Sentiment::Positive),
        Some(Sentiment::Negative),
        None,
    ];
    let w = LossWeights {
        alpha: 0.7,
        beta: 0.5,
        gamma: 0.3,
    };
    let total = |s: &EncoderStack, c: &ClusterState| {
        composite_loss_and_grad(s, &batch, &w, Some(ClusterTargets { state: c, p: &p }), &labels, &mut Mode::Eval)
            .unwrap()
            .total
    };
    let pass = composite_loss_and_grad(
        &stack,
        &batch,
        &w,
        Some(ClusterTargets { state: &state, p: &p }),
        &labels,
        &mut Mode::Eval,
    )
    .unwrap();
    let analytic = pass.grad.flatten();
    let mut names = Vec::new();
    stack.visit("", &mut |n, _, d| names.extend(std::iter::repeat_n(n.to_string(), d.len())));
    for (i, name) in names.iter().enumerate() {
        if name.starts_with("head.") {
            continue;
        }
        let (mut sp, mut sm) = (stack.clone(), stack.clone());
        perturb(&mut sp, i, h);
        perturb(&mut sm, i, -h);
        let fd = (total(&sp, &state) - total(&sm, &state)) / (2.0 * h);
        worst = worst.max(grad_err(analytic[i], fd));
        checked += 1;
    }
    let dmu = pass.cluster_grad.unwrap().centroids;
    for idx in 0..dmu.len() {
        let (mut cp, mut cm) = (state.clone(), state.clone());
        cp.centroids.as_slice_mut().unwrap()[idx] += h;
        cm.centroids.as_slice_mut().unwrap()[idx] -= h;
        let fd = (total(&stack, &cp) - total(&stack, &cm)) / (2.0 * h);
        worst = worst.max(grad_err(dmu.as_slice().unwrap()[idx], fd));
        checked += 1;
    }

    let elapsed = start.elapsed();
    let pass = worst < 1e-3 && elapsed < Duration::from_secs(120);
    report(
        2,
        "gradients",
        pass,
        &format!("{checked} coordinates, max rel err {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_3_distribution_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=5);
        let m = rng.random_range(1..=4);
        // Every cyclic shift of each base row makes all column sums equal.
        let mut rows = Vec::new();
        for _ in 0..m {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let base: Vec<f64> = raw.iter().map(|v| v / s).collect();
            for shift in 0..k {
                rows.push((0..k).map(|j| base[(j + shift) % k]).collect::<Vec<_>>());
            }
        }
        let n = rows.len();
        let q = Array2::from_shape_fn((n, k), |(i, j)| rows[i][j]);
        let p = target_distribution(&q).unwrap();
        for i in 0..n {
            let argmax = |r: ndarray::ArrayView1<f64>| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
            };
            let (jq, mq) = argmax(q.row(i));
            let (jp, mp) = argmax(p.row(i));
            let ok = jq == jp
                && mp >= mq - 1e-12
                && (q.row(i).sum() - 1.0).abs() < 1e-6
                && (p.row(i).sum() - 1.0).abs() < 1e-6;
            if !ok {
                failures += 1;
            }
        }
    }
    let pass = failures == 0;
    report(3, "distribution properties", pass, &format!("1000 matrices, {failures} failing rows"));
    assert!(pass);
}

/// Configuration of the synthetic end-to-end comparison for one seed.
fn end_to_end_config(seed: u64) -> ExperimentConfig {
    load_config(
        "desk",
        None,
        &[
            format!("synthetic.seed={}", 100 + seed),
            format!("data.split_seed={seed}"),
            format!("run.seed={seed}"),
        ],
    )
    .unwrap()
}

#[test]
fn criterion_4_synthetic_end_to_end() {
    let start = Instant::now();
    let mut base_acc = Vec::new();
    let mut ft_acc = Vec::new();
    for seed in 0..3 {
        let config = end_to_end_config(seed);
        let (split, model) = load_split(&config, Path::new("unused")).unwrap();
        assert_eq!(split.len(), 2000);
        let ctx = StageContext::in_memory(seed);
        let base = train_baseline(&split, &model, &config.baseline, &ctx).unwrap();
        let ae = pretrain_autoencoder(&split, &model, &config.pretrain_ae, &ctx).unwrap();
        let dec = pretrain_dec(&ae.checkpoint(), &split, &config.pretrain_dec, &ctx).unwrap();
        let ft = transfer_and_finetune(&dec.checkpoint(), &split, &config.finetune, &ctx).unwrap();
        base_acc.push(base.record.selected().unwrap().val_accuracy.unwrap());
        ft_acc.push(ft.record.selected().unwrap().val_accuracy.unwrap());
    }
    let elapsed = start.elapsed();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = base_acc.iter().zip(&ft_acc).filter(|(b, f)| f > b).count();
    let pass = mean(&ft_acc) >= mean(&base_acc) - 0.01
        && wins >= 2
        && elapsed < Duration::from_secs(20 * 60);
    report(
        4,
        "synthetic end-to-end",
        pass,
        &format!(
            "baseline {:?} mean {:.4}, dec+finetune {:?} mean {:.4}, {wins}/3 wins, {:.0}s",
            base_acc,
            mean(&base_acc),
            ft_acc,
            mean(&ft_acc),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_parameter_budget() {
    let config = ExperimentConfig::default();
    let stack = EncoderStack::new(config.stack_config(), 0).unwrap();
    let params = count_parameters(&stack);
    let total = params.classifier_total();
    let target = 851_713.0;
    let dev = (total as f64 - target).abs() / target;
    let pass = dev <= 0.10;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "parameter breakdown (default model, 300/47/74 inputs, length 30):\n{params}");
    drop(out);
    report(
        5,
        "parameter budget",
        pass,
        &format!("classifier {total}, {:.2}% from 851,713", 100.0 * dev),
    );
    assert!(pass);
}

fn run_cli(args: &[&str]) -> String {
    let mut full = vec!["semidec"];
    full.extend_from_slice(args);
    run_from_args(full).unwrap()
}

#[test]
fn criterion_6_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let stages = [
        ("train-baseline", "baseline"),
        ("pretrain-ae", "pretrain_ae"),
        ("pretrain-dec", "pretrain_dec"),
        ("finetune", "finetune"),
    ];
    for dir in &dirs {
        for (cmd, _) in stages {
            run_cli(&[
                cmd,
                "--preset",
                "desk",
                "--out",
                dir.path().to_str().unwrap(),
                "--seed",
                "5",
                "--set",
                "synthetic.samples=240",
                "--set",
                "baseline.epochs=3",
                "--set",
                "pretrain_ae.epochs=3",
                "--set",
                "pretrain_dec.epochs=3",
                "--set",
                "finetune.epochs=3",
            ]);
        }
    }
    let mut identical = 0;
    for (_, sub) in stages {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(sub).join("metrics.jsonl")).unwrap();
        let (a, b) = (read(&dirs[0]), read(&dirs[1]));
        assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 3);
        if a == b {
            identical += 1;
        }
    }
    let pass = identical == stages.len();
    report(6, "determinism", pass, &format!("{identical}/4 stage metrics logs byte-identical"));
    assert!(pass);
}

#[test]
fn criterion_7_table_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_cli(&["report", "--out", dir.path().to_str().unwrap()]);
    let expected = [
        ("TFN", "74.60"),
        ("DF", "72.30"),
        ("MARNN", "84.31"),
        ("MMUU-BA", "82.31"),
    ];
    let mut found = 0;
    for (model, acc) in expected {
        if table.lines().any(|l| {
            let cells: Vec<&str> = l.split('|').map(str::trim).collect();
            cells.len() == 4 && cells[0] == model && cells[1] == acc
        }) {
            found += 1;
        }
    }
    let pass = found == 4 && !table.contains("measured");
    report(7, "table reproduction", pass, &format!("{found}/4 reference rows verbatim"));
    assert!(pass);
}

/// Directional check on real CMU-MOSI features; runs only when
/// `SEMIDEC_MOSI_DIR` names a feature directory.
#[test]
fn criterion_8_real_data() {
    let Ok(dir) = std::env::var("SEMIDEC_MOSI_DIR") else {
        report(8, "real-data fidelity", true, "skipped: SEMIDEC_MOSI_DIR not set");
        return;
    };
    let out = tempfile::tempdir().unwrap();
    let out_s = out.path().to_str().unwrap();
    let common = ["--preset", "paper", "--out", out_s];
    let with = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd];
        a.extend_from_slice(extra);
        a.extend_from_slice(&common);
        run_cli(&a)
    };
    with("ingest", &["--input", &dir]);
    with("train-baseline", &[]);
    with("pretrain-ae", &[]);
    with("pretrain-dec", &[]);
    with("finetune", &[]);
    let acc = |sub: &str| {
        let recs = semidec::pipeline::read_metrics(&out.path().join(sub).join("metrics.jsonl")).unwrap();
        let best = semidec::pipeline::select_best(&recs, Default::default()).unwrap();
        recs[best - 1].val_accuracy.unwrap()
    };
    let (b, f) = (acc("baseline"), acc("finetune"));
    let pass = (0.65..=0.80).contains(&b) && f >= b - 0.01;
    report(8, "real-data fidelity", pass, &format!("baseline {b:.4}, dec+finetune {f:.4}"));
    assert!(pass);
}
