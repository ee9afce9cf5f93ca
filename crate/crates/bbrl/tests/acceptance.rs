//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails.
//!
//! The default tier runs the property criteria in full and the learning
//! criteria on a reduced seed set without the step-based baseline runs.
//! `BBRL_ACCEPTANCE_FULL=1` runs the complete protocol (20 seeds, both
//! algorithm families). `BBRL_ACCEPTANCE_ONLY=1,4,10` selects criteria and
//! `BBRL_ACCEPTANCE_OUT=dir` keeps the run artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bbrl::checkpoint::{self, PolicyState};
use bbrl::config::{ExperimentConfig, ExperimentFile};
use bbrl::core::envs::{Context, EpisodeRecord, Task, ThrowCondition};
use bbrl::core::erl::{surrogate_loss, ContextualPolicy, ErlBatch, ErlConfig, ErlTrainer};
use bbrl::core::gauss::{cov_part, mean_part, DiagGaussian};
use bbrl::core::numkit::{DrawKind, RandomStream};
use bbrl::core::steprl::gae;
use bbrl::core::trpl::{project, trust_region_penalty, TrustRegion};
use bbrl::metrics::read_log;
use bbrl::runner::{evaluate_checkpoint, heldout_contexts, run_experiment, run_seed, Evaluation, SeedSummary};

const HELDOUT_EPISODES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Tier {
    full: bool,
    out: PathBuf,
    jobs: usize,
}

impl Tier {
    /// Training seeds for a learning criterion.
    fn seeds(&self, reduced: usize) -> Vec<u64> {
        (0..if self.full { 20 } else { reduced as u64 }).collect()
    }

    /// `k` of 20 scaled to `n` seeds, rounded up.
    fn scaled(&self, k: usize, n: usize) -> usize {
        (k * n).div_ceil(20)
    }

    fn label(&self, seeds: usize) -> String {
        if self.full {
            "full protocol".into()
        } else {
            format!("reduced: {seeds} of 20 seeds, thresholds scaled")
        }
    }
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn log_uniform(s: &mut RandomStream, lo: f64, hi: f64) -> f64 {
    s.uniform_range(lo.ln(), hi.ln()).exp()
}

fn random_pair(s: &mut RandomStream, d: usize, spread: f64) -> (DiagGaussian, DiagGaussian) {
    let old_mean: Vec<f64> = (0..d).map(|_| s.normal()).collect();
    let old_std: Vec<f64> = (0..d).map(|_| (0.7 * s.normal()).exp()).collect();
    let mean = old_mean.iter().zip(&old_std).map(|(m, so)| m + spread * so * s.normal()).collect();
    let std = old_std.iter().map(|so| so * (0.5 * spread * s.normal()).exp()).collect();
    (
        DiagGaussian::new(mean, std).unwrap(),
        DiagGaussian::new(old_mean, old_std).unwrap(),
    )
}

// ---------------------------------------------------------------- 1

fn projection_feasibility() -> Outcome {
    let start = Instant::now();
    let mut s = RandomStream::new(1, 0);
    let (mut bound, mut boundary, mut idem) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut active = 0;
    for _ in 0..10_000 {
        let d = 1 + s.index(32);
        let spread = log_uniform(&mut s, 1e-3, 10.0);
        let (raw, old) = random_pair(&mut s, d, spread);
        let tr = TrustRegion::new(log_uniform(&mut s, 1e-4, 1.0), log_uniform(&mut s, 1e-4, 1.0), 0.0).unwrap();
        let p = project(&raw, &old, &tr).unwrap().projected;
        let (m, c) = (mean_part(p.mean(), old.mean(), old.std()), cov_part(p.std(), old.std()));
        bound = bound.max(m - tr.eps_mean).max(c - tr.eps_cov);
        if mean_part(raw.mean(), old.mean(), old.std()) > tr.eps_mean {
            boundary = boundary.max((m - tr.eps_mean).abs());
            active += 1;
        }
        if cov_part(raw.std(), old.std()) > tr.eps_cov {
            boundary = boundary.max((c - tr.eps_cov).abs());
            active += 1;
        }
        let q = project(&p, &old, &tr).unwrap().projected;
        idem = idem.max(max_rel_diff(q.mean(), p.mean())).max(max_rel_diff(q.std(), p.std()));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bound <= 1e-8 && boundary <= 1e-10 && idem <= 1e-12 && secs < 30.0;
    outcome(
        pass,
        format!("max bound excess {bound:.1e}, max boundary gap {boundary:.1e} over {active} active bounds, idempotence {idem:.1e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 2

/// Central-difference gradient and Hessian.
fn fd_derivatives(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len();
    let h = 1e-5;
    let grad_at = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let (mut a, mut b) = (x.to_vec(), x.to_vec());
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    };
    let g = grad_at(x);
    let hh = 1e-4;
    let mut hess = vec![vec![0.0; n]; n];
    for j in 0..n {
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[j] += hh;
        b[j] -= hh;
        let (ga, gb) = (grad_at(&a), grad_at(&b));
        for i in 0..n {
            hess[i][j] = (ga[i] - gb[i]) / (2.0 * hh);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = m;
            hess[j][i] = m;
        }
    }
    (g, hess)
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Damped Newton with finite-difference derivatives and backtracking.
fn newton_minimize(f: &dyn Fn(&[f64]) -> f64, mut x: Vec<f64>) -> Vec<f64> {
    for _ in 0..200 {
        let (g, h) = fd_derivatives(f, &x);
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut shift = 0.0;
        let step = loop {
            let mut hs = h.clone();
            for (i, row) in hs.iter_mut().enumerate() {
                row[i] += shift;
            }
            let p = solve(hs, g.iter().map(|v| -v).collect());
            let descent: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            if p.iter().all(|v| v.is_finite()) && descent < 0.0 {
                break p;
            }
            if shift > 1e12 {
                break g.iter().map(|v| -v).collect();
            }
            shift = if shift == 0.0 { 1e-6 } else { shift * 10.0 };
        };
        let fx = f(&x);
        let mut t = 1.0;
        let mut next = x.clone();
        while t > 1e-12 {
            next = x.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            if f(&next) <= fx {
                break;
            }
            t *= 0.5;
        }
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-13 {
            break;
        }
    }
    x
}

/// Augmented Lagrangian for `min f(x) s.t. c(x) <= 0`. Returns the point
/// and the multiplier estimate.
fn augmented_lagrangian(f: &dyn Fn(&[f64]) -> f64, c: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> (Vec<f64>, f64) {
    let (mut lam, mut rho) = (0.0_f64, 10.0_f64);
    let mut x = x0;
    let mut last_violation = f64::INFINITY;
    for _ in 0..100 {
        let l = |y: &[f64]| {
            let t = (lam + rho * c(y)).max(0.0);
            f(y) + (t * t - lam * lam) / (2.0 * rho)
        };
        x = newton_minimize(&l, x);
        let cv = c(&x);
        let next_lam = (lam + rho * cv).max(0.0);
        let violation = cv.max(-lam / rho).abs();
        let settled = (next_lam - lam).abs() <= 1e-10 * lam.max(1.0);
        lam = next_lam;
        if violation < 1e-10 && settled {
            break;
        }
        if violation > 0.25 * last_violation {
            rho = (rho * 10.0).min(1e4);
        }
        last_violation = violation;
    }
    (x, lam)
}

/// Newton on the KKT system `grad f + lam grad c = 0, c = 0` of an active
/// constraint, from a nearby starting point.
fn kkt_polish(f: &dyn Fn(&[f64]) -> f64, c: &dyn Fn(&[f64]) -> f64, mut x: Vec<f64>, mut lam: f64) -> Vec<f64> {
    let n = x.len();
    let residual = |x: &[f64], lam: f64| -> (Vec<f64>, Vec<Vec<f64>>) {
        let (gf, hf) = fd_derivatives(f, x);
        let (gc, hc) = fd_derivatives(c, x);
        let mut r: Vec<f64> = gf.iter().zip(&gc).map(|(a, b)| a + lam * b).collect();
        r.push(c(x));
        let mut j = vec![vec![0.0; n + 1]; n + 1];
        for i in 0..n {
            for k in 0..n {
                j[i][k] = hf[i][k] + lam * hc[i][k];
            }
            j[i][n] = gc[i];
            j[n][i] = gc[i];
        }
        (r, j)
    };
    // The augmented Lagrangian lands close enough for plain Newton steps.
    for _ in 0..20 {
        let (r, j) = residual(&x, lam);
        let step = solve(j, r.iter().map(|v| -v).collect());
        x.iter_mut().zip(&step).for_each(|(a, b)| *a += b);
        lam += step[n];
        if step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-12 {
            break;
        }
    }
    x
}

/// Generic solver: augmented Lagrangian, then KKT refinement when the
/// constraint binds.
fn constrained_minimize(f: &dyn Fn(&[f64]) -> f64, c: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> Vec<f64> {
    let (x, lam) = augmented_lagrangian(f, c, x0);
    if lam > 0.0 {
        kkt_polish(f, c, x, lam)
    } else {
        x
    }
}

fn projection_oracle() -> Outcome {
    let mut s = RandomStream::new(2, 0);
    let (mut worst, mut active, mut total) = (0.0_f64, 0, 0);
    for d in [1usize, 4] {
        for _ in 0..200 {
            let spread = log_uniform(&mut s, 0.05, 3.0);
            let (raw, old) = random_pair(&mut s, d, spread);
            let tr = TrustRegion::new(log_uniform(&mut s, 1e-3, 0.5), log_uniform(&mut s, 1e-3, 0.5), 0.0).unwrap();
            let p = project(&raw, &old, &tr).unwrap();
            active += p.mean_active as usize + p.cov_active as usize;
            total += 2;

            let (mr, mo, so) = (raw.mean(), old.mean(), old.std());
            let mahal = |mu: &[f64], c: &[f64]| -> f64 { mu.iter().zip(c).zip(so).map(|((a, b), s)| (a - b) * (a - b) / (s * s)).sum() };
            let mean = constrained_minimize(&|x| mahal(x, mr), &|x| mahal(x, mo) - tr.eps_mean, mo.to_vec());

            let vr: Vec<f64> = raw.std().iter().map(|x| x * x).collect();
            let vo: Vec<f64> = so.iter().map(|x| x * x).collect();
            // Optimized over log-variances.
            let div = |u: &[f64], v: &[f64]| -> f64 {
                u.iter()
                    .zip(v)
                    .map(|(u, v)| {
                        let r = u.exp() / v;
                        r - r.ln() - 1.0
                    })
                    .sum()
            };
            let log_var = constrained_minimize(
                &|u| div(u, &vr),
                &|u| div(u, &vo) - tr.eps_cov,
                vo.iter().map(|v| v.ln()).collect(),
            );
            let std: Vec<f64> = log_var.iter().map(|u| (0.5 * u).exp()).collect();
            worst = worst
                .max(max_rel_diff(p.projected.mean(), &mean))
                .max(max_rel_diff(p.projected.std(), &std));
        }
    }
    outcome(
        worst <= 1e-6,
        format!("400 instances (d = 1 and 4), {active}/{total} bounds active, max deviation from the constrained minimizer {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

fn toy_batch(policy: &ContextualPolicy, n: usize, s: &mut RandomStream) -> ErlBatch {
    let mut b = ErlBatch {
        records: vec![],
        old: vec![],
        old_log_density: vec![],
        metrics: vec![0.0; n],
        faults: 0,
        env_steps: n as u64,
    };
    for _ in 0..n {
        let context = Context(s.draw(DrawKind::StandardNormal, policy.context_dim()));
        let dist = policy.distribution(context.as_slice()).unwrap();
        let params = dist.sample(s);
        b.old_log_density.push(dist.log_density(&params).unwrap());
        b.old.push(dist);
        b.records.push(EpisodeRecord {
            context,
            params,
            ret: s.normal(),
        });
    }
    b
}

/// Constraint states of every record, or `None` when a raw distribution sits
/// so close to a bound that finite differences would straddle the kink.
fn constraint_states(p: &ContextualPolicy, b: &ErlBatch, tr: &TrustRegion) -> Option<Vec<(bool, bool)>> {
    b.records
        .iter()
        .zip(&b.old)
        .map(|(r, old)| {
            let raw = p.distribution(r.context.as_slice()).unwrap();
            let m = mean_part(raw.mean(), old.mean(), old.std()) / tr.eps_mean;
            let c = cov_part(raw.std(), old.std()) / tr.eps_cov;
            ((m - 1.0).abs() > 1e-3 && (c - 1.0).abs() > 1e-3).then_some((m > 1.0, c > 1.0))
        })
        .collect()
}

fn surrogate_gradient() -> Outcome {
    let start = Instant::now();
    let mut s = RandomStream::new(3, 0);
    let (mut worst, mut all_inactive, mut all_active, mut mixed) = (0.0_f64, 0, 0, 0);
    let mut done = 0;
    while done < 200 {
        let mut cfg = ErlConfig {
            hidden: vec![4],
            ..ErlConfig::reacher()
        };
        cfg.trust_region = TrustRegion::new(
            log_uniform(&mut s, 1e-3, 0.3),
            log_uniform(&mut s, 1e-3, 0.3),
            [0.0, 1.0, 10.0][s.index(3)],
        )
        .unwrap();
        let d = 1 + s.index(3);
        let n = 6;
        let mut p = ContextualPolicy::new(2, d, &cfg, &mut s).unwrap();
        let b = toy_batch(&p, n, &mut s);
        let adv = s.draw(DrawKind::StandardNormal, n);
        let scale = log_uniform(&mut s, 1e-3, 0.5);
        let theta: Vec<f64> = p.flat().iter().map(|x| x + scale * s.normal()).collect();
        p.set_flat(&theta).unwrap();
        let Some(states) = constraint_states(&p, &b, &cfg.trust_region) else {
            continue;
        };
        let active = states.iter().filter(|(m, c)| *m || *c).count();
        let both = states.iter().filter(|(m, c)| *m && *c).count();
        match (active, both) {
            (0, _) => all_inactive += 1,
            (_, k) if k == n => all_active += 1,
            _ => mixed += 1,
        }

        let sur = surrogate_loss(&p, &b, &adv, &cfg).unwrap();
        // The penalty's reference projection is held fixed.
        let refs: Vec<DiagGaussian> = b
            .records
            .iter()
            .zip(&b.old)
            .map(|(r, o)| project(&p.distribution(r.context.as_slice()).unwrap(), o, &cfg.trust_region).unwrap().projected)
            .collect();
        let alpha = cfg.trust_region.penalty_weight;
        let f = |x: &[f64]| -> f64 {
            let mut q = p.clone();
            q.set_flat(x).unwrap();
            let obj = surrogate_loss(&q, &b, &adv, &cfg).unwrap().objective;
            let pen: f64 = b
                .records
                .iter()
                .zip(&refs)
                .map(|(r, pr)| trust_region_penalty(&q.distribution(r.context.as_slice()).unwrap(), pr, alpha).unwrap())
                .sum();
            -obj + pen / n as f64
        };
        let h = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let (mut a, mut bm) = (theta.clone(), theta.clone());
                a[i] += h;
                bm[i] -= h;
                (f(&a) - f(&bm)) / (2.0 * h)
            })
            .collect();
        let err: f64 = sur.grad.iter().zip(&fd).map(|(g, f)| (g - f) * (g - f)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err / norm.max(1e-8));
        done += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 120.0 && all_inactive > 0 && all_active > 0 && mixed > 0;
    outcome(
        pass,
        format!(
            "200 instances ({all_inactive} all inactive, {all_active} all active, {mixed} mixed), max relative error {worst:.1e}, {secs:.1}s"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn brute_gae(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..r.len() {
                let next = if done[k] { 0.0 } else { v[k + 1] };
                total += weight * (r[k] + gamma * next - v[k]);
                if done[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn brute_iqm(v: &[f64]) -> f64 {
    let n = v.len();
    let k = n / 4;
    let (mut sum, mut count) = (0.0, 0);
    for (i, x) in v.iter().enumerate() {
        let rank = v.iter().enumerate().filter(|(j, y)| *y < x || (*y == x && *j < i)).count();
        if rank >= k && rank < n - k {
            sum += x;
            count += 1;
        }
    }
    sum / count as f64
}

fn gae_iqm_oracles() -> Outcome {
    let mut s = RandomStream::new(4, 0);
    let (mut gae_err, mut iqm_err) = (0.0_f64, 0.0_f64);
    for _ in 0..500 {
        let n = 1 + s.index(300);
        let r = s.draw(DrawKind::StandardNormal, n);
        let v = s.draw(DrawKind::StandardNormal, n + 1);
        let done: Vec<bool> = (0..n).map(|_| s.uniform() < 0.05).collect();
        let gamma = s.uniform_range(0.9, 1.0);
        let lambda = s.uniform();
        let (adv, ret) = gae(&r, &v, &done, gamma, lambda).unwrap();
        let want = brute_gae(&r, &v, &done, gamma, lambda);
        for t in 0..n {
            gae_err = gae_err.max((adv[t] - want[t]).abs() / want[t].abs().max(1.0));
            gae_err = gae_err.max((ret[t] - (want[t] + v[t])).abs() / ret[t].abs().max(1.0));
        }
        let m = 1 + s.index(60);
        // Repeated values exercise tie handling.
        let xs: Vec<f64> = (0..m).map(|_| (s.normal() * 4.0).round() / 4.0).collect();
        let got = bbrl::aggregate::iqm(&xs).unwrap();
        let want = brute_iqm(&xs);
        iqm_err = iqm_err.max((got - want).abs() / want.abs().max(1.0));
    }
    outcome(
        gae_err <= 1e-12 && iqm_err <= 1e-12,
        format!("500 random inputs each, max GAE deviation {gae_err:.1e}, max IQM deviation {iqm_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn experiment(file: &str, seeds: &[u64], out: &Path, edit: impl FnOnce(&mut ExperimentFile)) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
    let mut f = ExperimentFile::load(&path).unwrap();
    f.seeds = seeds.to_vec();
    f.out_dir = Some(out.to_path_buf());
    edit(&mut f);
    f.resolve().unwrap()
}

fn bandit_convergence(tier: &Tier) -> Outcome {
    let start = Instant::now();
    let mut solved = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let cfg = experiment("bandit_trpl.toml", &[seed], &tier.out.join("bandit"), |f| f.env.target_seed = Some(seed));
        let task = cfg.env.build().unwrap();
        let mut t = ErlTrainer::new(cfg.erl.clone(), &task, seed).unwrap();
        let mut best = f64::NEG_INFINITY;
        for _ in 0..50 {
            best = best.max(t.iterate(&task).unwrap().eval.mean_return);
        }
        solved += (best >= -1e-2) as usize;
        worst = worst.max(-best);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        solved >= 18 && secs < 120.0,
        format!("{solved}/20 seeds reach mean-policy return >= -1e-2 in 50 x 64 episodes (worst best-so-far {:.1e}), {secs:.1}s", -worst),
    )
}

// ---------------------------------------------------------------- 6-9

fn train(cfg: &ExperimentConfig, tier: &Tier) -> Vec<Result<SeedSummary, String>> {
    run_experiment(cfg, tier.jobs)
        .into_iter()
        .map(|(seed, r)| r.map_err(|e| format!("seed {seed}: {e}")))
        .collect()
}

fn heldout(cfg: &ExperimentConfig, run: &SeedSummary) -> Evaluation {
    let ck = checkpoint::load(&run.dir.join("checkpoints/final.ckpt")).unwrap();
    let task = cfg.env.build().unwrap();
    evaluate_checkpoint(cfg, &ck, &heldout_contexts(&task, HELDOUT_EPISODES, run.seed)).unwrap()
}

/// Every logged batch-mean importance ratio lies in `[0.5, 2]`.
fn ratios_sane(run: &SeedSummary) -> bool {
    read_log(&run.dir.join("metrics.jsonl"))
        .unwrap()
        .iter()
        .filter_map(|r| r.get("ratio_mean").and_then(|v| v.as_f64()))
        .all(|r| (0.5..=2.0).contains(&r))
}

struct Learned {
    metrics: Vec<f64>,
    faults: Vec<String>,
    ratios_ok: bool,
}

fn learn(cfg: &ExperimentConfig, tier: &Tier, score: impl Fn(&Evaluation) -> f64) -> Learned {
    let mut l = Learned {
        metrics: vec![],
        faults: vec![],
        ratios_ok: true,
    };
    for r in train(cfg, tier) {
        match r {
            Ok(run) => {
                l.metrics.push(score(&heldout(cfg, &run)));
                l.ratios_ok &= ratios_sane(&run);
            }
            Err(e) => l.faults.push(e),
        }
    }
    l
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn count_below(v: &[f64], t: f64) -> usize {
    v.iter().filter(|&&x| x <= t).count()
}

fn dense_reacher(tier: &Tier) -> Outcome {
    let seeds = tier.seeds(2);
    let out = tier.out.join("dense");
    let trpl = learn(&experiment("reacher_dense_trpl.toml", &seeds, &out.join("trpl"), |_| {}), tier, Evaluation::mean_metric);
    let need = tier.scaled(16, seeds.len());
    let solved = count_below(&trpl.metrics, 0.05);
    let mut pass = solved >= need && trpl.faults.is_empty() && trpl.ratios_ok;
    let mut detail = format!(
        "{}; BBRL-TRPL {solved}/{} seeds <= 0.05 m (need {need}), median {:.4} m",
        tier.label(seeds.len()),
        seeds.len(),
        median(&trpl.metrics)
    );
    if tier.full {
        let ppo = learn(&experiment("reacher_dense_ppo.toml", &seeds, &out.join("ppo"), |_| {}), tier, Evaluation::mean_metric);
        let m = median(&ppo.metrics);
        pass &= m <= 0.05 && ppo.faults.is_empty() && ppo.ratios_ok;
        detail += &format!("; PPO median {m:.4} m (need <= 0.05)");
    } else {
        detail += "; PPO half not run";
    }
    if !trpl.ratios_ok {
        detail += "; importance ratio left [0.5, 2]";
    }
    outcome(pass, detail)
}

fn sparse_reacher(tier: &Tier) -> Outcome {
    let seeds = tier.seeds(2);
    let out = tier.out.join("sparse");
    let trpl = learn(&experiment("reacher_sparse_trpl.toml", &seeds, &out.join("trpl"), |_| {}), tier, Evaluation::mean_metric);
    let need = tier.scaled(12, seeds.len());
    let solved = count_below(&trpl.metrics, 0.05);
    let mt = median(&trpl.metrics);
    let mut pass = solved >= need && trpl.faults.is_empty() && trpl.ratios_ok;
    let mut detail = format!(
        "{}; BBRL-TRPL {solved}/{} seeds <= 0.05 m (need {need}), median {mt:.4} m",
        tier.label(seeds.len()),
        seeds.len()
    );
    if tier.full {
        let ppo = learn(&experiment("reacher_sparse_ppo.toml", &seeds, &out.join("ppo"), |_| {}), tier, Evaluation::mean_metric);
        let mp = median(&ppo.metrics);
        let ppo_solved = count_below(&ppo.metrics, 0.05);
        pass &= mt <= 0.5 * mp && ppo_solved <= 4 && ppo.faults.is_empty() && ppo.ratios_ok;
        detail += &format!("; PPO {ppo_solved}/20 seeds <= 0.05 m (need <= 4), median {mp:.4} m (need >= {:.4})", 2.0 * mt);
    } else {
        detail += "; PPO half not run";
    }
    outcome(pass, detail)
}

/// Action-penalty factors of the energy sweep.
const PENALTY_SWEEP: [f64; 3] = [1.0, 0.1, 0.01];

fn energy_efficiency(tier: &Tier) -> Outcome {
    let seeds = tier.seeds(1).into_iter().take(if tier.full { 3 } else { 1 }).collect::<Vec<_>>();
    let mut cheapest = [f64::INFINITY; 2];
    let mut table = vec![];
    for (k, (file, name)) in [("reacher_sparse_trpl.toml", "sparse"), ("reacher_dense_trpl.toml", "dense")].iter().enumerate() {
        for &pen in &PENALTY_SWEEP {
            let cfg = experiment(file, &seeds, &tier.out.join(format!("energy/{name}_{pen}")), |f| f.env.action_penalty = Some(pen));
            for run in train(&cfg, tier).into_iter().flatten() {
                let Evaluation::Episodic(e) = heldout(&cfg, &run) else { unreachable!() };
                table.push(format!("{name} {pen}: {:.4} m / {:.1}", e.mean_metric, e.mean_control_cost));
                if e.mean_metric <= 0.02 {
                    cheapest[k] = cheapest[k].min(e.mean_control_cost);
                }
            }
        }
    }
    let [sparse, dense] = cheapest;
    let pass = sparse.is_finite() && dense.is_finite() && sparse <= dense / 5.0;
    outcome(
        pass,
        format!(
            "{} seed(s) per setting; cheapest control cost at <= 0.02 m: sparse {sparse:.1}, dense {dense:.1} (need sparse <= dense / 5); [{}]",
            seeds.len(),
            table.join(", ")
        ),
    )
}

fn thrower(tier: &Tier) -> Outcome {
    let seeds = tier.seeds(1);
    let out = tier.out.join("thrower");
    let cfg = experiment("thrower_trpl.toml", &seeds, &out.join("trpl"), |_| {});
    let Task::Thrower(env) = cfg.env.build().unwrap() else { unreachable!() };
    let (mut rates, mut bad_release, mut faults, mut ratios_ok) = (vec![], 0, 0, true);
    for r in train(&cfg, tier) {
        let Ok(run) = r else {
            faults += 1;
            continue;
        };
        ratios_ok &= ratios_sane(&run);
        let ck = checkpoint::load(&run.dir.join("checkpoints/final.ckpt")).unwrap();
        let PolicyState::Erl { policy, .. } = ck.state else { unreachable!() };
        let task = Task::Thrower(env.clone());
        let mut hits = 0;
        for c in heldout_contexts(&task, HELDOUT_EPISODES, run.seed) {
            let mean = policy.distribution(c.as_slice()).unwrap().mean().to_vec();
            let (_, th, release) = env.throw(&c, &mean, false).unwrap();
            if th.condition == ThrowCondition::InCup {
                hits += 1;
                bad_release += !(0.1..=1.0).contains(&release) as usize;
            }
        }
        rates.push(hits as f64 / HELDOUT_EPISODES as f64);
    }
    let m = median(&rates);
    let mut pass = m >= 0.7 && bad_release == 0 && faults == 0 && ratios_ok;
    let mut detail = format!(
        "{}; BBRL-TRPL median in-cup rate {:.0}% over {HELDOUT_EPISODES} held-out cups (need >= 70%), {bad_release} successes with release time outside [0.1, 1.0] s",
        tier.label(seeds.len()),
        100.0 * m
    );
    if tier.full {
        let ppo = learn(&experiment("thrower_ppo.toml", &seeds, &out.join("ppo"), |_| {}), tier, Evaluation::success_rate);
        let mp = median(&ppo.metrics);
        pass &= mp <= 0.3 && ppo.faults.is_empty();
        detail += &format!("; PPO median in-cup rate {:.0}% (need <= 30%)", 100.0 * mp);
    } else {
        detail += "; PPO half not run";
    }
    outcome(pass, detail)
}

// ---------------------------------------------------------------- 10

fn determinism(tier: &Tier) -> Outcome {
    let runs: [(&str, fn(&mut ExperimentFile)); 4] = [
        ("bandit_trpl.toml", |_| {}),
        ("reacher_sparse_trpl.toml", |f| f.erl.iterations = Some(5)),
        ("thrower_trpl.toml", |f| f.erl.iterations = Some(5)),
        ("reacher_dense_ppo.toml", |f| {
            f.ppo.iterations = Some(2);
            f.ppo.samples_per_iter = Some(2000);
        }),
    ];
    let mut identical = 0;
    let mut differing = vec![];
    for (file, edit) in runs {
        let logs: Vec<Vec<u8>> = ["a", "b"]
            .iter()
            .map(|rep| {
                let cfg = experiment(file, &[7], &tier.out.join("determinism").join(rep).join(file), edit);
                let run = run_seed(&cfg, 7).unwrap();
                std::fs::read(run.dir.join("metrics.jsonl")).unwrap()
            })
            .collect();
        if logs[0] == logs[1] && !logs[0].is_empty() {
            identical += 1;
        } else {
            differing.push(file);
        }
    }
    outcome(
        differing.is_empty(),
        format!("{identical}/4 repeated runs byte-identical{}", if differing.is_empty() { String::new() } else { format!(", differing: {differing:?}") }),
    )
}

fn main() {
    let full = std::env::var("BBRL_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let only: Option<Vec<usize>> = std::env::var("BBRL_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let keep = std::env::var_os("BBRL_ACCEPTANCE_OUT").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let tier = Tier {
        full,
        out: keep.unwrap_or_else(|| tmp.path().to_path_buf()),
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    type Check = Box<dyn Fn(&Tier) -> Outcome>;
    let criteria: Vec<(usize, &str, Check)> = vec![
        (1, "projection feasibility", Box::new(|_| projection_feasibility())),
        (2, "projection oracle", Box::new(|_| projection_oracle())),
        (3, "surrogate differentiability", Box::new(|_| surrogate_gradient())),
        (4, "GAE and IQM oracles", Box::new(|_| gae_iqm_oracles())),
        (5, "bandit convergence", Box::new(bandit_convergence)),
        (6, "dense reacher learning", Box::new(dense_reacher)),
        (7, "sparse reward separation", Box::new(sparse_reacher)),
        (8, "energy efficiency", Box::new(energy_efficiency)),
        (9, "non-Markovian thrower", Box::new(thrower)),
        (10, "determinism", Box::new(determinism)),
    ];
    println!("acceptance tier: {}", if full { "full" } else { "default" });
    let mut failed = vec![];
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        let start = Instant::now();
        let o = check(&tier);
        println!(
            "criterion {id:>2} {name}: {} ({}) [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(*id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
