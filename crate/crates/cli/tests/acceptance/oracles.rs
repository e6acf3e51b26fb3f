//! Condensed numerical oracle suite (criterion 6). Each check returns a
//! failure description, or `None` when it holds.

use moped_core::autodiff::{Tape, Var};
use moped_core::eval::{aupr, auroc};
use moped_core::kernels::Padding;
use moped_core::moped::random_prior_init;
use moped_core::nn::{LayerSpec, ModelGraph};
use moped_core::predictive::summarize;
use moped_core::rng::{self, standard_normals};
use moped_core::variational::{
    elbo_loss, kl_factorized_gaussians, ElboConfig, Estimator, GaussianParam, PriorSpec, VariationalModel,
};
use moped_core::Tensor;

const H: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "acceptance-fd");
    Tensor::new(shape.to_vec(), standard_normals(&mut r, shape.iter().product())).unwrap()
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Largest `|analytic − numeric| / max(1, |analytic|)` over all inputs.
fn fd_error(inputs: &[Tensor], f: &Build) -> f64 {
    let eval = |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars);
        let shape = tape.shape(out).to_vec();
        let r = tape.constant(normal(&shape, 77));
        let prod = tape.mul(out, r).unwrap();
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = eval(inputs);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].shape());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let (tp, _, lp) = eval(&plus);
            let (tm, _, lm) = eval(&minus);
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * H);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let x = normal(&[3, 4], 1);
    let y = normal(&[3, 4], 2);
    let off_kink = x.map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
    vec![
        ("add", vec![x.clone(), y.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("mul", vec![x.clone(), y], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", vec![x.clone()], Box::new(|t, v| t.scale(v[0], 1.7))),
        ("matmul", vec![normal(&[3, 5], 3), normal(&[5, 2], 4)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        (
            "conv2d-valid",
            vec![normal(&[2, 5, 5, 2], 5), normal(&[3, 3, 2, 3], 6)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 1, Padding::Valid).unwrap()),
        ),
        (
            "conv2d-same-stride2",
            vec![normal(&[2, 5, 5, 2], 7), normal(&[3, 3, 2, 3], 8)],
            Box::new(|t, v| t.conv2d(v[0], v[1], 2, Padding::Same).unwrap()),
        ),
        ("maxpool2x2", vec![normal(&[2, 4, 4, 3], 9)], Box::new(|t, v| t.maxpool2x2(v[0]).unwrap())),
        ("relu", vec![off_kink], Box::new(|t, v| t.relu(v[0]))),
        ("softplus", vec![x.clone()], Box::new(|t, v| t.softplus(v[0]))),
        ("exp", vec![x.clone()], Box::new(|t, v| t.exp(v[0]))),
        ("log", vec![x.map(|v| v.abs() + 0.5)], Box::new(|t, v| t.log(v[0]).unwrap())),
        ("sum", vec![x.clone()], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![x.clone()], Box::new(|t, v| t.mean(v[0]))),
        ("reshape", vec![x.clone()], Box::new(|t, v| t.reshape(v[0], &[6, 2]).unwrap())),
        ("broadcast", vec![normal(&[4], 10)], Box::new(|t, v| t.broadcast(v[0], &[3, 4]).unwrap())),
        ("log_softmax", vec![x], Box::new(|t, v| t.log_softmax(v[0]).unwrap())),
    ]
}

/// Shifts entry `i` of parameter `p` in `[w.mu, w.rho, b.mu, b.rho]` order.
fn nudge(m: &mut VariationalModel, p: usize, i: usize, by: f64) {
    let l = &mut m.layers[p / 4];
    let t = match p % 4 {
        0 => &mut l.weight.mu,
        1 => &mut l.weight.rho,
        2 => &mut l.bias.mu,
        _ => &mut l.bias.rho,
    };
    t.data_mut()[i] += by;
}

fn elbo_fd_error(estimator: Estimator) -> f64 {
    let graph = ModelGraph::new(
        [5, 5, 1],
        vec![LayerSpec::conv(1, 2, 3, Padding::Valid), LayerSpec::Relu, LayerSpec::Flatten, LayerSpec::dense(18, 3)],
    )
    .unwrap();
    let init = random_prior_init(&graph, 2).unwrap();
    let x = normal(&[4, 5, 5, 1], 11);
    let y = [0, 1, 2, 1];
    let config = ElboConfig {
        kl_weight: 0.1,
        mc_train_samples: 1,
        estimator,
    };
    let loss_of = |m: &VariationalModel| {
        let mut r = rng::stream(5, "frozen-eps");
        elbo_loss(m, &x, &y, &init.priors, &config, &mut r).unwrap().terms.loss
    };
    let mut r = rng::stream(5, "frozen-eps");
    let grads: Vec<Tensor> = elbo_loss(&init.posterior, &x, &y, &init.priors, &config, &mut r)
        .unwrap()
        .gradients()
        .unwrap()
        .into_iter()
        .flat_map(|g| [g.weight_mu, g.weight_rho, g.bias_mu, g.bias_rho])
        .collect();
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = init.posterior.clone();
            nudge(&mut plus, p, i, H);
            let mut minus = init.posterior.clone();
            nudge(&mut minus, p, i, -H);
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
            worst = worst.max((g.data()[i] - numeric).abs() / g.data()[i].abs().max(1.0));
        }
    }
    worst
}

pub fn finite_differences() -> Option<String> {
    let mut failures = Vec::new();
    for (name, inputs, f) in primitive_cases() {
        let e = fd_error(&inputs, &f);
        if e >= FD_TOL {
            failures.push(format!("{name} {e:.2e}"));
        }
    }
    for est in [Estimator::Flipout, Estimator::Reparameterization] {
        let e = elbo_fd_error(est);
        if e >= FD_TOL {
            failures.push(format!("elbo {est:?} {e:.2e}"));
        }
    }
    (!failures.is_empty()).then(|| failures.join(", "))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn kl_vs_monte_carlo() -> Option<String> {
    let mut bad = Vec::new();
    for instance in 0..20u64 {
        let mut r = rng::stream(instance, "acceptance-kl");
        let n = 4;
        let mu = Tensor::from_vec(standard_normals(&mut r, n));
        let rho = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 * x - 0.5);
        let pm = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 * x);
        let ps = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 + x.abs());
        let q = GaussianParam::new(mu.clone(), rho).unwrap();
        let s = q.sigma();
        let exact = kl_factorized_gaussians(&q, &PriorSpec::new(pm.clone(), ps.clone()).unwrap()).unwrap();
        let log_n = |x: f64, m: f64, sd: f64| -0.5 * ((x - m) / sd).powi(2) - sd.ln();
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let eps = standard_normals(&mut r, n);
                (0..n)
                    .map(|i| {
                        let w = mu.data()[i] + s.data()[i] * eps[i];
                        log_n(w, mu.data()[i], s.data()[i]) - log_n(w, pm.data()[i], ps.data()[i])
                    })
                    .sum()
            })
            .collect();
        let (m, se) = mean_se(&draws);
        if (m - exact).abs() > 3.0 * se {
            bad.push(format!("#{instance}: {exact:.4} vs {m:.4}±{se:.4}"));
        }
    }
    (!bad.is_empty()).then(|| bad.join(", "))
}

pub fn flipout_mean_equivalence() -> Option<String> {
    let graph = ModelGraph::mlp([2, 2, 1], 8, 3).unwrap();
    let mut init = random_prior_init(&graph, 3).unwrap();
    for l in &mut init.posterior.layers {
        l.weight.rho = l.weight.rho.map(|_| -1.0);
        l.bias.rho = l.bias.rho.map(|_| -1.0);
    }
    let x = normal(&[16, 2, 2, 1], 12);
    let y: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let ce = |est: Estimator, stream: &str| -> Vec<f64> {
        let config = ElboConfig {
            kl_weight: 0.0,
            mc_train_samples: 1,
            estimator: est,
        };
        let mut r = rng::stream(4, stream);
        (0..10_000)
            .map(|_| elbo_loss(&init.posterior, &x, &y, &init.priors, &config, &mut r).unwrap().terms.ce)
            .collect()
    };
    let (mf, sf) = mean_se(&ce(Estimator::Flipout, "f"));
    let (mr, sr) = mean_se(&ce(Estimator::Reparameterization, "r"));
    let bound = 3.0 * (sf * sf + sr * sr).sqrt();
    ((mf - mr).abs() > bound).then(|| format!("flipout {mf:.5} vs reparameterization {mr:.5} (> {bound:.5})"))
}

pub fn bald_fixtures() -> Option<String> {
    let check = |t: usize, k: usize, data: Vec<f64>, entropy: f64, bald: f64| -> Option<String> {
        let s = summarize(&Tensor::new(vec![t, 1, k], data.clone()).unwrap()).unwrap();
        ((s.predictive_entropy[0] - entropy).abs() > 1e-6 || (s.bald[0] - bald).abs() > 1e-6).then(|| {
            format!("{data:?}: entropy {} bald {}", s.predictive_entropy[0], s.bald[0])
        })
    };
    let ln2 = std::f64::consts::LN_2;
    let bad: Vec<String> = [
        check(2, 2, vec![0.8, 0.2, 0.6, 0.4], 0.610864, 0.024157),
        check(2, 2, vec![1.0, 0.0, 0.0, 1.0], ln2, ln2),
        check(3, 2, vec![0.3, 0.7, 0.3, 0.7, 0.3, 0.7], 0.610864, 0.0),
        check(1, 4, vec![0.25; 4], 4f64.ln(), 0.0),
    ]
    .into_iter()
    .flatten()
    .collect();
    (!bad.is_empty()).then(|| bad.join("; "))
}

fn brute_auroc(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn brute_aupr(s: &[f64], l: &[bool]) -> f64 {
    let mut th: Vec<f64> = s.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let pos = l.iter().filter(|&&x| x).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in th {
        let tp = s.iter().zip(l).filter(|(x, &y)| **x >= t && y).count() as f64;
        let k = s.iter().filter(|x| **x >= t).count() as f64;
        ap += (tp / pos - prev) * tp / k;
        prev = tp / pos;
    }
    ap
}

/// 100 random instances of 2..=12 elements with integer-valued (tie-prone)
/// scores; agreement is required to 1e-12.
pub fn ranking_brute_force() -> Option<String> {
    let mut r = rng::stream(6, "acceptance-ranking");
    for case in 0..100 {
        let n = 2 + (standard_normals(&mut r, 1)[0].abs() * 4.0) as usize % 11;
        let s: Vec<f64> = standard_normals(&mut r, n).iter().map(|z| (z * 2.0).round()).collect();
        let mut l: Vec<bool> = rng::rademacher(&mut r, n).iter().map(|x| *x > 0.0).collect();
        l[0] = true;
        l[1] = false;
        let (a, b) = (auroc(&s, &l).unwrap(), brute_auroc(&s, &l));
        let (c, d) = (aupr(&s, &l).unwrap(), brute_aupr(&s, &l));
        if (a - b).abs() > 1e-12 || (c - d).abs() > 1e-12 {
            return Some(format!("case {case}: auroc {a} vs {b}, aupr {c} vs {d}"));
        }
    }
    None
}
