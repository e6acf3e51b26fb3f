//! Monte Carlo and closed-form oracles for the stochastic components.

use moped_core::data::{make_synthetic, make_synthetic_with, Dataset, SyntheticKind, SyntheticSpec};
use moped_core::eval::{auroc, ood_report};
use moped_core::moped::{build_moped_init, MopedConfig, Variant};
use moped_core::nn::{
    cross_entropy_loss, evaluate_accuracy, train_mle, DeterministicCheckpoint, LayerSpec, MleConfig, ModelGraph,
    OptimizerConfig,
};
use moped_core::predictive::{mc_predict, mc_predict_dataset, summarize, UncertaintyKind};
use moped_core::rng::{self, standard_normals};
use moped_core::variational::{
    elbo_loss, kl_factorized_gaussians, train_vi, ElboConfig, Estimator, GaussianParam, PriorSpec, ViConfig,
    VariationalModel,
};
use moped_core::Tensor;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn variance(xs: &[f64]) -> f64 {
    let (_, se) = mean_se(xs);
    se * se * xs.len() as f64
}

#[test]
fn analytic_kl_agrees_with_monte_carlo() {
    for instance in 0..20u64 {
        let mut r = rng::stream(instance, "kl-oracle");
        let n = 5;
        let mu = Tensor::from_vec(standard_normals(&mut r, n));
        let rho = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 * x - 0.5);
        let pm = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 * x);
        let ps = Tensor::from_vec(standard_normals(&mut r, n)).map(|x| 0.5 + x.abs());
        let q = GaussianParam::new(mu.clone(), rho).unwrap();
        let sigma = q.sigma();
        let p = PriorSpec::new(pm.clone(), ps.clone()).unwrap();
        let exact = kl_factorized_gaussians(&q, &p).unwrap();

        let log_n = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let eps = standard_normals(&mut r, n);
                (0..n)
                    .map(|i| {
                        let w = mu.data()[i] + sigma.data()[i] * eps[i];
                        log_n(w, mu.data()[i], sigma.data()[i]) - log_n(w, pm.data()[i], ps.data()[i])
                    })
                    .sum()
            })
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - exact).abs() <= 3.0 * se, "instance {instance}: exact {exact}, MC {m} ± {se}");
    }
}

fn tiny() -> (VariationalModel, Dataset) {
    let data = make_synthetic(SyntheticKind::Blobs, 32, 11).unwrap();
    let graph = ModelGraph::mlp(data.input_shape(), 8, 3).unwrap();
    let base = moped_core::nn::DeterministicModel::init(graph.clone(), 5).unwrap();
    let layers = base
        .params
        .into_iter()
        .map(|p| moped_core::variational::VariationalLayer {
            weight: GaussianParam::with_constant_rho(p.weight, -1.0),
            bias: GaussianParam::with_constant_rho(p.bias, -1.0),
        })
        .collect();
    (VariationalModel::new(graph, layers).unwrap(), data)
}

fn standard_priors(model: &VariationalModel) -> moped_core::variational::PriorSet {
    model
        .graph
        .param_layers()
        .iter()
        .zip(&model.layers)
        .map(|(spec, l)| {
            (
                spec.name.clone(),
                moped_core::variational::LayerPrior {
                    weight: PriorSpec::standard(l.weight.shape()),
                    bias: PriorSpec::standard(l.bias.shape()),
                },
            )
        })
        .collect()
}

fn config(estimator: Estimator) -> ElboConfig {
    ElboConfig {
        kl_weight: 0.0,
        mc_train_samples: 1,
        estimator,
    }
}

#[test]
fn flipout_and_reparameterization_have_equal_expected_loss() {
    let (model, data) = tiny();
    let priors = standard_priors(&model);
    let losses = |est: Estimator, stream: &str| -> Vec<f64> {
        let mut r = rng::stream(1, stream);
        (0..10_000)
            .map(|_| elbo_loss(&model, &data.images, &data.labels, &priors, &config(est), &mut r).unwrap().terms.ce)
            .collect()
    };
    let (mf, sf) = mean_se(&losses(Estimator::Flipout, "f"));
    let (mr, sr) = mean_se(&losses(Estimator::Reparameterization, "r"));
    assert!((mf - mr).abs() <= 3.0 * (sf * sf + sr * sr).sqrt(), "flipout {mf}±{sf} reparam {mr}±{sr}");
}

#[test]
fn flipout_reduces_gradient_variance() {
    let (model, data) = tiny();
    let priors = standard_priors(&model);
    let total_variance = |est: Estimator| -> f64 {
        let mut r = rng::stream(2, "variance");
        let grads: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let g = elbo_loss(&model, &data.images, &data.labels, &priors, &config(est), &mut r)
                    .unwrap()
                    .gradients()
                    .unwrap();
                g[0].weight_mu.data().to_vec()
            })
            .collect();
        (0..grads[0].len())
            .map(|j| variance(&grads.iter().map(|g| g[j]).collect::<Vec<_>>()))
            .sum()
    };
    let (vf, vr) = (total_variance(Estimator::Flipout), total_variance(Estimator::Reparameterization));
    assert!(vf <= vr, "flipout {vf} reparam {vr}");
}

#[test]
fn perturbed_rho_statistics() {
    let graph = ModelGraph::new([1, 1, 1], vec![LayerSpec::Flatten, LayerSpec::dense(1, 100_000)]).unwrap();
    let model = moped_core::nn::DeterministicModel::init(graph, 0).unwrap();
    let ckpt = DeterministicCheckpoint { model, meta: Default::default() };
    let cfg = MopedConfig {
        variant: Variant::Perturb,
        seed: 17,
        ..Default::default()
    };
    let init = build_moped_init(&ckpt, &cfg).unwrap();
    let rho = init.posterior.layers[0].weight.rho.data();
    assert_eq!(rho.len(), 100_000);
    let (m, se) = mean_se(rho);
    let sd = se * (rho.len() as f64).sqrt();
    assert!((m + 3.0).abs() <= 0.001, "mean {m}");
    assert!((sd - 0.1).abs() <= 0.001, "std {sd}");
}

/// Standard normal CDF, `1 −` the midpoint-rule upper tail (closed-form
/// approximations are too coarse this far out).
fn phi(x: f64) -> f64 {
    let tail: f64 = {
        let (a, b, steps) = (x, x + 20.0, 200_000);
        let h = (b - a) / steps as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0..steps).map(|i| f(a + (i as f64 + 0.5) * h) * h).sum()
    };
    1.0 - tail
}

#[test]
fn gaussian_overlap_auroc() {
    let mut r = rng::stream(3, "auroc-oracle");
    let n = 10_000;
    let inside: Vec<f64> = standard_normals(&mut r, n).iter().map(|z| 0.2 + 0.05 * z).collect();
    let outside: Vec<f64> = standard_normals(&mut r, n).iter().map(|z| 0.6 + 0.05 * z).collect();
    let scores: Vec<f64> = inside.iter().chain(&outside).copied().collect();
    let labels: Vec<bool> = (0..2 * n).map(|i| i >= n).collect();
    let got = auroc(&scores, &labels).unwrap();
    let a = phi(0.4 / (0.05 * std::f64::consts::SQRT_2));
    // Hanley–McNeil standard error at the theoretical area.
    let (q1, q2, nf) = (a / (2.0 - a), 2.0 * a * a / (1.0 + a), n as f64);
    let se = ((a * (1.0 - a) + (nf - 1.0) * (q1 - a * a) + (nf - 1.0) * (q2 - a * a)) / (nf * nf)).sqrt();
    assert!((got - a).abs() <= 3.0 * se, "auroc {got}, oracle {a} ± {se}");
}

fn trained_blobs(epochs: usize) -> (DeterministicCheckpoint, Dataset, Dataset) {
    let train = make_synthetic_with(SyntheticKind::Blobs, &SyntheticSpec::default(), 600, 0, "train").unwrap();
    let test = make_synthetic_with(SyntheticKind::Blobs, &SyntheticSpec::default(), 1000, 0, "test").unwrap();
    let graph = ModelGraph::mlp(train.input_shape(), 16, 3).unwrap();
    let cfg = MleConfig {
        epochs,
        optimizer: OptimizerConfig::adam(0.01),
        ..Default::default()
    };
    (train_mle(&graph, &train, &cfg, None).unwrap().checkpoint, train, test)
}

#[test]
fn separated_blobs_are_linearly_classifiable() {
    let train = make_synthetic_with(SyntheticKind::Blobs, &SyntheticSpec::default(), 1000, 0, "train").unwrap();
    let test = make_synthetic_with(SyntheticKind::Blobs, &SyntheticSpec::default(), 1000, 0, "test").unwrap();
    let graph = ModelGraph::new(train.input_shape(), vec![LayerSpec::Flatten, LayerSpec::dense(4, 3)]).unwrap();
    let cfg = MleConfig {
        epochs: 30,
        optimizer: OptimizerConfig::adam(0.05),
        ..Default::default()
    };
    let run = train_mle(&graph, &train, &cfg, None).unwrap();
    let acc = evaluate_accuracy(&run.checkpoint.model, &test).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn small_delta_starts_near_the_mle_solution() {
    let (ckpt, train, _) = trained_blobs(20);
    let batch = train.head(128);
    let det_ce = cross_entropy_loss(&ckpt.model.logits(&batch.images).unwrap(), &batch.labels).unwrap();
    let init = build_moped_init(&ckpt, &MopedConfig { delta: 0.01, ..Default::default() }).unwrap();
    let stack = mc_predict(&init.posterior, &batch.images, 40, 0).unwrap();
    let (t, b, k) = (40, batch.len(), 3);
    let mut ce = 0.0;
    for ti in 0..t {
        for i in 0..b {
            ce -= stack.data()[(ti * b + i) * k + batch.labels[i]].ln();
        }
    }
    ce /= (t * b) as f64;
    assert!(ce <= det_ce + 0.05, "MC CE {ce}, deterministic {det_ce}");
}

#[test]
fn shifted_blobs_raise_bald() {
    let (ckpt, train, test) = trained_blobs(20);
    let init = build_moped_init(&ckpt, &MopedConfig::default()).unwrap();
    let vi = train_vi(
        init.posterior,
        &init.priors,
        &train,
        &ViConfig {
            epochs: 5,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let shifted = make_synthetic_with(SyntheticKind::ShiftedBlobs, &SyntheticSpec::default(), 1000, 0, "ood").unwrap();
    let s_in = summarize(&mc_predict_dataset(&vi.model, &test, 40, 1).unwrap()).unwrap();
    let s_out = summarize(&mc_predict_dataset(&vi.model, &shifted, 40, 1).unwrap()).unwrap();
    let report = ood_report(&s_in, &s_out, UncertaintyKind::Bald, 30).unwrap();
    assert!(report.out_mean > report.in_mean, "{} vs {}", report.out_mean, report.in_mean);
    assert!(report.separability_auroc > 0.5);

    let same = ood_report(&s_in, &s_in, UncertaintyKind::Bald, 30).unwrap();
    assert_eq!(same.separability_auroc, 0.5);
}
