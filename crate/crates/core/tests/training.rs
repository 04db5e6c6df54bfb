mod common;

use common::*;
use gditd::data::{make_blobs, zscore_fit_apply, BlobSpec};
use gditd::gditd::{loss_gradients, net_loss, LossParams, LossTerms};
use gditd::linalg::DenseMatrix;
use gditd::model::{Method, TrainedModel};
use gditd::optim::Adam;
use gditd::trainer::{bcd_step, fit, TrainConfig, TrainState};
use gditd::Error;
use rand::Rng;

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: 1,
        latent_dim: 4,
        hidden_dims: [8, 8],
        seed,
        ..TrainConfig::default()
    }
}

fn random_problem(rng: &mut rand_chacha::ChaCha8Rng) -> (DenseMatrix, Vec<usize>, usize) {
    let k = rng.random_range(2..=4);
    let n = rng.random_range(2 * k..=16);
    let x = random_matrix(rng, n, 5, 2.0);
    // Every class present so the class-mean initialisation is defined.
    let labels = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    (x, labels, k)
}

#[test]
fn one_small_step_does_not_increase_loss() {
    let mut rng = rng(41);
    let mut descended = 0;
    for trial in 0..50 {
        let (x, y, k) = random_problem(&mut rng);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            ..small(trial)
        };
        let mut state = TrainState::init(&x, &y, k, &cfg, &mut common::rng(trial)).unwrap();
        let params = cfg.loss_params(y.len());
        let before = bcd_step(&mut state, &x, &y, &cfg).unwrap().net;
        let after = net_loss(&state.desc, &state.net.forward(&x).unwrap(), &y, &params).unwrap().net;
        if after <= before {
            descended += 1;
        }
    }
    assert!(descended >= 45, "only {descended}/50 steps descended");
}

#[test]
fn step_runs_network_then_descriptor_update() {
    let mut rng = rng(42);
    let (x, y, k) = random_problem(&mut rng);
    let cfg = small(3);
    let mut state = TrainState::init(&x, &y, k, &cfg, &mut common::rng(9)).unwrap();
    let params = cfg.loss_params(y.len());

    // Replay both sub-updates by hand.
    let mut net = state.net.clone();
    let mut desc = state.desc.clone();
    let mut net_opt = state.net_opt.clone();
    let mut desc_opt = state.desc_opt.clone();
    let cache = net.forward_cached(&x).unwrap();
    let g = loss_gradients(&desc, cache.output(), &y, &params).unwrap();
    let bundle = net.backward_cached(&cache, &g.embeddings).unwrap();
    net_opt.update(net.param_groups_mut(), &bundle.groups());
    let desc_before = desc.clone();
    let g = loss_gradients(&desc, &net.forward(&x).unwrap(), &y, &params).unwrap();
    let net_after_a = net.clone();
    let (mu, s) = desc.params_mut();
    desc_opt.update(vec![mu.as_mut_slice(), s], &[g.mu.as_slice(), &g.log_sigma]);

    bcd_step(&mut state, &x, &y, &cfg).unwrap();
    assert_eq!(state.net, net_after_a, "network block");
    assert_eq!(state.desc, desc, "descriptor block");
    assert_ne!(desc, desc_before);
}

#[test]
fn frozen_sigma_pull_step_moves_centre_to_class_mean() {
    let emb = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 1.0], vec![2.0, 4.0]]).unwrap();
    let desc0 = gditd::gditd::GaussianDescriptorSet::new(DenseMatrix::from_rows(&[vec![-1.0, -1.0]]).unwrap(), vec![0.0]).unwrap();
    let mean = [2.0, 2.0];
    let params = LossParams {
        terms: LossTerms::only(gditd::gditd::LossTerm::Pull),
        ..LossParams::new(0.5, 1.0)
    };
    let g = loss_gradients(&desc0, &emb, &[0, 0, 0], &params).unwrap();
    // −∂/∂μ of Σ‖z − μ‖²/2 is n·(mean − μ).
    assert_eq!(g.mu.row(0), &[-9.0, -9.0]);
    let mut desc = desc0.clone();
    let mut opt = Adam::new(&[2], 0.5);
    opt.update(vec![desc.mu_mut().as_mut_slice()], &[g.mu.as_slice()]);
    let gap = |d: &gditd::gditd::GaussianDescriptorSet| gditd::linalg::squared_distance(d.mu().row(0), &mean);
    assert!(gap(&desc) < gap(&desc0));
    assert_eq!(desc.log_sigma(), desc0.log_sigma());
}

fn blobs() -> (DenseMatrix, Vec<usize>) {
    let ds = make_blobs(&BlobSpec::new(3, 200, 10, 8.0, 12.0, 3)).unwrap();
    let rows = ds.id_rows();
    let (ds, _) = zscore_fit_apply(&ds, &rows).unwrap();
    let y = rows.iter().map(|&r| ds.id_index(ds.labels[r]).unwrap()).collect();
    (ds.features.select_rows(&rows), y)
}

#[test]
fn separable_blobs_reach_high_training_accuracy() {
    let (x, y) = blobs();
    let cfg = TrainConfig {
        max_epochs: 50,
        seed: 5,
        ..TrainConfig::default()
    };
    let (model, _) = TrainedModel::train(Method::Gditd, &x, &y, 3, &cfg).unwrap();
    let out = model.score(&x).unwrap();
    let correct = out.iter().zip(&y).filter(|(o, &t)| o.predicted == Some(t)).count();
    let acc = correct as f64 / y.len() as f64;
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn epoch_loss_trends_down_on_blobs() {
    let (x, y) = blobs();
    let cfg = TrainConfig {
        max_epochs: 40,
        seed: 8,
        ..TrainConfig::default()
    };
    let state = fit(&x, &y, 3, &cfg).unwrap();
    let net: Vec<f64> = state.history.iter().map(|l| l.net).collect();
    let violations = (5..net.len() - 10).filter(|&e| net[e + 10] > net[e]).count();
    assert!(violations <= 1, "{violations} rising windows: {net:?}");
}

#[test]
fn fit_is_deterministic() {
    let (x, y) = blobs();
    let cfg = TrainConfig {
        max_epochs: 3,
        seed: 21,
        ..TrainConfig::default()
    };
    let a = fit(&x, &y, 3, &cfg).unwrap();
    let b = fit(&x, &y, 3, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.desc, b.desc);
    assert_eq!(a.net, b.net);
}

#[test]
fn collapsed_sigma_aborts_with_named_term() {
    let mut rng = rng(43);
    let (x, y, k) = random_problem(&mut rng);
    let cfg = small(1);
    let mut state = TrainState::init(&x, &y, k, &cfg, &mut common::rng(1)).unwrap();
    state.desc.log_sigma_mut().iter_mut().for_each(|s| *s = -400.0);
    match bcd_step(&mut state, &x, &y, &cfg) {
        Err(Error::NonFinite { term, .. }) => assert_eq!(term, "pull"),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}
