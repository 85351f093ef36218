use mta_core::data::{generate_synthetic, split, Journey, SyntheticConfig};
use mta_core::model::Hyperparams;
use mta_core::train::{evaluate, grid_search, train, GridOutcome, GridPoint, TrainConfig};
use mta_core::Error;

fn small_hyper(cards: Vec<usize>) -> Hyperparams {
    Hyperparams {
        embedding_size: 4,
        hidden_size: 8,
        representation_size: 4,
        mlp_hidden_size: 8,
        ..Hyperparams::new(4, cards)
    }
}

fn data(users: usize) -> (Vec<Journey>, Vec<Journey>, Vec<usize>) {
    let cfg = SyntheticConfig {
        num_users: users,
        seed: 5,
        ..Default::default()
    };
    let (js, _) = generate_synthetic(&cfg).unwrap();
    let (tr, va, _) = split(&js, [0.7, 0.3, 0.0], 3).unwrap();
    (tr, va, cfg.vocab().cardinalities())
}

#[test]
fn single_journey_epoch_is_one_adam_step() {
    let (tr, va, cards) = data(20);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        ..Default::default()
    };
    let (_, hist) = train(&tr[..1], &va, &small_hyper(cards), &cfg).unwrap();
    assert_eq!(hist.adam_steps, 1);
    assert_eq!(hist.epochs.len(), 1);
    assert_eq!(hist.best_epoch, 1);
}

#[test]
fn incomplete_last_batch_is_kept() {
    let (tr, va, cards) = data(40);
    let n = tr.len();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let (_, hist) = train(&tr, &va, &small_hyper(cards), &cfg).unwrap();
    assert_eq!(hist.adam_steps as usize, 2 * n.div_ceil(8));
}

#[test]
fn training_is_bit_reproducible() {
    let (tr, va, cards) = data(200);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 11,
        ..Default::default()
    };
    let h = small_hyper(cards);
    let (a, ha) = train(&tr, &va, &h, &cfg).unwrap();
    let (b, hb) = train(&tr, &va, &h, &cfg).unwrap();
    assert_eq!(ha, hb);
    for (x, y) in a.tensors.iter().zip(&b.tensors) {
        let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by);
    }
    let (c, _) = train(&tr, &va, &h, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.tensors, c.tensors);
}

#[test]
fn returned_epoch_has_lowest_validation_objective() {
    let (tr, va, cards) = data(400);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 32,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let (params, hist) = train(&tr, &va, &small_hyper(cards), &cfg).unwrap();
    let best = hist.best().validation.objective;
    assert!(hist.epochs.iter().all(|e| e.validation.objective >= best));
    assert!(best <= hist.initial_validation.objective);
    let again = evaluate(&params, &va, 64).unwrap();
    assert!((again.losses.objective - best).abs() < 1e-9);
}

#[test]
fn rejects_bad_inputs() {
    let (tr, va, cards) = data(20);
    let h = small_hyper(cards);
    assert!(train(&[], &va, &h, &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        learning_rate: -1.0,
        ..Default::default()
    };
    assert!(train(&tr, &va, &h, &bad).is_err());
    let wrong_vocab = small_hyper(vec![2, 2, 2]);
    assert!(train(&tr, &va, &wrong_vocab, &TrainConfig::default()).is_err());
}

#[test]
fn exploding_updates_report_divergence() {
    let (tr, va, cards) = data(60);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        learning_rate: f64::MAX,
        clip_norm: None,
        ..Default::default()
    };
    match train(&tr, &va, &small_hyper(cards), &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h.best_epoch)),
    }
}

#[test]
fn grid_search_selection_rules() {
    let (tr, va, cards) = data(80);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        ..Default::default()
    };
    let h = small_hyper(cards);
    let point = GridPoint {
        learning_rate: 1e-3,
        batch_size: 16,
        hyperparams: h.clone(),
    };
    let single = grid_search(&tr, &va, std::slice::from_ref(&point), &cfg).unwrap();
    assert_eq!(single.best, 0);

    let broken = GridPoint {
        hyperparams: small_hyper(vec![1, 1, 1]),
        ..point.clone()
    };
    let r = grid_search(&tr, &va, &[broken.clone(), point.clone(), point.clone()], &cfg).unwrap();
    assert!(matches!(r.leaderboard[0].outcome, GridOutcome::Failed { .. }));
    assert_eq!(r.leaderboard[1].outcome, r.leaderboard[2].outcome);
    assert_eq!(r.best, 1, "identical points: first listed wins");
    assert_eq!(r.leaderboard.len(), 3);

    assert!(grid_search(&tr, &va, &[broken], &cfg).is_err());
    assert!(grid_search(&tr, &va, &[], &cfg).is_err());
}
