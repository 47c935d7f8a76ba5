mod common;

use common::*;
use metaemb::autoenc::{fit_ae, init_model, AeConfig, LossKind};

#[test]
fn backprop_matches_finite_differences_for_every_loss() {
    for loss in LossKind::ALL {
        for hidden in [0, 1, 2] {
            for (dims, d) in [(vec![3, 2], 2), (vec![1, 3, 2], 2), (vec![2, 2], 1)] {
                let ratio = gradient_check(loss, hidden, &dims, d, 3 + hidden as u64);
                assert!(ratio <= 1.0, "{loss:?} hidden={hidden} dims={dims:?}: ratio {ratio}");
            }
        }
    }
}

#[test]
fn gradient_has_one_entry_per_parameter() {
    let mut r = rng(1);
    let views = vec![gaussian(&mut r, 4, 3), gaussian(&mut r, 4, 2)];
    let batch = batch_of(views.clone());
    let config = AeConfig {
        d: 2,
        hidden_count: 1,
        ..AeConfig::default()
    };
    let model = init_model(&batch, &config).unwrap();
    // enc: 3→2→2, 2→2→2; dec: 2→2→3, 2→2→2
    let expected = (3 * 2 + 2 + 2 * 2 + 2) + (2 * 2 + 2 + 2 * 2 + 2) + (2 * 2 + 2 + 2 * 3 + 3) + (2 * 2 + 2 + 2 * 2 + 2);
    assert_eq!(model.param_count(), expected);
    assert_eq!(model.loss_and_gradient(&views).unwrap().1.len(), expected);
}

#[test]
fn training_lowers_loss_for_every_loss_kind() {
    let mut r = rng(9);
    let latent = gaussian(&mut r, 60, 2);
    let views = vec![&latent * gaussian(&mut r, 2, 3), &latent * gaussian(&mut r, 2, 3)];
    let batch = batch_of(views);
    for loss in LossKind::ALL {
        let config = AeConfig {
            d: 3,
            loss,
            hidden_count: 1,
            epochs: 100,
            batch_size: 16,
            lr: 0.005,
            ..AeConfig::default()
        };
        let model = fit_ae(&batch, &config).unwrap();
        let log = &model.train_log;
        assert_eq!(log.len(), 100);
        assert!(log[99] < log[0], "{loss:?}: {} !< {}", log[99], log[0]);
    }
}
