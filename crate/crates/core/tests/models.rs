mod common;

use common::{clip, logits, max_abs_diff, tiny, with_groups, VARIANTS};
use srnn::model::{forward, predict, GroupsMode, Level, Variant};
use srnn::tensor::Graph;
use srnn::train::{train_stage2, TrainConfig};
use srnn::Error;

fn log_softmax_ce(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

#[test]
fn predicted_loss_matches_cross_entropy_of_logits() {
    for v in VARIANTS {
        for groups in [GroupsMode::One, GroupsMode::Two] {
            let cfg = with_groups(tiny(v), groups);
            let sample = clip(&cfg, 4, 4, 3);
            let params = cfg.init_params(9).unwrap();
            let l = logits(&params, &cfg, &sample);
            let k = cfg.action_classes;
            let mut expected = 0.0;
            for t in 0..sample.frames() {
                expected += log_softmax_ce(&l.group[t], sample.group_labels[t]);
                let per_person: f64 = l.actions[t]
                    .chunks(k)
                    .zip(&sample.persons)
                    .map(|(z, p)| log_softmax_ce(z, p.actions[t]))
                    .sum();
                expected += per_person / sample.num_persons() as f64;
            }
            expected /= sample.frames() as f64;
            let p = predict(&params, &cfg, &sample).unwrap();
            assert!((p.loss - expected).abs() < 1e-12, "{v} {groups:?}: {} vs {expected}", p.loss);

            let last = sample.frames() - 1;
            let argmax = |z: &[f64]| (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
            assert_eq!(p.group, argmax(&l.group[last]));
            let actions: Vec<usize> = l.actions[last].chunks(k).map(argmax).collect();
            assert_eq!(p.actions, actions);
        }
    }
}

#[test]
fn group_logits_have_the_configured_width() {
    for v in VARIANTS {
        let cfg = with_groups(tiny(v), GroupsMode::Two);
        let sample = clip(&cfg, 1, 5, 2);
        let l = logits(&cfg.init_params(0).unwrap(), &cfg, &sample);
        assert!(l.group.iter().all(|g| g.len() == cfg.group_classes));
        assert!(l.actions.iter().all(|a| a.len() == 5 * cfg.action_classes));
    }
}

#[test]
fn single_person_clip_needs_a_node_pooling_variant() {
    for v in VARIANTS {
        let cfg = tiny(v);
        let sample = clip(&cfg, 2, 1, 3);
        let p = predict(&cfg.init_params(1).unwrap(), &cfg, &sample);
        if v == Variant::MaxEdge {
            assert!(matches!(p, Err(Error::Usage(_))), "{p:?}");
        } else {
            let p = p.unwrap();
            assert!(p.loss.is_finite());
            assert_eq!(p.actions.len(), 1);
        }
    }
}

#[test]
fn running_a_frame_window_matches_the_prefix_of_a_full_run() {
    for v in VARIANTS {
        let cfg = tiny(v);
        let sample = clip(&cfg, 3, 3, 4);
        let params = cfg.init_params(2).unwrap();
        let full = logits(&params, &cfg, &sample);
        let mut g = Graph::new();
        let bound = g.bind(&params);
        let outs = forward(&mut g, &bound, &cfg, &sample, 0..2, Level::Full).unwrap();
        for (t, o) in outs.iter().enumerate() {
            assert_eq!(max_abs_diff(g.value(o.action_logits).data(), &full.actions[t]), 0.0);
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let cfg = tiny(Variant::MaxNode);
    let params = cfg.init_params(0).unwrap();
    let mut g = Graph::new();
    let bound = g.bind(&params);

    let mut wide = tiny(Variant::MaxNode);
    wide.node_feature_dim = 7;
    let sample = clip(&wide, 0, 3, 3);
    let err = forward(&mut g, &bound, &cfg, &sample, 0..3, Level::Full).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");

    let sample = clip(&cfg, 0, 3, 3);
    let err = forward(&mut g, &bound, &cfg, &sample, 1..5, Level::Full).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");

    let other = tiny(Variant::HlstmV3).init_params(0).unwrap();
    assert!(predict(&other, &cfg, &sample).is_err());
}

#[test]
fn joint_training_lowers_the_loss() {
    for v in VARIANTS {
        let cfg = tiny(v);
        let data: Vec<_> = (0..6).map(|s| clip(&cfg, 20 + s, 3, 3)).collect();
        let tc = TrainConfig {
            stage2_epochs: 15,
            learning_rate: 0.01,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let init = cfg.init_params(5).unwrap();
        let out = train_stage2(&tc, &cfg, &data, None, init).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < 0.9 * first, "{v}: {first} -> {last}");
        assert_eq!(out.best_epoch, None);
    }
}
