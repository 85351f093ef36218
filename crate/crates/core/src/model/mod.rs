//! The attribution network.
//!
//! Per touchpoint, an LSTM cell reads the covariate embeddings, the previous
//! channel and the previous click. Its state is mapped to a balanced
//! representation `r_t`, which feeds an adversarial channel classifier
//! (behind gradient reversal) and a click head on `[r_t, c_t]`. An attention
//! layer over `[r_t, c_t, click_t]` produces the per-touchpoint credit `a_t`,
//! and the attention-weighted summary predicts conversion.

mod checkpoint;
mod forward;
mod losses;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ArrayEntry, CheckpointHeader,
    CHECKPOINT_FORMAT_VERSION,
};
pub use forward::{
    attribute, attribute_all, build_forward, forward, AttributionResult, Batch, ForwardNodes, ForwardOptions,
    ForwardPass, Mode,
};
pub use losses::{binary_cross_entropy, categorical_cross_entropy, LossComponents, LossSums};
pub use params::{AttentionInput, Hyperparams, Layout, ModelParams};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{Journey, Touchpoint};

    pub(crate) fn tiny_hyper() -> Hyperparams {
        Hyperparams {
            embedding_size: 3,
            hidden_size: 4,
            representation_size: 3,
            mlp_hidden_size: 4,
            dropout: 0.2,
            ..Hyperparams::new(3, vec![5, 4])
        }
    }

    pub(crate) fn journey(id: &str, channels: &[usize], converted: bool) -> Journey {
        Journey {
            id: id.into(),
            user_id: id.into(),
            touchpoints: channels
                .iter()
                .enumerate()
                .map(|(t, &c)| Touchpoint {
                    covariates: vec![(t + c) % 5, (2 * t + 1) % 4],
                    channel: c,
                    click: t % 2 == 1,
                    cost: 0.5 + t as f64,
                    timestamp: t as i64 * 10,
                })
                .collect(),
            converted,
        }
    }

    #[test]
    fn singleton_journey_gets_full_attention() {
        let p = ModelParams::init(&tiny_hyper(), 3).unwrap();
        let r = attribute(&p, &journey("a", &[2], true)).unwrap();
        assert_eq!(r.attention, vec![1.0]);
    }

    #[test]
    fn zero_conversion_head_predicts_half() {
        let mut p = ModelParams::init(&tiny_hyper(), 3).unwrap();
        let (w, b) = (p.layout.conversion_w, p.layout.conversion_b);
        p.tensors[w] = Tensor::zeros(p.tensors[w].shape());
        p.tensors[b] = Tensor::zeros(p.tensors[b].shape());
        for j in [journey("a", &[0, 1, 2], true), journey("b", &[1], false)] {
            assert_eq!(attribute(&p, &j).unwrap().conversion_prob, 0.5);
        }
    }

    #[test]
    fn mixed_lengths_normalize_separately_and_zero_padding() {
        let p = ModelParams::init(&tiny_hyper(), 4).unwrap();
        let a = journey("a", &[0, 1, 2], true);
        let b = journey("b", &[1], false);
        let pass = forward(&p, &[&a, &b], &ForwardOptions::eval()).unwrap();
        let att = pass.graph.value(pass.nodes.attention);
        assert!((att.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(att.row(1)[0], 1.0);
        assert_eq!(&att.row(1)[1..], &[0.0, 0.0]);
        assert_eq!(pass.results[0].attention.len(), 3);
        assert_eq!(pass.results[1].attention.len(), 1);
        for r in &pass.results {
            assert!(r.click_probs.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((0.0..=1.0).contains(&r.conversion_prob));
            for props in &r.channel_propensities {
                assert!((props.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_journeys_are_rejected() {
        let p = ModelParams::init(&tiny_hyper(), 4).unwrap();
        let empty = journey("e", &[], false);
        assert!(attribute(&p, &empty).is_err());
        let bad_channel = journey("c", &[3], false);
        assert!(attribute(&p, &bad_channel).is_err());
        let long = journey("l", &[0; 21], false);
        assert!(attribute(&p, &long).is_err());
    }

    #[test]
    fn graph_losses_match_pure_recomputation() {
        let h = Hyperparams {
            lambda: 2.0,
            beta: 3.0,
            ..tiny_hyper()
        };
        let p = ModelParams::init(&h, 5).unwrap();
        let js = [journey("a", &[0, 2, 1], true), journey("b", &[1, 1], false)];
        let refs: Vec<&Journey> = js.iter().collect();
        let pass = forward(&p, &refs, &ForwardOptions::eval()).unwrap();
        let (mut lz, mut lc, mut ly) = (0.0, 0.0, 0.0);
        for (j, r) in js.iter().zip(&pass.results) {
            for (t, tp) in j.touchpoints.iter().enumerate() {
                lz += binary_cross_entropy(r.click_probs[t], if tp.click { 1.0 } else { 0.0 });
                lc += categorical_cross_entropy(&r.channel_propensities[t], tp.channel);
            }
            ly += binary_cross_entropy(r.conversion_prob, if j.converted { 1.0 } else { 0.0 });
        }
        let c = pass.losses.components(h.lambda, h.beta).unwrap();
        assert!((c.click - lz / 2.0).abs() < 1e-12);
        assert!((c.channel - lc / 2.0).abs() < 1e-12);
        assert!((c.conversion - ly / 2.0).abs() < 1e-12);
        let objective = pass.graph.value(pass.nodes.objective).data()[0];
        assert!((objective - c.training).abs() < 1e-12);
        assert!((c.representation - (c.click - 2.0 * c.channel)).abs() < 1e-12);
    }

    #[test]
    fn train_mode_dropout_depends_on_seed_eval_does_not() {
        let p = ModelParams::init(&tiny_hyper(), 6).unwrap();
        let j = journey("a", &[0, 1, 2, 0], true);
        let run = |opts: ForwardOptions| forward(&p, &[&j], &opts).unwrap().results;
        let e1 = run(ForwardOptions { dropout_seed: 1, ..ForwardOptions::eval() });
        let e2 = run(ForwardOptions { dropout_seed: 2, ..ForwardOptions::eval() });
        assert_eq!(e1, e2);
        assert_ne!(run(ForwardOptions::train(1)), run(ForwardOptions::train(2)));
        assert_eq!(run(ForwardOptions::train(1)), run(ForwardOptions::train(1)));
    }

    #[test]
    fn click_only_attention_variant_runs() {
        let h = Hyperparams {
            attention_input: AttentionInput::ClickOnly,
            linear_phi: true,
            ..tiny_hyper()
        };
        let p = ModelParams::init(&h, 1).unwrap();
        assert_eq!(p.tensors[p.layout.attention_w].shape(), &[1, 4]);
        let r = attribute(&p, &journey("a", &[0, 1], true)).unwrap();
        assert!((r.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
