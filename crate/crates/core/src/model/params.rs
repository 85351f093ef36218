use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// What the attention layer sees at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionInput {
    /// Balanced representation, channel one-hot and click probability.
    #[default]
    Concat,
    /// Click probability only.
    ClickOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub embedding_size: usize,
    /// Recurrent cell width.
    pub hidden_size: usize,
    /// Width of the balanced representation.
    pub representation_size: usize,
    /// Hidden width of the classifier heads and the attention layer.
    pub mlp_hidden_size: usize,
    pub dropout: f64,
    /// Strength of the adversarial channel term.
    pub lambda: f64,
    /// Weight of the conversion loss.
    pub beta: f64,
    pub num_channels: usize,
    pub max_len: usize,
    /// Embedding table sizes, out-of-vocabulary slot included.
    pub cardinalities: Vec<usize>,
    #[serde(default)]
    pub attention_input: AttentionInput,
    /// Drop the tanh on the balanced representation.
    #[serde(default)]
    pub linear_phi: bool,
}

impl Hyperparams {
    /// Default grid point for `num_channels` channels and the given tables.
    pub fn new(num_channels: usize, cardinalities: Vec<usize>) -> Self {
        Hyperparams {
            embedding_size: 64,
            hidden_size: 64,
            representation_size: 32,
            mlp_hidden_size: 64,
            dropout: 0.1,
            lambda: 5.0,
            beta: 5.0,
            num_channels,
            max_len: crate::data::DEFAULT_MAX_LEN,
            cardinalities,
            attention_input: AttentionInput::Concat,
            linear_phi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.embedding_size,
            self.hidden_size,
            self.representation_size,
            self.mlp_hidden_size,
            self.num_channels,
            self.max_len,
        ];
        if sizes.contains(&0) || self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::invalid("hyperparameter sizes must all be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda ({}) and beta ({}) must be >= 0",
                self.lambda, self.beta
            )));
        }
        Ok(())
    }

    pub(crate) fn recurrent_input_size(&self) -> usize {
        self.cardinalities.len() * self.embedding_size + self.num_channels + 1
    }

    pub(crate) fn attention_input_size(&self) -> usize {
        match self.attention_input {
            AttentionInput::Concat => self.representation_size + self.num_channels + 1,
            AttentionInput::ClickOnly => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Uniform { fan_in: usize, fan_out: usize },
    Zero,
}

/// Indices of each parameter in [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub embeddings: Vec<usize>,
    /// Fused gate weights `[input + hidden, 4 * hidden]`, gate order i, f, g, o.
    pub lstm_w: usize,
    pub lstm_b: usize,
    pub phi_w: usize,
    pub phi_b: usize,
    pub channel_w1: usize,
    pub channel_b1: usize,
    pub channel_w2: usize,
    pub channel_b2: usize,
    pub click_w1: usize,
    pub click_b1: usize,
    pub click_w2: usize,
    pub click_b2: usize,
    pub attention_w: usize,
    pub attention_b: usize,
    pub attention_u: usize,
    pub conversion_w: usize,
    pub conversion_b: usize,
}

impl Layout {
    /// Whether parameter `index` belongs to the adversarial channel classifier.
    pub fn is_channel_head(&self, index: usize) -> bool {
        [self.channel_w1, self.channel_b1, self.channel_w2, self.channel_b2].contains(&index)
    }
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn specs(h: &Hyperparams) -> (Vec<Spec>, Layout) {
    let mut out: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        out.push(Spec { name, shape, init });
        out.len() - 1
    };
    let w = |r: usize, c: usize| Init::Uniform { fan_in: r, fan_out: c };
    let (e, hid, l, m, k) = (
        h.embedding_size,
        h.hidden_size,
        h.representation_size,
        h.mlp_hidden_size,
        h.num_channels,
    );
    let embeddings = h
        .cardinalities
        .iter()
        .enumerate()
        .map(|(f, &card)| add(format!("embedding.{f}"), vec![card, e], w(card, e)))
        .collect();
    let rin = h.recurrent_input_size() + hid;
    let ain = h.attention_input_size();
    let layout = Layout {
        embeddings,
        lstm_w: add("lstm.weight".into(), vec![rin, 4 * hid], w(rin, 4 * hid)),
        lstm_b: add("lstm.bias".into(), vec![4 * hid], Init::Zero),
        phi_w: add("phi.weight".into(), vec![hid, l], w(hid, l)),
        phi_b: add("phi.bias".into(), vec![l], Init::Zero),
        channel_w1: add("channel_head.weight1".into(), vec![l, m], w(l, m)),
        channel_b1: add("channel_head.bias1".into(), vec![m], Init::Zero),
        channel_w2: add("channel_head.weight2".into(), vec![m, k], w(m, k)),
        channel_b2: add("channel_head.bias2".into(), vec![k], Init::Zero),
        click_w1: add("click_head.weight1".into(), vec![l + k, m], w(l + k, m)),
        click_b1: add("click_head.bias1".into(), vec![m], Init::Zero),
        click_w2: add("click_head.weight2".into(), vec![m, 1], w(m, 1)),
        click_b2: add("click_head.bias2".into(), vec![1], Init::Zero),
        attention_w: add("attention.weight".into(), vec![ain, m], w(ain, m)),
        attention_b: add("attention.bias".into(), vec![m], Init::Zero),
        attention_u: add("attention.context".into(), vec![m, 1], w(m, 1)),
        conversion_w: add("conversion.weight".into(), vec![m, 1], w(m, 1)),
        conversion_b: add("conversion.bias".into(), vec![1], Init::Zero),
    };
    (out, layout)
}

/// Every trainable array of the model, in a fixed order given by [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub layout: Layout,
}

impl ModelParams {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(hyper: &Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let (specs, layout) = specs(hyper);
        let mut rng = stream_rng(seed, "init-params", 0);
        let tensors = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zero => vec![0.0; n],
                    Init::Uniform { fan_in, fan_out } => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..=a)).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            hyper: hyper.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            layout,
        })
    }

    /// Rebuilds from stored arrays, checking them against the layout.
    pub fn from_tensors(hyper: &Hyperparams, tensors: Vec<Tensor>) -> Result<Self> {
        hyper.validate()?;
        let (specs, layout) = specs(hyper);
        if specs.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter arrays, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("parameter `{}`", s.name)));
            }
        }
        Ok(ModelParams {
            hyper: hyper.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            layout,
        })
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_bias(&self, index: usize) -> bool {
        self.names[index].contains(".bias")
    }

    /// Init bound `sqrt(6 / (fan_in + fan_out))` of a weight, `None` for biases.
    pub fn init_bound(&self, index: usize) -> Option<f64> {
        let (specs, _) = specs(&self.hyper);
        match specs[index].init {
            Init::Zero => None,
            Init::Uniform { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Hyperparams {
        Hyperparams {
            embedding_size: 3,
            hidden_size: 4,
            representation_size: 3,
            mlp_hidden_size: 5,
            ..Hyperparams::new(3, vec![4, 3])
        }
    }

    #[test]
    fn init_is_seeded_bounded_and_zero_biased() {
        let a = ModelParams::init(&tiny(), 11).unwrap();
        assert_eq!(a, ModelParams::init(&tiny(), 11).unwrap());
        assert_ne!(a.tensors, ModelParams::init(&tiny(), 12).unwrap().tensors);
        for (i, t) in a.tensors.iter().enumerate() {
            match a.init_bound(i) {
                None => assert!(t.data().iter().all(|&v| v == 0.0), "{}", a.names[i]),
                Some(bound) => assert!(t.max_abs() <= bound, "{}", a.names[i]),
            }
        }
        assert_eq!(a.tensors[a.layout.lstm_w].shape(), &[2 * 3 + 3 + 1 + 4, 16]);
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        for bad in [
            Hyperparams { hidden_size: 0, ..tiny() },
            Hyperparams { dropout: 1.0, ..tiny() },
            Hyperparams { lambda: -1.0, ..tiny() },
            Hyperparams { cardinalities: vec![], ..tiny() },
        ] {
            assert!(ModelParams::init(&bad, 0).is_err());
        }
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = ModelParams::init(&tiny(), 1).unwrap();
        let mut ts = p.tensors.clone();
        assert_eq!(ModelParams::from_tensors(&tiny(), ts.clone()).unwrap(), p);
        ts[0] = Tensor::zeros(&[1, 1]);
        assert!(ModelParams::from_tensors(&tiny(), ts).is_err());
    }
}
