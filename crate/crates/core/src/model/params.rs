use rand::Rng;

use super::SkipConfig;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

/// Hidden width of the skip agent's MLP.
pub const AGENT_HIDDEN: usize = 50;

/// Half-width of the uniform weight initializer.
pub const INIT_RANGE: f64 = 0.05;

/// Trainable arrays. LSTM gates are stored fused, stacked in `g, i, f, o` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    /// `[4H × N_x]`
    LstmWx,
    /// `[4H × H]`
    LstmWh,
    /// `[4H]`
    LstmB,
    /// `[50 × (H + N_x)]`
    AgentW1,
    AgentB1,
    /// `[K × 50]`
    AgentW2,
    AgentB2,
    /// `[C × H]`
    OutW,
    OutB,
}

impl ParamId {
    pub const ALL: [ParamId; 9] = [
        ParamId::LstmWx,
        ParamId::LstmWh,
        ParamId::LstmB,
        ParamId::AgentW1,
        ParamId::AgentB1,
        ParamId::AgentW2,
        ParamId::AgentB2,
        ParamId::OutW,
        ParamId::OutB,
    ];

    /// Agent parameters (θ_a); everything else belongs to the LSTM and head.
    pub fn is_agent(self) -> bool {
        matches!(
            self,
            ParamId::AgentW1 | ParamId::AgentB1 | ParamId::AgentW2 | ParamId::AgentB2
        )
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::LstmB | ParamId::AgentB1 | ParamId::AgentB2 | ParamId::OutB
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::LstmWx => "lstm.W_x",
            ParamId::LstmWh => "lstm.W_h",
            ParamId::LstmB => "lstm.b",
            ParamId::AgentW1 => "agent.W1",
            ParamId::AgentB1 => "agent.b1",
            ParamId::AgentW2 => "agent.W2",
            ParamId::AgentB2 => "agent.b2",
            ParamId::OutW => "out.W",
            ParamId::OutB => "out.b",
        }
    }

    pub fn shape(self, cfg: &SkipConfig) -> Vec<usize> {
        let (h, x, k, c) = (cfg.hidden_size, cfg.input_size, cfg.max_skip, cfg.num_classes);
        match self {
            ParamId::LstmWx => vec![4 * h, x],
            ParamId::LstmWh => vec![4 * h, h],
            ParamId::LstmB => vec![4 * h],
            ParamId::AgentW1 => vec![AGENT_HIDDEN, h + x],
            ParamId::AgentB1 => vec![AGENT_HIDDEN],
            ParamId::AgentW2 => vec![k, AGENT_HIDDEN],
            ParamId::AgentB2 => vec![k],
            ParamId::OutW => vec![c, h],
            ParamId::OutB => vec![c],
        }
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

/// All trainable arrays of one model, in [`ParamId::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: SkipConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(config: SkipConfig) -> Result<Self> {
        config.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| Tensor::zeros(&id.shape(&config)))
            .collect();
        Ok(ModelParams { config, tensors })
    }

    /// Weights uniform in `[-0.05, 0.05]`, biases zero, from the seed's `init` stream.
    pub fn init(config: SkipConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng::stream(seed, "init");
        for id in ParamId::ALL {
            if id.is_bias() {
                continue;
            }
            for w in params.get_mut(id).data.iter_mut() {
                *w = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        Ok(params)
    }

    pub(crate) fn from_parts(config: SkipConfig, tensors: Vec<Tensor>) -> Self {
        ModelParams { config, tensors }
    }

    pub fn config(&self) -> &SkipConfig {
        &self.config
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.slot()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.slot()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = std::array::from_fn(|i| tape.leaf(self.tensors[i].clone()));
        Bound { vars }
    }

    /// `name=norm` pairs, for diagnostics.
    pub fn norm_report(&self) -> String {
        ParamId::ALL
            .iter()
            .map(|id| format!("{}={:.4e}", id.name(), self.get(*id).norm()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Parameter leaves recorded on one tape.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    vars: [Var; 9],
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.slot()]
    }

    /// Collects the gradient of every parameter leaf (zeros where unreached).
    pub fn grads(&self, tape: &Tape) -> Gradients {
        Gradients(self.vars.iter().map(|v| tape.grad_or_zeros(*v)).collect())
    }
}

/// Gradients in [`ParamId::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients(params.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.slot()]
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0
            .iter_mut()
            .flat_map(|t| t.data.iter_mut())
            .for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SkipConfig {
        SkipConfig {
            max_skip: 3,
            lambda: 0.5,
            hidden_size: 4,
            input_size: 10,
            num_classes: 10,
        }
    }

    #[test]
    fn shapes_follow_config() {
        let p = ModelParams::zeros(cfg()).unwrap();
        assert_eq!(p.get(ParamId::LstmWx).shape, vec![16, 10]);
        assert_eq!(p.get(ParamId::LstmWh).shape, vec![16, 4]);
        assert_eq!(p.get(ParamId::AgentW1).shape, vec![50, 14]);
        assert_eq!(p.get(ParamId::AgentW2).shape, vec![3, 50]);
        assert_eq!(p.get(ParamId::OutW).shape, vec![10, 4]);
    }

    #[test]
    fn init_is_seeded_bounded_and_leaves_biases_zero() {
        let a = ModelParams::init(cfg(), 5).unwrap();
        assert_eq!(a, ModelParams::init(cfg(), 5).unwrap());
        assert_ne!(a, ModelParams::init(cfg(), 6).unwrap());
        for id in ParamId::ALL {
            let t = a.get(id);
            if id.is_bias() {
                assert!(t.data.iter().all(|v| *v == 0.0));
            } else {
                assert!(t.data.iter().all(|v| v.abs() <= INIT_RANGE));
                assert!(t.norm() > 0.0);
            }
        }
    }
}
