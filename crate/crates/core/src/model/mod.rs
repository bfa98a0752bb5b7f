//! LSTM with dynamic skip connections.
//!
//! At every step an agent looks at `h_{t-1} ⊕ x_t`, picks one of the `K`
//! most recent states, and the LSTM cell consumes a blend of that state and
//! the previous one. Inputs are batched: every `Var` holding a state or an
//! input is a `[batch × width]` matrix.

pub mod agent;
pub mod cell;
mod checkpoint;
mod config;
pub mod forward;
mod params;
pub mod ring;

pub use agent::{argmax, env_repr, policy_dist, policy_logits, sample_index, ActionMode, StepTrace};
pub use cell::{expected_transition, lstm_cell, skip_transition};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{ModelKind, SkipConfig};
pub use forward::{attention_forward, forward_sequence, run, ForwardPass};
pub use params::{Bound, Gradients, ModelParams, ParamId, AGENT_HIDDEN, INIT_RANGE};
pub use ring::{State, StateRing};
