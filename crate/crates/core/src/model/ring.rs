use std::collections::VecDeque;

use crate::autodiff::Var;

/// Hidden and cell state of one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct State {
    pub h: Var,
    pub c: Var,
}

/// The `K` most recent states, most recent first.
///
/// The ring starts out filled with the initial state, so `get(k)` is defined
/// for every `k` in `1..=K` from the first step on.
#[derive(Clone, Debug)]
pub struct StateRing<S> {
    capacity: usize,
    entries: VecDeque<S>,
}

impl<S: Clone> StateRing<S> {
    pub fn new(capacity: usize, initial: S) -> Self {
        assert!(capacity > 0, "state ring needs capacity >= 1");
        StateRing {
            capacity,
            entries: std::iter::repeat_n(initial, capacity).collect(),
        }
    }

    pub fn push(&mut self, state: S) {
        self.entries.push_front(state);
        self.entries.truncate(self.capacity);
    }

    /// The state `k` steps back: `get(1)` is the previous state.
    pub fn get(&self, k: usize) -> Option<&S> {
        k.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.entries.iter()
    }
}
