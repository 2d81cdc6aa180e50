use rand::Rng;

use crate::error::{Error, Result};
use crate::youla::QInput;

/// What the critic sees at one step, plus the context needed to recompute
/// the actor's action from parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub input: QInput,
    /// Actor state at this step.
    pub z: Vec<f64>,
    /// Actor state one step earlier.
    pub z_prev: Vec<f64>,
    /// Actor input one step earlier.
    pub r_prev: f64,
}

impl Observation {
    /// `(e, y_bar, r_hat, z...)`.
    pub fn features(&self) -> Vec<f64> {
        let mut out = vec![self.input.error, self.input.prediction, self.input.r_hat];
        out.extend_from_slice(&self.z);
        out
    }

    pub fn feature_dim(&self) -> usize {
        3 + self.z.len()
    }

    pub fn is_finite(&self) -> bool {
        self.features().iter().chain(&self.z_prev).all(|v| v.is_finite()) && self.r_prev.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: f64,
    pub reward: f64,
    pub next_obs: Observation,
    /// True only for genuine terminal states; episode time limits are not
    /// terminal.
    pub terminal: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.obs.is_finite() && self.next_obs.is_finite() && self.action.is_finite() && self.reward.is_finite()
    }
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition"));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Indices of a batch drawn uniformly without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch > self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {batch} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
