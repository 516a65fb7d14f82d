use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;

/// One forward pass: a fresh tape bound to a parameter snapshot, plus the
/// random stream that drives dropout in training mode.
pub struct Session<'a> {
    pub tape: Tape,
    params: &'a ParamStore,
    rng: Option<&'a mut RngState>,
}

impl<'a> Session<'a> {
    /// Evaluation mode: dropout is the identity and no randomness is drawn.
    pub fn eval(params: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            rng: None,
        }
    }

    pub fn train(params: &'a ParamStore, rng: &'a mut RngState) -> Self {
        Self {
            tape: Tape::new(),
            params,
            rng: Some(rng),
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(id, self.params.get(id))
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, rate, rng, true),
            None => {
                let mut unused = RngState::new(0);
                self.tape.dropout(x, rate, &mut unused, false)
            }
        }
    }
}
