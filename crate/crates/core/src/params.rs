//! Named parameter storage and its binding onto a tape.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::numerics::{Prng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Registers a tensor drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut Prng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Mutable views of the given parameters, in ascending id order.
    pub fn values_mut(&mut self, ids: &[ParamId]) -> Vec<&mut Tensor> {
        let mut mask = vec![false; self.values.len()];
        for id in ids {
            mask[id.0] = true;
        }
        self.values
            .iter_mut()
            .zip(mask)
            .filter_map(|(t, keep)| keep.then_some(t))
            .collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|&id| self.name(id).starts_with(prefix)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Concatenation of all values in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Offsets of each tensor inside [`flatten`](Self::flatten).
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.values
            .iter()
            .map(|t| {
                let o = off;
                off += t.numel();
                o
            })
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape(
                "set_flat",
                format!("{} values for {} parameters", flat.len(), self.numel()),
            ));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of the given parameters.
    pub fn fingerprint(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for id in ids {
            for x in self.get(*id).data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

enum Source<'t> {
    Store { trainable: Vec<bool> },
    Flat { flat: Var<'t>, offsets: Vec<usize> },
}

/// Lazily places parameters on a tape, once each.
pub struct Bindings<'s, 't> {
    tape: &'t Tape,
    store: &'s ParamStore,
    source: Source<'t>,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'s, 't> Bindings<'s, 't> {
    /// Parameters in `trainable` become tracked leaves, all others constants.
    pub fn new(tape: &'t Tape, store: &'s ParamStore, trainable: &[ParamId]) -> Self {
        let mut mask = vec![false; store.len()];
        for id in trainable {
            mask[id.0] = true;
        }
        Self {
            tape,
            store,
            source: Source::Store { trainable: mask },
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn all_trainable(tape: &'t Tape, store: &'s ParamStore) -> Self {
        let ids: Vec<ParamId> = store.ids().collect();
        Self::new(tape, store, &ids)
    }

    pub fn frozen(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, &[])
    }

    /// Views every parameter as a slice of one flat vector laid out like
    /// [`ParamStore::flatten`]; used for finite-difference checks.
    pub fn from_flat(tape: &'t Tape, store: &'s ParamStore, flat: Var<'t>) -> Result<Self> {
        if flat.value().numel() != store.numel() {
            return Err(Error::shape(
                "Bindings::from_flat",
                format!("{} values for {} parameters", flat.value().numel(), store.numel()),
            ));
        }
        Ok(Self {
            tape,
            store,
            source: Source::Flat {
                flat,
                offsets: store.offsets(),
            },
            vars: RefCell::new(vec![None; store.len()]),
        })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> Result<Var<'t>> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return Ok(v);
        }
        let value = self.store.get(id);
        let var = match &self.source {
            Source::Store { trainable } => {
                if trainable[id.0] {
                    self.tape.param(value.clone())
                } else {
                    self.tape.constant(value.clone())
                }
            }
            Source::Flat { flat, offsets } => {
                let off = offsets[id.0];
                flat.slice_rows(off, off + value.numel())?
                    .reshape(value.shape().to_vec())?
            }
        };
        self.vars.borrow_mut()[id.0] = Some(var);
        Ok(var)
    }

    /// Gradient for each requested parameter; zeros when it was never bound.
    pub fn grads(&self, ids: &[ParamId]) -> Vec<Tensor> {
        let vars = self.vars.borrow();
        ids.iter()
            .map(|id| match vars[id.0] {
                Some(v) => v.grad(),
                None => Tensor::zeros(self.store.get(*id).shape().to_vec()),
            })
            .collect()
    }
}
