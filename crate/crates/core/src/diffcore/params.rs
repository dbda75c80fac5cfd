use std::collections::BTreeMap;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Encoder stage the parameter belongs to, for layer-wise learning-rate
    /// decay. `None` means the output side (heads), which gets the base rate.
    pub stage: Option<usize>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Ordered collection of parameters addressed by name or position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        stage: Option<usize>,
        decay: bool,
    ) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            stage,
            decay,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.id(name)?].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.id(name)?;
        Ok(&mut self.params[i].value)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_prefixed(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Order-sensitive digest of every value bit.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over names and IEEE bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for p in &self.params {
            for byte in p.name.bytes() {
                feed(byte as u64);
            }
            for v in p.value.data() {
                feed(v.to_bits());
            }
        }
        h
    }

    /// Euclidean distance between two sets with identical layout.
    pub fn distance(&self, other: &ParamSet) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::invalid("parameter sets differ in layout"));
        }
        let mut acc = 0.0;
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.value.shape() != b.value.shape() || a.name != b.name {
                return Err(Error::invalid(format!(
                    "parameter {} differs in layout",
                    a.name
                )));
            }
            acc += a
                .value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(acc.sqrt())
    }
}

/// Parameters registered on a tape, either trainable or frozen.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    /// Registers every parameter as a tape leaf.
    pub fn new(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars, trainable }
    }

    /// Wraps vars that are already on a tape, in parameter order.
    pub fn from_vars(vars: Vec<Var>, trainable: bool) -> Self {
        Bound { vars, trainable }
    }

    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Collects per-parameter gradients after a backward pass.
    pub fn grads(&self, grads: &crate::diffcore::Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.get(v).cloned()).collect()
    }
}
