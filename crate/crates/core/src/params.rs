//! Named trainable parameters, binding onto a tape, and checkpoints.
//!
//! A checkpoint is a text file: a header line, then for every parameter a
//! `param <name> <ndim> <dims...>` line followed by one line of
//! space-separated values in row-major order. Values use shortest
//! round-trip formatting, so save/load is bit-exact and files diff cleanly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Index;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

const CHECKPOINT_HEADER: &str = "# comgnn checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(
                "params",
                format!("duplicate parameter {name:?}"),
            ));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.names.len() - 1))
    }

    /// Uniform `(-s, s)` initialization with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let s = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..n).map(|_| rng.gen_range(-s..s)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// `[out x in]` weight matrix with uniform initialization.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        out: usize,
        inp: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.add_uniform(name, &[out, inp], inp, out, rng)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// `Σ θ²` over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(Tensor::sum_squares).sum()
    }

    /// Registers every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Like [`ParamStore::bind`] but as constants, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.constant(v.clone()))
                .collect(),
        }
    }

    /// One `name<TAB>shape` line per parameter, in registration order.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.iter() {
            let dims: Vec<String> = v.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{name}\t[{}]", dims.join(", "));
        }
        s
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        for (name, v) in self.iter() {
            let dims: Vec<String> = v.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "param {name} {} {}", v.shape().len(), dims.join(" "));
            let vals: Vec<String> = v.data().iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::schema(source, format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            _ => return Err(err(1, "missing checkpoint header")),
        }
        let mut store = ParamStore::new();
        while let Some((ln, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 3 || parts[0] != "param" {
                return Err(err(ln, "expected `param <name> <ndim> <dims...>`"));
            }
            let ndim: usize = parts[2].parse().map_err(|_| err(ln, "bad ndim"))?;
            if parts.len() != 3 + ndim {
                return Err(err(ln, "dimension count does not match ndim"));
            }
            let shape = parts[3..]
                .iter()
                .map(|d| d.parse::<usize>().map_err(|_| err(ln, "bad dimension")))
                .collect::<Result<Vec<_>>>()?;
            let (vln, vals) = lines.next().ok_or_else(|| err(ln, "missing value line"))?;
            let data = vals
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(vln, "bad value")))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| err(vln, &e.to_string()))?;
            store
                .add(parts[1], t)
                .map_err(|e| err(ln, &e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, &path.display().to_string())
    }

    /// Copies values from `other`, which must hold exactly the same names
    /// and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::schema(
                "checkpoint",
                "parameter names do not match the model",
            ));
        }
        for (mine, theirs) in self.values.iter_mut().zip(&other.values) {
            if mine.shape() != theirs.shape() {
                return Err(Error::shape("checkpoint", mine.shape(), theirs.shape()));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}

/// Parameters registered on one tape, addressable by [`ParamId`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

impl<'t> Bound<'t> {
    /// Wraps vars created elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradient of every parameter, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.wrt(*v)).collect()
    }

    /// `Σ θ²` over all bound parameters.
    pub fn sum_squares(&self) -> Result<Var<'t>> {
        let mut iter = self.vars.iter();
        let Some(first) = iter.next() else {
            return Err(Error::invalid("sum_squares", "no parameters"));
        };
        iter.try_fold(first.sum_squares(), |acc, v| acc.add(&v.sum_squares()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add_weight("layer.1.rel.r.W", 3, 4, &mut rng).unwrap();
        s.add_zeros("layer.1.rel.r.b", &[3]).unwrap();
        s.add("x", Tensor::vector(vec![0.1, -1e-300, 1.0 / 3.0]))
            .unwrap();
        let text = s.to_checkpoint_string();
        let back = ParamStore::from_checkpoint_str(&text, "mem").unwrap();
        assert_eq!(back, s);
        assert!(s.describe().starts_with("layer.1.rel.r.W\t[3, 4]\n"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add_zeros("a", &[1]).unwrap();
        assert!(s.add_zeros("a", &[1]).is_err());
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let id = s.add_weight("w", 10, 20, &mut rng).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(s.get(id).data().iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn malformed_checkpoint() {
        assert!(ParamStore::from_checkpoint_str("nope", "m").is_err());
        let bad = format!("{CHECKPOINT_HEADER}\nparam a 1 2\n1.0\n");
        assert!(ParamStore::from_checkpoint_str(&bad, "m").is_err());
    }
}
