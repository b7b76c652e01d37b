use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn xavier(name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Xavier { fan_in, fan_out },
        }
    }

    /// Weight matrix `[fan_in × fan_out]`.
    pub fn matrix(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self::xavier(name, &[fan_in, fan_out], fan_in, fan_out)
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Ones,
        }
    }
}

/// Named parameters, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Params<T> {
    /// Each tensor is drawn from its own stream keyed by `(seed, name)`, so
    /// adding or removing a component leaves the others untouched.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut map = BTreeMap::new();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data: Vec<T> = match s.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut r = rng::keyed(seed, rng::name_hash(&s.name), 0);
                    (0..n).map(|_| T::from_f64(r.random_range(-a..a))).collect()
                }
            };
            let t = Tensor::new(s.shape.clone(), data).expect("spec shape matches its data");
            assert!(map.insert(s.name.clone(), t).is_none(), "duplicate parameter {}", s.name);
        }
        Self { map }
    }

    pub fn from_map(map: BTreeMap<String, Tensor<T>>) -> Self {
        Self { map }
    }

    /// Checks names and shapes against `specs`.
    pub fn check(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.map.len() {
            return Err(Error::Dimension(format!("expected {} parameters, found {}", specs.len(), self.map.len())));
        }
        for s in specs {
            match self.map.get(&s.name) {
                None => return Err(Error::Contract(format!("missing parameter {}", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Dimension(format!("parameter {} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Puts every parameter on `g`, as differentiable leaves or constants.
    pub fn bind<'g>(&self, g: &'g Graph<T>, trainable: bool) -> Bound<'g, T> {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.leaf(v.clone()) } else { g.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound to a graph.
pub struct Bound<'g, T: Real> {
    vars: HashMap<String, Var<'g, T>>,
}

impl<'g, T: Real> Bound<'g, T> {
    /// Binds existing graph variables by name.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'g, T>)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    /// Panics on an unknown name: specs and forward code are built together.
    pub fn p(&self, name: &str) -> Var<'g, T> {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} is not bound"),
        }
    }

    pub fn try_p(&self, name: &str) -> Option<Var<'g, T>> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'g, T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// `x · W + b` for `x` of shape `[B × fan_in]`.
pub fn dense<'g, T: Real>(b: &Bound<'g, T>, prefix: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    x.try_matmul(b.p(&format!("{prefix}.w")))?.add_row(b.p(&format!("{prefix}.b")))
}

pub fn dense_specs(prefix: &str, fan_in: usize, fan_out: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::matrix(format!("{prefix}.w"), fan_in, fan_out),
        ParamSpec::zeros(format!("{prefix}.b"), &[fan_out]),
    ]
}
