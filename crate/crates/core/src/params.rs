//! Named parameter collections and their initialization.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{Array, Tape, Var};

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) {
        self.entries.push((name.into(), value));
    }

    pub fn with(mut self, name: impl Into<String>, value: Array) -> Self {
        self.push(name, value);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &Array> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn into_entries(self) -> Vec<(String, Array)> {
        self.entries
    }

    pub fn from_entries(entries: Vec<(String, Array)>) -> Self {
        ParamSet { entries }
    }

    /// Names and shapes, in order.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.entries.iter().map(|(n, a)| (n.clone(), a.shape().to_vec())).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.numel()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet { entries: self.entries.iter().map(|(n, a)| (n.clone(), a.zeros_like())).collect() }
    }

    fn check_signature(&self, other: &ParamSet) -> Result<()> {
        let same = self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, a1), (n2, a2))| n1 == n2 && a1.shape() == a2.shape());
        if same {
            Ok(())
        } else {
            Err(Error::SignatureMismatch(format!(
                "{:?} vs {:?}",
                self.names().collect::<Vec<_>>(),
                other.names().collect::<Vec<_>>()
            )))
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_signature(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    /// `self + alpha * other` as a new set.
    pub fn plus_scaled(&self, alpha: f64, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        out.axpy(alpha, other)?;
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> ParamSet {
        ParamSet { entries: self.entries.iter().map(|(n, a)| (n.clone(), a.scaled(alpha))).collect() }
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_signature(other)?;
        self.entries.iter().zip(&other.entries).map(|((_, a), (_, b))| a.dot(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.entries.iter().map(|(_, a)| a.data().iter().map(|v| v * v).sum::<f64>()).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, a)| a.is_finite())
    }

    /// All values concatenated in entry order.
    pub fn flatten(&self) -> Array {
        Array::from_vec(self.entries.iter().flat_map(|(_, a)| a.data().iter().copied()).collect())
    }

    /// Puts every tensor on `tape` as a differentiable leaf (or constant).
    pub fn bind<'t>(&self, tape: &'t Tape, differentiable: bool) -> BoundParams<'_, 't> {
        let vars = self
            .entries
            .iter()
            .map(|(_, a)| if differentiable { tape.leaf(a.clone()) } else { tape.constant(a.clone()) })
            .collect();
        BoundParams { set: self, vars }
    }

    /// Rebuilds a set with this set's names from per-entry arrays.
    pub fn with_values(&self, values: Vec<Array>) -> Result<ParamSet> {
        if values.len() != self.entries.len() {
            return Err(Error::SignatureMismatch(format!(
                "{} values for {} entries",
                values.len(),
                self.entries.len()
            )));
        }
        let out = ParamSet {
            entries: self.entries.iter().zip(values).map(|((n, _), v)| (n.clone(), v)).collect(),
        };
        self.check_signature(&out)?;
        Ok(out)
    }
}

/// A [`ParamSet`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams<'p, 't> {
    set: &'p ParamSet,
    vars: Vec<Var<'t>>,
}

impl<'p, 't> BoundParams<'p, 't> {
    /// Binds explicit vars (e.g. results of an unrolled update) under the
    /// names of `set`.
    pub fn from_vars(set: &'p ParamSet, vars: Vec<Var<'t>>) -> Result<Self> {
        if vars.len() != set.len() {
            return Err(Error::SignatureMismatch(format!("{} vars for {} entries", vars.len(), set.len())));
        }
        Ok(BoundParams { set, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.set
            .names()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn set(&self) -> &'p ParamSet {
        self.set
    }

    /// Current values as a new set.
    pub fn to_param_set(&self) -> ParamSet {
        ParamSet {
            entries: self.set.names().zip(&self.vars).map(|(n, v)| (n.to_string(), v.to_array())).collect(),
        }
    }
}

/// Initialization scheme for one tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Normal with variance `2 / fan_in`.
    ScaledNormal { fan_in: usize },
    /// Uniform on `(-a, a)`.
    Uniform { bound: f64 },
    Zeros,
}

impl FromStr for InitScheme {
    type Err = Error;

    /// Parses `zeros`, `uniform:<a>` or `scaled-normal:<fan_in>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let bad = || Error::InvalidConfig(format!("unknown init scheme `{s}`"));
        match (kind, arg) {
            ("zeros", None) => Ok(InitScheme::Zeros),
            ("uniform", Some(a)) => a
                .parse::<f64>()
                .ok()
                .filter(|b| *b > 0.0)
                .map(|bound| InitScheme::Uniform { bound })
                .ok_or_else(bad),
            ("scaled-normal", Some(f)) => f
                .parse::<usize>()
                .ok()
                .filter(|f| *f > 0)
                .map(|fan_in| InitScheme::ScaledNormal { fan_in })
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// Requested tensor: name, shape, scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub scheme: InitScheme,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], scheme: InitScheme) -> Self {
        ParamSpec { name: name.into(), shape: shape.to_vec(), scheme }
    }
}

/// Draws every tensor in `specs` from one stream seeded by `seed`.
pub fn init_weights(seed: u64, specs: &[ParamSpec]) -> Result<ParamSet> {
    let mut rng = seeded(seed);
    let mut set = ParamSet::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.scheme {
            InitScheme::Zeros => alloc::vec![0.0; n],
            InitScheme::Uniform { bound } => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            InitScheme::ScaledNormal { fan_in } => {
                let std = libm::sqrt(2.0 / fan_in as f64);
                let normal = Normal::new(0.0, std)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", spec.name)))?;
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        set.push(spec.name.clone(), Array::new(&spec.shape, data)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_scheme() {
        let p = init_weights(1, &[ParamSpec::new("w", &[3, 4], InitScheme::Zeros)]).unwrap();
        assert!(p.get("w").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_bits() {
        let specs = [
            ParamSpec::new("a", &[5, 5], InitScheme::ScaledNormal { fan_in: 5 }),
            ParamSpec::new("b", &[7], InitScheme::Uniform { bound: 0.3 }),
        ];
        let a = init_weights(42, &specs).unwrap();
        let b = init_weights(42, &specs).unwrap();
        let bits = |p: &ParamSet| p.flatten().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_weights(43, &specs).unwrap()));
    }

    #[test]
    fn scaled_normal_variance() {
        // fan_in = 50 -> variance 0.04
        let p = init_weights(7, &[ParamSpec::new("w", &[100_000], InitScheme::ScaledNormal { fan_in: 50 })])
            .unwrap();
        let d = p.get("w").unwrap().data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((var - 0.04).abs() < 0.2 * 0.04, "variance {var}");
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("zeros".parse::<InitScheme>().unwrap(), InitScheme::Zeros);
        assert_eq!(
            "scaled-normal:50".parse::<InitScheme>().unwrap(),
            InitScheme::ScaledNormal { fan_in: 50 }
        );
        assert!(matches!("xavier".parse::<InitScheme>(), Err(Error::InvalidConfig(_))));
        assert!("uniform:-1".parse::<InitScheme>().is_err());
    }

    #[test]
    fn axpy_requires_matching_signature() {
        let mut a = ParamSet::new().with("w", Array::zeros(&[2]));
        let b = ParamSet::new().with("v", Array::zeros(&[2]));
        assert!(matches!(a.axpy(1.0, &b), Err(Error::SignatureMismatch(_))));
        let c = ParamSet::new().with("w", Array::from_vec(alloc::vec![1.0, 2.0]));
        a.axpy(2.0, &c).unwrap();
        assert_eq!(a.get("w").unwrap().data(), &[2.0, 4.0]);
    }
}
