use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;

use super::NetSpec;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Ordered named tensors.
///
/// The version counter changes on every mutation so that a tape recorded
/// against an older version can be rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    version: u64,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, ArrayD<f64>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (n, v) in entries {
            if names.contains(&n) {
                return Err(Error::Invalid(format!("duplicate parameter `{n}`")));
            }
            names.push(n);
            values.push(v);
        }
        Ok(Self { names, values, version: 0 })
    }

    /// Fan-in uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let mut entries = Vec::new();
        for (li, (prefix, fan_in, fan_out)) in spec.layers().into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream(seed, Domain::Init, &[li as u64]);
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
            let b = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
            entries.push((format!("{prefix}.weight"), w.into_dyn()));
            entries.push((format!("{prefix}.bias"), b.into_dyn()));
        }
        Self::new(entries).expect("layer names are unique")
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect(),
            version: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub(crate) fn value(&self, index: usize) -> &ArrayD<f64> {
        &self.values[index]
    }

    pub(crate) fn value_mut(&mut self, index: usize) -> &mut ArrayD<f64> {
        &mut self.values[index]
    }

    /// Mutable access to every tensor; bumps the version.
    pub fn values_mut(&mut self) -> &mut [ArrayD<f64>] {
        self.version += 1;
        &mut self.values
    }

    pub fn values(&self) -> &[ArrayD<f64>] {
        &self.values
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::Invalid(format!("no parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        self.version += 1;
        Ok(())
    }

    /// Errors unless both sets have the same names and shapes in order.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ".into()));
        }
        for (n, (a, b)) in self.names.iter().zip(self.values.iter().zip(&other.values)) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!("parameter `{n}`: {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    pub fn check_spec(&self, spec: &NetSpec) -> Result<()> {
        for (prefix, fan_in, fan_out) in spec.layers() {
            let w = self.get(&format!("{prefix}.weight"));
            let b = self.get(&format!("{prefix}.bias"));
            match (w, b) {
                (Some(w), Some(b)) if w.shape() == [fan_out, fan_in] && b.shape() == [fan_out] => {}
                _ => return Err(Error::Shape(format!("parameters do not match layer `{prefix}` ({fan_in} -> {fan_out})"))),
            }
        }
        Ok(())
    }

    /// Sum of squares over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).map(|x| x * x).sum()
    }

    /// Flat copy in parameter order, for finite-difference checks.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<ParamSet> {
        let total: usize = self.values.iter().map(|v| v.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("flat vector has {} values, expected {total}", flat.len())));
        }
        let mut offset = 0;
        let values = self
            .values
            .iter()
            .map(|v| {
                let n = v.len();
                let a = ArrayD::from_shape_vec(IxDyn(v.shape()), flat[offset..offset + n].to_vec()).expect("shape");
                offset += n;
                a
            })
            .collect();
        Ok(ParamSet { names: self.names.clone(), values, version: self.version + 1 })
    }
}


impl ParamSet {
    pub fn to_tensors(&self) -> Vec<crate::tensorfile::NamedTensor> {
        self.iter()
            .map(|(n, v)| crate::tensorfile::NamedTensor::from_f64(n, v.shape(), v.iter().copied()))
            .collect()
    }

    pub fn from_tensors(tensors: &[crate::tensorfile::NamedTensor]) -> Result<Self> {
        let entries = tensors
            .iter()
            .map(|t| {
                ArrayD::from_shape_vec(IxDyn(&t.dims), t.to_f64())
                    .map(|a| (t.name.clone(), a))
                    .map_err(|e| Error::Shape(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// Writes a checkpoint; values are stored as f32.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::tensorfile::save(path, &self.to_tensors())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_tensors(&crate::tensorfile::load(path)?)
    }
}
