//! Named parameter storage and seeded initialisation.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Trainable variables plus non-trainable buffers (batch-norm statistics),
/// both keyed by a dotted name.
#[derive(Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Number of scalar entries across trainable variables.
    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn buffer_count(&self) -> usize {
        self.buffers.values().map(|t| t.elem_count()).sum()
    }

    /// Detached copies of every variable and buffer.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.vars {
            out.insert(k.clone(), v.as_tensor().copy()?);
        }
        for (k, t) in &self.buffers {
            out.insert(k.clone(), t.copy()?);
        }
        Ok(out)
    }

    /// All variable values flattened in name order.
    pub fn flat_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for v in self.vars.values() {
            out.extend(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot/Xavier uniform with the given fans.
    GlorotUniform { fan_in: usize, fan_out: usize },
}

enum Source {
    Random(ChaCha8Rng),
    Provided(HashMap<String, Tensor>),
}

/// Creates parameters either from a seeded RNG or from a provided tensor map
/// (checkpoints, pretrained weights, deep copies).
pub struct ParamBuilder {
    store: ParamStore,
    source: Source,
    dtype: DType,
    device: Device,
}

impl ParamBuilder {
    pub fn random(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            store: ParamStore::default(),
            source: Source::Random(ChaCha8Rng::seed_from_u64(seed)),
            dtype,
            device: device.clone(),
        }
    }

    pub fn provided(tensors: HashMap<String, Tensor>, dtype: DType, device: &Device) -> Self {
        Self {
            store: ParamStore::default(),
            source: Source::Provided(tensors),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn materialise(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        match &mut self.source {
            Source::Random(rng) => {
                let values: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::GlorotUniform { fan_in, fan_out } => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                    }
                };
                Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
            }
            Source::Provided(map) => {
                let t = map.remove(name).ok_or_else(|| {
                    Error::Assembly(format!("parameter `{name}` missing from provided weights"))
                })?;
                if t.dims() != shape {
                    return Err(Error::Shape(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                Ok(t.to_device(&self.device)?.to_dtype(self.dtype)?)
            }
        }
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.store.vars.contains_key(name) || self.store.buffers.contains_key(name) {
            return Err(Error::Assembly(format!("duplicate parameter `{name}`")));
        }
        let t = self.materialise(name, shape, init)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.store.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.store.vars.contains_key(name) || self.store.buffers.contains_key(name) {
            return Err(Error::Assembly(format!("duplicate parameter `{name}`")));
        }
        let t = self.materialise(name, shape, init)?;
        self.store.buffers.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Finishes construction; provided maps must be fully consumed.
    pub fn finish(self) -> Result<ParamStore> {
        if let Source::Provided(map) = &self.source {
            if !map.is_empty() {
                let mut extra: Vec<_> = map.keys().cloned().collect();
                extra.sort();
                return Err(Error::Assembly(format!(
                    "unexpected parameters in provided weights: {}",
                    extra.join(", ")
                )));
            }
        }
        Ok(self.store)
    }
}
