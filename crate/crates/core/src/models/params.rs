use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, INIT_STD) resampled beyond two standard deviations.
    TruncatedNormal,
    Zeros,
    Ones,
}

/// Names, shapes and initialisers of an architecture's tensors.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub entries: Vec<(String, Vec<usize>, Init)>,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        self.entries.push((name.into(), shape.to_vec(), init));
    }

    pub fn conv(&mut self, prefix: &str, kernel: [usize; 4], bias: bool) {
        self.add(format!("{prefix}/kernel"), &kernel, Init::TruncatedNormal);
        if bias {
            self.add(format!("{prefix}/bias"), &[kernel[3]], Init::Zeros);
        }
    }

    pub fn conv_t(&mut self, prefix: &str, kernel: [usize; 4], bias: bool) {
        self.add(format!("{prefix}/kernel"), &kernel, Init::TruncatedNormal);
        if bias {
            self.add(format!("{prefix}/bias"), &[kernel[2]], Init::Zeros);
        }
    }

    pub fn linear(&mut self, prefix: &str, inp: usize, out: usize, bias: bool) {
        self.add(
            format!("{prefix}/weight"),
            &[inp, out],
            Init::TruncatedNormal,
        );
        if bias {
            self.add(format!("{prefix}/bias"), &[out], Init::Zeros);
        }
    }

    pub fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.add(format!("{prefix}/gamma"), &[c], Init::Ones);
        self.add(format!("{prefix}/beta"), &[c], Init::Zeros);
        self.add(format!("{prefix}/running_mean"), &[c], Init::Zeros);
        self.add(format!("{prefix}/running_var"), &[c], Init::Ones);
    }
}

/// Whether a parameter is adjusted by gradient descent (running statistics
/// are not).
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with("/running_mean") || name.ends_with("/running_var"))
}

/// Update phase that owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Discriminator,
    Generator,
}

impl Phase {
    pub fn of(name: &str) -> Phase {
        if name.starts_with("discriminator/") {
            Phase::Discriminator
        } else {
            Phase::Generator
        }
    }
}

/// Named model tensors, keyed by a stable path such as
/// `encoder/conv0/kernel`. Tensors are shared with computation graphs and
/// copied on write.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Arc<Tensor>>,
}

pub const PARAMS_KIND: &str = "params";

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(tensors: BTreeMap<String, Arc<Tensor>>) -> Self {
        Self { tensors }
    }

    pub fn into_map(self) -> BTreeMap<String, Arc<Tensor>> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Tensor>> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.tensors.get(name).ok_or_else(|| Error::Shape {
            layer: name.to_string(),
            detail: "parameter missing from the parameter set".into(),
        })
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), Arc::new(t));
    }

    /// Mutable access; clones the tensor if a graph still shares it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(PARAMS_KIND);
        a.tensors = self.tensors.clone();
        a
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load(path)?.expect_kind(PARAMS_KIND)?;
        Ok(Self::from_map(a.tensors))
    }

    /// Checks names and shapes against a layout.
    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if layout.entries.len() != self.len() {
            return Err(Error::invalid(format!(
                "parameter set holds {} tensors, architecture expects {}",
                self.len(),
                layout.entries.len()
            )));
        }
        for (name, shape, _) in &layout.entries {
            let t = self.require(name)?;
            if t.shape() != &shape[..] {
                return Err(Error::Shape {
                    layer: name.clone(),
                    detail: format!(
                        "stored shape {:?}, architecture expects {shape:?}",
                        t.shape()
                    ),
                });
            }
        }
        Ok(())
    }
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a; keeps each tensor's draws independent of the others.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Materialises a layout. Each tensor draws from its own ChaCha stream keyed
/// by its name, so the result depends only on the seed and the layout.
pub fn init_layout(layout: &Layout, seed: u64) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    for (name, shape, init) in &layout.entries {
        if p.get(name).is_some() {
            return Err(Error::invalid(format!("layout names {name} twice")));
        }
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::TruncatedNormal => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(name_stream(name));
                Tensor::from_fn(shape, |_| truncated_normal(&mut rng, INIT_STD))
            }
        };
        p.insert(name.clone(), t);
    }
    Ok(p)
}
