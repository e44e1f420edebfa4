//! Parameter initialisation and named parameter storage.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{ConvGeometry, DEFAULT_GN_EPS};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Layer shapes accepted by [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv { c_in: usize, c_out: usize, kernel: usize },
    GroupNorm { channels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv { weight: Tensor, bias: Tensor },
    GroupNorm { gamma: Tensor, beta: Tensor },
}

/// Uniform bound `sqrt(6 / fan_in)` with `fan_in = c_in * k * k`.
pub fn conv_init_bound(c_in: usize, kernel: usize) -> f64 {
    (6.0 / (c_in * kernel * kernel) as f64).sqrt()
}

/// Draws conv weights from `U(-a, a)` in `(c_out, c_in, k, k)` row-major
/// order; biases, gamma and beta are constants and consume no draws.
pub fn init_params(desc: LayerDesc, rng: &mut Rng) -> LayerParams {
    match desc {
        LayerDesc::Conv { c_in, c_out, kernel } => {
            let bound = conv_init_bound(c_in, kernel);
            let shape = Shape::new(c_out, c_in, kernel, kernel);
            let data = (0..shape.numel()).map(|_| rng.symmetric(bound) as f32).collect();
            LayerParams::Conv {
                weight: Tensor::new(shape, data).expect("conv weight shape"),
                bias: Tensor::zeros(Shape::new(c_out, 1, 1, 1)),
            }
        }
        LayerDesc::GroupNorm { channels } => LayerParams::GroupNorm {
            gamma: Tensor::full(Shape::new(channels, 1, 1, 1), 1.0),
            beta: Tensor::zeros(Shape::new(channels, 1, 1, 1)),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRef {
    pub weight: usize,
    pub bias: usize,
    pub geometry: ConvGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRef {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
    pub eps: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Flat, ordered parameter list. Layers refer to entries by index, so the
/// insertion order is also the checkpoint order and the graph-leaf order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.params.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        self.params.len() - 1
    }

    pub fn add_conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geometry: ConvGeometry,
        rng: &mut Rng,
    ) -> ConvRef {
        let LayerParams::Conv { weight, bias } = init_params(LayerDesc::Conv { c_in, c_out, kernel }, rng)
        else {
            unreachable!()
        };
        ConvRef {
            weight: self.push(format!("{name}.weight"), weight),
            bias: self.push(format!("{name}.bias"), bias),
            geometry,
        }
    }

    pub fn add_norm(&mut self, name: &str, channels: usize, groups: usize) -> Result<NormRef> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(format!(
                "{name}: {channels} channels not divisible into {groups} groups"
            )));
        }
        let LayerParams::GroupNorm { gamma, beta } =
            init_params(LayerDesc::GroupNorm { channels }, &mut Rng::new(0))
        else {
            unreachable!()
        };
        Ok(NormRef {
            gamma: self.push(format!("{name}.gamma"), gamma),
            beta: self.push(format!("{name}.beta"), beta),
            groups,
            eps: DEFAULT_GN_EPS,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.params[i].tensor
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].tensor
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().numel()).sum()
    }

    /// Add every parameter to `graph` as a leaf; returns vars in store order.
    pub fn record(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| graph.leaf(p.tensor.clone())).collect()
    }

    /// Write one tensor file per parameter plus a manifest of
    /// `<name> <file>` lines in store order.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for p in &self.params {
            let file = format!("{}.ptsr", p.name);
            let mut f = fs::File::create(dir.join(&file))?;
            p.tensor.write_to(&mut f)?;
            manifest.push_str(&format!("{} {}\n", p.name, file));
        }
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    /// Replace values from a checkpoint directory. Names, order and shapes
    /// must match this store exactly.
    pub fn load_values(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile { path: path.clone() })?;
        let entries: Vec<(&str, &str)> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once(' ').ok_or_else(|| Error::malformed("manifest", l)))
            .collect::<Result<_>>()?;
        if entries.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (p, (name, file)) in self.params.iter_mut().zip(entries) {
            if p.name != name {
                return Err(Error::Validation(format!(
                    "checkpoint order mismatch: expected {}, found {name}",
                    p.name
                )));
            }
            let fpath = dir.join(file);
            let f = fs::File::open(&fpath).map_err(|_| Error::MissingFile { path: fpath.clone() })?;
            let t = Tensor::read_from(std::io::BufReader::new(f))?;
            if t.shape() != p.tensor.shape() {
                return Err(Error::shape("checkpoint", p.tensor.shape(), t.shape()));
            }
            p.tensor = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let desc = LayerDesc::Conv {
            c_in: 8,
            c_out: 4,
            kernel: 3,
        };
        let a = init_params(desc, &mut Rng::new(42));
        let b = init_params(desc, &mut Rng::new(42));
        assert_eq!(a, b);
        assert_ne!(a, init_params(desc, &mut Rng::new(43)));
    }

    #[test]
    fn bound_formula() {
        assert_eq!(conv_init_bound(128, 3), (6.0f64 / 1152.0).sqrt());
    }

    #[test]
    fn consumption_order_is_weights_row_major() {
        let mut rng = Rng::new(9);
        let LayerParams::Conv { weight, bias } = init_params(
            LayerDesc::Conv {
                c_in: 2,
                c_out: 3,
                kernel: 1,
            },
            &mut rng,
        ) else {
            panic!()
        };
        let mut replay = Rng::new(9);
        let a = conv_init_bound(2, 1);
        for &w in weight.data() {
            assert_eq!(w, replay.symmetric(a) as f32);
        }
        assert!(bias.data().iter().all(|&b| b == 0.0));
        // biases consume nothing: both streams are aligned afterwards
        assert_eq!(rng.next_u64(), replay.next_u64());
    }

    #[test]
    fn sampled_weights_are_centred() {
        let mut rng = Rng::new(1234);
        let LayerParams::Conv { weight, .. } = init_params(
            LayerDesc::Conv {
                c_in: 100,
                c_out: 1000,
                kernel: 1,
            },
            &mut rng,
        ) else {
            panic!()
        };
        let a = conv_init_bound(100, 1);
        let mean = weight.sum() / weight.shape().numel() as f64;
        assert!(mean.abs() <= 0.01 * a, "mean {mean} vs bound {a}");
        assert!(weight.data().iter().all(|&w| (w as f64).abs() <= a));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        store.add_conv("a", 2, 3, 3, ConvGeometry::same(3), &mut rng);
        store.add_norm("n", 4, 2).unwrap();
        store.save(dir.path()).unwrap();
        let mut other = store.clone();
        for i in 0..other.len() {
            other.get_mut(i).data_mut().fill(7.0);
        }
        other.load_values(dir.path()).unwrap();
        assert_eq!(other, store);
    }
}
