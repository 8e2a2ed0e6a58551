use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, PositionalMode};
use crate::numerics::{DenseArray, ParamId, ParamStore, Real};
use crate::seeding::{name_hash, stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Head `i` occupies columns `[i * d_h, (i + 1) * d_h)` of the query,
    /// key and value matrices.
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalParams {
    pub time: ProjectionParams,
    pub merge: ParamId,
    pub merge_bias: ParamId,
}

/// Handles into the [`ParamStore`] for every model array.
#[derive(Clone, Debug, PartialEq)]
pub struct CraftParams {
    /// `(num_nodes + 1) x d`; the last row is the frozen zero padding row.
    pub embedding: ParamId,
    pub positional: Option<ParamId>,
    pub interval: Option<IntervalParams>,
    pub layers: Vec<LayerParams>,
    pub elapsed: Option<ProjectionParams>,
    /// Substituted for the elapsed-time context of never-active candidates.
    pub fresh: Option<ParamId>,
    pub repeat: Option<ProjectionParams>,
    pub head_w1: ParamId,
    pub head_b1: ParamId,
    pub head_w2: ParamId,
    pub head_b2: ParamId,
}

fn glorot<T: Real>(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> DenseArray<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseArray::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-limit..limit)))
}

fn normal<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> DenseArray<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    DenseArray::from_fn(rows, cols, |_, _| T::lit(dist.sample(rng)))
}

/// Parameter builder: every group draws from its own stream keyed by name,
/// so adding or removing a component leaves the other groups untouched.
struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<T: Real> Builder<'_, T> {
    fn rng(&self, name: &str) -> rand_chacha::ChaCha8Rng {
        stream_rng(self.seed, Stream::Init, name_hash(name), 0)
    }

    fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let v = glorot(&mut self.rng(name), rows, cols, rows, cols);
        self.store.add(name, v)
    }

    /// Glorot init applied per head block of width `d_h`.
    fn glorot_heads(&mut self, name: &str, d: usize, d_h: usize) -> ParamId {
        let v = glorot(&mut self.rng(name), d, d, d, d_h);
        self.store.add(name, v)
    }

    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let v = normal(&mut self.rng(name), rows, cols, std);
        self.store.add(name, v)
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, DenseArray::zeros(&[rows, cols]))
    }

    fn projection(&mut self, name: &str, d: usize) -> ProjectionParams {
        ProjectionParams {
            weight: self.glorot(&format!("{name}.weight"), 1, d),
            bias: self.zeros(&format!("{name}.bias"), 1, d),
        }
    }
}

impl CraftParams {
    pub fn init<T: Real>(
        config: &ModelConfig,
        num_nodes: usize,
        seed: u64,
    ) -> (Self, ParamStore<T>) {
        let d = config.dim;
        let d_h = config.head_dim();
        let f = config.ffn();
        let std = 1.0 / (d as f64).sqrt();
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            seed,
        };

        let embedding = b.normal("embedding", num_nodes + 1, d, std);
        b.store
            .value_mut(embedding)
            .row_mut(num_nodes)
            .fill(T::zero());

        let (positional, interval) = match config.positional_mode {
            PositionalMode::Position => {
                let id = if config.use_positional {
                    b.normal("positional", config.neighbors, d, std)
                } else {
                    let id = b.zeros("positional", config.neighbors, d);
                    b.store.group_mut(id).trainable = false;
                    id
                };
                (Some(id), None)
            }
            PositionalMode::TimeInterval => (
                None,
                Some(IntervalParams {
                    time: b.projection("interval", d),
                    merge: b.glorot("interval.merge", 2 * d, d),
                    merge_bias: b.zeros("interval.merge_bias", 1, d),
                }),
            ),
        };

        let layers = (0..config.layers)
            .map(|l| LayerParams {
                query: b.glorot_heads(&format!("layer{l}.query"), d, d_h),
                key: b.glorot_heads(&format!("layer{l}.key"), d, d_h),
                value: b.glorot_heads(&format!("layer{l}.value"), d, d_h),
                output: b.glorot(&format!("layer{l}.output"), d, d),
                ffn_w1: b.glorot(&format!("layer{l}.ffn.w1"), d, f),
                ffn_b1: b.zeros(&format!("layer{l}.ffn.b1"), 1, f),
                ffn_w2: b.glorot(&format!("layer{l}.ffn.w2"), f, d),
                ffn_b2: b.zeros(&format!("layer{l}.ffn.b2"), 1, d),
            })
            .collect();

        let (elapsed, fresh) = if config.use_elapsed {
            (
                Some(b.projection("elapsed", d)),
                Some(b.normal("fresh", 1, d, std)),
            )
        } else {
            (None, None)
        };
        let repeat = config.use_repeat.then(|| b.projection("repeat", d));

        let head_w1 = b.glorot("head.w1", config.head_input(), d);
        let head_b1 = b.zeros("head.b1", 1, d);
        let head_w2 = b.glorot("head.w2", d, 1);
        let head_b2 = b.zeros("head.b2", 1, 1);

        let params = Self {
            embedding,
            positional,
            interval,
            layers,
            elapsed,
            fresh,
            repeat,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        };
        (params, store)
    }

    /// Re-binds handles against an existing store by group name.
    pub fn bind<T: Real>(config: &ModelConfig, store: &ParamStore<T>) -> Option<Self> {
        let id = |name: &str| store.find(name);
        let proj = |name: &str| {
            Some(ProjectionParams {
                weight: id(&format!("{name}.weight"))?,
                bias: id(&format!("{name}.bias"))?,
            })
        };
        let (positional, interval) = match config.positional_mode {
            PositionalMode::Position => (Some(id("positional")?), None),
            PositionalMode::TimeInterval => (
                None,
                Some(IntervalParams {
                    time: proj("interval")?,
                    merge: id("interval.merge")?,
                    merge_bias: id("interval.merge_bias")?,
                }),
            ),
        };
        let layers = (0..config.layers)
            .map(|l| {
                Some(LayerParams {
                    query: id(&format!("layer{l}.query"))?,
                    key: id(&format!("layer{l}.key"))?,
                    value: id(&format!("layer{l}.value"))?,
                    output: id(&format!("layer{l}.output"))?,
                    ffn_w1: id(&format!("layer{l}.ffn.w1"))?,
                    ffn_b1: id(&format!("layer{l}.ffn.b1"))?,
                    ffn_w2: id(&format!("layer{l}.ffn.w2"))?,
                    ffn_b2: id(&format!("layer{l}.ffn.b2"))?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        let (elapsed, fresh) = if config.use_elapsed {
            (Some(proj("elapsed")?), Some(id("fresh")?))
        } else {
            (None, None)
        };
        let repeat = if config.use_repeat {
            Some(proj("repeat")?)
        } else {
            None
        };
        Some(Self {
            embedding: id("embedding")?,
            positional,
            interval,
            layers,
            elapsed,
            fresh,
            repeat,
            head_w1: id("head.w1")?,
            head_b1: id("head.b1")?,
            head_w2: id("head.w2")?,
            head_b2: id("head.b2")?,
        })
    }
}
