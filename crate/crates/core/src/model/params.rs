//! Flat parameter storage with a named layout.

use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, ModelError};

/// The three parts a model is split into for selective initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Embedding,
    Encoder,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Embedding, Component::Encoder, Component::Decoder];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Embedding => "embedding",
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
        })
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "embedding" => Ok(Component::Embedding),
            "encoder" => Ok(Component::Encoder),
            "decoder" => Ok(Component::Decoder),
            _ => Err(format!("unknown component `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Uniform with standard deviation `d_model^-0.5`.
    Embedding,
    /// Glorot uniform over `rows + cols`.
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub component: Component,
    pub init: Init,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Index of a parameter in the layout.
pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIds {
    pub inner: LinearIds,
    pub outer: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncLayerIds {
    pub attn: AttnIds,
    pub ln1: LnIds,
    pub ffn: FfnIds,
    pub ln2: LnIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecLayerIds {
    pub self_attn: AttnIds,
    pub ln1: LnIds,
    pub cross_attn: AttnIds,
    pub ln2: LnIds,
    pub ffn: FfnIds,
    pub ln3: LnIds,
}

/// Where every parameter lives in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub embedding: ParamId,
    /// Output projection `d_model × vocab` and bias; absent when tied.
    pub generator: Option<LinearIds>,
    pub encoder: Vec<EncLayerIds>,
    pub decoder: Vec<DecLayerIds>,
    pub total: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, component: Component, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, rows, cols, component, init, offset: self.offset });
        self.offset += rows * cols;
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, c: Component) -> LinearIds {
        LinearIds {
            w: self.add(format!("{name}.weight"), fan_in, fan_out, c, Init::Xavier),
            b: self.add(format!("{name}.bias"), 1, fan_out, c, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d: usize, c: Component) -> AttnIds {
        AttnIds {
            q: self.linear(&format!("{name}.q"), d, d, c),
            k: self.linear(&format!("{name}.k"), d, d, c),
            v: self.linear(&format!("{name}.v"), d, d, c),
            o: self.linear(&format!("{name}.o"), d, d, c),
        }
    }

    fn ln(&mut self, name: &str, d: usize, c: Component) -> LnIds {
        LnIds {
            gamma: self.add(format!("{name}.gamma"), 1, d, c, Init::Ones),
            beta: self.add(format!("{name}.beta"), 1, d, c, Init::Zeros),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, ff: usize, c: Component) -> FfnIds {
        FfnIds {
            inner: self.linear(&format!("{name}.inner"), d, ff, c),
            outer: self.linear(&format!("{name}.outer"), ff, d, c),
        }
    }
}

impl Layout {
    pub fn new(hp: &Hyperparams, vocab: usize) -> Self {
        let d = hp.d_model;
        let mut b = Builder { specs: Vec::new(), offset: 0 };
        let embedding = b.add("embedding".into(), vocab, d, Component::Embedding, Init::Embedding);
        let generator = (!hp.tie_generator).then(|| b.linear("generator", d, vocab, Component::Embedding));
        let encoder = (0..hp.layers)
            .map(|l| {
                let n = format!("encoder.{l}");
                let c = Component::Encoder;
                EncLayerIds {
                    attn: b.attn(&format!("{n}.self_attn"), d, c),
                    ln1: b.ln(&format!("{n}.ln1"), d, c),
                    ffn: b.ffn(&format!("{n}.ffn"), d, hp.d_ff, c),
                    ln2: b.ln(&format!("{n}.ln2"), d, c),
                }
            })
            .collect();
        let decoder = (0..hp.layers)
            .map(|l| {
                let n = format!("decoder.{l}");
                let c = Component::Decoder;
                DecLayerIds {
                    self_attn: b.attn(&format!("{n}.self_attn"), d, c),
                    ln1: b.ln(&format!("{n}.ln1"), d, c),
                    cross_attn: b.attn(&format!("{n}.cross_attn"), d, c),
                    ln2: b.ln(&format!("{n}.ln2"), d, c),
                    ffn: b.ffn(&format!("{n}.ffn"), d, hp.d_ff, c),
                    ln3: b.ln(&format!("{n}.ln3"), d, c),
                }
            })
            .collect();
        Layout { total: b.offset, specs: b.specs, embedding, generator, encoder, decoder }
    }

    /// Parameter count per component.
    pub fn component_sizes(&self) -> [(Component, usize); 3] {
        Component::ALL.map(|c| (c, self.specs.iter().filter(|s| s.component == c).map(ParamSpec::len).sum()))
    }
}

fn init_values(spec: &ParamSpec, d_model: usize, seed: u64, index: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let bound = match spec.init {
        Init::Zeros => return out.iter_mut().for_each(|x| *x = 0.0),
        Init::Ones => return out.iter_mut().for_each(|x| *x = 1.0),
        Init::Embedding => (3.0 / d_model as f64).sqrt(),
        Init::Xavier => (6.0 / (spec.rows + spec.cols) as f64).sqrt(),
    };
    for x in out {
        *x = rng.gen_range(-bound..bound);
    }
}

/// All weights of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hp: Hyperparams,
    pub vocab_size: usize,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// Fresh initialization. Each parameter draws from its own stream of
    /// `seed`, so it does not depend on the others.
    pub fn new(hp: &Hyperparams, vocab_size: usize, seed: u64) -> Result<Self, ModelError> {
        hp.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::InvalidConfig("vocabulary is empty".into()));
        }
        let layout = Layout::new(hp, vocab_size);
        let mut data = vec![0.0; layout.total];
        for (i, spec) in layout.specs.iter().enumerate() {
            init_values(spec, hp.d_model, seed, i, &mut data[spec.range()]);
        }
        Ok(ModelParams { hp: hp.clone(), vocab_size, layout, data })
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.layout.specs[id].range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.layout.specs[id].range();
        &mut self.data[r]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads { data: vec![0.0; self.data.len()], specs: self.layout.specs.clone() }
    }

    /// Flat indices belonging to `c`.
    pub fn component_ranges(&self, c: Component) -> Vec<Range<usize>> {
        self.layout.specs.iter().filter(|s| s.component == c).map(ParamSpec::range).collect()
    }
}

/// Gradient buffer with the layout of its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<f64>,
    specs: Vec<ParamSpec>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.specs[id].range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.specs[id].range();
        &mut self.data[r]
    }

    pub fn scale(&mut self, f: f64) {
        self.data.iter_mut().for_each(|g| *g *= f);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_proportions() {
        let layout = Layout::new(&Hyperparams::base(), 20_000);
        let sizes = layout.component_sizes();
        let total: usize = sizes.iter().map(|(_, n)| n).sum();
        assert_eq!(total, layout.total);
        assert_eq!(sizes[0].1, 20_000 * 512 * 2 + 20_000);
        assert_eq!(sizes[1].1, 6 * 3_152_384);
        assert_eq!(sizes[2].1, 6 * 4_204_032);
    }

    #[test]
    fn partition_is_exact() {
        let p = ModelParams::new(&Hyperparams::tiny(), 50, 1).unwrap();
        let mut covered = vec![0u8; p.len()];
        for c in Component::ALL {
            for r in p.component_ranges(c) {
                covered[r].iter_mut().for_each(|x| *x += 1);
            }
        }
        assert!(covered.iter().all(|&x| x == 1));
    }

    #[test]
    fn init_is_per_parameter() {
        let hp = Hyperparams::tiny();
        let a = ModelParams::new(&hp, 50, 7).unwrap();
        let b = ModelParams::new(&hp, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::new(&Hyperparams { tie_generator: true, ..hp }, 50, 7).unwrap();
        // the embedding is parameter 0 in both layouts
        assert_eq!(a.get(a.layout.embedding), c.get(c.layout.embedding));
        let ln = a.layout.encoder[0].ln1;
        assert!(a.get(ln.gamma).iter().all(|&x| x == 1.0));
        assert!(a.get(ln.beta).iter().all(|&x| x == 0.0));
    }
}
