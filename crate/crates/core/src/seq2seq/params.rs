//! Weight layout of the encoder–decoder transformer.
//!
//! The same struct holds parameters, gradients, and optimizer moments, so
//! every per-array operation goes through [`ModelParameters::tensors`].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(in, out)` row-major, so `y = x W + b`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub inner: Linear<T>,
    pub outer: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub attn_norm: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub ff_norm: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_norm: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub cross_norm: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ff_norm: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub source_embedding: Tensor<T>,
    pub target_embedding: Tensor<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub encoder_norm: LayerNorm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub decoder_norm: LayerNorm<T>,
    pub projection: Linear<T>,
}

impl<T: Real> LayerNorm<T> {
    fn new(dim: usize) -> Self {
        let mut gain = Tensor::zeros(&[dim]);
        gain.fill(T::one());
        Self {
            gain,
            bias: Tensor::zeros(&[dim]),
        }
    }
}

impl<T: Real> Linear<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

impl<T: Real> Attention<T> {
    fn zeros(dim: usize) -> Self {
        Self {
            query: Linear::zeros(dim, dim),
            key: Linear::zeros(dim, dim),
            value: Linear::zeros(dim, dim),
            output: Linear::zeros(dim, dim),
        }
    }
}

impl<T: Real> FeedForward<T> {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::zeros(dim, hidden),
            outer: Linear::zeros(hidden, dim),
        }
    }
}

impl<T: Real> ModelParameters<T> {
    /// Layer norms start at unit gain; everything else is zero.
    pub fn zeros(config: &ModelConfig, source_vocab: usize, target_vocab: usize) -> Self {
        let d = config.model_dim;
        let f = config.feedforward_dim;
        Self {
            source_embedding: Tensor::zeros(&[source_vocab, d]),
            target_embedding: Tensor::zeros(&[target_vocab, d]),
            encoder: (0..config.layers)
                .map(|_| EncoderLayer {
                    attn_norm: LayerNorm::new(d),
                    self_attn: Attention::zeros(d),
                    ff_norm: LayerNorm::new(d),
                    ff: FeedForward::zeros(d, f),
                })
                .collect(),
            encoder_norm: LayerNorm::new(d),
            decoder: (0..config.layers)
                .map(|_| DecoderLayer {
                    self_norm: LayerNorm::new(d),
                    self_attn: Attention::zeros(d),
                    cross_norm: LayerNorm::new(d),
                    cross_attn: Attention::zeros(d),
                    ff_norm: LayerNorm::new(d),
                    ff: FeedForward::zeros(d, f),
                })
                .collect(),
            decoder_norm: LayerNorm::new(d),
            projection: Linear::zeros(d, target_vocab),
        }
    }

    /// Seeded initialization: Xavier-uniform matrices, N(0, 1/d) embeddings,
    /// zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, source_vocab: usize, target_vocab: usize) -> Self {
        let mut params = Self::zeros(config, source_vocab, target_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim as f64;
        for (name, tensor) in params.tensors_mut() {
            if name.ends_with("embedding") {
                // Box–Muller keeps the stream independent of rand_distr
                let scale = 1.0 / d.sqrt();
                for x in tensor.data.iter_mut() {
                    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.random();
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    *x = T::from_f64(z * scale);
                }
            } else if name.ends_with(".weight") && tensor.shape.len() == 2 {
                let limit = (6.0 / (tensor.shape[0] + tensor.shape[1]) as f64).sqrt();
                for x in tensor.data.iter_mut() {
                    *x = T::from_f64(rng.random_range(-limit..limit));
                }
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    pub fn source_vocab_size(&self) -> usize {
        self.source_embedding.shape[0]
    }

    pub fn target_vocab_size(&self) -> usize {
        self.target_embedding.shape[0]
    }

    /// All arrays in a fixed order with dotted names.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("source_embedding".to_string(), &self.source_embedding));
        out.push(("target_embedding".to_string(), &self.target_embedding));
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = format!("encoder.{i}");
            push_norm(&mut out, &format!("{p}.attn_norm"), &layer.attn_norm);
            push_attn(&mut out, &format!("{p}.self_attn"), &layer.self_attn);
            push_norm(&mut out, &format!("{p}.ff_norm"), &layer.ff_norm);
            push_ff(&mut out, &format!("{p}.ff"), &layer.ff);
        }
        push_norm(&mut out, "encoder_norm", &self.encoder_norm);
        for (i, layer) in self.decoder.iter().enumerate() {
            let p = format!("decoder.{i}");
            push_norm(&mut out, &format!("{p}.self_norm"), &layer.self_norm);
            push_attn(&mut out, &format!("{p}.self_attn"), &layer.self_attn);
            push_norm(&mut out, &format!("{p}.cross_norm"), &layer.cross_norm);
            push_attn(&mut out, &format!("{p}.cross_attn"), &layer.cross_attn);
            push_norm(&mut out, &format!("{p}.ff_norm"), &layer.ff_norm);
            push_ff(&mut out, &format!("{p}.ff"), &layer.ff);
        }
        push_norm(&mut out, "decoder_norm", &self.decoder_norm);
        push_linear(&mut out, "projection", &self.projection);
        out
    }

    /// Same order and names as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("source_embedding".to_string(), &mut self.source_embedding));
        out.push(("target_embedding".to_string(), &mut self.target_embedding));
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let p = format!("encoder.{i}");
            push_norm_mut(&mut out, &format!("{p}.attn_norm"), &mut layer.attn_norm);
            push_attn_mut(&mut out, &format!("{p}.self_attn"), &mut layer.self_attn);
            push_norm_mut(&mut out, &format!("{p}.ff_norm"), &mut layer.ff_norm);
            push_ff_mut(&mut out, &format!("{p}.ff"), &mut layer.ff);
        }
        push_norm_mut(&mut out, "encoder_norm", &mut self.encoder_norm);
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            let p = format!("decoder.{i}");
            push_norm_mut(&mut out, &format!("{p}.self_norm"), &mut layer.self_norm);
            push_attn_mut(&mut out, &format!("{p}.self_attn"), &mut layer.self_attn);
            push_norm_mut(&mut out, &format!("{p}.cross_norm"), &mut layer.cross_norm);
            push_attn_mut(&mut out, &format!("{p}.cross_attn"), &mut layer.cross_attn);
            push_norm_mut(&mut out, &format!("{p}.ff_norm"), &mut layer.ff_norm);
            push_ff_mut(&mut out, &format!("{p}.ff"), &mut layer.ff);
        }
        push_norm_mut(&mut out, "decoder_norm", &mut self.decoder_norm);
        push_linear_mut(&mut out, "projection", &mut self.projection);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        let config_free = |t: &Tensor<T>| t.cast::<U>();
        let norm = |n: &LayerNorm<T>| LayerNorm {
            gain: config_free(&n.gain),
            bias: config_free(&n.bias),
        };
        let lin = |l: &Linear<T>| Linear {
            weight: config_free(&l.weight),
            bias: config_free(&l.bias),
        };
        let attn = |a: &Attention<T>| Attention {
            query: lin(&a.query),
            key: lin(&a.key),
            value: lin(&a.value),
            output: lin(&a.output),
        };
        let ff = |f: &FeedForward<T>| FeedForward {
            inner: lin(&f.inner),
            outer: lin(&f.outer),
        };
        ModelParameters {
            source_embedding: config_free(&self.source_embedding),
            target_embedding: config_free(&self.target_embedding),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    attn_norm: norm(&l.attn_norm),
                    self_attn: attn(&l.self_attn),
                    ff_norm: norm(&l.ff_norm),
                    ff: ff(&l.ff),
                })
                .collect(),
            encoder_norm: norm(&self.encoder_norm),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    self_norm: norm(&l.self_norm),
                    self_attn: attn(&l.self_attn),
                    cross_norm: norm(&l.cross_norm),
                    cross_attn: attn(&l.cross_attn),
                    ff_norm: norm(&l.ff_norm),
                    ff: ff(&l.ff),
                })
                .collect(),
            decoder_norm: norm(&self.decoder_norm),
            projection: lin(&self.projection),
        }
    }
}

fn push_linear<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, l: &'a Linear<T>) {
    out.push((format!("{p}.weight"), &l.weight));
    out.push((format!("{p}.bias"), &l.bias));
}

fn push_norm<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, n: &'a LayerNorm<T>) {
    out.push((format!("{p}.gain"), &n.gain));
    out.push((format!("{p}.bias"), &n.bias));
}

fn push_attn<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, a: &'a Attention<T>) {
    push_linear(out, &format!("{p}.query"), &a.query);
    push_linear(out, &format!("{p}.key"), &a.key);
    push_linear(out, &format!("{p}.value"), &a.value);
    push_linear(out, &format!("{p}.output"), &a.output);
}

fn push_ff<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, f: &'a FeedForward<T>) {
    push_linear(out, &format!("{p}.inner"), &f.inner);
    push_linear(out, &format!("{p}.outer"), &f.outer);
}

fn push_linear_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, l: &'a mut Linear<T>) {
    out.push((format!("{p}.weight"), &mut l.weight));
    out.push((format!("{p}.bias"), &mut l.bias));
}

fn push_norm_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, n: &'a mut LayerNorm<T>) {
    out.push((format!("{p}.gain"), &mut n.gain));
    out.push((format!("{p}.bias"), &mut n.bias));
}

fn push_attn_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, a: &'a mut Attention<T>) {
    push_linear_mut(out, &format!("{p}.query"), &mut a.query);
    push_linear_mut(out, &format!("{p}.key"), &mut a.key);
    push_linear_mut(out, &format!("{p}.value"), &mut a.value);
    push_linear_mut(out, &format!("{p}.output"), &mut a.output);
}

fn push_ff_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, f: &'a mut FeedForward<T>) {
    push_linear_mut(out, &format!("{p}.inner"), &mut f.inner);
    push_linear_mut(out, &format!("{p}.outer"), &mut f.outer);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig {
            layers: 1,
            model_dim: 4,
            heads: 2,
            feedforward_dim: 8,
            ..Default::default()
        };
        let p = ModelParameters::<f64>::init(&cfg, 6, 7);
        assert_eq!(p.source_embedding.shape, vec![6, 4]);
        assert_eq!(p.projection.weight.shape, vec![4, 7]);
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.clone().tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        // embeddings 6*4 + 7*4; encoder layer 172; decoder layer 260; norms 16; projection 35
        assert_eq!(p.parameter_count(), 24 + 28 + 172 + 8 + 260 + 8 + 35);
        assert!(p.all_finite());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        let a = ModelParameters::<f32>::init(&cfg, 10, 12);
        let b = ModelParameters::<f32>::init(&cfg, 10, 12);
        assert_eq!(a, b);
        let c = ModelParameters::<f32>::init(&ModelConfig { seed: 2, ..cfg }, 10, 12);
        assert_ne!(a, c);
    }
}
