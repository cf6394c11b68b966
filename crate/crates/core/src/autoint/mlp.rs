use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{softplus, Activation, Backend, Eager, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConstraint {
    #[default]
    Free,
    /// Raw weights ρ are stored; the network uses softplus(ρ) ≥ 0.
    NonnegativeReparam,
}

fn yes() -> bool {
    true
}

/// Architecture of an integral network: `widths[0]` inputs, one linear layer
/// per consecutive pair of widths, activation between linear layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default)]
    pub constraint: WeightConstraint,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        MlpSpec {
            widths,
            activation,
            bias: true,
            constraint: WeightConstraint::Free,
        }
    }

    pub fn nonnegative(mut self) -> Self {
        self.constraint = WeightConstraint::NonnegativeReparam;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least one linear layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid(format!("zero layer width in {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn n_linear(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }
}

/// Raw parameters of one linear layer: `w` is `[out, in]`, `b` is `[1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

/// Weights θ shared by an integral network and all of its derivative networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub spec: MlpSpec,
    pub layers: Vec<LinearParams>,
}

/// Effective (constraint-applied) weights lifted into a backend.
#[derive(Clone, Debug)]
pub struct BoundMlp<V> {
    pub activation: Activation,
    pub weights: Vec<V>,
    pub biases: Vec<Option<V>>,
}

/// Initialization knobs. `input_range` spreads the first layer's activation
/// centres uniformly over the expected input interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    pub input_range: Option<(f64, f64)>,
    /// Typical magnitude of an effective weight, relative to 1/sqrt(fan_in).
    pub gain: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            input_range: None,
            gain: 1.0,
        }
    }
}

/// Inverse of softplus, for placing raw weights.
fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl ParamSet {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|p| LinearParams {
                w: Tensor::zeros(&[p[1], p[0]]),
                b: spec.bias.then(|| Tensor::zeros(&[1, p[1]])),
            })
            .collect();
        Ok(ParamSet { spec, layers })
    }

    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        Self::init_with(spec, rng, InitOptions::default())
    }

    pub fn init_with<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, opts: InitOptions) -> Result<Self> {
        let mut ps = Self::zeros(spec)?;
        let nonneg = ps.spec.constraint == WeightConstraint::NonnegativeReparam;
        for (l, layer) in ps.layers.iter_mut().enumerate() {
            let (out, fan_in) = (layer.w.shape()[0], layer.w.shape()[1]);
            // Nonnegative weights add coherently, so they shrink with fan-in
            // rather than its square root. A first layer with a known input
            // range gets slopes of a few units across that range.
            let scale = match (l, opts.input_range, nonneg) {
                (0, Some((lo, hi)), _) => opts.gain * 4.0 / (fan_in as f64 * (hi - lo).abs().max(f64::EPSILON)),
                (_, _, true) => opts.gain / fan_in as f64,
                _ => opts.gain / (fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for v in layer.w.data_mut() {
                let z: f64 = normal.sample(rng);
                *v = if nonneg {
                    // log-normal spread of effective weights around `scale`
                    softplus_inv(scale * (0.5 * z).exp())
                } else {
                    scale * z
                };
            }
            if let Some(b) = layer.b.as_mut() {
                match (l, opts.input_range) {
                    (0, Some((lo, hi))) => {
                        for j in 0..out {
                            let w = layer.w.at(j, 0);
                            let w = if nonneg { softplus(w) } else { w };
                            let centre = rng.random_range(lo..hi);
                            b.data_mut()[j] = -w * centre;
                        }
                    }
                    _ => {
                        for v in b.data_mut() {
                            *v = 0.1 * normal.sample(rng);
                        }
                    }
                }
            }
        }
        Ok(ps)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.numel() + l.b.as_ref().map_or(0, Tensor::numel))
            .sum()
    }

    /// Parameter tensors in binding order: `w0, b0, w1, b1, …` (biases only when present).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(&l.w);
            if let Some(b) = &l.b {
                out.push(b);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(&mut l.w);
            if let Some(b) = &mut l.b {
                out.push(b);
            }
        }
        out
    }

    /// Lift raw parameter values (in [`ParamSet::tensors`] order) into effective weights.
    pub fn bind<B: Backend>(&self, be: &B, raw: &[B::V]) -> Result<BoundMlp<B::V>> {
        let expected = self.tensors().len();
        if raw.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameter values, got {}",
                raw.len()
            )));
        }
        let mut it = raw.iter();
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = it.next().expect("counted above");
            weights.push(match self.spec.constraint {
                WeightConstraint::Free => w.clone(),
                WeightConstraint::NonnegativeReparam => be.softplus(w)?,
            });
            biases.push(l.b.as_ref().map(|_| it.next().expect("counted above").clone()));
        }
        Ok(BoundMlp {
            activation: self.spec.activation,
            weights,
            biases,
        })
    }

    pub fn bind_eager(&self) -> Result<BoundMlp<Tensor>> {
        let raw: Vec<Tensor> = self.tensors().into_iter().cloned().collect();
        self.bind(&Eager, &raw)
    }

    /// Effective weight matrices (softplus applied under the nonnegative constraint).
    pub fn effective_weights(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .map(|l| match self.spec.constraint {
                WeightConstraint::Free => l.w.clone(),
                WeightConstraint::NonnegativeReparam => l.w.softplus(),
            })
            .collect()
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim() {
            return Err(Error::shape(
                "integral_forward",
                x.shape(),
                &[x.rows(), self.spec.input_dim()],
            ));
        }
        Ok(())
    }

    /// F_θ(x) for a `[batch, input_dim]` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        integral_forward(&Eager, &self.bind_eager()?, x)
    }
}

/// F_θ(x) on any backend.
pub fn integral_forward<B: Backend>(be: &B, net: &BoundMlp<B::V>, x: &B::V) -> Result<B::V> {
    let mut h = x.clone();
    let last = net.weights.len() - 1;
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let mut z = be.matmul_t(&h, w)?;
        if let Some(b) = b {
            z = be.add_row(&z, b)?;
        }
        h = if l < last { be.act(&z, net.activation, 0)? } else { z };
    }
    Ok(h)
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ParamSetJson {
    spec: MlpSpec,
    layers: Vec<LayerJson>,
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerJson {
                w: l.w.data().chunks(l.w.cols()).map(<[f64]>::to_vec).collect(),
                b: l.b.as_ref().map(|b| b.data().to_vec()),
            })
            .collect();
        ParamSetJson {
            spec: self.spec.clone(),
            layers,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ParamSetJson::deserialize(d)?;
        raw.spec.validate().map_err(D::Error::custom)?;
        if raw.layers.len() != raw.spec.n_linear() {
            return Err(D::Error::custom("layer count does not match spec widths"));
        }
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (l, (lj, pair)) in raw.layers.into_iter().zip(raw.spec.widths.windows(2)).enumerate() {
            let w = Tensor::from_rows(&lj.w).map_err(D::Error::custom)?;
            if w.shape() != [pair[1], pair[0]] {
                return Err(D::Error::custom(format!(
                    "layer {l} weight shape {:?}, expected [{}, {}]",
                    w.shape(),
                    pair[1],
                    pair[0]
                )));
            }
            let b = match (raw.spec.bias, lj.b) {
                (true, Some(b)) if b.len() == pair[1] => Some(Tensor::row(b)),
                (false, None) => None,
                _ => return Err(D::Error::custom(format!("layer {l} bias does not match spec"))),
            };
            layers.push(LinearParams { w, b });
        }
        Ok(ParamSet {
            spec: raw.spec,
            layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer() {
        let mut ps = ParamSet::zeros(MlpSpec::new(vec![3, 1], Activation::Tanh)).unwrap();
        ps.layers[0].w = Tensor::row(vec![1.0, 2.0, 3.0]);
        let y = ps.forward(&Tensor::row(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn zero_weights_give_the_bias() {
        let mut ps = ParamSet::zeros(MlpSpec::new(vec![2, 4, 1], Activation::Tanh)).unwrap();
        ps.layers[1].b = Some(Tensor::row(vec![0.75]));
        let y = ps.forward(&Tensor::matrix(2, 2, vec![1.0, -3.0, 0.2, 9.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.75, 0.75]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let ps = ParamSet::zeros(MlpSpec::new(vec![3, 1], Activation::Tanh)).unwrap();
        assert!(ps.forward(&Tensor::row(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![3, 5, 1], Activation::Tanh).nonnegative();
        let ps = ParamSet::init(spec, &mut rng).unwrap();
        let text = serde_json::to_string(&ps).unwrap();
        let back: ParamSet = serde_json::from_str(&text).unwrap();
        assert_eq!(ps, back);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["layers"][0]["w"].is_array() && v["spec"]["widths"].is_array());
    }

    #[test]
    fn nonnegative_reparam_exposes_positive_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = MlpSpec::new(vec![1, 8, 8, 1], Activation::Tanh).nonnegative();
        let ps = ParamSet::init(spec, &mut rng).unwrap();
        for w in ps.effective_weights() {
            assert!(w.data().iter().all(|&v| v > 0.0));
        }
    }
}
