use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::losses::DiscriminatorOutput;
use crate::rng::{self, Stream};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::LeakyRelu(slope) => g.leaky_relu(x, T::lit(slope)),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected layer; `weight: [in, out]`, `bias: [out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("layer shape"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn bind(&self, g: &mut Graph<T>) -> (Var, Var) {
        (g.param(self.weight.clone()), g.param(self.bias.clone()))
    }
}

/// Stack of linear layers with an activation after every layer but the last
/// (or after every layer, when `activate_last`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
    pub activate_last: bool,
}

/// An [`Mlp`] whose parameters are leaves of a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl BoundMlp {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, w, b)?;
            if i < last || self.activate_last {
                h = self.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn new(widths: &[usize], activation: Activation, activate_last: bool, rng: &mut impl Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect();
        Self { layers, activation, activate_last }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
            activation: self.activation,
            activate_last: self.activate_last,
        }
    }

    /// Graph-free forward pass of a `[n, in]` batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
        let mut g = Graph::first_order();
        let bound = self.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = bound.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }
}

/// `G(z, y)`: noise concatenated with the one-hot label, mapped to a data point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator<T> {
    pub net: Mlp<T>,
    pub noise_dim: usize,
    pub class_count: usize,
}

pub struct BoundGenerator {
    pub net: BoundMlp,
    pub class_count: usize,
}

impl BoundGenerator {
    /// `noise: [n, noise_dim]` constant or leaf.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, noise: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let oh = g.one_hot(labels, self.class_count)?;
        let input = g.concat_cols(&[noise, oh])?;
        self.net.forward(g, input)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.net.vars()
    }
}

impl<T: Scalar> Generator<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> BoundGenerator {
        BoundGenerator { net: self.net.bind(g), class_count: self.class_count }
    }

    /// Graph-free samples for a batch of noise rows and labels.
    pub fn generate(&self, noise: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, AutodiffError> {
        let mut g = Graph::first_order();
        let bound = self.bind(&mut g);
        let z = g.constant(noise.clone());
        let out = bound.forward(&mut g, z, labels)?;
        Ok(g.value(out).clone())
    }
}

/// Shared trunk with two heads: one raw real/fake score and `C` class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator<T> {
    pub trunk: Mlp<T>,
    pub adv_head: Linear<T>,
    pub class_head: Linear<T>,
}

pub struct BoundDiscriminator {
    pub trunk: BoundMlp,
    pub adv_head: (Var, Var),
    pub class_head: (Var, Var),
}

impl BoundDiscriminator {
    /// Rebinds from leaves laid out as [`Discriminator::params`].
    pub fn from_vars(trunk_layers: usize, vars: &[Var], activation: Activation) -> Result<Self, AutodiffError> {
        if vars.len() != 2 * trunk_layers + 4 {
            return Err(AutodiffError::Contract(format!(
                "expected {} discriminator tensors, got {}",
                2 * trunk_layers + 4,
                vars.len()
            )));
        }
        let layers = vars[..2 * trunk_layers].chunks(2).map(|c| (c[0], c[1])).collect();
        let k = 2 * trunk_layers;
        Ok(Self {
            trunk: BoundMlp { layers, activation, activate_last: true },
            adv_head: (vars[k], vars[k + 1]),
            class_head: (vars[k + 2], vars[k + 3]),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<DiscriminatorOutput, AutodiffError> {
        let h = self.trunk.forward(g, x)?;
        let adv = g.linear(h, self.adv_head.0, self.adv_head.1)?;
        let logits = g.linear(h, self.class_head.0, self.class_head.1)?;
        Ok(DiscriminatorOutput { adv_score: adv, class_logits: logits })
    }

    /// Same order as [`Discriminator::params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.trunk.vars();
        v.extend([self.adv_head.0, self.adv_head.1, self.class_head.0, self.class_head.1]);
        v
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn class_count(&self) -> usize {
        self.class_head.weight.cols()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundDiscriminator {
        BoundDiscriminator {
            trunk: self.trunk.bind(g),
            adv_head: self.adv_head.bind(g),
            class_head: self.class_head.bind(g),
        }
    }

    /// Binds pre-existing leaves (in [`Discriminator::params`] order).
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundDiscriminator, AutodiffError> {
        BoundDiscriminator::from_vars(self.trunk.layers.len(), vars, self.trunk.activation)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.trunk.params();
        p.extend([&self.adv_head.weight, &self.adv_head.bias, &self.class_head.weight, &self.class_head.bias]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.trunk.params_mut();
        p.extend([
            &mut self.adv_head.weight,
            &mut self.adv_head.bias,
            &mut self.class_head.weight,
            &mut self.class_head.bias,
        ]);
        p
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.adv_head.param_count() + self.class_head.param_count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanNetworks<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> GanNetworks<T> {
    pub fn param_count(&self) -> usize {
        self.generator.net.param_count() + self.discriminator.param_count()
    }

    /// Generator tensors followed by discriminator tensors.
    pub fn all_params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.generator.net.params();
        p.extend(self.discriminator.params());
        p
    }
}

/// Leaky-relu (0.2) conditional GAN: generator `(z ++ onehot(y)) -> hidden^depth -> data_dim`,
/// discriminator `data_dim -> hidden^depth -> (1 score, C logits)`.
pub fn build_mlp_gan<T: Scalar>(
    noise_dim: usize,
    hidden_width: usize,
    depth: usize,
    data_dim: usize,
    class_count: usize,
    seed: u64,
) -> Result<GanNetworks<T>, AutodiffError> {
    if [noise_dim, hidden_width, depth, data_dim, class_count].contains(&0) {
        return Err(AutodiffError::Contract("GAN dimensions must be positive".into()));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let act = Activation::LeakyRelu(0.2);

    let mut g_widths = vec![noise_dim + class_count];
    g_widths.extend(std::iter::repeat_n(hidden_width, depth));
    g_widths.push(data_dim);
    let generator = Generator { net: Mlp::new(&g_widths, act, false, &mut rng), noise_dim, class_count };

    let mut d_widths = vec![data_dim];
    d_widths.extend(std::iter::repeat_n(hidden_width, depth));
    let trunk = Mlp::new(&d_widths, act, true, &mut rng);
    let adv_head = Linear::glorot(hidden_width, 1, &mut rng);
    let class_head = Linear::glorot(hidden_width, class_count, &mut rng);
    Ok(GanNetworks { generator, discriminator: Discriminator { trunk, adv_head, class_head } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_sum() {
        let (z, w, depth, d, c) = (4, 32, 2, 2, 8);
        let layer = |i: usize, o: usize| i * o + o;
        let gen = layer(z + c, w) + (depth - 1) * layer(w, w) + layer(w, d);
        let disc = layer(d, w) + (depth - 1) * layer(w, w) + layer(w, 1) + layer(w, c);
        let nets = build_mlp_gan::<f64>(z, w, depth, d, c, 0).unwrap();
        assert_eq!(nets.generator.net.param_count(), gen);
        assert_eq!(nets.discriminator.param_count(), disc);
        assert_eq!(nets.param_count(), 2987);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_mlp_gan::<f64>(4, 16, 2, 2, 8, 42).unwrap();
        let b = build_mlp_gan::<f64>(4, 16, 2, 2, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = build_mlp_gan::<f64>(4, 16, 2, 2, 8, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_forward_is_finite_and_heads_have_expected_shapes() {
        let nets = build_mlp_gan::<f64>(4, 16, 2, 2, 8, 1).unwrap();
        let x = nets.generator.generate(&Tensor::zeros(vec![1, 4]), &[0]).unwrap();
        assert_eq!(x.shape(), &[1, 2]);
        assert!(x.is_finite());

        let mut g = Graph::new();
        let d = nets.discriminator.bind(&mut g);
        let xs = g.constant(Tensor::zeros(vec![5, 2]));
        let out = d.forward(&mut g, xs).unwrap();
        assert_eq!(g.shape(out.adv_score), &[5, 1]);
        assert_eq!(g.shape(out.class_logits), &[5, 8]);
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_glorot_bound() {
        let nets = build_mlp_gan::<f64>(4, 16, 2, 2, 8, 3).unwrap();
        for l in &nets.generator.net.layers {
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
            let bound = (6.0 / (l.weight.rows() + l.weight.cols()) as f64).sqrt();
            assert!(l.weight.max_abs() <= bound);
        }
    }
}
