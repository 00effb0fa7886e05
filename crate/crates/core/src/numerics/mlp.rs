use rand::Rng;

use crate::error::{Result, SarlError};
use crate::numerics::{Graph, GroupName, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, group: GroupName, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add_init(group, format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_zeros(group, format!("{name}.bias"), 1, out_dim);
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `x W + b` for each row of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Feed-forward stack: hidden layers use `hidden_activation`, the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new<R: Rng>(store: &mut ParamStore, group: GroupName, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, group, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            hidden_activation: Activation::Gelu,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        forward_mlp(g, store, x, self)
    }
}

/// Applies `mlp` to every row of `input`.
pub fn forward_mlp(g: &mut Graph, store: &ParamStore, input: Var, mlp: &Mlp) -> Result<Var> {
    let (_, cols) = g.shape(input);
    if cols != mlp.in_dim() {
        return Err(SarlError::shape("forward_mlp", &[g.shape(input).0, cols], &[mlp.in_dim(), mlp.out_dim()]));
    }
    for pair in mlp.layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(SarlError::shape(
                "forward_mlp",
                &[pair[0].in_dim, pair[0].out_dim],
                &[pair[1].in_dim, pair[1].out_dim],
            ));
        }
    }
    let last = mlp.layers.len() - 1;
    let mut x = input;
    for (i, layer) in mlp.layers.iter().enumerate() {
        x = layer.forward(g, store, x)?;
        if i < last && mlp.hidden_activation == Activation::Gelu {
            x = g.gelu(x);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let mlp = Mlp::new(&mut store, GroupName::Sc, "m", &[3, 4, 2], &mut rng);
        for id in mlp.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(row(&[0.3, -1.0, 7.0]));
        let y = mlp.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layers_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let mut mlp = Mlp::new(&mut store, GroupName::Sc, "m", &[2, 2, 2], &mut rng);
        mlp.hidden_activation = Activation::Identity;
        for l in &mlp.layers {
            *store.value_mut(l.weight) = Tensor::identity(2);
            store.value_mut(l.bias).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(row(&[1.0, 2.0]));
        let y = mlp.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn matches_hand_rolled_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::default();
        let mlp = Mlp::new(&mut store, GroupName::Sc, "m", &[3, 4, 2], &mut rng);
        for id in mlp.params() {
            for v in store.value_mut(id).data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let input = [0.5, -0.25, 1.5];

        // oracle: explicit loops with the tanh-form GELU
        let dense = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
            (0..w.cols())
                .map(|j| b.data()[j] + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
                .collect()
        };
        let gelu = |x: f64| {
            0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
        };
        let l0 = &mlp.layers[0];
        let l1 = &mlp.layers[1];
        let hidden: Vec<f64> = dense(&input, store.value(l0.weight), store.value(l0.bias))
            .into_iter()
            .map(gelu)
            .collect();
        let expected = dense(&hidden, store.value(l1.weight), store.value(l1.bias));

        let mut g = Graph::new();
        let x = g.constant(row(&input));
        let y = mlp.forward(&mut g, &store, x).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn input_dim_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let mlp = Mlp::new(&mut store, GroupName::Sc, "m", &[3, 2], &mut rng);
        let mut g = Graph::new();
        let x = g.constant(row(&[1.0, 2.0]));
        assert!(matches!(mlp.forward(&mut g, &store, x), Err(SarlError::Shape { .. })));
    }
}
