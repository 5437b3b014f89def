//! The three-layer score network: tanh hidden layers, softplus output.

use alloc::vec::Vec;
use rand::Rng;

use super::Scalar;
use crate::math;

/// Parameters of a fully connected `in_dim -> hidden -> hidden -> 1` network.
///
/// Weight matrices are row-major, one row per output unit. The output is
/// softplus-activated, so `mlp_forward` is strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<S = f64> {
    pub in_dim: usize,
    pub hidden: usize,
    pub w1: Vec<S>,
    pub b1: Vec<S>,
    pub w2: Vec<S>,
    pub b2: Vec<S>,
    pub w3: Vec<S>,
    pub b3: S,
}

impl MlpParams<f64> {
    /// Glorot-uniform hidden weights, zero biases. Deterministic given `rng`.
    pub fn init(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        assert!(in_dim >= 1 && hidden >= 1);
        let glorot = |fan_in: usize, fan_out: usize, n: usize, rng: &mut dyn rand::RngCore| {
            let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            (0..n).map(|_| rng.random_range(-a..a)).collect::<Vec<f64>>()
        };
        MlpParams {
            in_dim,
            hidden,
            w1: glorot(in_dim, hidden, hidden * in_dim, rng),
            b1: alloc::vec![0.0; hidden],
            w2: glorot(hidden, hidden, hidden * hidden, rng),
            b2: alloc::vec![0.0; hidden],
            w3: glorot(hidden, 1, hidden, rng),
            b3: 0.0,
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        MlpParams {
            in_dim,
            hidden,
            w1: alloc::vec![0.0; hidden * in_dim],
            b1: alloc::vec![0.0; hidden],
            w2: alloc::vec![0.0; hidden * hidden],
            b2: alloc::vec![0.0; hidden],
            w3: alloc::vec![0.0; hidden],
            b3: 0.0,
        }
    }
}

impl<S: Copy> MlpParams<S> {
    pub fn param_count(&self) -> usize {
        self.hidden * self.in_dim + self.hidden + self.hidden * self.hidden + self.hidden + self.hidden + 1
    }

    /// Apply `f` to every parameter in flattening order (w1,b1,w2,b2,w3,b3).
    pub fn map<T: Copy>(&self, mut f: impl FnMut(S) -> T) -> MlpParams<T> {
        MlpParams {
            in_dim: self.in_dim,
            hidden: self.hidden,
            w1: self.w1.iter().map(|&v| f(v)).collect(),
            b1: self.b1.iter().map(|&v| f(v)).collect(),
            w2: self.w2.iter().map(|&v| f(v)).collect(),
            b2: self.b2.iter().map(|&v| f(v)).collect(),
            w3: self.w3.iter().map(|&v| f(v)).collect(),
            b3: f(self.b3),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(S)) {
        self.w1.iter().for_each(|&v| f(v));
        self.b1.iter().for_each(|&v| f(v));
        self.w2.iter().for_each(|&v| f(v));
        self.b2.iter().for_each(|&v| f(v));
        self.w3.iter().for_each(|&v| f(v));
        f(self.b3);
    }

    pub fn from_flat(in_dim: usize, hidden: usize, it: &mut impl Iterator<Item = S>) -> Self {
        let take = |it: &mut dyn Iterator<Item = S>, n: usize| -> Vec<S> {
            let v: Vec<S> = it.take(n).collect();
            assert_eq!(v.len(), n, "parameter slice too short for mlp layer");
            v
        };
        MlpParams {
            in_dim,
            hidden,
            w1: take(it, hidden * in_dim),
            b1: take(it, hidden),
            w2: take(it, hidden * hidden),
            b2: take(it, hidden),
            w3: take(it, hidden),
            b3: it.next().expect("parameter slice too short for mlp bias"),
        }
    }
}

/// Forward pass; strictly positive output.
///
/// Panics on an input length that does not match `params.in_dim`.
pub fn mlp_forward<S: Scalar>(params: &MlpParams<S>, input: &[S]) -> S {
    assert_eq!(
        input.len(),
        params.in_dim,
        "mlp input dimension mismatch: got {}, expected {}",
        input.len(),
        params.in_dim
    );
    let h = params.hidden;
    let mut h1: Vec<S> = Vec::with_capacity(h);
    for j in 0..h {
        let mut acc = params.b1[j];
        for (i, &x) in input.iter().enumerate() {
            acc = params.w1[j * params.in_dim + i].mul_add(x, acc);
        }
        h1.push(acc.tanh());
    }
    let mut h2: Vec<S> = Vec::with_capacity(h);
    for j in 0..h {
        let mut acc = params.b2[j];
        for (i, &x) in h1.iter().enumerate() {
            acc = params.w2[j * h + i].mul_add(x, acc);
        }
        h2.push(acc.tanh());
    }
    let mut out = params.b3;
    for (i, &x) in h2.iter().enumerate() {
        out = params.w3[i].mul_add(x, out);
    }
    out.softplus()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_ln2() {
        let p = MlpParams::zeros(2, 8);
        let y = mlp_forward(&p, &[3.7, -12.0]);
        assert!((y - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bias_path_gives_softplus_of_preactivation() {
        let mut p = MlpParams::zeros(1, 4);
        p.b3 = 3.0;
        let y = mlp_forward(&p, &[1.0]);
        assert!((y - math::softplus(3.0)).abs() < 1e-12);
        assert!((y - 3.048_587_351_573_742).abs() < 1e-9);
    }

    #[test]
    fn output_is_always_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = MlpParams::init(2, 6, &mut rng);
            let x = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            assert!(mlp_forward(&p, &x) > 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = MlpParams::init(2, 5, &mut rng);
        let x = [0.4, 1.7];

        let tape = Tape::new();
        let pv = p.map(|v| tape.input(v));
        let xv = [tape.constant(x[0]), tape.constant(x[1])];
        let y = mlp_forward(&pv, &xv);
        let grads = tape.gradient(y).unwrap();

        let mut flat: Vec<f64> = Vec::new();
        p.for_each(|v| flat.push(v));
        let step = 1e-5;
        let mut max_rel: f64 = 0.0;
        for k in 0..flat.len() {
            let eval = |delta: f64| {
                let mut f2 = flat.clone();
                f2[k] += delta;
                let p2 = MlpParams::from_flat(2, 5, &mut f2.into_iter());
                mlp_forward(&p2, &x)
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let rel = (grads[k] - fd).abs() / grads[k].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let a = MlpParams::init(1, 7, &mut ChaCha8Rng::seed_from_u64(9));
        let b = MlpParams::init(1, 7, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
