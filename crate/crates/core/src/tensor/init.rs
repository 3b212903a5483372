use super::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameter initialisation schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    /// Normal with the given standard deviation (Box-Muller).
    Normal(f64),
    Constant(f64),
}

impl Init {
    pub fn build<T: Scalar>(self, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
        match self {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Constant(c) => Array2::from_elem((rows, cols), T::of(c)),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..bound)))
            }
            Init::Uniform(bound) => {
                Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..bound)))
            }
            Init::Normal(std) => Array2::from_shape_simple_fn((rows, cols), || {
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                T::of(z * std)
            }),
        }
    }
}
