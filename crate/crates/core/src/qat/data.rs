//! Synthetic teacher-student regression data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed random ReLU teacher, Gaussian-magnitude inputs and Gaussian label
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub input_dim: usize,
    /// Hidden widths of the teacher MLP.
    pub teacher_widths: Vec<usize>,
    /// Standard deviation of the label noise, relative to the unit-variance
    /// teacher output.
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Inputs are `|z|` rounded to multiples of `input_step` and clipped at
    /// `input_max`. A step of zero keeps them continuous.
    pub input_step: f64,
    pub input_max: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            input_dim: 256,
            teacher_widths: vec![16, 16],
            noise_std: 1.5,
            n_train: 32768,
            n_test: 4096,
            input_step: 0.25,
            input_max: 3.75,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs a positive input dimension and sample counts".into(),
            ));
        }
        if self.teacher_widths.contains(&0) {
            return Err(Error::InvalidConfig("teacher widths must be positive".into()));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.noise_std) || !finite_nonneg(self.input_step) || !(self.input_max > 0.0) {
            return Err(Error::InvalidConfig(
                "noise, input step and input max must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<f64>,
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn sample_input<R: Rng>(rng: &mut R, spec: &DatasetSpec) -> Vec<f64> {
    (0..spec.input_dim)
        .map(|_| {
            let m: f64 = gaussian(rng).abs();
            let m = if spec.input_step > 0.0 {
                (m / spec.input_step).round_ties_even() * spec.input_step
            } else {
                m
            };
            m.min(spec.input_max)
        })
        .collect()
}

struct Teacher {
    /// `(weights[out][in], bias[out])` per layer.
    layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl Teacher {
    fn new<R: Rng>(rng: &mut R, spec: &DatasetSpec) -> Self {
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.teacher_widths);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|io| {
                let std = (2.0 / io[0] as f64).sqrt();
                let w = (0..io[1])
                    .map(|_| (0..io[0]).map(|_| std * gaussian(rng)).collect())
                    .collect();
                let b = (0..io[1]).map(|_| 0.1 * gaussian(rng)).collect();
                (w, b)
            })
            .collect();
        Teacher { layers }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            a = w
                .iter()
                .zip(b)
                .map(|(row, bi)| {
                    let z = row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + bi;
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
        }
        a[0]
    }
}

impl Dataset {
    /// Draws the teacher, the inputs and the label noise from `rng`. The
    /// teacher output is standardized with the training-set mean and
    /// standard deviation before noise is added.
    pub fn generate<R: Rng>(spec: &DatasetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let teacher = Teacher::new(rng, spec);
        let x_train: Vec<Vec<f64>> = (0..spec.n_train).map(|_| sample_input(rng, spec)).collect();
        let x_test: Vec<Vec<f64>> = (0..spec.n_test).map(|_| sample_input(rng, spec)).collect();
        let raw_train: Vec<f64> = x_train.iter().map(|x| teacher.eval(x)).collect();
        let raw_test: Vec<f64> = x_test.iter().map(|x| teacher.eval(x)).collect();

        let n = raw_train.len() as f64;
        let mean = raw_train.iter().sum::<f64>() / n;
        let var = raw_train.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let mut label = |y: f64| (y - mean) / std + spec.noise_std * gaussian(rng);
        let y_train = raw_train.into_iter().map(&mut label).collect();
        let y_test = raw_test.into_iter().map(&mut label).collect();
        Ok(Dataset {
            x_train,
            y_train,
            x_test,
            y_test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DatasetSpec {
        DatasetSpec {
            input_dim: 8,
            teacher_widths: vec![4],
            noise_std: 0.0,
            n_train: 2000,
            n_test: 10,
            input_step: 0.25,
            input_max: 3.75,
        }
    }

    #[test]
    fn inputs_lie_on_the_grid() {
        let d = Dataset::generate(&small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for x in d.x_train.iter().chain(&d.x_test) {
            assert_eq!(x.len(), 8);
            for &v in x {
                assert!((0.0..=3.75).contains(&v));
                assert_eq!((v * 4.0).fract(), 0.0);
            }
        }
    }

    #[test]
    fn noiseless_labels_are_standardized() {
        let d = Dataset::generate(&small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = d.y_train.len() as f64;
        let mean = d.y_train.iter().sum::<f64>() / n;
        let var = d.y_train.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_data() {
        let a = Dataset::generate(&small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Dataset::generate(&small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = Dataset::generate(&small(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_empty_spec() {
        let mut s = small();
        s.n_train = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.noise_std = -1.0;
        assert!(s.validate().is_err());
    }
}
