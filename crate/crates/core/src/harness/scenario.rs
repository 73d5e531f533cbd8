use serde::{Deserialize, Serialize};

use crate::autodiff_nn::{kernels, Tensor};
use crate::distributions::RngState;
use crate::error::{Error, Result};
use crate::inference::Dataset;

/// Seed of the fixed random teacher network behind `s3_highdim`.
pub const S3_TEACHER_SEED: u64 = 0x5eed_0003;
pub const S3_INPUT_DIM: usize = 16;
pub const S3_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// `y = x^3 + eps`, one input.
    S1Polynomial,
    /// `y = x1 x2 + x3 x4 + eps`.
    S2Lowdim,
    /// `y = f(x) + eps` with `f` a fixed random 16-16-1 ReLU network.
    S3Highdim,
}

impl ScenarioId {
    pub fn input_dim(self) -> usize {
        match self {
            ScenarioId::S1Polynomial => 1,
            ScenarioId::S2Lowdim => 4,
            ScenarioId::S3Highdim => S3_INPUT_DIM,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "s1" | "s1_polynomial" => Ok(ScenarioId::S1Polynomial),
            "s2" | "s2_lowdim" => Ok(ScenarioId::S2Lowdim),
            "s3" | "s3_highdim" => Ok(ScenarioId::S3Highdim),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::S1Polynomial => "s1_polynomial",
            ScenarioId::S2Lowdim => "s2_lowdim",
            ScenarioId::S3Highdim => "s3_highdim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: ScenarioId,
    pub n: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub seed: u64,
}

fn default_noise_sd() -> f64 {
    3.0
}

impl Scenario {
    pub fn new(id: ScenarioId, n: usize, seed: u64) -> Self {
        Scenario { id, n, noise_sd: default_noise_sd(), seed }
    }

    pub fn input_dim(&self) -> usize {
        self.id.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("scenario n must be >= 10, got {}", self.n)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Noise-free regression function of a scenario at one input row.
pub fn scenario_mean(id: ScenarioId, x: &[f64]) -> f64 {
    match id {
        ScenarioId::S1Polynomial => x[0] * x[0] * x[0],
        ScenarioId::S2Lowdim => x[0] * x[1] + x[2] * x[3],
        ScenarioId::S3Highdim => s3_teacher(&Tensor::matrix(1, S3_INPUT_DIM, x.to_vec()).expect("one row")).data()[0],
    }
}

/// Teacher weights: every entry `N(0, 1)` from [`S3_TEACHER_SEED`].
fn s3_teacher_weights() -> [Tensor; 4] {
    let mut rng = RngState::new(S3_TEACHER_SEED, 0);
    let mut draw = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.standard_normal()).collect()).expect("shape")
    };
    [draw(&[S3_HIDDEN, S3_INPUT_DIM]), draw(&[S3_HIDDEN]), draw(&[1, S3_HIDDEN]), draw(&[1])]
}

fn s3_teacher(x: &Tensor) -> Tensor {
    let [w1, b1, w2, b2] = s3_teacher_weights();
    let h = kernels::linear(x, &w1, &b1).expect("teacher shapes");
    let h = kernels::activation(&h, crate::autodiff_nn::Activation::Relu);
    kernels::linear(&h, &w2, &b2).expect("teacher shapes")
}

/// A scenario's train/test split in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Draws `n` examples (for each row: the inputs `U(-5, 5)` in order, then
/// the noise) and keeps the first 80% for training.
pub fn generate_scenario(s: &Scenario, rng: &mut RngState) -> Result<SplitData> {
    s.validate()?;
    let d = s.input_dim();
    let mut xs = Vec::with_capacity(s.n * d);
    let mut noise = Vec::with_capacity(s.n);
    for _ in 0..s.n {
        for _ in 0..d {
            xs.push(-5.0 + 10.0 * rng.uniform());
        }
        noise.push(s.noise_sd * rng.standard_normal());
    }
    let x = Tensor::matrix(s.n, d, xs)?;
    let mean: Vec<f64> = match s.id {
        ScenarioId::S3Highdim => s3_teacher(&x).into_data(),
        id => x.data().chunks(d).map(|row| scenario_mean(id, row)).collect(),
    };
    let y: Vec<f64> = mean.iter().zip(&noise).map(|(m, e)| m + e).collect();
    let y = Tensor::matrix(s.n, 1, y)?;
    let n_train = s.n * 4 / 5;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..s.n).collect();
    let all = Dataset::new(x, y)?;
    Ok(SplitData { train: all.subset(&train_idx), test: all.subset(&test_idx) })
}

/// Rows as CSV with columns `x0..x{d-1},y,split`, training rows first.
pub fn write_scenario_csv<W: std::io::Write>(split: &SplitData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = split.train.x.shape()[1];
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["y".to_string(), "split".to_string()]);
    w.write_record(&header)?;
    for (name, data) in [("train", &split.train), ("test", &split.test)] {
        for (row, y) in data.x.data().chunks(d).zip(data.y.data()) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            rec.push(name.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Affine map to zero mean and unit variance per column, fitted on training
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(t: &Tensor) -> Result<Self> {
        if t.ndim() != 2 || t.shape()[0] < 2 {
            return Err(Error::shape("Standardizer::fit", format!("need a matrix with >= 2 rows, got {:?}", t.shape())));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut mean = vec![0.0; d];
        for row in t.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in t.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.into_iter().map(|s| (s / (n - 1) as f64).sqrt().max(1e-12)).collect();
        Ok(Standardizer { mean, sd })
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        self.map(t, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, t: &Tensor) -> Tensor {
        self.map(t, |v, m, s| v * s + m)
    }

    fn map(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let d = self.mean.len();
        let data = t.data().iter().enumerate().map(|(i, &v)| f(v, self.mean[i % d], self.sd[i % d])).collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
    }
}
