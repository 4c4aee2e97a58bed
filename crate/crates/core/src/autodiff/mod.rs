//! Minimal reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Tape`] records a closed set of primitives (masked affine maps,
//! elementwise nonlinearities, grouped reductions, concatenation) as they
//! are executed. [`Tape::backward`] then returns a [`GradientBundle`] with
//! gradients for every tracked leaf: parameters registered with
//! [`Tape::param`] and inputs registered with [`Tape::input`]. Leaves
//! created with [`Tape::constant`] receive no gradient, and no work is done
//! on paths that only reach constants.
//!
//! Tapes are single-use: a second `backward` on the same tape is an error.
//!
//! ```
//! use ncml_core::autodiff::{record_forward, Tensor};
//!
//! let x = Tensor::row(vec![0.5, -1.0, 2.0]);
//! let (out, mut tape) = record_forward(
//!     |tape, vars| {
//!         let y = tape.tanh(vars[0])?;
//!         tape.sum(y)
//!     },
//!     &[x],
//! )
//! .unwrap();
//! assert_eq!(out.shape(), &[1]);
//! let grads = tape.backward(&Tensor::scalar(1.0)).unwrap();
//! assert_eq!(grads.input(0).unwrap().len(), 3);
//! ```

mod check;
mod tape;

pub use check::{check_gradients, relative_error, CoordinateCheck, GradientCheckReport, REL_ERROR_FLOOR};
pub use tape::{record_forward, BinaryOp, GradientBundle, GraphProgram, ParamId, Tape, UnaryOp, Var};

use crate::{Error, Real, Result};

/// Dense row-major tensor. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// `[rows, cols]` matrix. Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Self {
        Self::new(vec![rows, cols], data).expect("matrix dimensions")
    }

    /// `[1, n]` row vector.
    pub fn row(data: Vec<S>) -> Self {
        let n = data.len();
        Self::matrix(1, n, data)
    }

    /// `[n, 1]` column vector.
    pub fn column(data: Vec<S>) -> Self {
        let n = data.len();
        Self::matrix(n, 1, data)
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn full(shape: Vec<usize>, v: S) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n]).expect("full shape")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as a matrix: rank 1 is a single row.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn item(&self) -> S {
        self.data[0]
    }
}

/// Constant binary connectivity mask for an affine map, stored as runs of
/// allowed input columns per output row. Masked entries are skipped rather
/// than multiplied by zero, so they can never influence an output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineMask {
    outputs: usize,
    inputs: usize,
    runs: Vec<Vec<(usize, usize)>>,
}

impl AffineMask {
    pub fn from_dense(outputs: usize, inputs: usize, allowed: &[bool]) -> Self {
        assert_eq!(allowed.len(), outputs * inputs, "mask size");
        let runs = (0..outputs)
            .map(|o| {
                let row = &allowed[o * inputs..(o + 1) * inputs];
                let mut runs = Vec::new();
                let mut i = 0;
                while i < inputs {
                    if row[i] {
                        let start = i;
                        while i < inputs && row[i] {
                            i += 1;
                        }
                        runs.push((start, i));
                    } else {
                        i += 1;
                    }
                }
                runs
            })
            .collect();
        Self {
            outputs,
            inputs,
            runs,
        }
    }

    /// Row `o` may read input columns `0..prefix[o]`.
    pub fn from_prefixes(inputs: usize, prefix: &[usize]) -> Self {
        let runs = prefix
            .iter()
            .map(|&p| {
                assert!(p <= inputs, "prefix longer than inputs");
                if p == 0 {
                    Vec::new()
                } else {
                    vec![(0, p)]
                }
            })
            .collect();
        Self {
            outputs: prefix.len(),
            inputs,
            runs,
        }
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn runs(&self, output: usize) -> &[(usize, usize)] {
        &self.runs[output]
    }

    pub fn allowed(&self, output: usize, input: usize) -> bool {
        self.runs[output]
            .iter()
            .any(|&(a, b)| input >= a && input < b)
    }

    /// Number of allowed connections into `output`.
    pub fn fan_in(&self, output: usize) -> usize {
        self.runs[output].iter().map(|(a, b)| b - a).sum()
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = vec![false; self.outputs * self.inputs];
        for (o, runs) in self.runs.iter().enumerate() {
            for &(a, b) in runs {
                out[o * self.inputs + a..o * self.inputs + b].fill(true);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0f64; 6]).unwrap();
        assert_eq!(t.matrix_dims(), Some((2, 3)));
    }

    #[test]
    fn mask_runs_roundtrip_dense() {
        let dense = [true, false, true, true, false, false, false, true];
        let m = AffineMask::from_dense(2, 4, &dense);
        assert_eq!(m.runs(0), &[(0, 1), (2, 4)]);
        assert_eq!(m.runs(1), &[(3, 4)]);
        assert_eq!(m.to_dense(), dense);
        assert_eq!(m.fan_in(0), 3);
        let p = AffineMask::from_prefixes(3, &[0, 2, 3]);
        assert!(!p.allowed(0, 0));
        assert!(p.allowed(1, 1) && !p.allowed(1, 2));
    }
}
