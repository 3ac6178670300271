use std::fmt;

use crate::error::{Error, Result};

/// Row-major `T x C` matrix: one row per time step, one column per channel.
#[derive(Clone, PartialEq)]
pub struct Tensor2D {
    steps: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(steps: usize, channels: usize) -> Self {
        Self {
            steps,
            channels,
            data: vec![0.0; steps * channels],
        }
    }

    pub fn from_vec(steps: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if steps == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "tensor dimensions must be positive, got {steps}x{channels}"
            )));
        }
        if data.len() != steps * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {steps}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self {
            steps,
            channels,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), channels, rows.concat())
    }

    pub fn filled(steps: usize, channels: usize, value: f64) -> Self {
        Self {
            steps,
            channels,
            data: vec![value; steps * channels],
        }
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.steps, self.channels)
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        self.data[t * self.channels + c] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor2D) -> bool {
        self.shape() == other.shape()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.channels)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D[{}x{}]", self.steps, self.channels)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
