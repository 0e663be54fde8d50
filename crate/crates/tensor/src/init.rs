//! Parameter initialisers. All draw from a caller-supplied seeded generator.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Elem, Tensor};

/// Glorot/Xavier uniform: `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`.
pub fn glorot_uniform<T: Elem, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(dist.sample(rng)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

pub fn normal<T: Elem, R: Rng>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Tensor<T> {
    let shape = shape.into();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.iter().product())
        .map(|_| T::of(dist.sample(rng)))
        .collect();
    Tensor::new(shape, data).expect("shape")
}

pub fn uniform<T: Elem, R: Rng>(shape: impl Into<Vec<usize>>, low: f64, high: f64, rng: &mut R) -> Tensor<T> {
    let shape = shape.into();
    let dist = Uniform::new(low, high).expect("low < high");
    let data = (0..shape.iter().product())
        .map(|_| T::of(dist.sample(rng)))
        .collect();
    Tensor::new(shape, data).expect("shape")
}
