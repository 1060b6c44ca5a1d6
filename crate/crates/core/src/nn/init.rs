use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::{math, Scalar, Tensor};

pub fn normal_tensor<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data: Vec<T> = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Fan-in scaled normal, `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    normal_tensor(shape, math::sqrt(2.0 / fan_in as f64), rng)
}
