#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sdaut/tensor.hpp"

namespace sdaut {

/// Named handles to learnable tensors. Handles share storage with the owning
/// parameter struct, so writing through them updates the model.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

namespace init {

/// Normal(0, sigma) resampled until |z| <= 2.
Tensor trunc_normal(Shape shape, double sigma, std::mt19937_64& rng);
/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, Index fan_in, std::mt19937_64& rng);
inline Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape)); }
inline Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0); }

}  // namespace init

Index parameter_count(const ParamList& params);
/// In f32 mode, rounds every value to the nearest float in place.
void round_to_precision(const ParamList& params);

}  // namespace sdaut
