#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

namespace nvs::testing {

/// Central finite difference of a scalar function w.r.t. selected flat entries of `x` (double precision).
/// `x` is modified in place during probing and restored afterwards.
std::vector<double> finite_difference(const std::function<double(const torch::Tensor&)>& f, torch::Tensor& x,
                                      const std::vector<int64_t>& flat_indices, double step = 1e-6);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8);

std::vector<int64_t> sample_indices(int64_t numel, int64_t count, uint64_t seed);

std::vector<double> gather(const torch::Tensor& t, const std::vector<int64_t>& flat_indices);

} // namespace nvs::testing
