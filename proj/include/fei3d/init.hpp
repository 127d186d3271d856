#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/rng.hpp"

#include <cstddef>

namespace fei3d {

struct LinearParams {
    Matrix weights;  // fan_out x fan_in
    Matrix bias;     // fan_out x 1
};

/// Kaiming-uniform bound for a leaky-ReLU network: gain·sqrt(3/fan_in) with
/// gain = sqrt(2 / (1 + slope²)). The matching standard deviation is
/// gain / sqrt(fan_in).
double kaiming_uniform_bound(std::size_t fan_in, double negative_slope);

/// Weights ~ U(-bound, bound) row by row from `rng`; bias zero.
LinearParams init_linear_params(std::size_t fan_in, std::size_t fan_out, Rng &rng, double negative_slope = 0.01);

}  // namespace fei3d
