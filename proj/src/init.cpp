#include "fei3d/init.hpp"

#include "fei3d/error.hpp"

#include <cmath>

namespace fei3d {

double kaiming_uniform_bound(std::size_t fan_in, double negative_slope) {
    const double gain = std::sqrt(2.0 / (1.0 + negative_slope * negative_slope));
    return gain * std::sqrt(3.0 / static_cast<double>(fan_in));
}

LinearParams init_linear_params(std::size_t fan_in, std::size_t fan_out, Rng &rng, double negative_slope) {
    if (fan_in == 0 || fan_out == 0) {
        throw Error(ErrorKind::domain, "init_linear_params: zero dimension (fan_in=" + std::to_string(fan_in) +
                                           ", fan_out=" + std::to_string(fan_out) + ")");
    }
    const double bound = kaiming_uniform_bound(fan_in, negative_slope);
    LinearParams p{Matrix(fan_out, fan_in), Matrix(fan_out, 1)};
    for (double &w : p.weights.values()) {
        w = rng.uniform(-bound, bound);
    }
    return p;
}

}  // namespace fei3d
