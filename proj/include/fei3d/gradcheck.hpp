#pragma once

#include "fei3d/matrix.hpp"
#include "fei3d/nn.hpp"

#include <cstddef>
#include <functional>
#include <string>

namespace fei3d::nn {

struct LossEval {
    double loss = 0.0;
    Matrix grad;  // d loss / d model output
};

/// Loss as a function of the model output; targets are bound by the caller.
using LossFn = std::function<LossEval(const Matrix &output)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Compares every analytic parameter gradient against the central difference
/// (L(θ+h) − L(θ−h)) / 2h using train-mode forwards.
///
/// The per-entry error is |a − n| / max(|a|, |n|, floor). Above `floor` this is
/// the plain relative error; below it the check degrades to an absolute one
/// (tolerance·floor), which is what keeps exactly-zero gradients (e.g. a
/// linear bias feeding batch norm) from failing on round-off. The model is
/// restored bit-exactly before returning. Dropout must be off.
GradCheckResult grad_check(Trainable &model, const LossFn &loss, const Matrix &batch, double h = 1e-5,
                           double floor = 1e-4);

/// As above, but rejects models with active dropout.
GradCheckResult grad_check(MlpModel &model, const LossFn &loss, const Matrix &batch, double h = 1e-5,
                           double floor = 1e-4);

}  // namespace fei3d::nn
