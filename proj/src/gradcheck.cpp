#include "fei3d/gradcheck.hpp"

#include "fei3d/error.hpp"

#include <algorithm>
#include <cmath>

namespace fei3d::nn {

GradCheckResult grad_check(Trainable &model, const LossFn &loss, const Matrix &batch, double h, double floor) {
    if (!(h >= 1e-7 && h <= 1e-3)) {
        throw Error(ErrorKind::domain, "grad_check step must lie in [1e-7, 1e-3], got " + std::to_string(h));
    }
    const auto saved = snapshot(model);
    Rng unused(0);

    const Matrix output = model.forward(batch, Mode::train, unused);
    const LossEval base = loss(output);
    model.backward(base.grad);

    std::vector<Matrix> analytic;
    for (const auto &p : model.parameters()) {
        analytic.push_back(*p.grad);
    }

    auto evaluate = [&] { return loss(model.forward(batch, Mode::train, unused)).loss; };

    GradCheckResult result;
    auto params = model.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].value->values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + h;
            const double up = evaluate();
            values[i] = original - h;
            const double down = evaluate();
            values[i] = original;

            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi].values()[i];
            const double scale = std::max({std::abs(a), std::abs(numeric), floor});
            const double err = std::abs(a - numeric) / scale;
            ++result.checked;
            if (result.checked == 1 || err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_parameter = params[pi].name;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    restore(model, saved);
    return result;
}

GradCheckResult grad_check(MlpModel &model, const LossFn &loss, const Matrix &batch, double h, double floor) {
    for (const auto &b : model.blocks()) {
        if (b.dropout.rate() > 0.0) {
            throw Error(ErrorKind::config, "grad_check requires dropout disabled in every layer");
        }
    }
    return grad_check(static_cast<Trainable &>(model), loss, batch, h, floor);
}

}  // namespace fei3d::nn
