#include "sdaut/params.hpp"

#include <cmath>

namespace sdaut {

namespace init {

Tensor trunc_normal(Shape shape, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
        double z = normal(rng);
        while (std::abs(z) > 2.0) z = normal(rng);
        x = sigma * z;
    }
    return Tensor(std::move(shape), std::move(v));
}

Tensor fan_in_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace init

Index parameter_count(const ParamList& params) {
    Index n = 0;
    for (const auto& [_, t] : params) n += t.numel();
    return n;
}

void round_to_precision(const ParamList& params) {
    if (precision() != Precision::f32) return;
    for (const auto& [_, t] : params) {
        Tensor h = t;
        for (auto& v : h.mutable_data()) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace sdaut
