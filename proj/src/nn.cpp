#include "msa2/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "msa2/ops.hpp"

namespace msa2 {

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Var make_param(Tensor value) { return Var(std::move(value), true); }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = make_param(uniform_tensor({in, out}, bound, rng));
    if (with_bias) bias = make_param(uniform_tensor({out}, bound, rng));
}

Var Linear::forward(const Var& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, true, false});
}

LayerNorm::LayerNorm(int channels)
    : gamma(make_param(Tensor({channels}, 1.0))), beta(make_param(Tensor({channels}, 0.0))) {}

Var LayerNorm::forward(const Var& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma, true, false});
    out.push_back({prefix + ".beta", beta, true, false});
}

SqueezeExcite::SqueezeExcite(int channels, int reduction, Rng& rng)
    : reduce(channels, std::max(1, channels / reduction), rng), expand(std::max(1, channels / reduction), channels, rng) {}

Var SqueezeExcite::excitation(const Var& x) const {
    Var s = ops::global_avg_pool(x);
    return ops::sigmoid(expand.forward(ops::relu(reduce.forward(s))));
}

Var SqueezeExcite::forward(const Var& x) const { return ops::mul_channels(x, excitation(x)); }

void SqueezeExcite::collect(ParamList& out, const std::string& prefix) const {
    reduce.collect(out, prefix + ".reduce");
    expand.collect(out, prefix + ".expand");
}

}  // namespace msa2
