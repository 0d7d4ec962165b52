#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "msa2/autograd.hpp"

namespace msa2 {

// Deterministic uniform draws from a 64-bit Mersenne twister. Avoids the
// implementation-defined std:: distributions so streams are reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return engine_(); }
    // in [0, n)
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
    double normal();

    // Child stream derived from this one.
    Rng fork() { return Rng(engine_()); }

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct ParamRef {
    std::string name;
    Var var;
    bool trainable = true;
    bool decay = true;  // participates in weight decay
};

using ParamList = std::vector<ParamRef>;

Var make_param(Tensor value);
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    int in_features() const { return weight.dim(0); }
    int out_features() const { return weight.dim(1); }

    Var weight;  // [in, out]
    Var bias;    // [out] or undefined
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int channels);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Var gamma, beta;
};

// Channel reweighting: x * sigmoid(expand(relu(reduce(avgpool(x))))).
class SqueezeExcite {
public:
    SqueezeExcite() = default;
    SqueezeExcite(int channels, int reduction, Rng& rng);

    Var forward(const Var& x) const;
    // [N, C] gate values in (0, 1)
    Var excitation(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Linear reduce, expand;
};

}  // namespace msa2
