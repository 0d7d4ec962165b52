#pragma once

#include <array>

#include "msa2/encoder.hpp"

namespace msa2 {

inline constexpr int kSeReduction = 4;

// Skip-connection refinement for one encoder stage:
//   u = adaptive(F); v = se(u); out = dense_proj(concat(v, F)).
class BridgeStage {
public:
    BridgeStage() = default;
    BridgeStage(int channels, const KernelCandidateMatrix& matrix, Rng& rng, int reduction = kSeReduction);

    Var refine(const Var& features, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;

    SelfAdaptiveConv adaptive;
    SqueezeExcite se;
    Linear dense_proj;  // 2C -> C
};

class Bridge {
public:
    Bridge() = default;
    Bridge(const std::array<int, 4>& stage_dims, const KernelCandidateMatrix& matrix, Rng& rng);

    StageFeatures refine_all(const StageFeatures& features, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;

    std::array<BridgeStage, 4> stages;
};

}  // namespace msa2
