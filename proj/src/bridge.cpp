#include "msa2/bridge.hpp"

#include "msa2/ops.hpp"

namespace msa2 {

BridgeStage::BridgeStage(int channels, const KernelCandidateMatrix& matrix, Rng& rng, int reduction)
    : adaptive(channels, channels, matrix, rng), se(channels, reduction, rng), dense_proj(2 * channels, channels, rng) {}

Var BridgeStage::refine(const Var& features, SelectionMode mode) const {
    if (features.value().rank() != 4 || features.dim(3) != adaptive.in_channels())
        throw ShapeError("BridgeStage: expected " + std::to_string(adaptive.in_channels()) + " channels, got " +
                         shape_str(features.shape()));
    Var v = se.forward(adaptive.forward(features, mode));
    return dense_proj.forward(ops::concat_channels({v, features}));
}

void BridgeStage::collect(ParamList& out, const std::string& prefix) const {
    adaptive.collect(out, prefix + ".adaptive");
    se.collect(out, prefix + ".se");
    dense_proj.collect(out, prefix + ".dense_proj");
}

Bridge::Bridge(const std::array<int, 4>& stage_dims, const KernelCandidateMatrix& matrix, Rng& rng) {
    for (int i = 0; i < 4; ++i) stages[i] = BridgeStage(stage_dims[i], matrix, rng);
}

StageFeatures Bridge::refine_all(const StageFeatures& features, SelectionMode mode) const {
    StageFeatures out;
    for (int i = 0; i < 4; ++i) out.maps[i] = stages[i].refine(features.maps[i], mode);
    return out;
}

void Bridge::collect(ParamList& out, const std::string& prefix) const {
    for (int i = 0; i < 4; ++i) stages[i].collect(out, prefix + ".stage" + std::to_string(i + 1));
}

}  // namespace msa2
