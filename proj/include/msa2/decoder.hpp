#pragma once

#include <array>

#include "msa2/bridge.hpp"

namespace msa2 {

inline constexpr int kDecoderGroups = 4;
inline constexpr int kDecoderStages = 3;

// One grouped multi-scale decoding step. The summed input is split into 4
// channel groups, each filtered by its own SelfAdaptiveConv, concatenated,
// reweighted by squeeze-excitation, then upsampled 2x with a 1x1
// projection to the next shallower stage's width.
class DecoderStage {
public:
    DecoderStage() = default;
    DecoderStage(int channels, int out_channels, const KernelCandidateMatrix& matrix, Rng& rng,
                 int reduction = kSeReduction);

    // carry may be undefined (deepest stage)
    Var forward(const Var& skip, const Var& carry, SelectionMode mode) const;
    std::array<KernelChoice, kDecoderGroups> selected_kernels() const;
    void collect(ParamList& out, const std::string& prefix) const;

    std::array<SelfAdaptiveConv, kDecoderGroups> group_convs;
    SqueezeExcite fuse;  // reduce houses w^xi / b^xi, expand + sigmoid the excitation
    Linear up_proj;
};

// Ablated stage: skip + carry, bilinear 2x, 1x1 projection.
class PlainDecoderStage {
public:
    PlainDecoderStage() = default;
    PlainDecoderStage(int channels, int out_channels, Rng& rng);

    Var forward(const Var& skip, const Var& carry) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Linear up_proj;
};

// Upsamples by the patch stride and classifies every pixel.
class SegmentationHead {
public:
    SegmentationHead() = default;
    SegmentationHead(int channels, int hidden, int num_classes, int factor, Rng& rng);

    Var forward(const Var& x) const;  // logits [N, H, W, K]
    void collect(ParamList& out, const std::string& prefix) const;

    int factor = 4;
    Linear fc1, fc2;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(const std::array<int, 4>& stage_dims, int num_classes, int patch_stride, bool multi_scale,
            const KernelCandidateMatrix& matrix, Rng& rng);

    // Class logits at input resolution.
    Var decode(const StageFeatures& refined, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;
    bool multi_scale() const { return multi_scale_; }

    // stages[0] is Stage1 and consumes the deepest map (F4).
    std::array<DecoderStage, kDecoderStages> stages;
    std::array<PlainDecoderStage, kDecoderStages> plain_stages;
    SegmentationHead head;

private:
    bool multi_scale_ = true;
};

}  // namespace msa2
