#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msa2/decoder.hpp"

namespace msa2 {

enum class Guidance { Q1, Q2, Q3, None, SelfAdaptive };

std::string to_string(Guidance g);
Guidance parse_guidance(const std::string& name);

// Candidate matrix for a guidance mode. Q1..Q3 broadcast 1 + Qk to every
// column, None uses the bare base kernels, SelfAdaptive uses 1 + [Q1,Q2,Q3,P95].
KernelCandidateMatrix guidance_matrix(Guidance g, const QuartileVector& pooled_quartiles);

struct ModelConfig {
    EncoderConfig encoder;
    int num_classes = 3;
    Guidance guidance = Guidance::SelfAdaptive;
    bool use_bridge = true;
    bool use_msadecoder = true;
    std::uint64_t seed = 0;
};

struct SegmentationResult {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> probabilities;  // H x W x C
    LabelMap labels;
};

class Msa2Net {
public:
    Msa2Net(const ModelConfig& config, const KernelCandidateMatrix& matrix);

    // images [N, H, W, 3] -> logits [N, H, W, K]
    Var forward(const Var& images, SelectionMode mode) const;
    StageFeatures encode(const Var& images, SelectionMode mode) const;
    StageFeatures bridge(const StageFeatures& features, SelectionMode mode) const;

    // Per-pixel softmax over forward() logits, without building a graph.
    Tensor probabilities(const Tensor& images, SelectionMode mode) const;
    SegmentationResult predict(const Image& image, SelectionMode mode) const;

    ParamList parameters() const;
    const ModelConfig& config() const { return config_; }
    const KernelCandidateMatrix& matrix() const { return matrix_; }

    Encoder encoder;
    std::optional<Bridge> msconv_bridge;
    Decoder decoder;

private:
    ModelConfig config_;
    KernelCandidateMatrix matrix_;
};

// Batch images into [N, H, W, 3]; single-channel images are replicated.
Tensor stack_images(std::span<const Image> images);

SegmentationResult make_result(const Tensor& probs, int sample);

}  // namespace msa2
