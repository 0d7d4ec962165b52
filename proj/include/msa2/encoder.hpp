#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "msa2/adaptive_conv.hpp"

namespace msa2 {

struct EncoderConfig {
    int input_height = 64;
    int input_width = 64;
    int patch_stride = 4;
    std::array<int, 4> stage_dims{32, 64, 128, 256};
    std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
    std::array<int, 4> heads_per_stage{2, 4, 8, 8};
    std::array<int, 4> stripe_widths{1, 2, 2, 4};
    int mlp_ratio = 4;

    // Throws ConfigError on an inconsistent configuration.
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// F1..F4 at H/4, H/8, H/16, H/32.
struct StageFeatures {
    std::array<Var, 4> maps;
};

class CrossWindowAttention {
public:
    CrossWindowAttention() = default;
    CrossWindowAttention(int channels, int heads, int stripe, Rng& rng);

    Var forward(const Var& x) const;
    // Attention matrices for every (sample, head, stripe); rows sum to 1.
    std::vector<Tensor> attention_weights(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Linear qkv;   // C -> 3C, column blocks [q | k | v]
    Linear proj;  // C -> C
    int heads = 2;
    int stripe = 1;
};

class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(int channels, int heads, int stripe, int mlp_ratio, Rng& rng);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    LayerNorm norm1;
    CrossWindowAttention attn;
    LayerNorm norm2;
    Linear fc1, fc2;
};

// Residual block around a SelfAdaptiveConv: x + gelu(conv(x)).
class AuxConvBranch {
public:
    AuxConvBranch() = default;
    AuxConvBranch(int channels, const KernelCandidateMatrix& matrix, Rng& rng);

    Var forward(const Var& x, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;

    SelfAdaptiveConv conv;
};

class EncoderStage {
public:
    EncoderStage() = default;
    EncoderStage(int in_channels, int channels, int patch, int blocks, int heads, int stripe, int mlp_ratio,
                 const KernelCandidateMatrix& matrix, Rng& rng);

    // Returns F_i for the previous stage's output (or the image at stage 1).
    Var forward(const Var& x, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;

    int patch = 2;
    Linear downsample;  // patch * patch * in -> C
    LayerNorm down_norm;
    Linear embed;  // main-branch linear embedding
    std::vector<AttentionBlock> blocks;
    AuxConvBranch aux;
    Var gate;  // per-channel elementwise transform, starts at 1
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& config, const KernelCandidateMatrix& matrix, Rng& rng);

    // images: [N, H, W, 3]
    StageFeatures encode(const Var& images, SelectionMode mode) const;
    void collect(ParamList& out, const std::string& prefix) const;

    const EncoderConfig& config() const { return config_; }

    std::array<EncoderStage, 4> stages;

private:
    EncoderConfig config_;
};

}  // namespace msa2
