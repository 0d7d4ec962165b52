#include "msa2/encoder.hpp"

#include "msa2/ops.hpp"

namespace msa2 {

void EncoderConfig::validate() const {
    if (patch_stride != 4) throw ConfigError("patch_stride must be 4");
    if (input_height < 32 || input_width < 32 || input_height % 32 || input_width % 32)
        throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                          " must be divisible by 32");
    for (int i = 0; i < 4; ++i) {
        if (stage_dims[i] < 1) throw ConfigError("stage_dims must be positive");
        if (i > 0 && stage_dims[i] <= stage_dims[i - 1]) throw ConfigError("stage_dims must be strictly increasing");
        if (blocks_per_stage[i] < 0) throw ConfigError("blocks_per_stage must be non-negative");
        if (heads_per_stage[i] < 2 || heads_per_stage[i] % 2)
            throw ConfigError("heads_per_stage entries must be even and >= 2");
        if (stage_dims[i] % heads_per_stage[i])
            throw ConfigError("stage " + std::to_string(i + 1) + ": channels " + std::to_string(stage_dims[i]) +
                              " not divisible by heads " + std::to_string(heads_per_stage[i]));
        if (stripe_widths[i] < 1) throw ConfigError("stripe_widths must be positive");
    }
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"input_height", c.input_height},     {"input_width", c.input_width},
                       {"patch_stride", c.patch_stride},     {"stage_dims", c.stage_dims},
                       {"blocks_per_stage", c.blocks_per_stage}, {"heads_per_stage", c.heads_per_stage},
                       {"stripe_widths", c.stripe_widths},   {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c = EncoderConfig{};
    if (j.contains("input_size")) {
        const auto& s = j.at("input_size");
        if (s.is_array()) {
            c.input_height = s.at(0).get<int>();
            c.input_width = s.at(1).get<int>();
        } else {
            c.input_height = c.input_width = s.get<int>();
        }
    }
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    c.patch_stride = j.value("patch_stride", c.patch_stride);
    c.stage_dims = j.value("stage_dims", c.stage_dims);
    c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
    c.heads_per_stage = j.value("heads_per_stage", c.heads_per_stage);
    c.stripe_widths = j.value("stripe_widths", c.stripe_widths);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
}

CrossWindowAttention::CrossWindowAttention(int channels, int heads_, int stripe_, Rng& rng)
    : qkv(channels, 3 * channels, rng), proj(channels, channels, rng), heads(heads_), stripe(stripe_) {
    if (heads < 2 || heads % 2) throw ConfigError("CrossWindowAttention: heads must be even and >= 2");
    if (channels % heads)
        throw ConfigError("CrossWindowAttention: channels " + std::to_string(channels) + " not divisible by heads " +
                          std::to_string(heads));
}

Var CrossWindowAttention::forward(const Var& x) const {
    return proj.forward(ops::stripe_attention(qkv.forward(x), heads, stripe));
}

std::vector<Tensor> CrossWindowAttention::attention_weights(const Var& x) const {
    NoGradGuard guard;
    return ops::stripe_attention_weights(qkv.forward(x).value(), heads, stripe);
}

void CrossWindowAttention::collect(ParamList& out, const std::string& prefix) const {
    qkv.collect(out, prefix + ".qkv");
    proj.collect(out, prefix + ".proj");
}

AttentionBlock::AttentionBlock(int channels, int heads, int stripe, int mlp_ratio, Rng& rng)
    : norm1(channels),
      attn(channels, heads, stripe, rng),
      norm2(channels),
      fc1(channels, channels * mlp_ratio, rng),
      fc2(channels * mlp_ratio, channels, rng) {}

Var AttentionBlock::forward(const Var& x) const {
    Var h = ops::add(x, attn.forward(norm1.forward(x)));
    return ops::add(h, fc2.forward(ops::gelu(fc1.forward(norm2.forward(h)))));
}

void AttentionBlock::collect(ParamList& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

AuxConvBranch::AuxConvBranch(int channels, const KernelCandidateMatrix& matrix, Rng& rng)
    : conv(channels, channels, matrix, rng) {}

Var AuxConvBranch::forward(const Var& x, SelectionMode mode) const {
    return ops::add(x, ops::gelu(conv.forward(x, mode)));
}

void AuxConvBranch::collect(ParamList& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }

EncoderStage::EncoderStage(int in_channels, int channels, int patch_, int n_blocks, int heads, int stripe,
                           int mlp_ratio, const KernelCandidateMatrix& matrix, Rng& rng)
    : patch(patch_),
      downsample(patch_ * patch_ * in_channels, channels, rng),
      down_norm(channels),
      embed(channels, channels, rng),
      aux(channels, matrix, rng),
      gate(make_param(Tensor({channels}, 1.0))) {
    blocks.reserve(n_blocks);
    for (int b = 0; b < n_blocks; ++b) blocks.emplace_back(channels, heads, stripe, mlp_ratio, rng);
}

Var EncoderStage::forward(const Var& x, SelectionMode mode) const {
    Var x0 = down_norm.forward(downsample.forward(ops::space_to_depth(x, patch)));
    Var main = embed.forward(x0);
    for (const auto& block : blocks) main = block.forward(main);
    Var fused = ops::add(main, aux.forward(x0, mode));
    return ops::add(ops::mul_channels(fused, gate), x0);
}

void EncoderStage::collect(ParamList& out, const std::string& prefix) const {
    downsample.collect(out, prefix + ".downsample");
    down_norm.collect(out, prefix + ".down_norm");
    embed.collect(out, prefix + ".embed");
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, prefix + ".block" + std::to_string(b));
    aux.collect(out, prefix + ".aux");
    out.push_back({prefix + ".gate", gate, true, false});
}

Encoder::Encoder(const EncoderConfig& config, const KernelCandidateMatrix& matrix, Rng& rng) : config_(config) {
    config_.validate();
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        const int patch = i == 0 ? config_.patch_stride : 2;
        stages[i] = EncoderStage(in, config_.stage_dims[i], patch, config_.blocks_per_stage[i],
                                 config_.heads_per_stage[i], config_.stripe_widths[i], config_.mlp_ratio, matrix, rng);
        in = config_.stage_dims[i];
    }
}

StageFeatures Encoder::encode(const Var& images, SelectionMode mode) const {
    const Tensor& v = images.value();
    if (v.rank() != 4 || v.dim(3) != 3) throw ShapeError("encode: expected [N,H,W,3], got " + shape_str(v.shape()));
    if (v.dim(1) % 32 || v.dim(2) % 32)
        throw ShapeError("encode: input size " + shape_str(v.shape()) + " must be divisible by 32");
    StageFeatures f;
    Var x = images;
    for (int i = 0; i < 4; ++i) {
        x = stages[i].forward(x, mode);
        f.maps[i] = x;
    }
    return f;
}

void Encoder::collect(ParamList& out, const std::string& prefix) const {
    for (int i = 0; i < 4; ++i) stages[i].collect(out, prefix + ".stage" + std::to_string(i + 1));
}

}  // namespace msa2
