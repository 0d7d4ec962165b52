#include "msa2/decoder.hpp"

#include <algorithm>

#include "msa2/ops.hpp"

namespace msa2 {

namespace {

Var combine(const Var& skip, const Var& carry) {
    if (!carry.defined()) return skip;
    if (carry.shape() != skip.shape())
        throw ShapeError("decoder: carry " + shape_str(carry.shape()) + " does not match skip " + shape_str(skip.shape()));
    return ops::add(skip, carry);
}

}  // namespace

DecoderStage::DecoderStage(int channels, int out_channels, const KernelCandidateMatrix& matrix, Rng& rng,
                           int reduction) {
    if (channels % kDecoderGroups)
        throw ConfigError("DecoderStage: channels " + std::to_string(channels) + " not divisible by " +
                          std::to_string(kDecoderGroups) + " groups");
    const int width = channels / kDecoderGroups;
    for (auto& conv : group_convs) conv = SelfAdaptiveConv(width, width, matrix, rng);
    fuse = SqueezeExcite(channels, reduction, rng);
    up_proj = Linear(channels, out_channels, rng);
}

Var DecoderStage::forward(const Var& skip, const Var& carry, SelectionMode mode) const {
    Var x = combine(skip, carry);
    const int channels = x.dim(3);
    const int width = group_convs[0].in_channels();
    if (channels != width * kDecoderGroups)
        throw ShapeError("DecoderStage: expected " + std::to_string(width * kDecoderGroups) + " channels, got " +
                         shape_str(x.shape()));
    std::vector<Var> parts;
    parts.reserve(kDecoderGroups);
    for (int g = 0; g < kDecoderGroups; ++g)
        parts.push_back(group_convs[g].forward(ops::slice_channels(x, g * width, (g + 1) * width), mode));
    Var fused = fuse.forward(ops::concat_channels(parts));
    return up_proj.forward(ops::upsample_bilinear(fused, 2));
}

std::array<KernelChoice, kDecoderGroups> DecoderStage::selected_kernels() const {
    std::array<KernelChoice, kDecoderGroups> out;
    for (int g = 0; g < kDecoderGroups; ++g) out[g] = group_convs[g].selected_kernel();
    return out;
}

void DecoderStage::collect(ParamList& out, const std::string& prefix) const {
    for (int g = 0; g < kDecoderGroups; ++g) group_convs[g].collect(out, prefix + ".group" + std::to_string(g));
    fuse.collect(out, prefix + ".fuse");
    up_proj.collect(out, prefix + ".up_proj");
}

PlainDecoderStage::PlainDecoderStage(int channels, int out_channels, Rng& rng) : up_proj(channels, out_channels, rng) {}

Var PlainDecoderStage::forward(const Var& skip, const Var& carry) const {
    return up_proj.forward(ops::upsample_bilinear(combine(skip, carry), 2));
}

void PlainDecoderStage::collect(ParamList& out, const std::string& prefix) const {
    up_proj.collect(out, prefix + ".up_proj");
}

SegmentationHead::SegmentationHead(int channels, int hidden, int num_classes, int factor_, Rng& rng)
    : factor(factor_), fc1(channels, hidden, rng), fc2(hidden, num_classes, rng) {}

Var SegmentationHead::forward(const Var& x) const {
    return fc2.forward(ops::gelu(fc1.forward(ops::upsample_bilinear(x, factor))));
}

void SegmentationHead::collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

Decoder::Decoder(const std::array<int, 4>& dims, int num_classes, int patch_stride, bool multi_scale,
                 const KernelCandidateMatrix& matrix, Rng& rng)
    : multi_scale_(multi_scale) {
    if (num_classes < 2) throw ConfigError("Decoder: need at least 2 classes");
    // stage j consumes F_{4-j} and emits F_{3-j}'s width
    for (int j = 0; j < kDecoderStages; ++j) {
        const int in = dims[3 - j], out = dims[2 - j];
        if (multi_scale)
            stages[j] = DecoderStage(in, out, matrix, rng);
        else
            plain_stages[j] = PlainDecoderStage(in, out, rng);
    }
    head = SegmentationHead(dims[0], std::max(dims[0] / 2, num_classes), num_classes, patch_stride, rng);
}

Var Decoder::decode(const StageFeatures& refined, SelectionMode mode) const {
    Var carry;
    for (int j = 0; j < kDecoderStages; ++j) {
        const Var& skip = refined.maps[3 - j];
        carry = multi_scale_ ? stages[j].forward(skip, carry, mode) : plain_stages[j].forward(skip, carry);
    }
    return head.forward(combine(refined.maps[0], carry));
}

void Decoder::collect(ParamList& out, const std::string& prefix) const {
    for (int j = 0; j < kDecoderStages; ++j) {
        if (multi_scale_)
            stages[j].collect(out, prefix + ".stage" + std::to_string(j + 1));
        else
            plain_stages[j].collect(out, prefix + ".plain" + std::to_string(j + 1));
    }
    head.collect(out, prefix + ".head");
}

}  // namespace msa2
