#include "msa2/model.hpp"

#include "msa2/ops.hpp"

namespace msa2 {

std::string to_string(Guidance g) {
    switch (g) {
        case Guidance::Q1: return "Q1";
        case Guidance::Q2: return "Q2";
        case Guidance::Q3: return "Q3";
        case Guidance::None: return "None";
        case Guidance::SelfAdaptive: return "SelfAdaptive";
    }
    return "?";
}

Guidance parse_guidance(const std::string& name) {
    if (name == "Q1") return Guidance::Q1;
    if (name == "Q2") return Guidance::Q2;
    if (name == "Q3") return Guidance::Q3;
    if (name == "None") return Guidance::None;
    if (name == "SelfAdaptive" || name == "Self-Adaptive") return Guidance::SelfAdaptive;
    throw ConfigError("unknown guidance mode '" + name + "' (expected Q1, Q2, Q3, None or SelfAdaptive)");
}

KernelCandidateMatrix guidance_matrix(Guidance g, const QuartileVector& q) {
    switch (g) {
        case Guidance::Q1:
        case Guidance::Q2:
        case Guidance::Q3: {
            const double shift = 1.0 + q[static_cast<int>(g)];
            return candidate_matrix_from_shift({shift, shift, shift, shift});
        }
        case Guidance::None: return candidate_matrix_from_shift({1.0, 1.0, 1.0, 1.0});
        case Guidance::SelfAdaptive: return build_candidate_matrix(q);
    }
    throw ConfigError("invalid guidance");
}

Msa2Net::Msa2Net(const ModelConfig& config, const KernelCandidateMatrix& matrix) : config_(config), matrix_(matrix) {
    config_.encoder.validate();
    if (config_.num_classes < 2 || config_.num_classes > 256) throw ConfigError("num_classes must be in [2, 256]");

    // independent streams so toggling one component leaves the others' weights unchanged
    Rng enc_rng(mix_seed(config_.seed, 0));
    encoder = Encoder(config_.encoder, matrix_, enc_rng);
    if (config_.use_bridge) {
        Rng rng(mix_seed(config_.seed, 1));
        msconv_bridge.emplace(config_.encoder.stage_dims, matrix_, rng);
    }
    Rng dec_rng(mix_seed(config_.seed, 2));
    decoder = Decoder(config_.encoder.stage_dims, config_.num_classes, config_.encoder.patch_stride,
                      config_.use_msadecoder, matrix_, dec_rng);

    if (config_.guidance != Guidance::SelfAdaptive) {
        // fixed schedule: the i-th site of each group of four uses base row i
        for (int i = 0; i < 4; ++i) {
            encoder.stages[i].aux.conv.pin(i, 0);
            if (msconv_bridge) msconv_bridge->stages[i].adaptive.pin(i, 0);
        }
        if (config_.use_msadecoder)
            for (auto& stage : decoder.stages)
                for (int g = 0; g < kDecoderGroups; ++g) stage.group_convs[g].pin(g, 0);
    }
}

StageFeatures Msa2Net::encode(const Var& images, SelectionMode mode) const { return encoder.encode(images, mode); }

StageFeatures Msa2Net::bridge(const StageFeatures& features, SelectionMode mode) const {
    return msconv_bridge ? msconv_bridge->refine_all(features, mode) : features;
}

Var Msa2Net::forward(const Var& images, SelectionMode mode) const {
    return decoder.decode(bridge(encode(images, mode), mode), mode);
}

Tensor Msa2Net::probabilities(const Tensor& images, SelectionMode mode) const {
    NoGradGuard guard;
    return ops::softmax_last(forward(Var(images), mode)).value();
}

SegmentationResult Msa2Net::predict(const Image& image, SelectionMode mode) const {
    const Image* one = &image;
    return make_result(probabilities(stack_images({one, 1}), mode), 0);
}

ParamList Msa2Net::parameters() const {
    ParamList out;
    encoder.collect(out, "encoder");
    if (msconv_bridge) msconv_bridge->collect(out, "bridge");
    decoder.collect(out, "decoder");
    return out;
}

Tensor stack_images(std::span<const Image> images) {
    if (images.empty()) throw DataError("stack_images: empty batch");
    const int H = images[0].height, W = images[0].width;
    Tensor t(Shape{static_cast<int>(images.size()), H, W, 3});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& im = images[n];
        if (im.height != H || im.width != W) throw DataError("stack_images: images differ in size");
        if (im.channels != 1 && im.channels != 3) throw DataError("stack_images: expected 1 or 3 channels");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    t.at(static_cast<int>(n), y, x, c) = im.at(y, x, im.channels == 1 ? 0 : c);
    }
    return t;
}

SegmentationResult make_result(const Tensor& probs, int sample) {
    SegmentationResult r;
    r.height = probs.dim(1);
    r.width = probs.dim(2);
    r.num_classes = probs.dim(3);
    const std::size_t plane = static_cast<std::size_t>(r.height) * r.width * r.num_classes;
    r.probabilities.assign(probs.data() + sample * plane, probs.data() + (sample + 1) * plane);
    r.labels = LabelMap(r.height, r.width);
    for (std::size_t p = 0; p < r.labels.size(); ++p) {
        const double* row = r.probabilities.data() + p * r.num_classes;
        int best = 0;
        for (int c = 1; c < r.num_classes; ++c)
            if (row[c] > row[best]) best = c;
        r.labels.labels[p] = static_cast<std::uint8_t>(best);
    }
    return r;
}

}  // namespace msa2
