#include "msa2/adaptive_conv.hpp"

#include <cmath>

#include "msa2/ops.hpp"

namespace msa2 {

namespace {
constexpr double kCandidateNoise = 0.01;
}

SelfAdaptiveConv::SelfAdaptiveConv(int in_channels, int out_channels, const KernelCandidateMatrix& matrix, Rng& rng)
    : in_channels_(in_channels), matrix_(matrix) {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("SelfAdaptiveConv: channel counts must be positive");
    for (int b = 0; b < kGrid; ++b)
        for (int s = 0; s < kGrid; ++s) {
            const int k = matrix.quantized[b][s];
            if (k < kMinKernel || k > kMaxKernel || k % 2 == 0)
                throw ConfigError("SelfAdaptiveConv: illegal candidate size " + std::to_string(k));
            // centred impulse plus small noise: every candidate starts near identity
            Tensor w = uniform_tensor({k, k, in_channels}, kCandidateNoise, rng);
            const int c0 = (k - 1) / 2;
            for (int c = 0; c < in_channels; ++c) w[(static_cast<std::size_t>(c0) * k + c0) * in_channels + c] += 1.0;
            candidates[b * kGrid + s] = make_param(std::move(w));
        }
    logits = make_param(Tensor({kGrid, kGrid}, 0.0));
    mixer = Linear(in_channels, out_channels, rng);
}

Var SelfAdaptiveConv::forward(const Var& x, SelectionMode mode) const {
    if (x.value().rank() != 4 || x.dim(3) != in_channels_)
        throw ShapeError("SelfAdaptiveConv: expected [N,H,W," + std::to_string(in_channels_) + "], got " +
                         shape_str(x.shape()));
    Var spatial;
    if (pinned_ || mode == SelectionMode::hard) {
        const KernelChoice c = selected_kernel();
        spatial = ops::depthwise_conv2d(x, candidates[c.row * kGrid + c.col]);
    } else {
        Var probs = ops::softmax_last(ops::reshape(logits, {kCandidates}));
        std::vector<Var> cands(candidates.begin(), candidates.end());
        spatial = ops::depthwise_conv2d(x, ops::mix_kernels(probs, cands));
    }
    return mixer.forward(spatial);
}

KernelChoice flat_argmax(const Tensor& logits, const KernelCandidateMatrix& matrix) {
    int best = 0;
    for (int i = 1; i < SelfAdaptiveConv::kCandidates; ++i)
        if (logits[i] > logits[best]) best = i;
    const int r = best / SelfAdaptiveConv::kGrid, c = best % SelfAdaptiveConv::kGrid;
    return {r, c, matrix.quantized[r][c]};
}

KernelChoice SelfAdaptiveConv::selected_kernel() const {
    if (pinned_) {
        const int r = *pinned_ / kGrid, c = *pinned_ % kGrid;
        return {r, c, matrix_.quantized[r][c]};
    }
    return flat_argmax(logits.value(), matrix_);
}

Tensor SelfAdaptiveConv::selection_probabilities() const {
    NoGradGuard guard;
    return ops::softmax_last(ops::reshape(logits, {kCandidates})).value().reshaped({kGrid, kGrid});
}

void SelfAdaptiveConv::pin(int row, int col) {
    if (row < 0 || row >= kGrid || col < 0 || col >= kGrid) throw ConfigError("SelfAdaptiveConv::pin: index out of range");
    pinned_ = row * kGrid + col;
    logits.set_requires_grad(false);
}

void SelfAdaptiveConv::collect(ParamList& out, const std::string& prefix) const {
    for (int i = 0; i < kCandidates; ++i)
        out.push_back({prefix + ".candidate." + std::to_string(i / kGrid) + std::to_string(i % kGrid), candidates[i],
                       true, true});
    out.push_back({prefix + ".logits", logits, !pinned_.has_value(), false});
    mixer.collect(out, prefix + ".mixer");
}

}  // namespace msa2
