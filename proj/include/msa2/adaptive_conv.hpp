#pragma once

#include <array>
#include <optional>
#include <string>

#include "msa2/fingerprint.hpp"
#include "msa2/nn.hpp"

namespace msa2 {

// soft: softmax-weighted mixture of all 16 candidates (training).
// hard: only the argmax candidate (deployment).
enum class SelectionMode { soft, hard };

struct KernelChoice {
    int row = 0;
    int col = 0;
    int kernel_size = 1;
    bool operator==(const KernelChoice&) const = default;
};

// Convolution whose spatial extent is picked from a 4x4 grid of candidate
// sizes by a learnable 4x4 logit matrix. Each candidate is a per-channel
// (depthwise) kernel; a shared 1x1 mixer maps in -> out channels.
class SelfAdaptiveConv {
public:
    static constexpr int kGrid = 4;
    static constexpr int kCandidates = kGrid * kGrid;

    SelfAdaptiveConv() = default;
    SelfAdaptiveConv(int in_channels, int out_channels, const KernelCandidateMatrix& matrix, Rng& rng);

    Var forward(const Var& x, SelectionMode mode) const;

    // Flat row-major argmax of the logits, ties to the smallest index.
    // A pinned module reports its pinned candidate.
    KernelChoice selected_kernel() const;
    // softmax over the 16 flattened logits, shaped [4, 4]
    Tensor selection_probabilities() const;

    // Fixes the candidate used in every mode and freezes the logits.
    void pin(int row, int col);
    bool pinned() const { return pinned_.has_value(); }

    int in_channels() const { return in_channels_; }
    int out_channels() const { return mixer.out_features(); }
    const KernelCandidateMatrix& matrix() const { return matrix_; }

    void collect(ParamList& out, const std::string& prefix) const;

    std::array<Var, kCandidates> candidates;  // candidates[b*4+s] is [k, k, in]
    Var logits;                               // [4, 4]
    Linear mixer;                             // in -> out, houses W^o and b^o

private:
    int in_channels_ = 0;
    KernelCandidateMatrix matrix_;
    std::optional<int> pinned_;
};

KernelChoice flat_argmax(const Tensor& logits, const KernelCandidateMatrix& matrix);

}  // namespace msa2
