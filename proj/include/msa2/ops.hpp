#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msa2/autograd.hpp"

namespace msa2::ops {

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var reshape(const Var& x, Shape shape);

// x[..., C] * s, where s is [C] (broadcast over every leading index) or
// [N, C] for x of shape [N, H, W, C].
Var mul_channels(const Var& x, const Var& s);

// y = x W + b over the last dimension. W is [in, out]; b may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_last(const Var& x);

// [N, H, W, C] -> [N, H/p, W/p, p*p*C], channel order (dy, dx, c).
Var space_to_depth(const Var& x, int p);

// Per-channel spatial convolution, odd kernel [k, k, C], stride 1, with
// (k-1)/2 cells of edge-replicated padding on every side.
Var depthwise_conv2d(const Var& x, const Var& kernel);

// Bilinear resize by an integer factor (half-pixel centres).
Var upsample_bilinear(const Var& x, int factor);

// [N, H, W, C] -> [N, C]
Var global_avg_pool(const Var& x);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int end);

// Zero-centre embeds each odd [k, k, C] candidate into the largest size and
// sums them weighted by probs (flat, one weight per candidate).
Var mix_kernels(const Var& probs, const std::vector<Var>& candidates);

// Stripe self-attention on a fused qkv map [N, H, W, 3C]. The first half of
// the heads attend within horizontal stripes of `stripe` rows, the second
// half within vertical stripes of `stripe` columns. A trailing stripe may
// be narrower when the extent is not a multiple. Returns [N, H, W, C].
Var stripe_attention(const Var& qkv, int heads, int stripe);

// Materialized attention matrices of stripe_attention, one per
// (sample, head, stripe) in that nesting order. Each is [L, L].
std::vector<Tensor> stripe_attention_weights(const Tensor& qkv, int heads, int stripe);

// ce_weight * mean cross-entropy + dice_weight * (1 - mean soft Dice over
// foreground classes 1..K-1). logits [N, H, W, K]; labels has N*H*W entries.
Var segmentation_loss(const Var& logits, std::span<const std::uint8_t> labels, double ce_weight,
                      double dice_weight);

Var sum_all(const Var& x);
// sum(x * w) for a constant w of the same shape
Var weighted_sum(const Var& x, const Tensor& w);

}  // namespace msa2::ops
