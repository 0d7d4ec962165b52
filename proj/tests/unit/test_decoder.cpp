#include <doctest.h>

#include <algorithm>

#include "gradcheck.hpp"
#include "msa2/decoder.hpp"
#include "msa2/ops.hpp"

using namespace msa2;
using testing::random_tensor;

namespace {

const KernelCandidateMatrix kMatrix = build_candidate_matrix(QuartileVector{0.1, 0.15, 0.2, 0.3});

void make_identity(SelfAdaptiveConv& m) {
    for (auto& c : m.candidates) {
        Tensor& k = c.mutable_value();
        k.fill(0.0);
        const int K = k.dim(0), C = k.dim(2);
        for (int ch = 0; ch < C; ++ch) k[(static_cast<std::size_t>(K / 2) * K + K / 2) * C + ch] = 1.0;
    }
    Tensor& w = m.mixer.weight.mutable_value();
    w.fill(0.0);
    for (int i = 0; i < w.dim(0); ++i) w[static_cast<std::size_t>(i) * w.dim(1) + i] = 1.0;
    m.mixer.bias.mutable_value().fill(0.0);
}

}  // namespace

TEST_CASE("decoder stage shapes") {
    Rng rng(1);
    DecoderStage s(128, 64, kMatrix, rng);
    for (const auto& g : s.group_convs) CHECK(g.in_channels() == 32);
    const Var skip(random_tensor({1, 4, 4, 128}, rng));
    CHECK(s.forward(skip, Var(), SelectionMode::soft).shape() == Shape{1, 8, 8, 64});
    CHECK(s.forward(skip, Var(random_tensor({1, 4, 4, 128}, rng)), SelectionMode::hard).shape() == Shape{1, 8, 8, 64});
    CHECK_THROWS_AS(s.forward(skip, Var(random_tensor({1, 2, 2, 128}, rng)), SelectionMode::soft), ShapeError);
    CHECK_THROWS_AS(s.forward(Var(random_tensor({1, 4, 4, 64}, rng)), Var(), SelectionMode::soft), ShapeError);
    CHECK_THROWS_AS(DecoderStage(30, 16, kMatrix, rng), ConfigError);
}

TEST_CASE("zero group convolutions leave only the upsampler bias") {
    Rng rng(2);
    DecoderStage s(32, 16, kMatrix, rng);
    for (auto& g : s.group_convs) {
        for (auto& c : g.candidates) c.mutable_value().fill(0.0);
        g.mixer.weight.mutable_value().fill(0.0);
        g.mixer.bias.mutable_value().fill(0.0);
    }
    s.fuse.reduce.bias.mutable_value().fill(0.0);
    s.fuse.expand.bias.mutable_value().fill(0.0);
    const Tensor bias = s.up_proj.bias.value();
    for (auto mode : {SelectionMode::soft, SelectionMode::hard}) {
        const Tensor y = s.forward(Var(random_tensor({2, 3, 5, 32}, rng, -4.0, 4.0)), Var(), mode).value();
        CHECK(y.shape() == Shape{2, 6, 10, 16});
        for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == bias[i % 16]);
    }
}

TEST_CASE("split and concat round trip through identity group convolutions") {
    Rng rng(3);
    DecoderStage s(24, 12, kMatrix, rng);
    for (auto& g : s.group_convs) make_identity(g);
    const Tensor x = random_tensor({2, 5, 4, 24}, rng);
    std::vector<Var> parts;
    for (int g = 0; g < kDecoderGroups; ++g)
        parts.push_back(s.group_convs[g].forward(ops::slice_channels(Var(x), g * 6, (g + 1) * 6), SelectionMode::hard));
    const Tensor back = ops::concat_channels(parts).value();
    CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("per-group kernel report") {
    Rng rng(4);
    DecoderStage s(32, 16, kMatrix, rng);
    for (const auto& k : s.selected_kernels()) CHECK(k.kernel_size == kMatrix.quantized[0][0]);

    // groups 0,1 favour row 0, groups 2,3 row 1 -> [1,1,3,3]
    const std::array<int, 4> rows{0, 0, 1, 1};
    for (int g = 0; g < 4; ++g) {
        Tensor& w = s.group_convs[g].logits.mutable_value();
        w.fill(0.0);
        w[rows[g] * 4 + g] = 2.0;
    }
    std::array<int, 4> report{};
    for (int g = 0; g < 4; ++g) report[g] = s.selected_kernels()[g].kernel_size;
    CHECK(report == std::array<int, 4>{1, 1, 3, 3});

    Rng noise(5);
    for (int trial = 0; trial < 20; ++trial) {
        for (auto& g : s.group_convs)
            for (auto& v : g.logits.mutable_value().values()) v = noise.uniform(-1.0, 1.0);
        for (const auto& k : s.selected_kernels()) {
            CHECK(k.kernel_size % 2 == 1);
            CHECK(k.kernel_size == kMatrix.quantized[k.row][k.col]);
        }
    }
}

TEST_CASE("decoder produces input-resolution logits") {
    Rng rng(6);
    const std::array<int, 4> dims{8, 16, 24, 32};
    for (bool multi : {true, false}) {
        Decoder d(dims, 3, 4, multi, kMatrix, rng);
        CHECK(d.multi_scale() == multi);
        StageFeatures f;
        for (int i = 0; i < 4; ++i) f.maps[i] = Var(random_tensor({2, 16 >> i, 16 >> i, dims[i]}, rng));
        const Var logits = d.decode(f, SelectionMode::soft);
        CHECK(logits.shape() == Shape{2, 64, 64, 3});
        const Tensor p = ops::softmax_last(logits).value();
        for (std::size_t i = 0; i < p.numel(); i += 3) CHECK(std::abs(p[i] + p[i + 1] + p[i + 2] - 1.0) < 1e-6);

        ParamList params;
        d.collect(params, "dec");
        const bool has_adaptive = std::any_of(params.begin(), params.end(),
                                              [](const ParamRef& r) { return r.name.find("logits") != std::string::npos; });
        CHECK(has_adaptive == multi);
    }
    CHECK_THROWS_AS(Decoder(dims, 1, 4, true, kMatrix, rng), ConfigError);
}
