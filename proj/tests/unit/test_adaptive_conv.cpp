#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "msa2/adaptive_conv.hpp"
#include "msa2/optim.hpp"

using namespace msa2;
using testing::check_gradients;
using testing::random_tensor;

namespace {

const KernelCandidateMatrix kMatrix = build_candidate_matrix(QuartileVector{0.2, 0.4, 0.6, 0.9});

Var probe(std::uint64_t seed, Shape shape = {1, 4, 4, 8}) {
    Rng rng(seed);
    return Var(random_tensor(std::move(shape), rng));
}

void set_logits(SelfAdaptiveConv& m, int row, int col, double margin) {
    Tensor& w = m.logits.mutable_value();
    w.fill(0.0);
    w[row * 4 + col] = margin;
}

}  // namespace

TEST_CASE("candidates follow the matrix and preserve spatial size") {
    Rng rng(1);
    SelfAdaptiveConv m(8, 6, kMatrix, rng);
    for (int b = 0; b < 4; ++b)
        for (int s = 0; s < 4; ++s) {
            const int k = kMatrix.quantized[b][s];
            CHECK(m.candidates[b * 4 + s].shape() == Shape{k, k, 8});
            m.pin(b, s);
            CHECK(m.forward(probe(2, {2, 5, 7, 8}), SelectionMode::hard).shape() == Shape{2, 5, 7, 6});
        }
    CHECK(m.forward(probe(2, {2, 5, 7, 8}), SelectionMode::soft).shape() == Shape{2, 5, 7, 6});
    CHECK_THROWS_AS(m.forward(probe(3, {1, 4, 4, 5}), SelectionMode::soft), ShapeError);
}

TEST_CASE("fresh module selects (0,0) and its selection is shift invariant") {
    Rng rng(2);
    SelfAdaptiveConv m(4, 4, kMatrix, rng);
    CHECK(m.selected_kernel() == KernelChoice{0, 0, kMatrix.quantized[0][0]});
    const Tensor p = m.selection_probabilities();
    for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 16.0).epsilon(1e-15));

    set_logits(m, 1, 2, 0.5);
    CHECK(m.selected_kernel() == KernelChoice{1, 2, kMatrix.quantized[1][2]});
    Rng noise(3);
    for (auto& v : m.logits.mutable_value().values()) v = noise.uniform(-2.0, 2.0);
    const KernelChoice before = m.selected_kernel();
    for (auto& v : m.logits.mutable_value().values()) v += 37.25;
    CHECK(m.selected_kernel() == before);

    // ties resolve to the smallest flat index
    m.logits.mutable_value().fill(1.0);
    m.logits.mutable_value()[7] = 3.0;
    m.logits.mutable_value()[12] = 3.0;
    CHECK(m.selected_kernel().row == 1);
    CHECK(m.selected_kernel().col == 3);
}

TEST_CASE("saturated soft selection equals hard selection") {
    Rng rng(4);
    SelfAdaptiveConv m(8, 8, kMatrix, rng);
    for (auto& c : m.candidates)
        for (auto& v : c.mutable_value().values()) v = rng.uniform(-0.5, 0.5);
    const Var x = probe(5);
    for (int b = 0; b < 4; ++b)
        for (int s = 0; s < 4; ++s) {
            set_logits(m, b, s, 1e3);
            const Tensor soft = m.forward(x, SelectionMode::soft).value();
            const Tensor hard = m.forward(x, SelectionMode::hard).value();
            CHECK(max_abs_diff(soft, hard) < 1e-5);
        }
}

TEST_CASE("zero weights give zero output") {
    Rng rng(6);
    SelfAdaptiveConv m(8, 3, kMatrix, rng);
    for (auto& c : m.candidates) c.mutable_value().fill(0.0);
    m.mixer.bias.mutable_value().fill(0.0);
    for (auto mode : {SelectionMode::soft, SelectionMode::hard}) {
        const Tensor y = m.forward(probe(7), mode).value();
        for (double v : y.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("soft mode gradients match finite differences") {
    for (std::uint64_t seed = 10; seed < 12; ++seed) {
        Rng rng(seed);
        SelfAdaptiveConv m(8, 5, kMatrix, rng);
        for (auto& v : m.logits.mutable_value().values()) v = rng.uniform(-1.0, 1.0);
        std::vector<Var> inputs{probe(seed + 100), m.logits, m.candidates[0], m.candidates[6], m.candidates[15],
                                m.mixer.weight, m.mixer.bias};
        const auto rep = check_gradients(
            [&](const std::vector<Var>& v) { return m.forward(v[0], SelectionMode::soft); }, inputs, seed, 1e-5);
        CHECK(rep.max_rel < 1e-4);
    }
}

TEST_CASE("selection logits get a gradient in soft mode and none when pinned") {
    Rng rng(20);
    SelfAdaptiveConv m(8, 8, kMatrix, rng);
    m.logits.set_requires_grad(true);
    backward(ops::sum_all(ops::mul(m.forward(probe(21), SelectionMode::soft), m.forward(probe(21), SelectionMode::soft))));
    REQUIRE(m.logits.has_grad());
    double norm = 0.0;
    for (double g : m.logits.grad().values()) norm += g * g;
    CHECK(norm > 0.0);

    SelfAdaptiveConv pinned(8, 8, kMatrix, rng);
    pinned.pin(2, 1);
    CHECK(pinned.selected_kernel() == KernelChoice{2, 1, kMatrix.quantized[2][1]});
    backward(ops::sum_all(pinned.forward(probe(22), SelectionMode::soft)));
    CHECK_FALSE(pinned.logits.has_grad());
    ParamList params;
    pinned.collect(params, "p");
    for (const auto& p : params)
        if (p.name == "p.logits") CHECK_FALSE(p.trainable);
}

TEST_CASE("selection probabilities stay normalized through optimizer steps") {
    Rng rng(30);
    SelfAdaptiveConv m(4, 4, kMatrix, rng);
    ParamList params;
    m.collect(params, "m");
    AdamW opt(params, {0.05, 0.0});
    for (int step = 0; step < 20; ++step) {
        opt.zero_grad();
        const Var y = m.forward(probe(31 + step, {2, 6, 6, 4}), SelectionMode::soft);
        backward(ops::sum_all(ops::mul(y, y)));
        opt.step();
        const Tensor probs = m.selection_probabilities();
        double s = 0.0;
        for (double p : probs.values()) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}
