#include <doctest.h>

#include <random>

#include "cva/lstm_baseline.hpp"
#include "cva/policy.hpp"
#include "support/oracle.hpp"
#include "support/tally.hpp"

using namespace cva::policy;

namespace {

PolicyConfig tiny() {
    PolicyConfig c;
    c.seq_len = 3;
    c.tokens = 2;
    c.dim = 4;
    c.cross_heads = 1;
    c.tf_layers = 1;
    c.tf_heads = 1;
    c.ffn_dim = 8;
    c.head_dims = {6, 3};
    return c;
}

PolicyConfig small() {
    PolicyConfig c;
    c.seq_len = 5;
    c.tokens = 3;
    c.dim = 8;
    c.cross_heads = 2;
    c.tf_layers = 2;
    c.tf_heads = 4;
    c.ffn_dim = 16;
    c.head_dims = {12, 6, 3};
    return c;
}

struct Inputs {
    torch::Tensor frames, states, goal;
};

Inputs random_inputs(const PolicyConfig& c, int batch, std::uint64_t seed) {
    torch::manual_seed(seed);
    return {torch::randn({batch, c.seq_len, c.tokens, c.dim}, kDType), torch::randn({batch, c.seq_len, 3}, kDType),
            torch::randn({batch, c.dim}, kDType)};
}

// Perturb weights away from their initial values so LayerNorm affine terms and biases matter.
void jitter(torch::nn::Module& m, std::uint64_t seed) {
    torch::manual_seed(seed);
    torch::NoGradGuard g;
    for (auto& p : m.parameters()) p.add_(torch::randn_like(p) * 0.3);
}

std::vector<oracle::Mat> frames_of(const torch::Tensor& f, int b) {
    std::vector<oracle::Mat> out;
    for (int64_t t = 0; t < f.size(1); ++t) out.push_back(oracle::to_mat(f[b][t]));
    return out;
}

}  // namespace

TEST_CASE("masks") {
    const auto m = build_cross_mask(3, 2, -1e9);
    REQUIRE(m.sizes() == torch::IntArrayRef({3, 6}));
    for (int t = 0; t < 3; ++t)
        for (int k = 0; k < 6; ++k) CHECK(m[t][k].item<double>() == (k / 2 <= t ? 0.0 : -1e9));
    const auto c = build_causal_mask(4);
    for (int t = 0; t < 4; ++t)
        for (int k = 0; k < 4; ++k) CHECK(c[t][k].item<double>() == (k <= t ? 0.0 : -1e9));
}

TEST_CASE("multi-head attention matches the scalar oracle") {
    torch::manual_seed(0);
    MultiHeadAttention mha(8, 2);
    mha->to(kDType);
    const auto q = torch::randn({1, 4, 8}, kDType), kv = torch::randn({1, 6, 8}, kDType);
    const auto mask = build_cross_mask(4, 1, -1e9).narrow(1, 0, 4);
    const auto full = torch::cat({mask, torch::zeros({4, 2}, kDType)}, 1);
    const auto out = mha->forward(q, kv, full);
    const auto ref = oracle::attention(*mha, oracle::to_mat(q[0]), oracle::to_mat(kv[0]), 2,
                                       [](std::size_t i, std::size_t j) { return j <= i || j >= 4; });
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) CHECK(out[0][i][j].item<double>() == doctest::Approx(ref[i][j]).epsilon(1e-10));
    const auto trace = mha->forward_trace(q, kv, full);
    CHECK(torch::allclose(trace.weights.sum(-1), torch::ones({1, 2, 4}, kDType)));
    CHECK(trace.weights[0][0][0][1].item<double>() == 0.0);
}

TEST_CASE("full forward matches the scalar oracle") {
    for (const auto& cfg : {tiny(), small()}) {
        torch::manual_seed(1);
        CvaPolicy model(cfg);
        jitter(model, 2);
        model.eval();
        const auto in = random_inputs(cfg, 2, 3);
        for (bool bypass : {false, true}) {
            const auto out = model.forward(in.frames, in.states, in.goal, {bypass});
            for (int b = 0; b < 2; ++b) {
                const auto ref = oracle::forward(model, frames_of(in.frames, b), oracle::to_mat(in.states[b]),
                                                 oracle::to_vec(in.goal[b]), bypass);
                for (int j = 0; j < 3; ++j) CHECK(out[b][j].item<double>() == doctest::Approx(ref[j]).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("stage outputs are causal in time") {
    const auto cfg = small();
    torch::manual_seed(4);
    CvaPolicy model(cfg);
    model.eval();
    auto in = random_inputs(cfg, 1, 5);
    const auto base = model.forward_stages(in.frames, in.states, in.goal);
    for (int k = 1; k < cfg.seq_len; ++k) {
        auto frames = in.frames.clone();
        auto states = in.states.clone();
        frames.select(1, k).add_(torch::randn_like(frames.select(1, k)));
        states.select(1, k).add_(1.0);
        const auto s = model.forward_stages(frames, states, in.goal);
        for (const auto& [a, b] : {std::pair{base.fused, s.fused}, std::pair{base.contextual, s.contextual},
                                   std::pair{base.conditioned, s.conditioned}}) {
            CHECK((a.narrow(1, 0, k) - b.narrow(1, 0, k)).abs().max().item<double>() <= 1e-12);
            CHECK((a.narrow(1, k, 1) - b.narrow(1, k, 1)).abs().max().item<double>() > 1e-6);
        }
    }
}

TEST_CASE("goal fusion gate and bypass") {
    const auto cfg = small();
    torch::manual_seed(6);
    CvaPolicy model(cfg);
    model.eval();
    const auto in = random_inputs(cfg, 2, 7);
    const auto s = model.forward_stages(in.frames, in.states, in.goal);
    const auto gate = model.fusion->gate_values(s.contextual, in.goal);
    CHECK(gate.min().item<double>() > 0.0);
    CHECK(gate.max().item<double>() < 1.0);
    const auto bypass = model.gated_goal_fusion(s.contextual, in.goal, true);
    CHECK(torch::allclose(bypass, model.fusion->norm(s.contextual)));
    const auto other = model.forward(in.frames, in.states, torch::randn_like(in.goal), {true});
    CHECK(other.equal(model.forward(in.frames, in.states, in.goal, {true})));
}

TEST_CASE("action head reads only the last timestep") {
    ActionHead head(4, std::vector<int>{5, 3});
    head->to(kDType);
    auto z = torch::randn({2, 3, 4}, kDType);
    const auto a = head->forward(z);
    z.narrow(1, 0, 2).fill_(7.0);
    CHECK(a.equal(head->forward(z)));
}

TEST_CASE("shape and config validation") {
    const auto cfg = tiny();
    CvaPolicy model(cfg);
    const auto in = random_inputs(cfg, 1, 0);
    CHECK_THROWS_AS(model.forward(in.frames.narrow(1, 0, 2), in.states.narrow(1, 0, 2), in.goal),
                    std::invalid_argument);
    CHECK_THROWS_AS(model.project_states(torch::zeros({1, 3, 4}, kDType)), std::invalid_argument);
    PolicyConfig bad = cfg;
    bad.cross_heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.head_dims = {4, 2};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK(PolicyConfig::from_json(small().to_json()).to_json() == small().to_json());
}

TEST_CASE("parameter count matches the closed-form tally") {
    for (const auto& cfg : {tiny(), small(), PolicyConfig{}}) {
        CvaPolicy model(cfg);
        CHECK(model.trainable_parameter_count() == tally::trainable(cfg));
    }
    const auto full = count_params(PolicyConfig{}, tally::vit_small_14());
    CHECK(full.trainable == 6814339);
    CHECK(std::abs(full.trainable - 6.82e6) / 6.82e6 < 0.03);
}

TEST_CASE("dropout is active in training mode only") {
    const auto cfg = small();
    CvaPolicy model(cfg);
    const auto in = random_inputs(cfg, 2, 8);
    model.eval();
    CHECK(model.forward(in.frames, in.states, in.goal).equal(model.forward(in.frames, in.states, in.goal)));
    model.train();
    CHECK_FALSE(model.forward(in.frames, in.states, in.goal).equal(model.forward(in.frames, in.states, in.goal)));
}

TEST_CASE("lstm baseline") {
    LstmBaseline lstm({16, 128, 2});
    CHECK(lstm.kind() == "lstm");
    CHECK_FALSE(lstm.uses_vision());
    Batch b;
    b.states = torch::randn({4, 16, 3}, kDType);
    CHECK(lstm.predict(b).sizes() == torch::IntArrayRef({4, 3}));
    CHECK_THROWS_AS(lstm.forward(torch::randn({4, 16, 2}, kDType)), std::invalid_argument);
    // 2 layers, hidden 128: 4h(in + h + 2) per layer plus the readout
    CHECK(lstm.trainable_parameter_count() == 4 * 128 * (3 + 128 + 2) + 4 * 128 * (128 + 128 + 2) + 128 * 3 + 3);
}
