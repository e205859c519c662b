#include <doctest.h>

#include <cstdlib>
#include <random>

#include "cva/encoder.hpp"
#include "cva/sim.hpp"

using namespace cva;
using namespace cva::encoder;

namespace {

NormalizedFrame random_frame(int size, std::uint64_t seed) {
    Image img(size, size);
    std::mt19937_64 rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    return data::normalize_frame(img, data::ChannelNorm::stub());
}

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
    return (a * b).sum().item<double>() / (a.norm().item<double>() * b.norm().item<double>());
}

}  // namespace

TEST_CASE("stub encoder token layout matches a per-patch projection loop") {
    EncoderConfig cfg;  // 64 px, patch 16, d 64
    StubEncoder enc(cfg);
    CHECK(enc.tokens_per_frame() == 17);
    CHECK(enc.dim() == 64);
    CHECK(enc.trainable_parameter_count() == 0);

    const auto f = random_frame(64, 3);
    const auto tokens = enc.encode_frames(std::span(&f, 1));
    REQUIRE(tokens.sizes() == torch::IntArrayRef({1, 17, 64}));

    const auto w = enc.projection();
    const auto wa = w.accessor<double, 2>();
    std::vector<double> mean_patch(3 * 16 * 16, 0.0);
    for (int gy = 0; gy < 4; ++gy)
        for (int gx = 0; gx < 4; ++gx) {
            std::vector<double> patch;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x) patch.push_back(f.at(c, gy * 16 + y, gx * 16 + x));
            for (std::size_t i = 0; i < patch.size(); ++i) mean_patch[i] += patch[i] / 16.0;
            for (int j = 0; j < 64; j += 9) {
                double acc = 0.0;
                for (std::size_t i = 0; i < patch.size(); ++i) acc += patch[i] * wa[static_cast<int64_t>(i)][j];
                CHECK(tokens[0][1 + gy * 4 + gx][j].item<double>() == doctest::Approx(acc).epsilon(1e-9));
            }
        }
    for (int j = 0; j < 64; j += 7) {
        double acc = 0.0;
        for (std::size_t i = 0; i < mean_patch.size(); ++i) acc += mean_patch[i] * wa[static_cast<int64_t>(i)][j];
        CHECK(tokens[0][0][j].item<double>() == doctest::Approx(acc).epsilon(1e-9));
    }
    CHECK(enc.encode_goal(f).equal(tokens[0][0]));
}

TEST_CASE("stub encoder is deterministic per seed and rejects bad inputs") {
    EncoderConfig cfg;
    StubEncoder a(cfg), b(cfg);
    CHECK(a.projection().equal(b.projection()));
    cfg.seed = 1;
    CHECK_FALSE(StubEncoder(cfg).projection().equal(a.projection()));

    const auto wrong = random_frame(32, 0);
    CHECK_THROWS_AS(a.encode_frames(std::span(&wrong, 1)), std::invalid_argument);
    EncoderConfig bad;
    bad.image_size = 60;
    CHECK_THROWS_AS(StubEncoder{bad}, std::invalid_argument);
    bad.backend = "resnet";
    CHECK_THROWS_AS(make_encoder(bad), std::invalid_argument);
}

TEST_CASE("goal embeddings separate targets on rendered frames") {
    const auto map = sim::build_phantom(0);
    EncoderConfig cfg;
    StubEncoder enc(cfg);
    auto goal_of = [&](int target, std::int64_t seed) {
        auto ep = sim::generate_episode(map, target, seed, 0.05, sim::SimConfig{.resolution = 64});
        return enc.encode_goal(data::normalize_frame(ep.frames.back(), enc.channel_norm()));
    };
    const auto a1 = goal_of(0, 1), a2 = goal_of(0, 2), b = goal_of(8, 1);
    CHECK(cosine(a1, a2) > cosine(a1, b));
}

TEST_CASE("pretrained backbone shapes and frozen parameters") {
    auto cfg = EncoderConfig::pretrained_defaults();
    const char* env = std::getenv("CVA_DINOV2_WEIGHTS");
    if (!env || !*env) {
        CHECK_THROWS_AS(PretrainedEncoder{cfg}, std::runtime_error);
        cfg.random_init = true;
    }
    PretrainedEncoder enc(cfg);
    CHECK(enc.tokens_per_frame() == 257);
    CHECK(enc.dim() == 384);
    CHECK(enc.frozen_parameter_count() == 22056576);
    CHECK(enc.trainable_parameter_count() == 0);

    const auto f = [] {
        Image img(224, 224);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 31 % 251);
        return data::normalize_frame(img, data::ChannelNorm::imagenet());
    }();
    const auto tokens = enc.encode_frames(std::span(&f, 1));
    CHECK(tokens.sizes() == torch::IntArrayRef({1, 257, 384}));
    CHECK((tokens.scalar_type() == torch::kFloat64));
    CHECK(torch::isfinite(tokens).all().item<bool>());

    // a non-native grid goes through the interpolated position embedding
    cfg.image_size = 112;
    PretrainedEncoder small(cfg);
    Image img(112, 112);
    const auto g = data::normalize_frame(img, data::ChannelNorm::imagenet());
    CHECK(small.encode_frames(std::span(&g, 1)).sizes() == torch::IntArrayRef({1, 65, 384}));
}
