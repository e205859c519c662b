#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cva/corpus_io.hpp"
#include "cva/dataset.hpp"
#include "support/fixtures.hpp"

using namespace cva;
using namespace cva::data;

TEST_CASE("split manifests reproduce the Table I episode counts") {
    const auto eps = fixtures::synthetic_corpus(9, 5, 7);
    const auto sc = make_splits(eps, SplitMode::scenario);
    CHECK(sc.train.size() == 25);
    CHECK(sc.val.size() == 5);
    CHECK(sc.test.size() == 15);
    CHECK(check_manifest(sc, eps).empty());

    const auto ep = make_splits(eps, SplitMode::episode);
    CHECK(ep.train.size() == 27);
    CHECK(ep.val.size() == 9);
    CHECK(ep.test.size() == 9);
    CHECK(check_manifest(ep, eps).empty());

    // stats come from the training split only
    std::vector<StateVector> rows;
    for (const auto& e : eps)
        if (std::find(ep.train.begin(), ep.train.end(), e.id()) != ep.train.end())
            rows.insert(rows.end(), e.states.begin(), e.states.end());
    CHECK(ep.stats.rows == rows.size());
    CHECK(ep.stats.fingerprint() == dataset_stats(std::span<const StateVector>(rows)).fingerprint());
}

TEST_CASE("scenario split never shares a scenario; episode split covers all") {
    for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
        const auto eps = fixtures::synthetic_corpus(9, 5, seed);
        const SplitRatios odd{0.5, 0.25, 0.25};
        CHECK(check_manifest(make_splits(eps, SplitMode::scenario, odd, seed), eps).empty());
        CHECK(check_manifest(make_splits(eps, SplitMode::episode, odd, seed), eps).empty());
    }
    const auto few = fixtures::synthetic_corpus(9, 2, 0);
    CHECK_THROWS_AS(make_splits(few, SplitMode::episode), std::invalid_argument);
    CHECK(parse_split_mode("scenario") == SplitMode::scenario);
    CHECK_THROWS(parse_split_mode("random"));
}

TEST_CASE("dataset stats match a flat-array oracle") {
    const auto eps = fixtures::synthetic_corpus(3, 4, 2);
    std::vector<double> flat[3];
    for (const auto& e : eps)
        for (const auto& s : e.states)
            for (int d = 0; d < 3; ++d) flat[d].push_back(s[d]);
    const Stats st = dataset_stats(std::span<const Episode>(eps));
    for (int d = 0; d < 3; ++d) {
        long double sum = 0, sq = 0;
        for (double v : flat[d]) sum += v;
        const long double mean = sum / flat[d].size();
        for (double v : flat[d]) sq += (v - mean) * (v - mean);
        CHECK(st.mean[d] == doctest::Approx(static_cast<double>(mean)).epsilon(1e-12));
        CHECK(st.std[d] == doctest::Approx(std::sqrt(static_cast<double>(sq / flat[d].size()))).epsilon(1e-12));
        CHECK(st.min[d] == *std::min_element(flat[d].begin(), flat[d].end()));
        CHECK(st.max[d] == *std::max_element(flat[d].begin(), flat[d].end()));
    }
    CHECK_THROWS_AS(dataset_stats(std::span<const StateVector>()), std::invalid_argument);
}

TEST_CASE("standardization round-trip and zero-std passthrough") {
    const auto eps = fixtures::synthetic_corpus(3, 3, 4);
    const Stats st = dataset_stats(std::span<const Episode>(eps));
    for (const auto& e : eps) {
        const auto z = standardize_states(e.states, st);
        const auto back = destandardize_states(z, st);
        for (std::size_t i = 0; i < z.size(); ++i)
            for (int d = 0; d < 3; ++d) CHECK(std::abs(back[i][d] - e.states[i][d]) <= 1e-9);
    }
    std::vector<StateVector> constant(10, StateVector{0.3, -0.2, 0.1});
    const Stats flat = dataset_stats(std::span<const StateVector>(constant));
    CHECK(standardize(constant[0], flat) == constant[0]);
}

TEST_CASE("window counts match enumeration for every length up to 200") {
    for (std::size_t n : {1u, 3u, 16u, 50u})
        for (std::size_t stride : {1u, 2u, 5u})
            for (std::size_t len = 0; len <= 200; ++len) {
                std::size_t brute = 0;
                for (std::size_t start = 0; start + n < len; start += stride) ++brute;
                REQUIRE(window_count(len, n, stride) == brute);
            }
    CHECK_THROWS(window_count(10, 0, 1));
}

TEST_CASE("window targets are the raw next state") {
    Episode e = fixtures::synthetic_corpus(1, 1, 9).front();
    e.states.resize(51);
    const Stats st = dataset_stats(std::span<const StateVector>(e.states));
    const auto w = slide_windows(e, 50, 1, st);
    REQUIRE(w.size() == 1);
    CHECK(w[0].target == e.states[50]);
    CHECK(w[0].goal_frame_index == 50);

    const auto e2 = fixtures::synthetic_corpus(1, 1, 3).front();
    const auto ws = slide_windows(e2, 8, 3, st);
    for (const auto& s : ws) {
        CHECK(s.target == e2.states[s.start_index + 8]);
        CHECK(s.states.size() == 8);
        CHECK(s.states[0] == standardize(e2.states[s.start_index], st));
    }
}

TEST_CASE("frame normalization matches a per-pixel loop") {
    Image img(5, 4);
    std::mt19937 rng(1);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    const auto norm = ChannelNorm::imagenet();
    const auto f = normalize_frame(img, norm);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) {
                const double expected = (img.pixels[(y * 5 + x) * 3 + c] / 255.0 - norm.mean[c]) / norm.std[c];
                CHECK(f.at(c, y, x) == doctest::Approx(expected).epsilon(1e-12));
            }
    Image gray(4, 4, 1);
    CHECK_THROWS_AS(normalize_frame(gray, norm), std::invalid_argument);
}

TEST_CASE("corpus io round trip and corrupted-episode handling") {
    namespace fs = std::filesystem;
    const fs::path root = fixtures::temp_dir("corpus_io");
    auto eps = fixtures::synthetic_corpus(3, 3, 5, true);
    for (const auto& e : eps) io::write_episode(root, e, {{"seed", 1}});

    const auto back = io::read_episode(io::episode_dir(root, 1, 2), true);
    CHECK((back.states == eps[1].states));
    CHECK((back.frames == eps[1].frames));
    CHECK(back.goal == eps[1].goal);

    std::ofstream(io::episode_dir(root, 2, 1) / "states.csv") << "t,translation,rotation,knob\n0,abc,1,2\n";
    const auto scan = io::scan_corpus(root);
    CHECK(scan.episodes.size() == 8);
    CHECK(scan.warnings.size() == 1);
    CHECK_THROWS(io::scan_corpus(root / "missing"));

    const auto m = make_splits(scan.episodes, SplitMode::scenario, {}, 0);
    const auto m2 = io::manifest_from_json(io::manifest_to_json(m));
    CHECK(m2.train == m.train);
    CHECK(m2.stats.fingerprint() == m.stats.fingerprint());
    fs::remove_all(root);
}
