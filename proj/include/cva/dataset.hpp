#pragma once

// Demonstration episodes, split protocols, z-scoring and sliding windows.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cva/image.hpp"
#include "cva/state.hpp"

namespace cva::data {

struct Episode {
    int scenario_id = 1;  // 1-based; scenario k drives to target P<k>
    int repetition_id = 1;
    std::vector<Image> frames;  // may be empty when loaded states-only
    std::vector<StateVector> states;
    Image goal;

    // "<scenario>/<repetition>", matching the corpus directory layout
    std::string id() const;
    std::size_t length() const { return states.size(); }
};

std::string episode_id(int scenario, int repetition);

struct Stats {
    std::array<double, kStateDim> mean{};
    std::array<double, kStateDim> std{};
    std::array<double, kStateDim> min{};
    std::array<double, kStateDim> max{};
    std::size_t rows = 0;

    // Stable hash of the values; checkpoints carry it to detect mismatched corpora.
    std::string fingerprint() const;
};

enum class SplitMode { episode, scenario };
SplitMode parse_split_mode(const std::string& s);
std::string to_string(SplitMode mode);

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

struct SplitManifest {
    SplitMode mode = SplitMode::episode;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    Stats stats;  // training split only
};

SplitManifest make_splits(std::span<const Episode> episodes, SplitMode mode, SplitRatios ratios = {},
                          std::uint64_t seed = 0);

// Empty when the manifest satisfies its mode's invariants against `episodes`.
std::vector<std::string> check_manifest(const SplitManifest& manifest, std::span<const Episode> episodes);

Stats dataset_stats(std::span<const StateVector> rows);
Stats dataset_stats(std::span<const Episode> episodes);
Stats dataset_stats(std::span<const Episode* const> episodes);

StateVector standardize(const StateVector& x, const Stats& stats);
StateVector destandardize(const StateVector& z, const Stats& stats);
std::vector<StateVector> standardize_states(std::span<const StateVector> states, const Stats& stats);
std::vector<StateVector> destandardize_states(std::span<const StateVector> states, const Stats& stats);

struct ChannelNorm {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> std{0.5, 0.5, 0.5};

    static ChannelNorm imagenet() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }
    static ChannelNorm stub() { return {}; }
};

NormalizedFrame normalize_frame(const Image& image, const ChannelNorm& norm);

// Window of N standardized states plus the raw next state as the target.
// Frames are referenced as indices [start_index, start_index + N) of the episode.
struct WindowSample {
    std::string episode_id;
    std::size_t start_index = 0;
    std::vector<StateVector> states;
    StateVector target;
    std::size_t goal_frame_index = 0;
};

std::size_t window_count(std::size_t length, std::size_t n, std::size_t stride);

std::vector<WindowSample> slide_windows(const Episode& episode, std::size_t n, std::size_t stride,
                                        const Stats& stats);

// Index of the frame used as the goal image: the final frame.
std::size_t select_goal_image(const Episode& episode);

}  // namespace cva::data
