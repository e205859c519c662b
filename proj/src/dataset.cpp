#include "cva/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "cva/hash.hpp"

namespace cva::data {
namespace {

bool is_default(const SplitRatios& r) {
    constexpr double kTol = 1e-12;
    return std::abs(r.train - 0.6) < kTol && std::abs(r.val - 0.2) < kTol && std::abs(r.test - 0.2) < kTol;
}

// Partition `count` items into (train, val, test) sizes with val and test non-empty.
std::array<std::size_t, 3> allocate(std::size_t count, const SplitRatios& r) {
    const double total = r.train + r.val + r.test;
    if (!(r.train > 0.0) || !(r.val > 0.0) || !(r.test > 0.0))
        throw std::invalid_argument("split ratios must all be positive");
    auto share = [&](double w) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w / total * static_cast<double>(count))));
    };
    const std::size_t val = share(r.val);
    const std::size_t test = share(r.test);
    if (val + test >= count) throw std::invalid_argument("split ratios leave no training items");
    return {count - val - test, val, test};
}

// Default partition of the nine scenarios: P1-P4 and P7 / P5 / P6, P8, P9.
const std::array<std::vector<int>, 3> kDefaultScenarioSplit{
    std::vector<int>{1, 2, 3, 4, 7}, std::vector<int>{5}, std::vector<int>{6, 8, 9}};

}  // namespace

std::string episode_id(int scenario, int repetition) {
    return std::to_string(scenario) + "/" + std::to_string(repetition);
}

std::string Episode::id() const { return episode_id(scenario_id, repetition_id); }

std::string Stats::fingerprint() const {
    std::string blob = std::to_string(rows);
    for (int d = 0; d < kStateDim; ++d) {
        for (double v : {mean[d], std[d], min[d], max[d]}) blob += "," + exact(v);
    }
    return hex64(fnv1a64(blob));
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "episode" || s == "episode-based") return SplitMode::episode;
    if (s == "scenario" || s == "scenario-based") return SplitMode::scenario;
    throw std::invalid_argument("unknown split mode '" + s + "' (expected episode|scenario)");
}

std::string to_string(SplitMode mode) { return mode == SplitMode::episode ? "episode" : "scenario"; }

SplitManifest make_splits(std::span<const Episode> episodes, SplitMode mode, SplitRatios ratios, std::uint64_t seed) {
    if (episodes.size() < 3) throw std::invalid_argument("make_splits: need at least 3 episodes");

    std::map<int, std::vector<const Episode*>> by_scenario;
    for (const Episode& ep : episodes) by_scenario[ep.scenario_id].push_back(&ep);
    for (auto& [scenario, eps] : by_scenario) {
        std::sort(eps.begin(), eps.end(),
                  [](const Episode* a, const Episode* b) { return a->repetition_id < b->repetition_id; });
    }

    std::mt19937_64 rng(seed);
    SplitManifest m;
    m.mode = mode;
    std::array<std::vector<std::string>*, 3> lists{&m.train, &m.val, &m.test};

    if (mode == SplitMode::scenario) {
        if (by_scenario.size() < 3)
            throw std::invalid_argument("make_splits: scenario-based split needs at least 3 distinct scenarios");
        std::vector<int> scenarios;
        for (const auto& [s, _] : by_scenario) scenarios.push_back(s);

        std::array<std::vector<int>, 3> groups;
        if (is_default(ratios) && scenarios == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}) {
            groups = kDefaultScenarioSplit;
        } else {
            std::shuffle(scenarios.begin(), scenarios.end(), rng);
            const auto sizes = allocate(scenarios.size(), ratios);
            std::size_t k = 0;
            for (std::size_t g = 0; g < 3; ++g) {
                for (std::size_t i = 0; i < sizes[g]; ++i) groups[g].push_back(scenarios[k++]);
                std::sort(groups[g].begin(), groups[g].end());
            }
        }
        for (std::size_t g = 0; g < 3; ++g) {
            for (int s : groups[g])
                for (const Episode* ep : by_scenario.at(s)) lists[g]->push_back(ep->id());
        }
    } else {
        for (auto& [scenario, eps] : by_scenario) {
            if (eps.size() < 3)
                throw std::invalid_argument("make_splits: episode-based split needs >= 3 repetitions of scenario " +
                                            std::to_string(scenario));
            // repetitions are assigned in order (1-3 / 4 / 5 for five repetitions);
            // non-default ratios permute them first
            std::vector<const Episode*> order = eps;
            if (!is_default(ratios)) std::shuffle(order.begin(), order.end(), rng);
            const auto sizes = allocate(order.size(), ratios);
            std::size_t k = 0;
            for (std::size_t g = 0; g < 3; ++g)
                for (std::size_t i = 0; i < sizes[g]; ++i) lists[g]->push_back(order[k++]->id());
        }
    }

    std::set<std::string> train_ids(m.train.begin(), m.train.end());
    std::vector<const Episode*> train_eps;
    for (const Episode& ep : episodes)
        if (train_ids.count(ep.id())) train_eps.push_back(&ep);
    m.stats = dataset_stats(std::span<const Episode* const>(train_eps));
    return m;
}

std::vector<std::string> check_manifest(const SplitManifest& manifest, std::span<const Episode> episodes) {
    std::vector<std::string> problems;
    std::map<std::string, int> scenario_of;
    for (const Episode& ep : episodes) scenario_of[ep.id()] = ep.scenario_id;

    const std::array<const std::vector<std::string>*, 3> lists{&manifest.train, &manifest.val, &manifest.test};
    const std::array<const char*, 3> names{"train", "val", "test"};
    std::array<std::set<int>, 3> scenarios;
    std::set<std::string> seen;
    for (std::size_t g = 0; g < 3; ++g) {
        if (lists[g]->empty()) problems.push_back(std::string(names[g]) + " split is empty");
        for (const auto& id : *lists[g]) {
            if (!seen.insert(id).second) problems.push_back("episode " + id + " appears in more than one split");
            auto it = scenario_of.find(id);
            if (it == scenario_of.end()) {
                problems.push_back("unknown episode " + id);
                continue;
            }
            scenarios[g].insert(it->second);
        }
    }
    std::set<int> all;
    for (const auto& [_, s] : scenario_of) all.insert(s);

    if (manifest.mode == SplitMode::episode) {
        for (std::size_t g = 0; g < 3; ++g)
            if (scenarios[g] != all) problems.push_back(std::string(names[g]) + " split does not cover every scenario");
    } else {
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = a + 1; b < 3; ++b)
                for (int s : scenarios[a])
                    if (scenarios[b].count(s))
                        problems.push_back("scenario " + std::to_string(s) + " shared by " + names[a] + " and " + names[b]);
    }
    return problems;
}

Stats dataset_stats(std::span<const StateVector> rows) {
    if (rows.empty()) throw std::invalid_argument("dataset_stats: empty subset");
    Stats s;
    s.rows = rows.size();
    const double n = static_cast<double>(rows.size());
    for (int d = 0; d < kStateDim; ++d) {
        double sum = 0.0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const StateVector& r : rows) {
            sum += r[d];
            lo = std::min(lo, r[d]);
            hi = std::max(hi, r[d]);
        }
        const double mean = lo == hi ? lo : sum / n;
        double sq = 0.0;
        for (const StateVector& r : rows) sq += (r[d] - mean) * (r[d] - mean);
        s.mean[d] = mean;
        s.std[d] = std::sqrt(sq / n);
        s.min[d] = lo;
        s.max[d] = hi;
    }
    return s;
}

Stats dataset_stats(std::span<const Episode* const> episodes) {
    std::vector<StateVector> rows;
    for (const Episode* ep : episodes) rows.insert(rows.end(), ep->states.begin(), ep->states.end());
    return dataset_stats(std::span<const StateVector>(rows));
}

Stats dataset_stats(std::span<const Episode> episodes) {
    std::vector<const Episode*> ptrs;
    for (const Episode& ep : episodes) ptrs.push_back(&ep);
    return dataset_stats(std::span<const Episode* const>(ptrs));
}

StateVector standardize(const StateVector& x, const Stats& stats) {
    StateVector z;
    for (int d = 0; d < kStateDim; ++d) z[d] = stats.std[d] > 0.0 ? (x[d] - stats.mean[d]) / stats.std[d] : x[d];
    return z;
}

StateVector destandardize(const StateVector& z, const Stats& stats) {
    StateVector x;
    for (int d = 0; d < kStateDim; ++d) x[d] = stats.std[d] > 0.0 ? z[d] * stats.std[d] + stats.mean[d] : z[d];
    return x;
}

std::vector<StateVector> standardize_states(std::span<const StateVector> states, const Stats& stats) {
    std::vector<StateVector> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(standardize(s, stats));
    return out;
}

std::vector<StateVector> destandardize_states(std::span<const StateVector> states, const Stats& stats) {
    std::vector<StateVector> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(destandardize(s, stats));
    return out;
}

NormalizedFrame normalize_frame(const Image& image, const ChannelNorm& norm) {
    if (image.channels != 3) throw std::invalid_argument("normalize_frame: expected 3 channels, got " + std::to_string(image.channels));
    NormalizedFrame out;
    out.channels = 3;
    out.height = image.height;
    out.width = image.width;
    out.values.resize(static_cast<std::size_t>(3) * image.height * image.width);
    for (int c = 0; c < 3; ++c) {
        const double scale = 1.0 / (255.0 * norm.std[c]);
        const double shift = norm.mean[c] / norm.std[c];
        double* plane = out.values.data() + static_cast<std::size_t>(c) * image.height * image.width;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                plane[static_cast<std::size_t>(y) * image.width + x] = image.at(x, y, c) * scale - shift;
    }
    return out;
}

std::size_t window_count(std::size_t length, std::size_t n, std::size_t stride) {
    if (n == 0 || stride == 0) throw std::invalid_argument("window_count: N and stride must be >= 1");
    if (length < n + 1) return 0;
    return (length - n - 1) / stride + 1;
}

std::vector<WindowSample> slide_windows(const Episode& episode, std::size_t n, std::size_t stride, const Stats& stats) {
    const std::size_t count = window_count(episode.length(), n, stride);
    const std::size_t goal = count > 0 ? select_goal_image(episode) : 0;
    const std::string id = episode.id();
    std::vector<WindowSample> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        WindowSample w;
        w.episode_id = id;
        w.start_index = k * stride;
        w.states = standardize_states(std::span(episode.states).subspan(w.start_index, n), stats);
        w.target = episode.states[w.start_index + n];
        w.goal_frame_index = goal;
        out.push_back(std::move(w));
    }
    return out;
}

std::size_t select_goal_image(const Episode& episode) {
    const std::size_t n = std::max(episode.states.size(), episode.frames.size());
    if (n == 0) throw std::invalid_argument("select_goal_image: empty episode");
    return n - 1;
}

}  // namespace cva::data
