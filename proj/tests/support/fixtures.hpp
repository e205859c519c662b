#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cva/dataset.hpp"

namespace fixtures {

// Random-walk episodes with scenario-dependent drift; frames are tiny noise images when requested.
inline std::vector<cva::data::Episode> synthetic_corpus(int scenarios, int repetitions, std::uint64_t seed,
                                                        bool frames = false, int size = 8) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(40, 90);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<cva::data::Episode> out;
    for (int s = 1; s <= scenarios; ++s)
        for (int r = 1; r <= repetitions; ++r) {
            cva::data::Episode e;
            e.scenario_id = s;
            e.repetition_id = r;
            const int n = len(rng);
            cva::StateVector x{0.5, 0.0, 0.0};
            for (int t = 0; t < n; ++t) {
                x.translation = std::clamp(x.translation + noise(rng), 0.0, 1.0);
                x.rotation = std::clamp(0.8 * x.rotation + 0.02 * s + noise(rng), -1.0, 1.0);
                x.knob = std::clamp(0.9 * x.knob - 0.01 * s + noise(rng), -1.0, 1.0);
                e.states.push_back(x);
                if (frames) {
                    cva::Image img(size, size);
                    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
                    e.frames.push_back(std::move(img));
                }
            }
            if (frames) e.goal = e.frames.back();
            out.push_back(std::move(e));
        }
    return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cva_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixtures
