#pragma once

// On-disk corpus layout:
//   <root>/phantom.json
//   <root>/<scenario>/<repetition>/frames/%06d.png
//   <root>/<scenario>/<repetition>/states.csv   (t,translation,rotation,knob)
//   <root>/<scenario>/<repetition>/goal.png
//   <root>/<scenario>/<repetition>/episode.json
//   manifest files are written next to the corpus by the dataset step.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cva/dataset.hpp"

namespace cva::io {

namespace fs = std::filesystem;

void write_png(const fs::path& path, const Image& image);
Image read_png(const fs::path& path);

// Area-averaged resampling to a square side; returns the input when it already matches.
Image resize_image(const Image& image, int size);

fs::path episode_dir(const fs::path& corpus_root, int scenario, int repetition);

void write_states_csv(const fs::path& path, const std::vector<StateVector>& states);
std::vector<StateVector> read_states_csv(const fs::path& path);

// `extra` is merged into episode.json (e.g. seed, noise, target label).
void write_episode(const fs::path& corpus_root, const data::Episode& episode, const nlohmann::json& extra = {});
data::Episode read_episode(const fs::path& dir, bool load_frames);
Image read_frame(const fs::path& dir, std::size_t index);

struct CorpusScan {
    std::vector<data::Episode> episodes;  // ordered by (scenario, repetition)
    std::vector<fs::path> dirs;           // parallel to episodes
    std::vector<std::string> warnings;    // one per skipped episode
};

// Corrupted episodes are skipped and reported; a missing root throws.
CorpusScan scan_corpus(const fs::path& corpus_root, bool load_frames = false);

nlohmann::json manifest_to_json(const data::SplitManifest& m);
data::SplitManifest manifest_from_json(const nlohmann::json& j);
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

}  // namespace cva::io
