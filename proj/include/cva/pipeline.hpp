#pragma once

// Run configuration and the pipeline commands behind the command-line tool.
//
// Output layout under RunConfig::out:
//   corpus/                     phantom.json, episodes, manifest_<mode>.json
//   runs/<run_id>/              config.json, train_log.jsonl, best.pt, last.pt, summary.json
//   runs/<run_id>/eval/<split>-<condition>/   metrics.json, records.jsonl, plots + sidecars
//   runs/<run_id>/ablation-<mode>-<split>/    grid.json, records.jsonl, table.txt
//   plots/<mode>/               per-split state violins

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cva/dataset.hpp"
#include "cva/encoder.hpp"
#include "cva/eval.hpp"
#include "cva/lstm_baseline.hpp"
#include "cva/policy.hpp"
#include "cva/sim.hpp"
#include "cva/trainer.hpp"
#include "cva/window_dataset.hpp"

namespace cva::pipeline {

namespace fs = std::filesystem;

struct SimSection {
    int n_targets = 9;
    int repetitions = 5;
    double noise_scale = 0.05;
    sim::SimConfig sim;
};

struct DatasetSection {
    std::string split = "episode";
    data::SplitRatios ratios;
    int stride = 1;
};

struct EvalSection {
    std::string split = "test";
    std::string condition = "baseline";
    std::string ablation_mode = "zero_shot";
    int histogram_bins = 30;
};

struct RunConfig {
    std::uint64_t seed = 0;  // drives phantom, episodes, splits, encoder and training
    std::string out = "out";
    std::string model = "cva";  // cva | lstm
    SimSection simulate;
    DatasetSection dataset;
    encoder::EncoderConfig encoder = encoder::EncoderConfig::pretrained_defaults();
    policy::PolicyConfig policy;
    policy::LstmConfig lstm;
    train::TrainConfig trainer;
    EvalSection eval;

    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const fs::path& path);

    // Copies the global seed into every seeded component and sizes the policy
    // from the encoder and sequence length.
    RunConfig effective() const;
    void validate() const;

    // Content hash of the effective configuration, excluding `out` and the eval section.
    std::string run_id() const;

    fs::path corpus_dir() const { return fs::path(out) / "corpus"; }
    fs::path manifest_path(data::SplitMode mode) const;
    fs::path run_dir() const { return fs::path(out) / "runs" / run_id(); }
};

// "section.field = default" lines for every configuration field.
std::vector<std::string> describe_fields();

std::int64_t episode_seed(std::uint64_t seed, int scenario, int repetition);

struct SimulateReport {
    std::size_t episodes = 0;
    std::vector<std::string> failures;
};
SimulateReport cmd_simulate(const RunConfig& cfg);

struct DatasetReport {
    std::map<std::string, data::SplitManifest> manifests;  // keyed by mode
    std::vector<std::string> warnings;
};
DatasetReport cmd_dataset(const RunConfig& cfg);

// Encoded episodes of one manifest, grouped by split.
struct LoadedSplits {
    data::SplitManifest manifest;
    std::vector<data::EncodedEpisodePtr> train, val, test;
    std::vector<data::EncodedEpisodePtr> all() const;
    const std::vector<data::EncodedEpisodePtr>& by_name(const std::string& split) const;
};
LoadedSplits load_splits(const RunConfig& cfg, const encoder::VisionEncoder* encoder);

data::WindowDataset make_windows(const RunConfig& cfg, const LoadedSplits& splits, const std::string& split);

std::unique_ptr<encoder::VisionEncoder> make_encoder_for(const RunConfig& cfg);
std::shared_ptr<policy::Regressor> build_model(const RunConfig& cfg);

struct TrainReport {
    fs::path run_dir;
    train::TrainResult result;
};
TrainReport cmd_train(const RunConfig& cfg);

std::vector<eval::MetricsReport> cmd_eval(const RunConfig& cfg);
std::vector<eval::MetricsReport> cmd_ablate(const RunConfig& cfg);
std::vector<fs::path> cmd_plot(const RunConfig& cfg);

}  // namespace cva::pipeline
