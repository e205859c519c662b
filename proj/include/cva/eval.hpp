#pragma once

// Regression metrics, ablation conditions and the evaluation harness.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "cva/policy.hpp"
#include "cva/state.hpp"
#include "cva/trainer.hpp"
#include "cva/window_dataset.hpp"

namespace cva::eval {

enum class Condition { baseline, false_goal, no_goal, no_vision, no_states };

Condition parse_condition(const std::string& tag);
std::string to_string(Condition c);
const std::array<Condition, 5>& all_conditions();

// zero_shot evaluates the baseline checkpoint under each condition;
// retrain fits a fresh model with the condition active during training too.
enum class AblationMode { zero_shot, retrain };
AblationMode parse_ablation_mode(const std::string& s);
std::string to_string(AblationMode m);

struct DimMetrics {
    double mse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double r2 = 0.0;  // NaN when r2_defined is false
    bool r2_defined = true;
};

struct MetricsReport {
    std::string split;
    std::string model;
    std::string condition = "baseline";
    std::size_t samples = 0;
    std::array<DimMetrics, kStateDim> dims{};

    // mean R2 over the dimensions where it is defined
    double mean_r2() const;
    nlohmann::json to_json() const;
    // one flat record per dimension
    std::vector<nlohmann::json> records() const;
};

// predictions and targets are [M, 3]; M >= 2
MetricsReport compute_metrics(const torch::Tensor& predictions, const torch::Tensor& targets);

struct Predictions {
    torch::Tensor predicted;  // [M, 3] raw units
    torch::Tensor target;     // [M, 3]
};

// A dataset copy and hooks that realize exactly one condition. `goal_pool`
// supplies candidate goals for false_goal (episodes of other scenarios).
struct ConditionSetup {
    data::WindowDataset set;
    train::TrainHooks hooks;
};
ConditionSetup apply_condition(Condition condition, const data::WindowDataset& set,
                               std::span<const data::EncodedEpisodePtr> goal_pool, std::uint64_t seed);

// For each episode of `episodes`, the goal of a uniformly drawn pool episode from a different scenario.
std::vector<torch::Tensor> draw_false_goals(std::span<const data::EncodedEpisodePtr> episodes,
                                            std::span<const data::EncodedEpisodePtr> goal_pool, std::uint64_t seed);

Predictions predict(policy::Regressor& model, const data::WindowDataset& set, const train::TrainHooks& hooks = {},
                    std::size_t batch_size = 64);

struct EvalOptions {
    std::string split_name = "test";
    std::string model_name;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;
};

MetricsReport evaluate(policy::Regressor& model, const data::WindowDataset& set, Condition condition,
                       std::span<const data::EncodedEpisodePtr> goal_pool, const EvalOptions& opts,
                       Predictions* out = nullptr);

// Zero-shot grid over all five conditions on one checkpoint.
std::vector<MetricsReport> ablate(policy::Regressor& model, const data::WindowDataset& set,
                                  std::span<const data::EncodedEpisodePtr> goal_pool, const EvalOptions& opts);

void write_records(const std::string& path, std::span<const MetricsReport> reports);

}  // namespace cva::eval
