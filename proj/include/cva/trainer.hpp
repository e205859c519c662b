#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "cva/policy.hpp"
#include "cva/window_dataset.hpp"

namespace cva::train {

struct TrainConfig {
    int batch_size = 16;
    int max_epochs = 50;
    double lr = 9.0e-5;
    int patience = 5;
    double min_delta = 1e-5;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // max global norm; 0 disables
    std::string out_dir;     // checkpoints and log; empty keeps everything in memory

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Mean over batch and the three components of the squared error.
torch::Tensor mse_loss(const torch::Tensor& pred, const torch::Tensor& target);

// lr * (1 + cos(pi * epoch / t_max)) / 2, stepped once per epoch.
double cosine_lr(double base_lr, int epoch, int t_max);

class EarlyStopping {
  public:
    EarlyStopping(int patience, double min_delta);
    // Returns true when `val_loss` improves on the best so far by more than min_delta.
    bool update(double val_loss);
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }

  private:
    int patience_;
    double min_delta_;
    double best_;
    int bad_epochs_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double lr = 0.0;
    double wallclock = 0.0;  // seconds since training started; kept out of train_log.jsonl
    bool improved = false;

    nlohmann::json to_json() const;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    int best_epoch = -1;
    double best_val_mse = 0.0;
    bool early_stopped = false;
    std::size_t optimizer_steps = 0;
    std::filesystem::path best_checkpoint;
};

struct TrainHooks {
    std::optional<std::string> expected_stats_fingerprint;
    policy::ForwardOptions forward;
    // applied to every batch (train and val) before the forward pass
    std::function<void(policy::Batch&)> transform;
    std::function<void(const EpochRecord&)> on_epoch;
    std::size_t max_steps_per_epoch = 0;  // 0 = full epoch
};

class NonFiniteLoss : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

TrainResult train(policy::Regressor& model, const data::WindowDataset& train_set, const data::WindowDataset& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// Full-split MSE in raw units, dropout off, no gradient.
double evaluate_mse(policy::Regressor& model, const data::WindowDataset& set, const TrainHooks& hooks = {},
                    std::size_t batch_size = 64);

// Per-epoch shuffled sample order; a pure function of (seed, epoch, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// ---- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

// meta must carry "kind" and "model_config"; version and fingerprint fields are added by the caller.
void save_checkpoint(const std::filesystem::path& path, policy::Regressor& model, torch::optim::Optimizer* optimizer,
                     nlohmann::json meta);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);
nlohmann::json load_checkpoint(const std::filesystem::path& path, policy::Regressor& model,
                               torch::optim::Optimizer* optimizer = nullptr);

// Rebuilds the model described by the checkpoint meta and loads its weights.
std::shared_ptr<policy::Regressor> load_model(const std::filesystem::path& path);

std::shared_ptr<policy::Regressor> make_model(const std::string& kind, const nlohmann::json& model_config);

}  // namespace cva::train
