#include "cva/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cva/lstm_baseline.hpp"

namespace cva::train {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (grad_clip < 0.0) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size}, {"max_epochs", max_epochs}, {"lr", lr},
            {"patience", patience},     {"min_delta", min_delta},   {"seed", seed},
            {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2}, {"adam_eps", adam_eps},
            {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.lr = j.value("lr", c.lr);
    c.patience = j.value("patience", c.patience);
    c.min_delta = j.value("min_delta", c.min_delta);
    c.seed = j.value("seed", c.seed);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.validate();
    return c;
}

torch::Tensor mse_loss(const torch::Tensor& pred, const torch::Tensor& target) {
    if (pred.sizes() != target.sizes()) throw std::invalid_argument("mse_loss: prediction and target shapes differ");
    return (pred - target).pow(2).mean();
}

double cosine_lr(double base_lr, int epoch, int t_max) {
    return base_lr * (1.0 + std::cos(std::numbers::pi * epoch / t_max)) / 2.0;
}

EarlyStopping::EarlyStopping(int patience, double min_delta)
    : patience_(patience), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopping::update(double val_loss) {
    if (val_loss < best_ - min_delta_) {
        best_ = val_loss;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

nlohmann::json EpochRecord::to_json() const {
    return {{"epoch", epoch}, {"train_mse", train_mse}, {"val_mse", val_mse}, {"lr", lr}, {"improved", improved}};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

double evaluate_mse(policy::Regressor& model, const data::WindowDataset& set, const TrainHooks& hooks,
                    std::size_t batch_size) {
    if (set.size() == 0) throw std::invalid_argument("evaluate_mse: empty split");
    torch::NoGradGuard guard;
    const bool was_training = model.is_training();
    model.eval();
    double sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < set.size(); s += batch_size) {
        idx.clear();
        for (std::size_t i = s; i < std::min(set.size(), s + batch_size); ++i) idx.push_back(i);
        auto batch = set.batch(idx, data::Access::evaluation);
        if (hooks.transform) hooks.transform(batch);
        const auto pred = model.predict(batch, hooks.forward);
        sum += (pred - batch.target).pow(2).sum().item<double>();
    }
    model.train(was_training);
    return sum / static_cast<double>(set.size() * kStateDim);
}

TrainResult train(policy::Regressor& model, const data::WindowDataset& train_set, const data::WindowDataset& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (train_set.role() != data::SplitRole::train) throw std::invalid_argument("train: first dataset must be the training split");
    if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: empty training or validation split");
    const std::string fingerprint = train_set.stats().fingerprint();
    if (val_set.stats().fingerprint() != fingerprint)
        throw std::invalid_argument("train: validation split standardized with different statistics");
    if (hooks.expected_stats_fingerprint && *hooks.expected_stats_fingerprint != fingerprint)
        throw std::invalid_argument("train: dataset stats fingerprint " + fingerprint + " does not match expected " +
                                    *hooks.expected_stats_fingerprint);

    torch::manual_seed(cfg.seed);
    torch::optim::Adam optimizer(model.parameters(), torch::optim::AdamOptions(cfg.lr)
                                                         .betas({cfg.adam_beta1, cfg.adam_beta2})
                                                         .eps(cfg.adam_eps)
                                                         .weight_decay(0.0));

    const bool persist = !cfg.out_dir.empty();
    std::ofstream log_file, timing_file;
    if (persist) {
        fs::create_directories(cfg.out_dir);
        log_file.open(fs::path(cfg.out_dir) / "train_log.jsonl");
        timing_file.open(fs::path(cfg.out_dir) / "timing.jsonl");
    }
    nlohmann::json meta{{"kind", model.kind()},
                        {"model_config", model.config_json()},
                        {"train_config", cfg.to_json()},
                        {"stats_fingerprint", fingerprint}};

    TrainResult result;
    EarlyStopping stopper(cfg.patience, cfg.min_delta);
    std::vector<std::pair<std::string, torch::Tensor>> best_state;
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cosine_lr(cfg.lr, epoch, cfg.max_epochs);
        for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

        model.train();
        const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::size_t steps = 0;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
            if (hooks.max_steps_per_epoch && steps == hooks.max_steps_per_epoch) break;
            const std::span<const std::size_t> idx(order.data() + s,
                                                   std::min(order.size() - s, static_cast<std::size_t>(cfg.batch_size)));
            auto batch = train_set.batch(idx, data::Access::gradient);
            if (hooks.transform) hooks.transform(batch);
            const auto loss = train::mse_loss(model.predict(batch, hooks.forward), batch.target);
            const double value = loss.item<double>();
            if (!std::isfinite(value))
                throw NonFiniteLoss("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(steps) + " (lr " + std::to_string(lr) + ")");
            optimizer.zero_grad();
            loss.backward();
            if (cfg.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model.parameters(), cfg.grad_clip);
            optimizer.step();
            loss_sum += value * static_cast<double>(idx.size());
            seen += idx.size();
            ++steps;
            ++result.optimizer_steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_mse = loss_sum / static_cast<double>(seen);
        rec.val_mse = evaluate_mse(model, val_set, hooks);
        if (!std::isfinite(rec.val_mse)) throw NonFiniteLoss("non-finite validation loss at epoch " + std::to_string(epoch));
        rec.lr = lr;
        rec.improved = stopper.update(rec.val_mse);
        rec.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (rec.improved) {
            result.best_epoch = epoch;
            result.best_val_mse = rec.val_mse;
            best_state.clear();
            for (const auto& p : model.named_parameters()) best_state.emplace_back(p.key(), p.value().detach().clone());
            if (persist) {
                meta["epoch"] = epoch;
                meta["val_mse"] = rec.val_mse;
                result.best_checkpoint = fs::path(cfg.out_dir) / "best.pt";
                save_checkpoint(result.best_checkpoint, model, &optimizer, meta);
            }
        }
        if (persist) {
            meta["epoch"] = epoch;
            meta["val_mse"] = rec.val_mse;
            save_checkpoint(fs::path(cfg.out_dir) / "last.pt", model, &optimizer, meta);
            log_file << rec.to_json().dump() << '\n' << std::flush;
            timing_file << nlohmann::json{{"epoch", epoch}, {"wallclock", rec.wallclock}}.dump() << '\n' << std::flush;
        }
        result.log.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (stopper.should_stop()) {
            result.early_stopped = epoch + 1 < cfg.max_epochs;
            break;
        }
    }

    {
        torch::NoGradGuard guard;
        auto params = model.named_parameters();
        for (const auto& [name, value] : best_state) params[name].copy_(value);
    }
    model.eval();
    return result;
}

// ---- checkpoints -----------------------------------------------------------

void save_checkpoint(const fs::path& path, policy::Regressor& model, torch::optim::Optimizer* optimizer,
                     nlohmann::json meta) {
    meta["format"] = "cva-checkpoint";
    meta["version"] = kCheckpointVersion;
    if (!meta.contains("kind")) meta["kind"] = model.kind();
    if (!meta.contains("model_config")) meta["model_config"] = model.config_json();

    torch::serialize::OutputArchive archive;
    archive.write("meta", c10::IValue(meta.dump()));
    torch::serialize::OutputArchive weights;
    model.save(weights);
    archive.write("model", weights);
    if (optimizer) {
        torch::serialize::OutputArchive opt;
        optimizer->save(opt);
        archive.write("optimizer", opt);
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    archive.save_to(path.string());
}

nlohmann::json read_checkpoint_meta(const fs::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue value;
    archive.read("meta", value);
    auto meta = nlohmann::json::parse(value.toStringRef());
    if (meta.value("format", "") != "cva-checkpoint") throw std::runtime_error(path.string() + " is not a checkpoint");
    if (meta.value("version", 0) != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path.string());
    return meta;
}

nlohmann::json load_checkpoint(const fs::path& path, policy::Regressor& model, torch::optim::Optimizer* optimizer) {
    const auto meta = read_checkpoint_meta(path);
    if (meta.at("kind").get<std::string>() != model.kind())
        throw std::runtime_error("checkpoint holds a '" + meta.at("kind").get<std::string>() + "' model, not '" +
                                 model.kind() + "'");
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::serialize::InputArchive weights;
    archive.read("model", weights);
    model.load(weights);
    if (optimizer) {
        torch::serialize::InputArchive opt;
        if (archive.try_read("optimizer", opt)) optimizer->load(opt);
    }
    return meta;
}

std::shared_ptr<policy::Regressor> make_model(const std::string& kind, const nlohmann::json& model_config) {
    if (kind == "cva") return std::make_shared<policy::CvaPolicy>(policy::PolicyConfig::from_json(model_config));
    if (kind == "lstm") return std::make_shared<policy::LstmBaseline>(policy::LstmConfig::from_json(model_config));
    throw std::invalid_argument("unknown model kind '" + kind + "' (expected cva|lstm)");
}

std::shared_ptr<policy::Regressor> load_model(const fs::path& path) {
    const auto meta = read_checkpoint_meta(path);
    auto model = make_model(meta.at("kind").get<std::string>(), meta.at("model_config"));
    load_checkpoint(path, *model);
    model->eval();
    return model;
}

}  // namespace cva::train
