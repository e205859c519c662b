#include "cva/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

namespace cva::eval {

Condition parse_condition(const std::string& tag) {
    if (tag == "baseline") return Condition::baseline;
    if (tag == "false_goal") return Condition::false_goal;
    if (tag == "no_goal") return Condition::no_goal;
    if (tag == "no_vision") return Condition::no_vision;
    if (tag == "no_states") return Condition::no_states;
    throw std::invalid_argument("unknown condition '" + tag +
                                "' (expected baseline|false_goal|no_goal|no_vision|no_states)");
}

std::string to_string(Condition c) {
    switch (c) {
        case Condition::baseline: return "baseline";
        case Condition::false_goal: return "false_goal";
        case Condition::no_goal: return "no_goal";
        case Condition::no_vision: return "no_vision";
        case Condition::no_states: return "no_states";
    }
    return "?";
}

const std::array<Condition, 5>& all_conditions() {
    static const std::array<Condition, 5> all{Condition::baseline, Condition::false_goal, Condition::no_goal,
                                              Condition::no_vision, Condition::no_states};
    return all;
}

AblationMode parse_ablation_mode(const std::string& s) {
    if (s == "zero_shot") return AblationMode::zero_shot;
    if (s == "retrain") return AblationMode::retrain;
    throw std::invalid_argument("unknown ablation mode '" + s + "' (expected zero_shot|retrain)");
}

std::string to_string(AblationMode m) { return m == AblationMode::zero_shot ? "zero_shot" : "retrain"; }

double MetricsReport::mean_r2() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& d : dims)
        if (d.r2_defined) {
            sum += d.r2;
            ++n;
        }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j{{"split", split}, {"model", model}, {"condition", condition}, {"samples", samples}};
    for (int d = 0; d < kStateDim; ++d) {
        const auto& m = dims[static_cast<std::size_t>(d)];
        j["metrics"][std::string(kStateNames[static_cast<std::size_t>(d)])] = {{"mse", m.mse},
                                                                  {"rmse", m.rmse},
                                                                  {"mae", m.mae},
                                                                  {"r2", number_or_null(m.r2)},
                                                                  {"r2_defined", m.r2_defined}};
    }
    j["mean_r2"] = number_or_null(mean_r2());
    return j;
}

std::vector<nlohmann::json> MetricsReport::records() const {
    std::vector<nlohmann::json> out;
    for (int d = 0; d < kStateDim; ++d) {
        const auto& m = dims[static_cast<std::size_t>(d)];
        out.push_back({{"model", model},
                       {"split", split},
                       {"condition", condition},
                       {"dimension", std::string(kStateNames[static_cast<std::size_t>(d)])},
                       {"samples", samples},
                       {"mse", m.mse},
                       {"rmse", m.rmse},
                       {"mae", m.mae},
                       {"r2", number_or_null(m.r2)},
                       {"r2_defined", m.r2_defined}});
    }
    return out;
}

MetricsReport compute_metrics(const torch::Tensor& predictions, const torch::Tensor& targets) {
    if (predictions.dim() != 2 || predictions.sizes() != targets.sizes() || predictions.size(1) != kStateDim)
        throw std::invalid_argument("compute_metrics: predictions and targets must both be [M, 3]");
    const auto m = predictions.size(0);
    if (m < 2) throw std::invalid_argument("compute_metrics: at least two samples required");
    const auto p = predictions.to(torch::kFloat64).contiguous();
    const auto t = targets.to(torch::kFloat64).contiguous();
    const auto pa = p.accessor<double, 2>();
    const auto ta = t.accessor<double, 2>();

    MetricsReport report;
    report.samples = static_cast<std::size_t>(m);
    for (int d = 0; d < kStateDim; ++d) {
        double mean = 0.0;
        for (int64_t i = 0; i < m; ++i) mean += ta[i][d];
        mean /= static_cast<double>(m);
        double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            const double e = pa[i][d] - ta[i][d];
            ss_res += e * e;
            abs_sum += std::abs(e);
            const double c = ta[i][d] - mean;
            ss_tot += c * c;
        }
        DimMetrics& dm = report.dims[static_cast<std::size_t>(d)];
        dm.mse = ss_res / static_cast<double>(m);
        dm.rmse = std::sqrt(dm.mse);
        dm.mae = abs_sum / static_cast<double>(m);
        dm.r2_defined = ss_tot > 0.0;
        dm.r2 = dm.r2_defined ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

std::vector<torch::Tensor> draw_false_goals(std::span<const data::EncodedEpisodePtr> episodes,
                                            std::span<const data::EncodedEpisodePtr> goal_pool, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<torch::Tensor> goals;
    goals.reserve(episodes.size());
    for (const auto& ep : episodes) {
        std::vector<const data::EncodedEpisode*> candidates;
        for (const auto& other : goal_pool)
            if (other->scenario_id != ep->scenario_id && other->goal.defined()) candidates.push_back(other.get());
        if (candidates.empty())
            throw std::invalid_argument("false_goal: no episode of a different scenario available for " + ep->id);
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        goals.push_back(candidates[pick(rng)]->goal);
    }
    return goals;
}

ConditionSetup apply_condition(Condition condition, const data::WindowDataset& set,
                               std::span<const data::EncodedEpisodePtr> goal_pool, std::uint64_t seed) {
    ConditionSetup setup{set, {}};
    switch (condition) {
        case Condition::baseline: break;
        case Condition::false_goal:
            setup.set.set_goal_override(draw_false_goals(set.episodes(), goal_pool, seed));
            break;
        case Condition::no_goal: setup.hooks.forward.bypass_goal = true; break;
        case Condition::no_vision:
            setup.hooks.transform = [](policy::Batch& b) {
                if (b.frames.defined()) b.frames = torch::zeros_like(b.frames);
            };
            break;
        case Condition::no_states:
            setup.hooks.transform = [](policy::Batch& b) { b.states = torch::zeros_like(b.states); };
            break;
    }
    return setup;
}

Predictions predict(policy::Regressor& model, const data::WindowDataset& set, const train::TrainHooks& hooks,
                    std::size_t batch_size) {
    if (set.size() == 0) throw std::invalid_argument("predict: empty split");
    torch::NoGradGuard guard;
    model.eval();
    std::vector<torch::Tensor> preds, targets;
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < set.size(); s += batch_size) {
        idx.clear();
        for (std::size_t i = s; i < std::min(set.size(), s + batch_size); ++i) idx.push_back(i);
        auto batch = set.batch(idx, data::Access::evaluation);
        if (hooks.transform) hooks.transform(batch);
        preds.push_back(model.predict(batch, hooks.forward));
        targets.push_back(batch.target);
    }
    return {torch::cat(preds, 0), torch::cat(targets, 0)};
}

MetricsReport evaluate(policy::Regressor& model, const data::WindowDataset& set, Condition condition,
                       std::span<const data::EncodedEpisodePtr> goal_pool, const EvalOptions& opts,
                       Predictions* out) {
    const auto setup = apply_condition(condition, set, goal_pool, opts.seed);
    auto pred = predict(model, setup.set, setup.hooks, opts.batch_size);
    auto report = compute_metrics(pred.predicted, pred.target);
    report.split = opts.split_name;
    report.model = opts.model_name.empty() ? model.kind() : opts.model_name;
    report.condition = to_string(condition);
    if (out) *out = std::move(pred);
    return report;
}

std::vector<MetricsReport> ablate(policy::Regressor& model, const data::WindowDataset& set,
                                  std::span<const data::EncodedEpisodePtr> goal_pool, const EvalOptions& opts) {
    std::vector<MetricsReport> reports;
    for (Condition c : all_conditions()) reports.push_back(evaluate(model, set, c, goal_pool, opts));
    return reports;
}

void write_records(const std::string& path, std::span<const MetricsReport> reports) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& r : reports)
        for (const auto& rec : r.records()) out << rec.dump() << '\n';
}

}  // namespace cva::eval
