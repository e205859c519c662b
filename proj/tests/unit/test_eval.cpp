#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cva/eval.hpp"
#include "cva/plots.hpp"
#include "support/fixtures.hpp"

using namespace cva;

namespace {

// Brute-force per-column metrics.
struct Ref {
    double mse, mae, r2;
};
Ref reference(const torch::Tensor& p, const torch::Tensor& t, int dim) {
    const auto n = p.size(0);
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += t[i][dim].item<double>();
    mean /= static_cast<double>(n);
    double sse = 0.0, sae = 0.0, sst = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double e = p[i][dim].item<double>() - t[i][dim].item<double>();
        sse += e * e;
        sae += std::abs(e);
        sst += (t[i][dim].item<double>() - mean) * (t[i][dim].item<double>() - mean);
    }
    return {sse / n, sae / n, 1.0 - sse / sst};
}

std::vector<data::EncodedEpisodePtr> encoded(int scenarios, int reps, int p, int d) {
    std::vector<data::EncodedEpisodePtr> out;
    torch::manual_seed(11);
    for (const auto& ep : fixtures::synthetic_corpus(scenarios, reps, 11)) {
        auto e = std::make_shared<data::EncodedEpisode>();
        e->id = ep.id();
        e->scenario_id = ep.scenario_id;
        e->repetition_id = ep.repetition_id;
        e->states = ep.states;
        e->tokens = torch::randn({static_cast<int64_t>(ep.states.size()), p, d}, torch::kFloat64);
        e->goal = torch::randn({d}, torch::kFloat64);
        out.push_back(e);
    }
    return out;
}

policy::PolicyConfig small() {
    policy::PolicyConfig c;
    c.seq_len = 6;
    c.tokens = 3;
    c.dim = 8;
    c.cross_heads = 2;
    c.tf_layers = 1;
    c.tf_heads = 2;
    c.ffn_dim = 16;
    c.head_dims = {8, 3};
    return c;
}

}  // namespace

TEST_CASE("metrics agree with a per-column loop") {
    torch::manual_seed(0);
    const auto t = torch::randn({50, 3}, torch::kFloat64);
    const auto p = t + 0.3 * torch::randn({50, 3}, torch::kFloat64);
    const auto m = eval::compute_metrics(p, t);
    CHECK(m.samples == 50);
    for (int d = 0; d < 3; ++d) {
        const auto ref = reference(p, t, d);
        CHECK(std::abs(m.dims[d].mse - ref.mse) <= 1e-12);
        CHECK(std::abs(m.dims[d].mae - ref.mae) <= 1e-12);
        CHECK(std::abs(m.dims[d].r2 - ref.r2) <= 1e-12);
        CHECK(std::abs(m.dims[d].rmse * m.dims[d].rmse - m.dims[d].mse) <= 1e-9);
    }
}

TEST_CASE("metric edge cases") {
    torch::manual_seed(1);
    const auto t = torch::randn({20, 3}, torch::kFloat64);
    const auto perfect = eval::compute_metrics(t, t);
    for (const auto& d : perfect.dims) {
        CHECK(d.mse == 0.0);
        CHECK(d.r2 == 1.0);
    }
    // predicting the column mean scores exactly zero
    const auto mean = eval::compute_metrics(t.mean(0, true).expand({20, 3}).contiguous(), t);
    for (const auto& d : mean.dims) CHECK(std::abs(d.r2) <= 1e-12);

    auto flat = t.clone();
    flat.select(1, 1).fill_(0.25);
    const auto m = eval::compute_metrics(t, flat);
    CHECK_FALSE(m.dims[1].r2_defined);
    CHECK(std::isnan(m.dims[1].r2));
    CHECK(m.to_json().at("metrics").at("rotation").at("r2").is_null());
    CHECK(std::isfinite(m.mean_r2()));
    CHECK(m.records().size() == 3);

    CHECK_THROWS_AS(eval::compute_metrics(t.narrow(0, 0, 1), t.narrow(0, 0, 1)), std::invalid_argument);
    CHECK_THROWS_AS(eval::compute_metrics(t, t.narrow(1, 0, 2)), std::invalid_argument);
}

TEST_CASE("reported MSE and RMSE pairs are mutually consistent") {
    const std::pair<double, double> rows[] = {
        {0.0179, 0.1338}, {0.0091, 0.0955}, {0.0094, 0.0970}, {0.0160, 0.1264}, {0.0085, 0.0922}, {0.0115, 0.1075},
        {0.0116, 0.1078}, {0.0050, 0.0708}, {0.0187, 0.1367}, {0.0125, 0.1120}, {0.0050, 0.0708}, {0.0133, 0.1154},
    };
    for (const auto& [mse, rmse] : rows) CHECK(std::abs(std::sqrt(mse) - rmse) <= 5e-4);
}

TEST_CASE("condition tags") {
    for (auto c : eval::all_conditions()) CHECK(eval::parse_condition(eval::to_string(c)) == c);
    CHECK(eval::parse_condition("no_goal") == eval::Condition::no_goal);
    CHECK_THROWS_AS(eval::parse_condition("no_gaol"), std::invalid_argument);
    CHECK(eval::parse_ablation_mode("retrain") == eval::AblationMode::retrain);
    CHECK_THROWS_AS(eval::parse_ablation_mode("both"), std::invalid_argument);
}

TEST_CASE("each condition touches only its own input") {
    const auto eps = encoded(3, 2, 3, 8);
    std::vector<StateVector> rows;
    for (const auto& e : eps) rows.insert(rows.end(), e->states.begin(), e->states.end());
    const auto st = data::dataset_stats(std::span<const StateVector>(rows));
    const std::vector<data::EncodedEpisodePtr> test(eps.begin(), eps.begin() + 2);
    data::WindowDataset set(test, 6, 5, st, data::SplitRole::test);

    torch::manual_seed(2);
    policy::CvaPolicy model(small());
    const auto plain = eval::predict(model, set);
    const auto base = eval::evaluate(model, set, eval::Condition::baseline, eps, {});
    const auto direct = eval::compute_metrics(plain.predicted, plain.target);
    for (int d = 0; d < 3; ++d) CHECK(base.dims[d].mse == direct.dims[d].mse);

    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    auto check_invariant = [&](eval::Condition c, auto&& perturb) {
        auto setup = eval::apply_condition(c, set, eps, 0);
        auto batch = setup.set.batch(all, data::Access::evaluation);
        setup.hooks.transform(batch);
        const auto a = model.predict(batch, setup.hooks.forward);
        auto other = setup.set.batch(all, data::Access::evaluation);
        perturb(other);
        setup.hooks.transform(other);
        return a.equal(model.predict(other, setup.hooks.forward));
    };
    CHECK(check_invariant(eval::Condition::no_vision, [](policy::Batch& b) { b.frames = torch::randn_like(b.frames); }));
    CHECK(check_invariant(eval::Condition::no_states, [](policy::Batch& b) { b.states = torch::randn_like(b.states); }));

    auto no_goal = eval::apply_condition(eval::Condition::no_goal, set, eps, 0);
    CHECK(no_goal.hooks.forward.bypass_goal);
    auto batch = set.batch(all, data::Access::evaluation);
    const auto a = model.predict(batch, no_goal.hooks.forward);
    batch.goal = torch::randn_like(batch.goal);
    CHECK(a.equal(model.predict(batch, no_goal.hooks.forward)));

    const auto own = set.batch(all, data::Access::evaluation).goal;
    const auto fg = eval::apply_condition(eval::Condition::false_goal, set, eps, 0);
    const auto swapped = fg.set.batch(all, data::Access::evaluation);
    CHECK_FALSE(swapped.goal.equal(own));
    CHECK(swapped.frames.equal(set.batch(all, data::Access::evaluation).frames));
    CHECK(set.batch(all, data::Access::evaluation).goal.equal(own));
}

TEST_CASE("false goals come from other scenarios") {
    const auto eps = encoded(4, 3, 2, 4);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto goals = eval::draw_false_goals(eps, eps, seed);
        REQUIRE(goals.size() == eps.size());
        for (std::size_t i = 0; i < eps.size(); ++i) {
            bool from_other = false;
            for (const auto& p : eps)
                if (goals[i].equal(p->goal)) {
                    CHECK(p->scenario_id != eps[i]->scenario_id);
                    from_other = true;
                }
            CHECK(from_other);
        }
        CHECK(eval::draw_false_goals(eps, eps, seed).size() == goals.size());
    }
    const std::vector<data::EncodedEpisodePtr> single(eps.begin(), eps.begin() + 3);
    CHECK_THROWS(eval::draw_false_goals(single, single, 0));
}

TEST_CASE("histogram counts recomputed from the plot sidecars") {
    namespace fs = std::filesystem;
    torch::manual_seed(3);
    const auto t = torch::rand({200, 3}, torch::kFloat64);
    const auto p = t + 0.1 * torch::randn({200, 3}, torch::kFloat64);
    const auto dir = fixtures::temp_dir("plots");
    const auto files = plots::emit_plots(p, t, dir, 12);
    REQUIRE(files.size() == 6);
    for (const auto& f : files) CHECK(fs::file_size(f) > 0);

    for (int d = 0; d < 3; ++d) {
        const std::string name(kStateNames[d]);
        std::vector<double> errors;
        {
            std::ifstream in(dir / ("scatter_" + name + ".csv"));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                double a, b, e;
                char c;
                std::istringstream(line) >> a >> c >> b >> c >> e;
                CHECK(e == doctest::Approx(b - a).epsilon(1e-12));
                errors.push_back(e);
            }
        }
        REQUIRE(errors.size() == 200);
        const double lo = *std::min_element(errors.begin(), errors.end());
        const double hi = *std::max_element(errors.begin(), errors.end());
        std::vector<std::size_t> counts(12, 0);
        for (double e : errors) {
            std::size_t k = 0;
            while (k + 1 < 12 && e >= lo + (hi - lo) * static_cast<double>(k + 1) / 12.0) ++k;
            ++counts[k];
        }
        std::ifstream in(dir / ("hist_" + name + ".csv"));
        std::string line;
        std::getline(in, line);
        CHECK(line == "bin,lo,hi,count");
        for (std::size_t k = 0; k < 12; ++k) {
            REQUIRE(std::getline(in, line));
            const auto last = line.rfind(',');
            const auto count = std::stoul(line.substr(last + 1));
            CHECK(static_cast<long>(count) - static_cast<long>(counts[k]) <= 1);
            CHECK(static_cast<long>(counts[k]) - static_cast<long>(count) <= 1);
        }
    }
    const std::vector<double> constant(5, 2.0);
    const auto h = plots::histogram(constant, 4);
    CHECK(h.lo == 1.5);
    CHECK(h.hi == 2.5);
    CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == 5);
    fs::remove_all(dir);
}
