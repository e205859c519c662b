#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

#include "cva/lstm_baseline.hpp"
#include "cva/trainer.hpp"
#include "support/fixtures.hpp"

using namespace cva;

namespace {

policy::PolicyConfig desk(int n, int p, int d) {
    policy::PolicyConfig c;
    c.seq_len = n;
    c.tokens = p;
    c.dim = d;
    c.cross_heads = 2;
    c.tf_layers = 1;
    c.tf_heads = 2;
    c.ffn_dim = 32;
    c.head_dims = {32, 3};
    return c;
}

// Episodes with random token tensors standing in for encoded frames.
std::vector<data::EncodedEpisodePtr> encoded(int scenarios, int reps, std::uint64_t seed, int p, int d) {
    std::vector<data::EncodedEpisodePtr> out;
    torch::manual_seed(seed);
    for (const auto& ep : fixtures::synthetic_corpus(scenarios, reps, seed)) {
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

data::Stats stats_of(const std::vector<data::EncodedEpisodePtr>& eps) {
    std::vector<StateVector> rows;
    for (const auto& e : eps) rows.insert(rows.end(), e->states.begin(), e->states.end());
    return data::dataset_stats(std::span<const StateVector>(rows));
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("mse loss") {
    const auto a = torch::randn({7, 3}, torch::kFloat64), b = torch::randn({7, 3}, torch::kFloat64);
    CHECK(train::mse_loss(a, a).item<double>() == 0.0);
    CHECK(train::mse_loss(a + 1.0, a).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
    double acc = 0.0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j) {
            const double e = a[i][j].item<double>() - b[i][j].item<double>();
            acc += e * e;
        }
    CHECK(std::abs(train::mse_loss(a, b).item<double>() - acc / 21.0) <= 1e-9);
    CHECK_THROWS_AS(train::mse_loss(a, b.narrow(0, 0, 3)), std::invalid_argument);
}

TEST_CASE("cosine schedule and early stopping") {
    for (int e = 0; e < 50; ++e)
        CHECK(std::abs(train::cosine_lr(9e-5, e, 50) - 9e-5 * (1 + std::cos(std::numbers::pi * e / 50)) / 2) <= 1e-10);
    train::EarlyStopping es(2, 0.1);
    CHECK(es.update(1.0));
    CHECK_FALSE(es.update(0.95));
    CHECK_FALSE(es.should_stop());
    CHECK_FALSE(es.update(0.91));
    CHECK(es.should_stop());
    CHECK(es.best() == 1.0);
    CHECK(train::epoch_order(10, 3, 1) == train::epoch_order(10, 3, 1));
    CHECK_FALSE(train::epoch_order(10, 3, 1) == train::epoch_order(10, 3, 2));
}

TEST_CASE("overfit one batch") {
    const auto eps = encoded(1, 1, 1, 3, 16);
    const auto st = stats_of(eps);
    data::WindowDataset set(eps, 6, 1, st, data::SplitRole::train);
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    const auto batch = set.batch(idx, data::Access::gradient);

    auto run = [&](policy::Regressor& model, double lr) {
        torch::optim::Adam opt(model.parameters(), torch::optim::AdamOptions(lr));
        model.train();
        double loss = 1.0;
        for (int i = 0; i < 200; ++i) {
            auto l = train::mse_loss(model.predict(batch), batch.target);
            opt.zero_grad();
            l.backward();
            opt.step();
            loss = l.item<double>();
        }
        return loss;
    };
    torch::manual_seed(0);
    auto cfg = desk(6, 3, 16);
    cfg.dropout = 0.0;
    policy::CvaPolicy cva_model(cfg);
    CHECK(run(cva_model, 1e-3) < 1e-3);
    policy::LstmBaseline lstm({6, 128, 2});
    CHECK(run(lstm, 3e-3) < 1e-3);
}

TEST_CASE("training loop: determinism, logs, checkpoints, audit") {
    namespace fs = std::filesystem;
    const auto eps = encoded(3, 3, 2, 3, 16);
    const std::vector<data::EncodedEpisodePtr> tr(eps.begin(), eps.begin() + 6), va(eps.begin() + 6, eps.end());
    const auto st = stats_of(tr);
    data::WindowDataset train_set(tr, 8, 2, st, data::SplitRole::train);
    data::WindowDataset val_set(va, 8, 2, st, data::SplitRole::val);

    train::TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.lr = 1e-3;
    cfg.seed = 5;
    const fs::path dir = fixtures::temp_dir("trainer");
    auto run = [&](const std::string& sub) {
        cfg.out_dir = (dir / sub).string();
        torch::manual_seed(cfg.seed);
        policy::CvaPolicy model(desk(8, 3, 16));
        return std::pair{train::train(model, train_set, val_set, cfg), model.named_parameters()["head.layers.0.weight"].clone()};
    };
    const auto [r1, w1] = run("a");
    const auto [r2, w2] = run("b");
    CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "b" / "train_log.jsonl"));
    CHECK(slurp(dir / "a" / "train_log.jsonl").find("wallclock") == std::string::npos);
    CHECK(fs::exists(dir / "a" / "timing.jsonl"));
    CHECK(w1.equal(w2));
    CHECK(r1.log.size() == 4);
    CHECK(train_set.gradient_reads() > 0);
    CHECK(val_set.gradient_reads() == 0);
    CHECK(val_set.evaluation_reads() > 0);
    CHECK_THROWS_AS(val_set.batch(std::vector<std::size_t>{0}, data::Access::gradient), std::logic_error);

    double best = 1e300;
    for (const auto& rec : r1.log) {
        best = std::min(best, rec.val_mse);
        CHECK(std::abs(rec.lr - train::cosine_lr(1e-3, rec.epoch, 4)) <= 1e-10);
    }
    CHECK(r1.best_val_mse == best);

    // the best checkpoint reproduces the best validation loss
    auto loaded = train::load_model(r1.best_checkpoint);
    CHECK(train::evaluate_mse(*loaded, val_set) == doctest::Approx(best).epsilon(1e-12));
    const auto meta = train::read_checkpoint_meta(r1.best_checkpoint);
    CHECK(meta.at("stats_fingerprint") == st.fingerprint());
    CHECK(meta.at("epoch") == r1.best_epoch);
    CHECK(fs::exists(dir / "a" / "last.pt"));

    auto lstm = train::make_model("lstm", policy::LstmConfig{8, 16, 1}.to_json());
    CHECK_THROWS(train::load_checkpoint(r1.best_checkpoint, *lstm));
    CHECK_THROWS_AS(train::make_model("gru", {}), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("early stopping on a poisoned validation split") {
    const auto eps = encoded(2, 3, 3, 3, 16);
    const std::vector<data::EncodedEpisodePtr> tr(eps.begin(), eps.begin() + 4), va(eps.begin() + 4, eps.end());
    const auto st = stats_of(tr);
    data::WindowDataset train_set(tr, 8, 4, st, data::SplitRole::train);
    data::WindowDataset val_set(va, 8, 4, st, data::SplitRole::val);
    train::TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.patience = 3;
    int epoch = 0;
    train::TrainHooks hooks;
    // validation targets drift further away every epoch
    hooks.on_epoch = [&](const train::EpochRecord&) { ++epoch; };
    hooks.transform = [&](policy::Batch& b) {
        if (!torch::GradMode::is_enabled()) b.target = b.target + 10.0 * (epoch + 1);
    };
    policy::LstmBaseline model({8, 16, 1});
    const auto r = train::train(model, train_set, val_set, cfg, hooks);
    CHECK(r.log.size() == 4);
    CHECK(r.best_epoch == 0);
    CHECK(r.early_stopped);
}

TEST_CASE("mismatched statistics and non-finite losses are rejected") {
    const auto eps = encoded(2, 3, 4, 3, 16);
    const std::vector<data::EncodedEpisodePtr> tr(eps.begin(), eps.begin() + 4), va(eps.begin() + 4, eps.end());
    const auto st = stats_of(tr);
    data::WindowDataset train_set(tr, 8, 4, st, data::SplitRole::train);
    data::WindowDataset other_val(va, 8, 4, stats_of(va), data::SplitRole::val);
    data::WindowDataset val_set(va, 8, 4, st, data::SplitRole::val);
    policy::LstmBaseline model({8, 16, 1});
    train::TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train::train(model, train_set, other_val, cfg), std::invalid_argument);
    train::TrainHooks hooks;
    hooks.expected_stats_fingerprint = "0000000000000000";
    CHECK_THROWS_AS(train::train(model, train_set, val_set, cfg, hooks), std::invalid_argument);
    train::TrainHooks nan_hooks;
    nan_hooks.transform = [](policy::Batch& b) { b.target = b.target * std::nan(""); };
    CHECK_THROWS_AS(train::train(model, train_set, val_set, cfg, nan_hooks), train::NonFiniteLoss);
    CHECK_THROWS_AS(train::train(model, val_set, val_set, cfg), std::invalid_argument);
}
