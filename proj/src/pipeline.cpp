#include "cva/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "cva/corpus_io.hpp"
#include "cva/hash.hpp"
#include "cva/plots.hpp"

namespace cva::pipeline {
namespace {

void info(const std::string& msg) { std::cerr << "[cva] " << msg << '\n'; }

nlohmann::json sim_to_json(const SimSection& s) {
    const auto& c = s.sim;
    return {{"n_targets", s.n_targets},
            {"repetitions", s.repetitions},
            {"noise_scale", s.noise_scale},
            {"v_max", c.v_max},
            {"omega_max", c.omega_max},
            {"kappa_max", c.kappa_max},
            {"dt", c.dt},
            {"goal_tolerance", c.goal_tolerance},
            {"step_cap", c.step_cap},
            {"curvature_gain", c.curvature_gain},
            {"wall_margin", c.wall_margin},
            {"resolution", c.resolution}};
}

SimSection sim_from_json(const nlohmann::json& j) {
    SimSection s;
    s.n_targets = j.at("n_targets");
    s.repetitions = j.at("repetitions");
    s.noise_scale = j.at("noise_scale");
    auto& c = s.sim;
    c.v_max = j.at("v_max");
    c.omega_max = j.at("omega_max");
    c.kappa_max = j.at("kappa_max");
    c.dt = j.at("dt");
    c.goal_tolerance = j.at("goal_tolerance");
    c.step_cap = j.at("step_cap");
    c.curvature_gain = j.at("curvature_gain");
    c.wall_margin = j.at("wall_margin");
    c.resolution = j.at("resolution");
    return s;
}

nlohmann::json encoder_to_json(const encoder::EncoderConfig& e) {
    return {{"backend", e.backend},   {"image_size", e.image_size},     {"patch_size", e.patch_size},
            {"dim", e.dim},           {"weights_path", e.weights_path}, {"random_init", e.random_init}};
}

encoder::EncoderConfig encoder_from_json(const nlohmann::json& j) {
    encoder::EncoderConfig e;
    e.backend = j.at("backend");
    e.image_size = j.at("image_size");
    e.patch_size = j.at("patch_size");
    e.dim = j.at("dim");
    e.weights_path = j.at("weights_path");
    e.random_init = j.at("random_init");
    return e;
}

// Every key of `user` must exist in `defaults`, recursively through objects.
void check_known(const nlohmann::json& user, const nlohmann::json& defaults, const std::string& prefix) {
    if (!user.is_object()) throw std::invalid_argument("config: '" + prefix + "' must be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) throw std::invalid_argument("config: unknown field '" + path + "'");
        if (defaults.at(key).is_object()) check_known(value, defaults.at(key), path);
    }
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object())
            flatten(value, path, out);
        else
            out.push_back(path + " = " + value.dump());
    }
}

const char* kSplitNames[] = {"train", "val", "test"};

std::vector<std::string>& manifest_list(data::SplitManifest& m, const std::string& split) {
    if (split == "train") return m.train;
    if (split == "val") return m.val;
    if (split == "test") return m.test;
    throw std::invalid_argument("unknown split '" + split + "' (expected train|val|test)");
}

data::SplitRole role_of(const std::string& split) {
    if (split == "train") return data::SplitRole::train;
    if (split == "val") return data::SplitRole::val;
    if (split == "test") return data::SplitRole::test;
    throw std::invalid_argument("unknown split '" + split + "' (expected train|val|test)");
}

std::string with_newline(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::shared_ptr<policy::Regressor> load_checked(const RunConfig& cfg, const LoadedSplits& splits) {
    const fs::path ckpt = cfg.run_dir() / "best.pt";
    if (!fs::exists(ckpt))
        throw std::runtime_error("no checkpoint at " + ckpt.string() + "; run `train` with the same config first");
    const auto meta = train::read_checkpoint_meta(ckpt);
    const std::string expected = splits.manifest.stats.fingerprint();
    if (meta.value("stats_fingerprint", "") != expected)
        throw std::runtime_error("checkpoint stats fingerprint " + meta.value("stats_fingerprint", std::string("?")) +
                                 " does not match the dataset manifest (" + expected + ")");
    return train::load_model(ckpt);
}

std::string table(const std::vector<eval::MetricsReport>& reports) {
    std::string out;
    char line[200];
    std::snprintf(line, sizeof line, "%-12s %12s %12s %12s %12s %12s %12s\n", "condition", "R2 transl.", "R2 rot.",
                  "R2 knob", "MSE transl.", "MSE rot.", "MSE knob");
    out += line;
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-12s %12.4f %12.4f %12.4f %12.6f %12.6f %12.6f\n", r.condition.c_str(),
                      r.dims[0].r2, r.dims[1].r2, r.dims[2].r2, r.dims[0].mse, r.dims[1].mse, r.dims[2].mse);
        out += line;
    }
    return out;
}

}  // namespace

// ---- RunConfig -------------------------------------------------------------

nlohmann::json RunConfig::to_json() const {
    auto trainer_json = trainer.to_json();
    trainer_json.erase("seed");
    auto policy_json = policy.to_json();
    return {{"seed", seed},
            {"out", out},
            {"model", model},
            {"simulate", sim_to_json(simulate)},
            {"dataset",
             {{"split", dataset.split},
              {"train_ratio", dataset.ratios.train},
              {"val_ratio", dataset.ratios.val},
              {"test_ratio", dataset.ratios.test},
              {"stride", dataset.stride}}},
            {"encoder", encoder_to_json(encoder)},
            {"policy", policy_json},
            {"lstm", {{"hidden", lstm.hidden}, {"layers", lstm.layers}}},
            {"trainer", trainer_json},
            {"eval",
             {{"split", eval.split},
              {"condition", eval.condition},
              {"ablation_mode", eval.ablation_mode},
              {"histogram_bins", eval.histogram_bins}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& user) {
    const RunConfig defaults;
    nlohmann::json j = defaults.to_json();
    check_known(user, j, "");
    j.merge_patch(user);

    RunConfig c;
    c.seed = j.at("seed");
    c.out = j.at("out");
    c.model = j.at("model");
    c.simulate = sim_from_json(j.at("simulate"));
    const auto& d = j.at("dataset");
    c.dataset.split = d.at("split");
    c.dataset.ratios = {d.at("train_ratio"), d.at("val_ratio"), d.at("test_ratio")};
    c.dataset.stride = d.at("stride");
    c.encoder = encoder_from_json(j.at("encoder"));
    c.policy = policy::PolicyConfig::from_json(j.at("policy"));
    c.lstm.hidden = j.at("lstm").at("hidden");
    c.lstm.layers = j.at("lstm").at("layers");
    c.trainer = train::TrainConfig::from_json(j.at("trainer"));
    const auto& e = j.at("eval");
    c.eval.split = e.at("split");
    c.eval.condition = e.at("condition");
    c.eval.ablation_mode = e.at("ablation_mode");
    c.eval.histogram_bins = e.at("histogram_bins");
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    if (model != "cva" && model != "lstm") throw std::invalid_argument("model must be cva or lstm, got '" + model + "'");
    if (simulate.repetitions < 1) throw std::invalid_argument("simulate.repetitions must be >= 1");
    if (simulate.noise_scale < 0.0) throw std::invalid_argument("simulate.noise_scale must be >= 0");
    if (dataset.stride < 1) throw std::invalid_argument("dataset.stride must be >= 1");
    data::parse_split_mode(dataset.split);
    role_of(eval.split);
    eval::parse_condition(eval.condition);
    eval::parse_ablation_mode(eval.ablation_mode);
    if (encoder.backend != "stub" && encoder.backend != "pretrained")
        throw std::invalid_argument("encoder.backend must be stub or pretrained, got '" + encoder.backend + "'");
    if (eval.histogram_bins < 1) throw std::invalid_argument("eval.histogram_bins must be >= 1");
    trainer.validate();
}

RunConfig RunConfig::effective() const {
    RunConfig e = *this;
    e.validate();
    e.encoder.seed = seed;
    e.trainer.seed = seed;
    if (e.encoder.backend == "pretrained") {
        const auto p = encoder::EncoderConfig::pretrained_defaults();
        e.encoder.patch_size = p.patch_size;
        e.encoder.dim = p.dim;
    }
    const int grid = e.encoder.image_size / e.encoder.patch_size;
    e.policy.tokens = grid * grid + 1;
    e.policy.dim = e.encoder.dim;
    e.lstm.seq_len = e.policy.seq_len;
    e.policy.validate();
    return e;
}

std::string RunConfig::run_id() const {
    auto j = effective().to_json();
    j.erase("out");
    j.erase("eval");
    return hex64(fnv1a64(j.dump()));
}

fs::path RunConfig::manifest_path(data::SplitMode mode) const {
    return corpus_dir() / ("manifest_" + data::to_string(mode) + ".json");
}

std::vector<std::string> describe_fields() {
    std::vector<std::string> out;
    flatten(RunConfig{}.to_json(), "", out);
    return out;
}

std::int64_t episode_seed(std::uint64_t seed, int scenario, int repetition) {
    const std::string key = std::to_string(seed) + "/" + std::to_string(scenario) + "/" + std::to_string(repetition);
    return static_cast<std::int64_t>(fnv1a64(key) >> 1);
}

// ---- commands --------------------------------------------------------------

SimulateReport cmd_simulate(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    const fs::path root = cfg.corpus_dir();
    fs::create_directories(root);
    const auto map = sim::build_phantom(static_cast<std::int64_t>(cfg.seed), cfg.simulate.n_targets);
    if (const auto bad = sim::check_invariants(map); !bad.empty())
        throw std::runtime_error("phantom violates its invariants: " + bad.front());
    write_text(root / "phantom.json", sim::phantom_to_json(map));

    SimulateReport report;
    for (int scenario = 1; scenario <= cfg.simulate.n_targets; ++scenario) {
        for (int rep = 1; rep <= cfg.simulate.repetitions; ++rep) {
            const auto seed = episode_seed(cfg.seed, scenario, rep);
            try {
                auto sim_ep = sim::generate_episode(map, scenario - 1, seed, cfg.simulate.noise_scale, cfg.simulate.sim);
                data::Episode ep;
                ep.scenario_id = scenario;
                ep.repetition_id = rep;
                ep.frames = std::move(sim_ep.frames);
                ep.states = std::move(sim_ep.actions);
                ep.goal = ep.frames[data::select_goal_image(ep)];
                io::write_episode(root, ep,
                                  {{"seed", seed},
                                   {"noise_scale", cfg.simulate.noise_scale},
                                   {"target", map.targets[static_cast<std::size_t>(scenario - 1)].label}});
                ++report.episodes;
            } catch (const sim::ExpertFailure& e) {
                report.failures.push_back(data::episode_id(scenario, rep) + ": " + e.what());
                info("episode " + data::episode_id(scenario, rep) + " rejected: " + e.what());
            }
        }
    }
    info("wrote " + std::to_string(report.episodes) + " episodes to " + root.string());
    return report;
}

DatasetReport cmd_dataset(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    auto scan = io::scan_corpus(cfg.corpus_dir(), false);
    for (const auto& w : scan.warnings) info("warning: " + w);
    if (scan.episodes.empty()) throw std::runtime_error("corpus at " + cfg.corpus_dir().string() + " has no episodes");
    DatasetReport report;
    report.warnings = scan.warnings;
    for (auto mode : {data::SplitMode::scenario, data::SplitMode::episode}) {
        auto manifest = data::make_splits(scan.episodes, mode, cfg.dataset.ratios, cfg.seed);
        if (const auto bad = data::check_manifest(manifest, scan.episodes); !bad.empty())
            throw std::runtime_error("split manifest invalid: " + bad.front());
        io::write_json(cfg.manifest_path(mode), io::manifest_to_json(manifest));
        info(data::to_string(mode) + " split: " + std::to_string(manifest.train.size()) + "/" +
             std::to_string(manifest.val.size()) + "/" + std::to_string(manifest.test.size()) + " episodes");
        report.manifests[data::to_string(mode)] = std::move(manifest);
    }
    return report;
}

std::vector<data::EncodedEpisodePtr> LoadedSplits::all() const {
    std::vector<data::EncodedEpisodePtr> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
}

const std::vector<data::EncodedEpisodePtr>& LoadedSplits::by_name(const std::string& split) const {
    switch (role_of(split)) {
        case data::SplitRole::train: return train;
        case data::SplitRole::val: return val;
        case data::SplitRole::test: return test;
    }
    return test;
}

LoadedSplits load_splits(const RunConfig& config, const encoder::VisionEncoder* encoder) {
    const RunConfig cfg = config.effective();
    const auto mode = data::parse_split_mode(cfg.dataset.split);
    const fs::path mpath = cfg.manifest_path(mode);
    if (!fs::exists(mpath)) throw std::runtime_error("no manifest at " + mpath.string() + "; run `dataset` first");
    LoadedSplits out;
    out.manifest = io::manifest_from_json(io::read_json(mpath));
    if (out.manifest.mode != mode) throw std::runtime_error("manifest " + mpath.string() + " has the wrong split mode");

    auto scan = io::scan_corpus(cfg.corpus_dir(), false);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < scan.episodes.size(); ++i) index[scan.episodes[i].id()] = i;

    std::vector<const data::Episode*> train_eps;
    for (const char* split : kSplitNames) {
        auto& target = split == std::string("train") ? out.train : split == std::string("val") ? out.val : out.test;
        for (const auto& id : manifest_list(out.manifest, split)) {
            const auto it = index.find(id);
            if (it == index.end()) throw std::runtime_error("manifest lists episode " + id + " missing from the corpus");
            const auto& ep = scan.episodes[it->second];
            if (split == std::string("train")) train_eps.push_back(&ep);
            target.push_back(data::encode_episode_dir(scan.dirs[it->second], ep, encoder));
        }
    }
    const auto stats = data::dataset_stats(std::span<const data::Episode* const>(train_eps));
    if (stats.fingerprint() != out.manifest.stats.fingerprint())
        throw std::runtime_error("corpus training statistics (fingerprint " + stats.fingerprint() +
                                 ") do not match manifest " + mpath.string() + " (" +
                                 out.manifest.stats.fingerprint() + "); rerun `dataset`");
    return out;
}

data::WindowDataset make_windows(const RunConfig& config, const LoadedSplits& splits, const std::string& split) {
    const RunConfig cfg = config.effective();
    return data::WindowDataset(splits.by_name(split), static_cast<std::size_t>(cfg.policy.seq_len),
                               static_cast<std::size_t>(cfg.dataset.stride), splits.manifest.stats, role_of(split));
}

std::unique_ptr<encoder::VisionEncoder> make_encoder_for(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    if (cfg.model != "cva") return nullptr;
    return encoder::make_encoder(cfg.encoder);
}

std::shared_ptr<policy::Regressor> build_model(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    torch::manual_seed(cfg.seed);
    if (cfg.model == "cva") return std::make_shared<policy::CvaPolicy>(cfg.policy);
    return std::make_shared<policy::LstmBaseline>(cfg.lstm);
}

TrainReport cmd_train(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    const auto enc = make_encoder_for(cfg);
    const auto splits = load_splits(cfg, enc.get());
    const auto train_set = make_windows(cfg, splits, "train");
    const auto val_set = make_windows(cfg, splits, "val");
    info("training " + cfg.model + " on " + std::to_string(train_set.size()) + " windows, validating on " +
         std::to_string(val_set.size()));

    TrainReport report;
    report.run_dir = cfg.run_dir();
    fs::create_directories(report.run_dir);
    write_text(report.run_dir / "config.json", with_newline(cfg.to_json()));

    auto model = build_model(cfg);
    auto tcfg = cfg.trainer;
    tcfg.out_dir = report.run_dir.string();
    train::TrainHooks hooks;
    hooks.expected_stats_fingerprint = splits.manifest.stats.fingerprint();
    hooks.on_epoch = [](const train::EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %3d  train %.6f  val %.6f  lr %.3g%s", r.epoch, r.train_mse, r.val_mse,
                      r.lr, r.improved ? "  *" : "");
        info(buf);
    };
    report.result = train::train(*model, train_set, val_set, tcfg, hooks);
    write_text(report.run_dir / "summary.json",
               with_newline({{"run_id", cfg.run_id()},
                             {"model", cfg.model},
                             {"split", cfg.dataset.split},
                             {"best_epoch", report.result.best_epoch},
                             {"best_val_mse", report.result.best_val_mse},
                             {"epochs_run", report.result.log.size()},
                             {"early_stopped", report.result.early_stopped},
                             {"optimizer_steps", report.result.optimizer_steps},
                             {"trainable_parameters", model->trainable_parameter_count()},
                             {"train_windows", train_set.size()},
                             {"val_windows", val_set.size()}}));
    info("best epoch " + std::to_string(report.result.best_epoch) + ", checkpoint in " + report.run_dir.string());
    return report;
}

std::vector<eval::MetricsReport> cmd_eval(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    const auto enc = make_encoder_for(cfg);
    const auto splits = load_splits(cfg, enc.get());
    auto model = load_checked(cfg, splits);
    const auto set = make_windows(cfg, splits, cfg.eval.split);
    const auto pool = splits.all();
    const auto condition = eval::parse_condition(cfg.eval.condition);

    eval::EvalOptions opts;
    opts.split_name = cfg.dataset.split + "/" + cfg.eval.split;
    opts.model_name = cfg.model;
    opts.seed = cfg.seed;
    eval::Predictions pred;
    const auto report = eval::evaluate(*model, set, condition, pool, opts, &pred);

    const fs::path dir = cfg.run_dir() / "eval" / (cfg.eval.split + "-" + cfg.eval.condition);
    fs::create_directories(dir);
    write_text(dir / "metrics.json", with_newline(report.to_json()));
    std::vector<eval::MetricsReport> reports{report};
    eval::write_records((dir / "records.jsonl").string(), reports);
    plots::emit_plots(pred.predicted, pred.target, dir, cfg.eval.histogram_bins);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s %s R2: translation %.4f  rotation %.4f  knob %.4f", cfg.eval.split.c_str(),
                  cfg.eval.condition.c_str(), report.dims[0].r2, report.dims[1].r2, report.dims[2].r2);
    info(buf);
    return reports;
}

std::vector<eval::MetricsReport> cmd_ablate(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    const auto mode = eval::parse_ablation_mode(cfg.eval.ablation_mode);
    const auto enc = make_encoder_for(cfg);
    const auto splits = load_splits(cfg, enc.get());
    const auto set = make_windows(cfg, splits, cfg.eval.split);
    const auto pool = splits.all();

    eval::EvalOptions opts;
    opts.split_name = cfg.dataset.split + "/" + cfg.eval.split;
    opts.model_name = cfg.model;
    opts.seed = cfg.seed;

    std::vector<eval::MetricsReport> reports;
    if (mode == eval::AblationMode::zero_shot) {
        auto model = load_checked(cfg, splits);
        reports = eval::ablate(*model, set, pool, opts);
    } else {
        const auto train_set = make_windows(cfg, splits, "train");
        const auto val_set = make_windows(cfg, splits, "val");
        for (auto condition : eval::all_conditions()) {
            info("retraining under " + eval::to_string(condition));
            auto tr = eval::apply_condition(condition, train_set, splits.train, cfg.seed);
            auto va = eval::apply_condition(condition, val_set, pool, cfg.seed + 1);
            auto model = build_model(cfg);
            auto tcfg = cfg.trainer;
            tcfg.out_dir.clear();
            train::train(*model, tr.set, va.set, tcfg, tr.hooks);
            auto report = eval::evaluate(*model, set, condition, pool, opts);
            reports.push_back(report);
        }
    }
    for (auto& r : reports) r.model = cfg.model + (mode == eval::AblationMode::retrain ? "/retrain" : "/zero_shot");

    const fs::path dir = cfg.run_dir() / ("ablation-" + cfg.eval.ablation_mode + "-" + cfg.eval.split);
    fs::create_directories(dir);
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& r : reports) grid.push_back(r.to_json());
    write_text(dir / "grid.json", with_newline(grid));
    eval::write_records((dir / "records.jsonl").string(), reports);
    write_text(dir / "table.txt", table(reports));
    std::cerr << table(reports);
    return reports;
}

std::vector<fs::path> cmd_plot(const RunConfig& config) {
    const RunConfig cfg = config.effective();
    const auto mode = data::parse_split_mode(cfg.dataset.split);
    const auto splits = load_splits(cfg, nullptr);
    std::vector<std::pair<std::string, std::vector<StateVector>>> columns;
    for (const char* split : kSplitNames) {
        std::vector<StateVector> rows;
        for (const auto& ep : splits.by_name(split)) rows.insert(rows.end(), ep->states.begin(), ep->states.end());
        if (!rows.empty()) columns.emplace_back(split, std::move(rows));
    }
    const fs::path dir = fs::path(cfg.out) / "plots" / data::to_string(mode);
    auto written = plots::emit_violins(columns, dir);
    info("wrote " + std::to_string(written.size()) + " violin plots to " + dir.string());
    return written;
}

}  // namespace cva::pipeline
