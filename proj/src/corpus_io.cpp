#include "cva/corpus_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cva/hash.hpp"

namespace cva::io {
namespace {

constexpr int kManifestVersion = 1;

std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.png", index);
    return buf;
}

nlohmann::json stats_to_json(const data::Stats& s) {
    nlohmann::json j;
    j["rows"] = s.rows;
    for (int d = 0; d < kStateDim; ++d) {
        j[std::string(kStateNames[d])] = {{"mean", s.mean[d]}, {"std", s.std[d]}, {"min", s.min[d]}, {"max", s.max[d]}};
    }
    j["fingerprint"] = s.fingerprint();
    return j;
}

data::Stats stats_from_json(const nlohmann::json& j) {
    data::Stats s;
    s.rows = j.at("rows").get<std::size_t>();
    for (int d = 0; d < kStateDim; ++d) {
        const auto& e = j.at(std::string(kStateNames[d]));
        s.mean[d] = e.at("mean").get<double>();
        s.std[d] = e.at("std").get<double>();
        s.min[d] = e.at("min").get<double>();
        s.max[d] = e.at("max").get<double>();
    }
    if (j.contains("fingerprint") && j["fingerprint"].get<std::string>() != s.fingerprint())
        throw std::runtime_error("manifest stats fingerprint does not match its values");
    return s;
}

}  // namespace

void write_png(const fs::path& path, const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("write_png: expected an RGB image");
    cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("failed to write " + path.string());
}

Image read_png(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("failed to read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image out(rgb.cols, rgb.rows, 3);
    std::copy(rgb.datastart, rgb.dataend, out.pixels.begin());
    return out;
}

Image resize_image(const Image& image, int size) {
    if (image.width == size && image.height == size) return image;
    if (size < 1) throw std::invalid_argument("resize_image: size must be positive");
    cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size, size), 0, 0, size < image.width ? cv::INTER_AREA : cv::INTER_LINEAR);
    Image out(size, size, 3);
    std::copy(dst.datastart, dst.dataend, out.pixels.begin());
    return out;
}

fs::path episode_dir(const fs::path& corpus_root, int scenario, int repetition) {
    return corpus_root / std::to_string(scenario) / std::to_string(repetition);
}

void write_states_csv(const fs::path& path, const std::vector<StateVector>& states) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "t,translation,rotation,knob\n";
    for (std::size_t t = 0; t < states.size(); ++t) {
        out << t << ',' << exact(states[t].translation) << ',' << exact(states[t].rotation) << ','
            << exact(states[t].knob) << '\n';
    }
}

std::vector<StateVector> read_states_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "t,translation,rotation,knob") throw std::runtime_error("bad states.csv header in " + path.string());
    std::vector<StateVector> states;
    std::size_t expected_t = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw std::runtime_error("malformed row in " + path.string());
        if (std::stoul(cells[0]) != expected_t++) throw std::runtime_error("non-contiguous t in " + path.string());
        StateVector s{std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
        if (!s.in_range()) throw std::runtime_error("state out of [-1, 1] in " + path.string());
        states.push_back(s);
    }
    return states;
}

void write_episode(const fs::path& corpus_root, const data::Episode& episode, const nlohmann::json& extra) {
    if (episode.frames.size() != episode.states.size())
        throw std::invalid_argument("write_episode: frames and states differ in length");
    const fs::path dir = episode_dir(corpus_root, episode.scenario_id, episode.repetition_id);
    fs::create_directories(dir / "frames");
    for (std::size_t t = 0; t < episode.frames.size(); ++t) write_png(dir / "frames" / frame_name(t), episode.frames[t]);
    write_states_csv(dir / "states.csv", episode.states);
    write_png(dir / "goal.png", episode.goal);
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["scenario_id"] = episode.scenario_id;
    meta["repetition_id"] = episode.repetition_id;
    meta["length"] = episode.states.size();
    meta["goal_frame_index"] = data::select_goal_image(episode);
    write_json(dir / "episode.json", meta);
}

Image read_frame(const fs::path& dir, std::size_t index) { return read_png(dir / "frames" / frame_name(index)); }

data::Episode read_episode(const fs::path& dir, bool load_frames) {
    const nlohmann::json meta = read_json(dir / "episode.json");
    data::Episode ep;
    ep.scenario_id = meta.at("scenario_id").get<int>();
    ep.repetition_id = meta.at("repetition_id").get<int>();
    ep.states = read_states_csv(dir / "states.csv");
    const std::size_t length = meta.at("length").get<std::size_t>();
    if (ep.states.size() != length) throw std::runtime_error("episode length mismatch in " + dir.string());
    if (length < 2) throw std::runtime_error("episode shorter than 2 steps in " + dir.string());
    for (std::size_t t = 0; t < length; ++t) {
        if (!fs::exists(dir / "frames" / frame_name(t))) throw std::runtime_error("missing frame " + std::to_string(t) + " in " + dir.string());
    }
    if (!fs::exists(dir / "goal.png")) throw std::runtime_error("missing goal.png in " + dir.string());
    if (load_frames) {
        for (std::size_t t = 0; t < length; ++t) ep.frames.push_back(read_frame(dir, t));
        ep.goal = read_png(dir / "goal.png");
    }
    return ep;
}

CorpusScan scan_corpus(const fs::path& corpus_root, bool load_frames) {
    if (!fs::is_directory(corpus_root)) throw std::runtime_error("corpus directory not found: " + corpus_root.string());
    std::vector<std::pair<std::pair<int, int>, fs::path>> found;
    for (const auto& scen : fs::directory_iterator(corpus_root)) {
        if (!scen.is_directory()) continue;
        int s = 0;
        try {
            s = std::stoi(scen.path().filename().string());
        } catch (const std::exception&) {
            continue;
        }
        for (const auto& rep : fs::directory_iterator(scen.path())) {
            if (!rep.is_directory()) continue;
            try {
                found.push_back({{s, std::stoi(rep.path().filename().string())}, rep.path()});
            } catch (const std::exception&) {
            }
        }
    }
    std::sort(found.begin(), found.end());
    CorpusScan scan;
    for (const auto& [key, dir] : found) {
        try {
            data::Episode ep = read_episode(dir, load_frames);
            if (ep.scenario_id != key.first || ep.repetition_id != key.second)
                throw std::runtime_error("episode.json ids disagree with directory " + dir.string());
            scan.episodes.push_back(std::move(ep));
            scan.dirs.push_back(dir);
        } catch (const std::exception& e) {
            scan.warnings.push_back(std::string("skipping ") + dir.string() + ": " + e.what());
        }
    }
    return scan;
}

nlohmann::json manifest_to_json(const data::SplitManifest& m) {
    nlohmann::json j;
    j["format"] = "cva-manifest";
    j["version"] = kManifestVersion;
    j["mode"] = data::to_string(m.mode);
    j["train"] = m.train;
    j["val"] = m.val;
    j["test"] = m.test;
    j["stats"] = stats_to_json(m.stats);
    return j;
}

data::SplitManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "cva-manifest") throw std::runtime_error("not a manifest file");
    if (j.at("version").get<int>() != kManifestVersion) throw std::runtime_error("unsupported manifest version");
    data::SplitManifest m;
    m.mode = data::parse_split_mode(j.at("mode").get<std::string>());
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    m.stats = stats_from_json(j.at("stats"));
    return m;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

}  // namespace cva::io
