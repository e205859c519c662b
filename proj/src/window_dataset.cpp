#include "cva/window_dataset.hpp"

#include <stdexcept>

#include "cva/corpus_io.hpp"

namespace cva::data {
namespace {

torch::Tensor states_tensor(const std::vector<StateVector>& states) {
    auto t = torch::empty({static_cast<int64_t>(states.size()), kStateDim}, policy::kDType);
    auto a = t.accessor<double, 2>();
    for (std::size_t i = 0; i < states.size(); ++i)
        for (int d = 0; d < kStateDim; ++d) a[static_cast<int64_t>(i)][d] = states[i][d];
    return t;
}

}  // namespace

std::string to_string(SplitRole role) {
    switch (role) {
        case SplitRole::train: return "train";
        case SplitRole::val: return "val";
        case SplitRole::test: return "test";
    }
    return "?";
}

EncodedEpisodePtr encode_episode(const Episode& episode, const encoder::VisionEncoder* encoder) {
    auto out = std::make_shared<EncodedEpisode>();
    out->id = episode.id();
    out->scenario_id = episode.scenario_id;
    out->repetition_id = episode.repetition_id;
    out->states = episode.states;
    if (encoder) {
        if (episode.frames.size() != episode.states.size())
            throw std::invalid_argument("encode_episode: frames not loaded for episode " + episode.id());
        const int size = encoder->image_size();
        std::vector<NormalizedFrame> frames;
        frames.reserve(episode.frames.size());
        for (const Image& img : episode.frames)
            frames.push_back(normalize_frame(io::resize_image(img, size), encoder->channel_norm()));
        out->tokens = encoder->encode_frames(frames);
        const Image& goal = episode.goal.empty() ? episode.frames[select_goal_image(episode)] : episode.goal;
        out->goal = encoder->encode_goal(normalize_frame(io::resize_image(goal, size), encoder->channel_norm()));
    }
    return out;
}

EncodedEpisodePtr encode_episode_dir(const std::filesystem::path& dir, const Episode& meta,
                                     const encoder::VisionEncoder* encoder, std::size_t chunk) {
    auto out = std::make_shared<EncodedEpisode>();
    out->id = meta.id();
    out->scenario_id = meta.scenario_id;
    out->repetition_id = meta.repetition_id;
    out->states = meta.states;
    if (!encoder) return out;
    const int size = encoder->image_size();
    std::vector<torch::Tensor> parts;
    for (std::size_t s = 0; s < meta.states.size(); s += chunk) {
        std::vector<NormalizedFrame> frames;
        for (std::size_t t = s; t < std::min(meta.states.size(), s + chunk); ++t)
            frames.push_back(normalize_frame(io::resize_image(io::read_frame(dir, t), size), encoder->channel_norm()));
        parts.push_back(encoder->encode_frames(frames));
    }
    out->tokens = torch::cat(parts, 0);
    out->goal = encoder->encode_goal(normalize_frame(io::resize_image(io::read_png(dir / "goal.png"), size), encoder->channel_norm()));
    return out;
}

WindowDataset::WindowDataset(std::vector<EncodedEpisodePtr> episodes, std::size_t seq_len, std::size_t stride,
                             const Stats& stats, SplitRole role)
    : episodes_(std::move(episodes)), seq_len_(seq_len), stats_(stats), role_(role) {
    for (std::size_t e = 0; e < episodes_.size(); ++e) {
        const auto& ep = *episodes_[e];
        if (ep.tokens.defined() && ep.tokens.size(0) != static_cast<int64_t>(ep.states.size()))
            throw std::invalid_argument("WindowDataset: token count differs from state count in " + ep.id);
        standardized_.push_back(states_tensor(standardize_states(ep.states, stats_)));
        const std::size_t count = window_count(ep.states.size(), seq_len, stride);
        for (std::size_t k = 0; k < count; ++k) windows_.push_back({e, k * stride});
    }
}

bool WindowDataset::has_frames() const {
    for (const auto& ep : episodes_)
        if (!ep->tokens.defined()) return false;
    return !episodes_.empty();
}

WindowSample WindowDataset::sample(std::size_t i) const {
    const WindowRef& w = windows_.at(i);
    const EncodedEpisode& ep = *episodes_[w.episode];
    WindowSample s;
    s.episode_id = ep.id;
    s.start_index = w.start;
    s.states = standardize_states(std::span(ep.states).subspan(w.start, seq_len_), stats_);
    s.target = ep.states[w.start + seq_len_];
    s.goal_frame_index = ep.states.size() - 1;
    return s;
}

void WindowDataset::set_goal_override(std::vector<torch::Tensor> goals) {
    if (goals.size() != episodes_.size()) throw std::invalid_argument("set_goal_override: one goal per episode required");
    goal_override_ = std::move(goals);
}

policy::Batch WindowDataset::batch(std::span<const std::size_t> indices, Access access) const {
    if (indices.empty()) throw std::invalid_argument("WindowDataset::batch: empty index list");
    if (access == Access::gradient) {
        if (role_ != SplitRole::train)
            throw std::logic_error("gradient access to the " + to_string(role_) + " split is not allowed");
        gradient_reads_ += indices.size();
    } else {
        evaluation_reads_ += indices.size();
    }
    const bool frames = has_frames();
    std::vector<torch::Tensor> f, s, g;
    auto target = torch::empty({static_cast<int64_t>(indices.size()), kStateDim}, policy::kDType);
    auto ta = target.accessor<double, 2>();
    const auto n = static_cast<int64_t>(seq_len_);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const WindowRef& w = windows_.at(indices[b]);
        const EncodedEpisode& ep = *episodes_[w.episode];
        const auto start = static_cast<int64_t>(w.start);
        s.push_back(standardized_[w.episode].narrow(0, start, n));
        if (frames) {
            f.push_back(ep.tokens.narrow(0, start, n));
            g.push_back(goal_override_.empty() ? ep.goal : goal_override_[w.episode]);
        }
        const StateVector& next = ep.states[w.start + seq_len_];
        for (int d = 0; d < kStateDim; ++d) ta[static_cast<int64_t>(b)][d] = next[d];
    }
    policy::Batch out;
    out.states = torch::stack(s);
    out.target = target;
    if (frames) {
        out.frames = torch::stack(f);
        out.goal = torch::stack(g);
    }
    return out;
}

}  // namespace cva::data
