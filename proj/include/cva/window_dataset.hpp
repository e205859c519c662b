#pragma once

// Encoded episodes and the sliding-window sample store consumed by training
// and evaluation.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cva/dataset.hpp"
#include "cva/encoder.hpp"
#include "cva/policy.hpp"

namespace cva::data {

struct EncodedEpisode {
    std::string id;
    int scenario_id = 0;
    int repetition_id = 0;
    torch::Tensor tokens;  // [L, P, d]; undefined for kinematics-only pipelines
    torch::Tensor goal;    // [d] CLS embedding of the goal image
    std::vector<StateVector> states;
};

using EncodedEpisodePtr = std::shared_ptr<const EncodedEpisode>;

// Frames must be present in memory. A null encoder keeps states only.
EncodedEpisodePtr encode_episode(const Episode& episode, const encoder::VisionEncoder* encoder);

// Streams frames from an on-disk episode directory in chunks.
EncodedEpisodePtr encode_episode_dir(const std::filesystem::path& dir, const Episode& meta,
                                     const encoder::VisionEncoder* encoder, std::size_t chunk = 64);

enum class SplitRole { train, val, test };
std::string to_string(SplitRole role);

enum class Access {
    gradient,    // sample feeds an optimizer step; only allowed on the training split
    evaluation,  // forward pass without gradient
};

class WindowDataset {
  public:
    struct WindowRef {
        std::size_t episode = 0;
        std::size_t start = 0;
    };

    WindowDataset(std::vector<EncodedEpisodePtr> episodes, std::size_t seq_len, std::size_t stride, const Stats& stats,
                  SplitRole role);

    std::size_t size() const { return windows_.size(); }
    std::size_t seq_len() const { return seq_len_; }
    SplitRole role() const { return role_; }
    const Stats& stats() const { return stats_; }
    const WindowRef& window(std::size_t i) const { return windows_.at(i); }
    const std::vector<EncodedEpisodePtr>& episodes() const { return episodes_; }
    bool has_frames() const;

    // Standardized window states for sample i, in WindowSample form.
    WindowSample sample(std::size_t i) const;

    policy::Batch batch(std::span<const std::size_t> indices, Access access) const;

    // Per-episode goal embeddings replacing the episodes' own (false-goal evaluation).
    void set_goal_override(std::vector<torch::Tensor> goals);
    void clear_goal_override() { goal_override_.clear(); }

    std::size_t gradient_reads() const { return gradient_reads_; }
    std::size_t evaluation_reads() const { return evaluation_reads_; }

  private:
    std::vector<EncodedEpisodePtr> episodes_;
    std::vector<torch::Tensor> standardized_;  // per episode [L, 3]
    std::vector<WindowRef> windows_;
    std::vector<torch::Tensor> goal_override_;
    std::size_t seq_len_;
    Stats stats_;
    SplitRole role_;
    mutable std::size_t gradient_reads_ = 0;
    mutable std::size_t evaluation_reads_ = 0;
};

}  // namespace cva::data
