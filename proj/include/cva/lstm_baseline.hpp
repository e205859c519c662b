#pragma once

#include "cva/policy.hpp"

namespace cva::policy {

// Kinematics-only baseline: stacked LSTM over the standardized state window,
// linear readout of the last hidden state.
struct LstmConfig {
    int seq_len = 50;
    int hidden = 128;
    int layers = 2;

    nlohmann::json to_json() const { return {{"seq_len", seq_len}, {"hidden", hidden}, {"layers", layers}}; }
    static LstmConfig from_json(const nlohmann::json& j) {
        LstmConfig c;
        c.seq_len = j.value("seq_len", c.seq_len);
        c.hidden = j.value("hidden", c.hidden);
        c.layers = j.value("layers", c.layers);
        return c;
    }
};

class LstmBaseline : public Regressor {
  public:
    explicit LstmBaseline(const LstmConfig& cfg);

    torch::Tensor forward(const torch::Tensor& states);
    torch::Tensor predict(const Batch& batch, const ForwardOptions& opts = {}) override;
    std::string kind() const override { return "lstm"; }
    nlohmann::json config_json() const override { return cfg_.to_json(); }
    bool uses_vision() const override { return false; }

    const LstmConfig& config() const { return cfg_; }

  private:
    LstmConfig cfg_;
    torch::nn::LSTM lstm_{nullptr};
    torch::nn::Linear readout_{nullptr};
};

}  // namespace cva::policy
