#include "cva/lstm_baseline.hpp"

#include <stdexcept>

namespace cva::policy {

LstmBaseline::LstmBaseline(const LstmConfig& cfg) : cfg_(cfg) {
    if (cfg.hidden < 1 || cfg.layers < 1 || cfg.seq_len < 1) throw std::invalid_argument("LstmConfig: sizes must be >= 1");
    lstm_ = register_module("lstm", torch::nn::LSTM(torch::nn::LSTMOptions(3, cfg.hidden).num_layers(cfg.layers).batch_first(true)));
    readout_ = register_module("readout", torch::nn::Linear(cfg.hidden, 3));
    to(kDType);
}

torch::Tensor LstmBaseline::forward(const torch::Tensor& states) {
    if (!states.defined() || states.dim() != 3 || states.size(2) != 3)
        throw std::invalid_argument("LstmBaseline: expected states [B, N, 3]");
    const auto out = std::get<0>(lstm_->forward(states));
    return readout_(out.select(1, out.size(1) - 1));
}

torch::Tensor LstmBaseline::predict(const Batch& batch, const ForwardOptions&) { return forward(batch.states); }

}  // namespace cva::policy
