#pragma once

// Vision-action policy: state projection, learnable positional embeddings,
// masked causal cross-attention from states to visual tokens, a causal
// temporal transformer, gated goal fusion and an MLP action head.
//
// Shapes (B = batch):
//   frames [B, N, P, d]   states [B, N, 3]   goal [B, d]   action [B, 3]

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace cva::policy {

inline constexpr auto kDType = torch::kFloat64;

struct PolicyConfig {
    int seq_len = 50;  // N
    int tokens = 257;  // P, CLS included
    int dim = 384;     // d
    int cross_heads = 8;
    int tf_layers = 4;
    int tf_heads = 8;
    int ffn_dim = 1024;
    std::vector<int> head_dims{512, 256, 128, 3};
    double dropout = 0.1;  // inside transformer layers only
    double mask_neg = -1e9;
    double ln_eps = 1e-5;

    void validate() const;
    nlohmann::json to_json() const;
    static PolicyConfig from_json(const nlohmann::json& j);
};

// Additive mask [N, N*P]; keys are frame-major. Row t is 0 for frames t' <= t, mask_neg otherwise.
torch::Tensor build_cross_mask(int n, int p, double mask_neg = -1e9);

// Additive mask [N, N] allowing t' <= t.
torch::Tensor build_causal_mask(int n, double mask_neg = -1e9);

class MultiHeadAttentionImpl : public torch::nn::Module {
  public:
    MultiHeadAttentionImpl(int dim, int heads);

    // query [B, Lq, d], memory [B, Lk, d], additive mask [Lq, Lk] (may be undefined)
    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& memory, const torch::Tensor& mask);

    // Same computation, also exposing per-head weights [B, h, Lq, Lk] and the
    // concatenated head outputs before the output projection [B, Lq, d].
    struct Trace {
        torch::Tensor output;
        torch::Tensor weights;
        torch::Tensor context;
    };
    Trace forward_trace(const torch::Tensor& query, const torch::Tensor& memory, const torch::Tensor& mask);

    int heads() const { return heads_; }
    torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};

  private:
    int heads_;
    int dim_;
};
TORCH_MODULE(MultiHeadAttention);

// H = LN(MHA(LN(S~), LN(flatten(F~)), LN(flatten(F~)); M))
class CausalCrossAttentionImpl : public torch::nn::Module {
  public:
    CausalCrossAttentionImpl(const PolicyConfig& cfg);
    torch::Tensor forward(const torch::Tensor& states, const torch::Tensor& frames);

    torch::nn::LayerNorm state_norm{nullptr}, frame_norm{nullptr}, out_norm{nullptr};
    MultiHeadAttention attn{nullptr};

  private:
    torch::Tensor mask_;
    int seq_len_;
    int tokens_;
};
TORCH_MODULE(CausalCrossAttention);

// Pre-LN encoder layer with GELU feed-forward and a causal self-attention mask.
class TransformerLayerImpl : public torch::nn::Module {
  public:
    TransformerLayerImpl(const PolicyConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    MultiHeadAttention self_attn{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::nn::Dropout drop_attn{nullptr}, drop_ffn{nullptr}, drop_out{nullptr};
};
TORCH_MODULE(TransformerLayer);

class TemporalEncoderImpl : public torch::nn::Module {
  public:
    TemporalEncoderImpl(const PolicyConfig& cfg);
    torch::Tensor forward(const torch::Tensor& h);

    torch::nn::ModuleList layers{nullptr};

  private:
    torch::Tensor mask_;
};
TORCH_MODULE(TemporalEncoder);

// Z = G * LN(H^) + (1 - G) * g,  G = sigmoid([LN(H^) || g] W + b)
class GatedGoalFusionImpl : public torch::nn::Module {
  public:
    GatedGoalFusionImpl(const PolicyConfig& cfg);
    torch::Tensor forward(const torch::Tensor& contextual, const torch::Tensor& goal, bool bypass = false);
    torch::Tensor gate_values(const torch::Tensor& contextual, const torch::Tensor& goal);

    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear gate{nullptr};
};
TORCH_MODULE(GatedGoalFusion);

// MLP on the last timestep only; ReLU between layers, linear output.
class ActionHeadImpl : public torch::nn::Module {
  public:
    ActionHeadImpl(int in_dim, const std::vector<int>& dims);
    torch::Tensor forward(const torch::Tensor& z);

    torch::nn::ModuleList layers{nullptr};
};
TORCH_MODULE(ActionHead);

// Input bundle for the sequence regressors. `frames` and `goal` may be undefined
// for kinematics-only models.
struct Batch {
    torch::Tensor frames;  // [B, N, P, d]
    torch::Tensor states;  // [B, N, 3] standardized
    torch::Tensor goal;    // [B, d]
    torch::Tensor target;  // [B, 3] raw units
};

struct ForwardOptions {
    bool bypass_goal = false;  // GGF off: Z = LN(H^)
};

// Common interface used by the trainer and the evaluation harness.
class Regressor : public torch::nn::Module {
  public:
    virtual torch::Tensor predict(const Batch& batch, const ForwardOptions& opts = {}) = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json config_json() const = 0;
    virtual bool uses_vision() const = 0;

    std::int64_t trainable_parameter_count() const;
};

class CvaPolicy : public Regressor {
  public:
    explicit CvaPolicy(const PolicyConfig& cfg);

    const PolicyConfig& config() const { return cfg_; }

    torch::Tensor project_states(const torch::Tensor& states);  // [B,N,3] -> [B,N,d]
    std::pair<torch::Tensor, torch::Tensor> add_positional(const torch::Tensor& frames,
                                                           const torch::Tensor& projected);
    torch::Tensor cross_attend(const torch::Tensor& states_pos, const torch::Tensor& frames_pos);
    torch::Tensor temporal_encode(const torch::Tensor& fused);
    torch::Tensor gated_goal_fusion(const torch::Tensor& contextual, const torch::Tensor& goal, bool bypass = false);
    torch::Tensor action_head(const torch::Tensor& z);

    struct Stages {
        torch::Tensor projected;     // S^
        torch::Tensor states_pos;    // S~
        torch::Tensor frames_pos;    // F~
        torch::Tensor fused;         // H
        torch::Tensor contextual;    // H^
        torch::Tensor conditioned;   // Z
        torch::Tensor action;        // a^
    };
    Stages forward_stages(const torch::Tensor& frames, const torch::Tensor& states, const torch::Tensor& goal,
                          const ForwardOptions& opts = {});

    torch::Tensor forward(const torch::Tensor& frames, const torch::Tensor& states, const torch::Tensor& goal,
                          const ForwardOptions& opts = {});

    torch::Tensor predict(const Batch& batch, const ForwardOptions& opts = {}) override;
    std::string kind() const override { return "cva"; }
    nlohmann::json config_json() const override { return cfg_.to_json(); }
    bool uses_vision() const override { return true; }

    torch::nn::Linear state_proj{nullptr};
    torch::Tensor state_pos;  // E_S [N, d]
    torch::Tensor frame_pos;  // E_F [N, d]
    CausalCrossAttention cross{nullptr};
    TemporalEncoder temporal{nullptr};
    GatedGoalFusion fusion{nullptr};
    ActionHead head{nullptr};

  private:
    PolicyConfig cfg_;
};

struct ParamCount {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
};

// total includes the frozen encoder weights
ParamCount count_params(const PolicyConfig& cfg, std::int64_t frozen_encoder_params);

}  // namespace cva::policy
