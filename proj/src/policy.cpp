#include "cva/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace cva::policy {
namespace {

void check_rank(const torch::Tensor& t, int64_t rank, const char* what) {
    if (!t.defined() || t.dim() != rank)
        throw std::invalid_argument(std::string(what) + ": expected a rank-" + std::to_string(rank) + " tensor");
}

}  // namespace

void PolicyConfig::validate() const {
    if (seq_len < 1 || tokens < 1 || dim < 1) throw std::invalid_argument("PolicyConfig: N, P and d must be >= 1");
    if (cross_heads < 1 || dim % cross_heads != 0) throw std::invalid_argument("PolicyConfig: d must be divisible by cross_heads");
    if (tf_heads < 1 || dim % tf_heads != 0) throw std::invalid_argument("PolicyConfig: d must be divisible by tf_heads");
    if (tf_layers < 0 || ffn_dim < 1) throw std::invalid_argument("PolicyConfig: bad transformer size");
    if (head_dims.empty() || head_dims.back() != 3) throw std::invalid_argument("PolicyConfig: head_dims must end in 3");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("PolicyConfig: dropout must be in [0, 1)");
}

nlohmann::json PolicyConfig::to_json() const {
    return {{"seq_len", seq_len},   {"tokens", tokens},     {"dim", dim},         {"cross_heads", cross_heads},
            {"tf_layers", tf_layers}, {"tf_heads", tf_heads}, {"ffn_dim", ffn_dim}, {"head_dims", head_dims},
            {"dropout", dropout},   {"mask_neg", mask_neg}, {"ln_eps", ln_eps}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.seq_len = j.value("seq_len", c.seq_len);
    c.tokens = j.value("tokens", c.tokens);
    c.dim = j.value("dim", c.dim);
    c.cross_heads = j.value("cross_heads", c.cross_heads);
    c.tf_layers = j.value("tf_layers", c.tf_layers);
    c.tf_heads = j.value("tf_heads", c.tf_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.head_dims = j.value("head_dims", c.head_dims);
    c.dropout = j.value("dropout", c.dropout);
    c.mask_neg = j.value("mask_neg", c.mask_neg);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.validate();
    return c;
}

torch::Tensor build_cross_mask(int n, int p, double mask_neg) {
    if (n < 1 || p < 1) throw std::invalid_argument("build_cross_mask: N and P must be >= 1");
    auto frame_of_key = torch::arange(static_cast<int64_t>(n) * p, torch::kInt64).div(p, "floor");
    auto query_t = torch::arange(n, torch::kInt64).unsqueeze(1);
    auto blocked = frame_of_key.unsqueeze(0) > query_t;
    return torch::zeros({n, static_cast<int64_t>(n) * p}, kDType).masked_fill(blocked, mask_neg);
}

torch::Tensor build_causal_mask(int n, double mask_neg) { return build_cross_mask(n, 1, mask_neg); }

// ---- attention --------------------------------------------------------------

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int dim, int heads) : heads_(heads), dim_(dim) {
    if (heads < 1 || dim % heads != 0) throw std::invalid_argument("MultiHeadAttention: dim must be divisible by heads");
    q_proj = register_module("q_proj", torch::nn::Linear(dim, dim));
    k_proj = register_module("k_proj", torch::nn::Linear(dim, dim));
    v_proj = register_module("v_proj", torch::nn::Linear(dim, dim));
    out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
}

MultiHeadAttentionImpl::Trace MultiHeadAttentionImpl::forward_trace(const torch::Tensor& query,
                                                                     const torch::Tensor& memory,
                                                                     const torch::Tensor& mask) {
    check_rank(query, 3, "attention query");
    check_rank(memory, 3, "attention memory");
    if (query.size(0) != memory.size(0) || query.size(2) != dim_ || memory.size(2) != dim_)
        throw std::invalid_argument("attention: query/memory shape mismatch");
    const auto b = query.size(0), lq = query.size(1), lk = memory.size(1);
    const int64_t dh = dim_ / heads_;
    if (mask.defined() && (mask.size(0) != lq || mask.size(1) != lk))
        throw std::invalid_argument("attention: mask shape does not match query/key lengths");

    auto split = [&](const torch::Tensor& x, int64_t len) { return x.view({b, len, heads_, dh}).transpose(1, 2); };
    const auto q = split(q_proj(query), lq);
    const auto k = split(k_proj(memory), lk);
    const auto v = split(v_proj(memory), lk);

    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
    if (mask.defined()) scores = scores + mask;
    const auto weights = torch::softmax(scores, -1);
    const auto context = torch::matmul(weights, v).transpose(1, 2).reshape({b, lq, dim_});
    return {out_proj(context), weights, context};
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& memory,
                                              const torch::Tensor& mask) {
    return forward_trace(query, memory, mask).output;
}

CausalCrossAttentionImpl::CausalCrossAttentionImpl(const PolicyConfig& cfg)
    : seq_len_(cfg.seq_len), tokens_(cfg.tokens) {
    const auto ln = torch::nn::LayerNormOptions({cfg.dim}).eps(cfg.ln_eps);
    state_norm = register_module("state_norm", torch::nn::LayerNorm(ln));
    frame_norm = register_module("frame_norm", torch::nn::LayerNorm(ln));
    attn = register_module("attn", MultiHeadAttention(cfg.dim, cfg.cross_heads));
    out_norm = register_module("out_norm", torch::nn::LayerNorm(ln));
    mask_ = register_buffer("mask", build_cross_mask(cfg.seq_len, cfg.tokens, cfg.mask_neg));
}

torch::Tensor CausalCrossAttentionImpl::forward(const torch::Tensor& states, const torch::Tensor& frames) {
    check_rank(states, 3, "cross_attend states");
    check_rank(frames, 4, "cross_attend frames");
    if (states.size(1) != seq_len_ || frames.size(1) != seq_len_ || frames.size(2) != tokens_ ||
        frames.size(0) != states.size(0) || frames.size(3) != states.size(2))
        throw std::invalid_argument("cross_attend: shapes do not match the configured N, P, d");
    const auto keys = frame_norm(frames.flatten(1, 2));  // [B, N*P, d], frame-major
    return out_norm(attn(state_norm(states), keys, mask_));
}

TransformerLayerImpl::TransformerLayerImpl(const PolicyConfig& cfg) {
    const auto ln = torch::nn::LayerNormOptions({cfg.dim}).eps(cfg.ln_eps);
    norm1 = register_module("norm1", torch::nn::LayerNorm(ln));
    self_attn = register_module("self_attn", MultiHeadAttention(cfg.dim, cfg.tf_heads));
    norm2 = register_module("norm2", torch::nn::LayerNorm(ln));
    fc1 = register_module("fc1", torch::nn::Linear(cfg.dim, cfg.ffn_dim));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.ffn_dim, cfg.dim));
    drop_attn = register_module("drop_attn", torch::nn::Dropout(cfg.dropout));
    drop_ffn = register_module("drop_ffn", torch::nn::Dropout(cfg.dropout));
    drop_out = register_module("drop_out", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
    const auto h = norm1(x);
    auto y = x + drop_attn(self_attn(h, h, mask));
    return y + drop_out(fc2(drop_ffn(torch::gelu(fc1(norm2(y))))));
}

TemporalEncoderImpl::TemporalEncoderImpl(const PolicyConfig& cfg) {
    layers = register_module("layers", torch::nn::ModuleList());
    for (int i = 0; i < cfg.tf_layers; ++i) layers->push_back(TransformerLayer(cfg));
    mask_ = register_buffer("mask", build_causal_mask(cfg.seq_len, cfg.mask_neg));
}

torch::Tensor TemporalEncoderImpl::forward(const torch::Tensor& h) {
    check_rank(h, 3, "temporal_encode");
    auto x = h;
    for (const auto& layer : *layers) x = layer->as<TransformerLayerImpl>()->forward(x, mask_);
    return x;
}

GatedGoalFusionImpl::GatedGoalFusionImpl(const PolicyConfig& cfg) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.dim}).eps(cfg.ln_eps)));
    gate = register_module("gate", torch::nn::Linear(2 * cfg.dim, cfg.dim));
}

torch::Tensor GatedGoalFusionImpl::gate_values(const torch::Tensor& contextual, const torch::Tensor& goal) {
    const auto h = norm(contextual);
    const auto g = goal.unsqueeze(1).expand_as(h);
    return torch::sigmoid(gate(torch::cat({h, g}, -1)));
}

torch::Tensor GatedGoalFusionImpl::forward(const torch::Tensor& contextual, const torch::Tensor& goal, bool bypass) {
    check_rank(contextual, 3, "gated_goal_fusion");
    const auto h = norm(contextual);
    if (bypass) return h;
    check_rank(goal, 2, "gated_goal_fusion goal");
    if (goal.size(0) != h.size(0) || goal.size(1) != h.size(2))
        throw std::invalid_argument("gated_goal_fusion: goal shape mismatch");
    const auto g = goal.unsqueeze(1).expand_as(h);
    const auto G = torch::sigmoid(gate(torch::cat({h, g}, -1)));
    return G * h + (1.0 - G) * g;
}

ActionHeadImpl::ActionHeadImpl(int in_dim, const std::vector<int>& dims) {
    layers = register_module("layers", torch::nn::ModuleList());
    int prev = in_dim;
    for (int d : dims) {
        layers->push_back(torch::nn::Linear(prev, d));
        prev = d;
    }
}

torch::Tensor ActionHeadImpl::forward(const torch::Tensor& z) {
    check_rank(z, 3, "action_head");
    auto x = z.select(1, z.size(1) - 1);
    const auto n = layers->size();
    for (std::size_t i = 0; i < n; ++i) {
        x = layers[i]->as<torch::nn::LinearImpl>()->forward(x);
        if (i + 1 < n) x = torch::relu(x);
    }
    return x;
}

// ---- full policy -------------------------------------------------------------

std::int64_t Regressor::trainable_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters())
        if (p.requires_grad()) n += p.numel();
    return n;
}

CvaPolicy::CvaPolicy(const PolicyConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    state_proj = register_module("state_proj", torch::nn::Linear(3, cfg.dim));
    state_pos = register_parameter("state_pos", torch::randn({cfg.seq_len, cfg.dim}) * 0.02);
    frame_pos = register_parameter("frame_pos", torch::randn({cfg.seq_len, cfg.dim}) * 0.02);
    cross = register_module("cross", CausalCrossAttention(cfg));
    temporal = register_module("temporal", TemporalEncoder(cfg));
    fusion = register_module("fusion", GatedGoalFusion(cfg));
    head = register_module("head", ActionHead(cfg.dim, cfg.head_dims));
    to(kDType);
}

torch::Tensor CvaPolicy::project_states(const torch::Tensor& states) {
    check_rank(states, 3, "project_states");
    if (states.size(2) != 3) throw std::invalid_argument("project_states: expected 3 state components");
    return state_proj(states);
}

std::pair<torch::Tensor, torch::Tensor> CvaPolicy::add_positional(const torch::Tensor& frames,
                                                                  const torch::Tensor& projected) {
    check_rank(frames, 4, "add_positional frames");
    check_rank(projected, 3, "add_positional states");
    if (frames.size(1) != cfg_.seq_len || projected.size(1) != cfg_.seq_len)
        throw std::invalid_argument("add_positional: sequence length must equal N = " + std::to_string(cfg_.seq_len));
    // E_F[t] is shared by every token of frame t
    return {frames + frame_pos.unsqueeze(1), projected + state_pos};
}

torch::Tensor CvaPolicy::cross_attend(const torch::Tensor& states_pos, const torch::Tensor& frames_pos) {
    return cross(states_pos, frames_pos);
}

torch::Tensor CvaPolicy::temporal_encode(const torch::Tensor& fused) { return temporal(fused); }

torch::Tensor CvaPolicy::gated_goal_fusion(const torch::Tensor& contextual, const torch::Tensor& goal, bool bypass) {
    return fusion(contextual, goal, bypass);
}

torch::Tensor CvaPolicy::action_head(const torch::Tensor& z) { return head(z); }

CvaPolicy::Stages CvaPolicy::forward_stages(const torch::Tensor& frames, const torch::Tensor& states,
                                            const torch::Tensor& goal, const ForwardOptions& opts) {
    Stages s;
    s.projected = project_states(states);
    std::tie(s.frames_pos, s.states_pos) = add_positional(frames, s.projected);
    s.fused = cross_attend(s.states_pos, s.frames_pos);
    s.contextual = temporal_encode(s.fused);
    s.conditioned = gated_goal_fusion(s.contextual, goal, opts.bypass_goal);
    s.action = action_head(s.conditioned);
    return s;
}

torch::Tensor CvaPolicy::forward(const torch::Tensor& frames, const torch::Tensor& states, const torch::Tensor& goal,
                                 const ForwardOptions& opts) {
    return forward_stages(frames, states, goal, opts).action;
}

torch::Tensor CvaPolicy::predict(const Batch& batch, const ForwardOptions& opts) {
    return forward(batch.frames, batch.states, batch.goal, opts);
}

ParamCount count_params(const PolicyConfig& cfg, std::int64_t frozen_encoder_params) {
    CvaPolicy model(cfg);
    ParamCount c;
    c.trainable = model.trainable_parameter_count();
    c.total = c.trainable + frozen_encoder_params;
    return c;
}

}  // namespace cva::policy
