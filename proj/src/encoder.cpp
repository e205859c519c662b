#include "cva/encoder.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace cva::encoder {
namespace {

torch::Tensor stack_frames(std::span<const NormalizedFrame> frames, int size, torch::Dtype dtype) {
    if (frames.empty()) throw std::invalid_argument("encode_frames: no frames");
    const auto plane = static_cast<std::int64_t>(size) * size;
    auto out = torch::empty({static_cast<std::int64_t>(frames.size()), 3, size, size}, torch::kFloat64);
    double* dst = out.data_ptr<double>();
    for (const NormalizedFrame& f : frames) {
        if (f.channels != 3) throw std::invalid_argument("encode_frames: expected 3-channel frames");
        if (f.height != size || f.width != size)
            throw std::invalid_argument("encode_frames: frame is " + std::to_string(f.width) + "x" +
                                        std::to_string(f.height) + ", encoder expects " + std::to_string(size) + "x" +
                                        std::to_string(size));
        std::copy(f.values.begin(), f.values.end(), dst);
        dst += 3 * plane;
    }
    return out.to(dtype);
}

// ---- ViT-S/14 with DINOv2 naming ------------------------------------------

struct Attention : torch::nn::Module {
    Attention(int dim, int heads) : heads(heads) {
        qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
        proj = register_module("proj", torch::nn::Linear(dim, dim));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        const auto b = x.size(0), n = x.size(1), c = x.size(2);
        auto parts = qkv(x).reshape({b, n, 3, heads, c / heads}).permute({2, 0, 3, 1, 4});
        auto q = parts[0] * (1.0 / std::sqrt(static_cast<double>(c / heads)));
        auto attn = torch::softmax(torch::matmul(q, parts[1].transpose(-2, -1)), -1);
        return proj(torch::matmul(attn, parts[2]).transpose(1, 2).reshape({b, n, c}));
    }
    int heads;
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
};

struct Mlp : torch::nn::Module {
    Mlp(int dim, int hidden) {
        fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
        fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
    }
    torch::Tensor forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};

struct LayerScale : torch::nn::Module {
    explicit LayerScale(int dim) { gamma = register_parameter("gamma", torch::ones({dim})); }
    torch::Tensor gamma;
};

struct Block : torch::nn::Module {
    Block(int dim, int heads) {
        norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
        attn = register_module("attn", std::make_shared<Attention>(dim, heads));
        ls1 = register_module("ls1", std::make_shared<LayerScale>(dim));
        norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
        mlp = register_module("mlp", std::make_shared<Mlp>(dim, 4 * dim));
        ls2 = register_module("ls2", std::make_shared<LayerScale>(dim));
    }
    torch::Tensor forward(torch::Tensor x) {
        x = x + attn->forward(norm1(x)) * ls1->gamma;
        return x + mlp->forward(norm2(x)) * ls2->gamma;
    }
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    std::shared_ptr<Attention> attn;
    std::shared_ptr<Mlp> mlp;
    std::shared_ptr<LayerScale> ls1, ls2;
};

struct PatchEmbed : torch::nn::Module {
    PatchEmbed(int patch, int dim) {
        proj = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, dim, patch).stride(patch)));
    }
    torch::nn::Conv2d proj{nullptr};
};

std::string resolve_weights(const EncoderConfig& cfg) {
    if (!cfg.weights_path.empty()) return cfg.weights_path;
    if (const char* env = std::getenv("CVA_DINOV2_WEIGHTS")) return env;
    return {};
}

}  // namespace

class DinoVisionTransformer : public torch::nn::Module {
  public:
    static constexpr int kPatch = 14;
    static constexpr int kDim = 384;
    static constexpr int kDepth = 12;
    static constexpr int kHeads = 6;
    static constexpr int kNativeGrid = 37;  // 518 px pretraining resolution

    DinoVisionTransformer() {
        patch_embed = register_module("patch_embed", std::make_shared<PatchEmbed>(kPatch, kDim));
        cls_token = register_parameter("cls_token", torch::zeros({1, 1, kDim}));
        pos_embed = register_parameter("pos_embed", torch::zeros({1, kNativeGrid * kNativeGrid + 1, kDim}));
        mask_token = register_parameter("mask_token", torch::zeros({1, kDim}));
        blocks = register_module("blocks", torch::nn::ModuleList());
        for (int i = 0; i < kDepth; ++i) blocks->push_back(std::make_shared<Block>(kDim, kHeads));
        norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({kDim}).eps(1e-6)));
    }

    void random_init(std::uint64_t seed) {
        torch::NoGradGuard guard;
        auto gen = at::detail::createCPUGenerator(seed);
        for (auto& p : parameters()) {
            if (p.dim() >= 2) p.normal_(0.0, 0.02, gen);
        }
    }

    void load_state_dict_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open encoder weights " + path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto dict = torch::pickle_load(bytes).toGenericDict();
        torch::NoGradGuard guard;
        for (auto& item : named_parameters()) {
            const c10::IValue key(item.key());
            if (!dict.contains(key)) throw std::runtime_error("encoder weights missing '" + item.key() + "'");
            const auto src = dict.at(key).toTensor();
            if (src.sizes() != item.value().sizes())
                throw std::runtime_error("encoder weight '" + item.key() + "' has an unexpected shape");
            item.value().copy_(src.to(torch::kFloat32));
        }
    }

    torch::Tensor forward(const torch::Tensor& images) {
        auto x = patch_embed->proj(images);
        const auto grid = x.size(2);
        x = x.flatten(2).transpose(1, 2);
        x = torch::cat({cls_token.expand({x.size(0), 1, kDim}), x}, 1);
        x = x + positional(grid);
        for (const auto& blk : *blocks) x = blk->as<Block>()->forward(x);
        return norm(x);
    }

  private:
    // Bicubic resampling of the native 37x37 grid, mirroring the DINOv2 reference
    // (0.1 offset on the scale factor).
    torch::Tensor positional(std::int64_t grid) {
        if (grid == kNativeGrid) return pos_embed;
        if (cached_grid_ != grid) {
            torch::NoGradGuard guard;
            auto patch_pos = pos_embed.narrow(1, 1, kNativeGrid * kNativeGrid)
                                 .reshape({1, kNativeGrid, kNativeGrid, kDim})
                                 .permute({0, 3, 1, 2});
            const double scale = (static_cast<double>(grid) + 0.1) / kNativeGrid;
            patch_pos = torch::nn::functional::interpolate(
                patch_pos, torch::nn::functional::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{scale, scale})
                               .mode(torch::kBicubic)
                               .align_corners(false)
                               .recompute_scale_factor(false));
            patch_pos = patch_pos.permute({0, 2, 3, 1}).reshape({1, grid * grid, kDim});
            cached_pos_ = torch::cat({pos_embed.narrow(1, 0, 1), patch_pos}, 1);
            cached_grid_ = grid;
        }
        return cached_pos_;
    }

  public:
    std::shared_ptr<PatchEmbed> patch_embed;
    torch::Tensor cls_token, pos_embed, mask_token;
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::LayerNorm norm{nullptr};

  private:
    std::int64_t cached_grid_ = -1;
    torch::Tensor cached_pos_;
};

EncoderConfig EncoderConfig::pretrained_defaults() {
    EncoderConfig cfg;
    cfg.backend = "pretrained";
    cfg.image_size = 224;
    cfg.patch_size = DinoVisionTransformer::kPatch;
    cfg.dim = DinoVisionTransformer::kDim;
    return cfg;
}

torch::Tensor VisionEncoder::encode_goal(const NormalizedFrame& image) const {
    return encode_frames(std::span(&image, 1)).select(0, 0).select(0, 0).clone();
}

torch::Tensor VisionEncoder::encode_images(std::span<const Image> images) const {
    std::vector<NormalizedFrame> frames;
    frames.reserve(images.size());
    for (const Image& img : images) frames.push_back(data::normalize_frame(img, channel_norm()));
    return encode_frames(frames);
}

StubEncoder::StubEncoder(const EncoderConfig& cfg)
    : image_size_(cfg.image_size), patch_(cfg.patch_size), grid_(0), dim_(cfg.dim) {
    if (patch_ < 1 || image_size_ < patch_ || image_size_ % patch_ != 0)
        throw std::invalid_argument("stub encoder: image_size must be a positive multiple of patch_size");
    if (dim_ < 1) throw std::invalid_argument("stub encoder: dim must be >= 1");
    grid_ = image_size_ / patch_;
    const int fan_in = 3 * patch_ * patch_;
    projection_ = torch::empty({fan_in, dim_}, torch::kFloat64);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    double* w = projection_.data_ptr<double>();
    for (std::int64_t i = 0; i < projection_.numel(); ++i) w[i] = gauss(rng);
}

torch::Tensor StubEncoder::encode_frames(std::span<const NormalizedFrame> frames) const {
    torch::NoGradGuard guard;
    const auto x = stack_frames(frames, image_size_, torch::kFloat64);
    const auto n = x.size(0);
    // [N, 3, g, p, g, p] -> [N, g*g, 3*p*p] with (channel, row, col) patch layout
    const auto patches = x.reshape({n, 3, grid_, patch_, grid_, patch_})
                             .permute({0, 2, 4, 1, 3, 5})
                             .reshape({n, grid_ * grid_, 3 * patch_ * patch_});
    const auto tokens = torch::matmul(patches, projection_);
    const auto cls = torch::matmul(patches.mean(1, true), projection_);
    return torch::cat({cls, tokens}, 1).contiguous();
}

PretrainedEncoder::PretrainedEncoder(const EncoderConfig& cfg)
    : image_size_(cfg.image_size), vit_(std::make_shared<DinoVisionTransformer>()) {
    if (image_size_ % DinoVisionTransformer::kPatch != 0)
        throw std::invalid_argument("pretrained encoder: image_size must be a multiple of 14");
    const std::string weights = resolve_weights(cfg);
    if (!weights.empty()) {
        vit_->load_state_dict_file(weights);
    } else if (cfg.random_init) {
        vit_->random_init(cfg.seed);
    } else {
        throw std::runtime_error(
            "pretrained encoder: no weights; set encoder.weights_path or CVA_DINOV2_WEIGHTS to a DINOv2 ViT-S/14 state_dict");
    }
    vit_->eval();
    for (auto& p : vit_->parameters()) p.requires_grad_(false);
}

PretrainedEncoder::~PretrainedEncoder() = default;

int PretrainedEncoder::tokens_per_frame() const {
    const int g = image_size_ / DinoVisionTransformer::kPatch;
    return g * g + 1;
}

int PretrainedEncoder::dim() const { return DinoVisionTransformer::kDim; }

torch::Tensor PretrainedEncoder::encode_frames(std::span<const NormalizedFrame> frames) const {
    torch::NoGradGuard guard;
    const auto x = stack_frames(frames, image_size_, torch::kFloat32);
    std::vector<torch::Tensor> chunks;
    constexpr std::int64_t kChunk = 8;
    for (std::int64_t s = 0; s < x.size(0); s += kChunk) {
        chunks.push_back(vit_->forward(x.narrow(0, s, std::min(kChunk, x.size(0) - s))));
    }
    return torch::cat(chunks, 0).to(torch::kFloat64).contiguous();
}

std::int64_t PretrainedEncoder::frozen_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : vit_->parameters()) n += p.numel();
    return n;
}

std::vector<torch::Tensor> PretrainedEncoder::frozen_state() const {
    std::vector<torch::Tensor> out;
    for (const auto& p : vit_->parameters()) out.push_back(p.detach().clone());
    return out;
}

std::unique_ptr<VisionEncoder> make_encoder(const EncoderConfig& cfg) {
    if (cfg.backend == "stub") return std::make_unique<StubEncoder>(cfg);
    if (cfg.backend == "pretrained") return std::make_unique<PretrainedEncoder>(cfg);
    throw std::invalid_argument("unknown encoder backend '" + cfg.backend + "' (expected stub|pretrained)");
}

}  // namespace cva::encoder
