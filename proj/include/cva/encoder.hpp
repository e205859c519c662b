#pragma once

// Frozen visual tokenizers. Both backends emit [N, P, d] float64 tokens with
// the CLS slot at index 0 and contribute no trainable parameters.

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include <torch/torch.h>

#include "cva/dataset.hpp"
#include "cva/image.hpp"

namespace cva::encoder {

struct EncoderConfig {
    std::string backend = "stub";  // "stub" | "pretrained"
    int image_size = 64;
    int patch_size = 16;  // stub only; the pretrained backbone uses 14
    int dim = 64;         // stub only; the pretrained backbone uses 384
    std::uint64_t seed = 0;
    std::string weights_path;  // pretrained; falls back to $CVA_DINOV2_WEIGHTS
    bool random_init = false;  // pretrained without weights, for shape checks only

    // Default configuration: ViT-S/14 at 224 px -> 257 tokens of width 384.
    static EncoderConfig pretrained_defaults();
};

class VisionEncoder {
  public:
    virtual ~VisionEncoder() = default;

    virtual int tokens_per_frame() const = 0;
    virtual int dim() const = 0;
    virtual int image_size() const = 0;
    virtual data::ChannelNorm channel_norm() const = 0;
    virtual std::string name() const = 0;

    // frames must be normalized with channel_norm(); returns [N, P, d]
    virtual torch::Tensor encode_frames(std::span<const NormalizedFrame> frames) const = 0;

    // CLS slot of encode_frames({image}); returns [d]
    torch::Tensor encode_goal(const NormalizedFrame& image) const;

    // normalize + encode raw RGB frames
    torch::Tensor encode_images(std::span<const Image> images) const;

    virtual std::int64_t frozen_parameter_count() const = 0;
    std::int64_t trainable_parameter_count() const { return 0; }

    // Flat copy of every frozen weight, used to audit that training never touches them.
    virtual std::vector<torch::Tensor> frozen_state() const = 0;
};

// Seeded random projection of raw patch pixels; CLS is the projection of the mean patch.
class StubEncoder final : public VisionEncoder {
  public:
    explicit StubEncoder(const EncoderConfig& cfg);

    int tokens_per_frame() const override { return grid_ * grid_ + 1; }
    int dim() const override { return dim_; }
    int image_size() const override { return image_size_; }
    data::ChannelNorm channel_norm() const override { return data::ChannelNorm::stub(); }
    std::string name() const override { return "stub"; }
    torch::Tensor encode_frames(std::span<const NormalizedFrame> frames) const override;
    std::int64_t frozen_parameter_count() const override { return 0; }
    std::vector<torch::Tensor> frozen_state() const override { return {projection_.clone()}; }

    const torch::Tensor& projection() const { return projection_; }

  private:
    int image_size_;
    int patch_;
    int grid_;
    int dim_;
    torch::Tensor projection_;  // [3 * patch * patch, d], not a parameter
};

class DinoVisionTransformer;

// ViT-S/14 with DINOv2 parameter names, so the published state_dict loads as-is.
class PretrainedEncoder final : public VisionEncoder {
  public:
    explicit PretrainedEncoder(const EncoderConfig& cfg);
    ~PretrainedEncoder() override;

    int tokens_per_frame() const override;
    int dim() const override;
    int image_size() const override { return image_size_; }
    data::ChannelNorm channel_norm() const override { return data::ChannelNorm::imagenet(); }
    std::string name() const override { return "pretrained"; }
    torch::Tensor encode_frames(std::span<const NormalizedFrame> frames) const override;
    std::int64_t frozen_parameter_count() const override;
    std::vector<torch::Tensor> frozen_state() const override;

  private:
    int image_size_;
    std::shared_ptr<DinoVisionTransformer> vit_;
};

std::unique_ptr<VisionEncoder> make_encoder(const EncoderConfig& cfg);

}  // namespace cva::encoder
