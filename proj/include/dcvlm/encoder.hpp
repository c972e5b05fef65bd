#pragma once

#include <array>
#include <string>
#include <vector>

#include "dcvlm/conv.hpp"
#include "dcvlm/cost.hpp"
#include "dcvlm/nn.hpp"

namespace dcvlm {

enum class TokenMixer { decomposed, full_depthwise };

const char* token_mixer_name(TokenMixer mixer);
TokenMixer parse_token_mixer(const std::string& name);

struct EncoderConfig {
    std::array<std::size_t, 4> depths {2, 3, 6, 2};
    std::array<std::size_t, 4> channels {96, 192, 384, 768};
    std::array<std::size_t, 4> kernels {13, 11, 9, 7};
    std::size_t in_channels = 1;
    std::size_t stem_stride = 4;  // 1 or a power of two
    std::size_t stage_stride = 2;
    std::size_t mlp_ratio = 4;
    TokenMixer mixer = TokenMixer::decomposed;

    /// DCFormer-small at full size.
    static EncoderConfig dcformer_small();
    /// Width divided by four and stem stride 1, so a 32x64x64 volume gives
    /// the same 256 / 32 token split as the full-size 128x256x256 input.
    static EncoderConfig desk();
    /// Widths 8..64 and depths [1,1,2,1]; the encoder used for toy training
    /// runs on 32^3 volumes.
    static EncoderConfig toy();

    void validate() const;
    std::size_t total_stride() const;
    std::size_t low_dim() const { return channels[2]; }
    std::size_t high_dim() const { return channels[3]; }
};

/// Spatial grid after every stage (index 0 is the stem output, 1..4 are the
/// stages). Throws ErrorCode::shape if the input does not divide evenly.
std::array<std::array<std::size_t, 3>, 5> encoder_grids(const EncoderConfig& cfg, const std::array<std::size_t, 3>& spatial);

/// Token counts (n_low, n_high) for an input volume.
std::pair<std::size_t, std::size_t> encoder_token_counts(const EncoderConfig& cfg,
                                                         const std::array<std::size_t, 3>& spatial);

/// Low tokens come from the end of stage 3 and high tokens from stage 4,
/// both laid out as (B, n, d).
template <typename T>
struct FeaturePair {
    Tensor<T> low;
    Tensor<T> high;
};

template <typename T>
struct MetaFormerBlock {
    std::size_t channels = 0;
    TokenMixer mixer_kind = TokenMixer::decomposed;
    NormParams<T> norm1;
    DecomposedConvLayer<T> decomposed;
    FullDWConv3dLayer<T> full;
    NormParams<T> full_norm;
    NormParams<T> norm2;
    Tensor<T> fc1_weight;  // (hidden, C)
    Tensor<T> fc1_bias;
    Tensor<T> fc2_weight;  // (C, hidden)
    Tensor<T> fc2_bias;

    static MetaFormerBlock create(std::size_t channels, std::size_t kernel, std::size_t mlp_ratio, TokenMixer mixer,
                                  Rng& rng);

    /// h = x + mixer(norm1(x)); out = h + fc2(gelu(fc1(norm2(h)))).
    Tensor<T> operator()(const Tensor<T>& x) const;
    Tensor<T> token_mix(const Tensor<T>& x) const;

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct ConvLayer {
    Tensor<T> weight;  // (C_out, C_in, k, k, k)
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    static ConvLayer create(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                            std::size_t padding, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, stride, padding); }
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct EncoderStage {
    NormParams<T> down_norm;
    ConvLayer<T> down;
    std::vector<MetaFormerBlock<T>> blocks;
};

template <typename T>
class DCFormerEncoder {
 public:
    DCFormerEncoder() = default;
    DCFormerEncoder(const EncoderConfig& cfg, Rng& rng);

    const EncoderConfig& config() const { return cfg_; }

    /// x is (B, C_in, H, W, D).
    FeaturePair<T> forward(const Tensor<T>& x) const;

    void collect(ParamList<T>& out, const std::string& prefix) const;
    ParamList<T> parameters(const std::string& prefix = "encoder") const;

 private:
    EncoderConfig cfg_;
    std::vector<ConvLayer<T>> stem_;
    NormParams<T> stem_norm_;
    std::array<EncoderStage<T>, 4> stages_;
};

/// Exact per-layer parameter and multiply-add counts for a (1, C_in, H, W, D)
/// input. Record names match the parameter names of DCFormerEncoder.
CostReport count_encoder_cost(const EncoderConfig& cfg, const std::array<std::size_t, 3>& spatial);

}  // namespace dcvlm
