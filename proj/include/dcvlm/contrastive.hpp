#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dcvlm/encoder.hpp"
#include "dcvlm/lora.hpp"
#include "dcvlm/nn.hpp"
#include "dcvlm/projector.hpp"
#include "dcvlm/vocab.hpp"

namespace dcvlm {

enum class LossKind { siglip, clip };

const char* loss_name(LossKind k);
LossKind parse_loss(const std::string& name);

/// Logit convention: t x.y - b, with z = +1 on the diagonal and -1 elsewhere
/// multiplying the whole logit. common_form switches to t x.y + b.
struct SiglipOptions {
    bool common_form = false;
};

/// (B, B) matrix of -log sigmoid(z_ij * logit_ij), before the 1/|B| factor.
/// t and b are scalar tensors.
template <typename T>
Tensor<T> siglip_pair_terms(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& b,
                            SiglipOptions opts = {});

/// Sum of the pair terms divided by |B|.
template <typename T>
Tensor<T> siglip_loss(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& b,
                      SiglipOptions opts = {});

/// -1/(2|B|) * sum_i [log softmax_row(S)_ii + log softmax_col(S)_ii], S = t X Y^T.
template <typename T>
Tensor<T> clip_loss(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t);

/// Caption encoder standing in for a clinical language model: token plus
/// position embeddings, a short stack of mixer blocks, final norm, and the
/// state of the prepended pooling token as output.
template <typename T>
struct ToyTextTower {
    std::size_t seq_len = 8;
    std::size_t dim = 64;
    Tensor<T> token_table;     // (V, dim)
    Tensor<T> position_table;  // (seq_len, dim)
    std::vector<MixerBlock<T>> blocks;
    NormParams<T> final_norm;

    static ToyTextTower create(std::size_t vocab, std::size_t seq_len, std::size_t dim, std::size_t depth, Rng& rng);

    /// ids holds batch * seq_len entries; returns (batch, dim).
    Tensor<T> operator()(const std::vector<std::size_t>& ids, std::size_t batch) const;

    /// The linear layers adapters can attach to.
    std::vector<Linear<T>*> linears();

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

struct AlignmentConfig {
    EncoderConfig encoder = EncoderConfig::toy();
    LossKind loss = LossKind::siglip;
    std::size_t shared_dim = 64;
    std::size_t text_dim = 64;
    std::size_t text_depth = 2;
    std::size_t seq_len = 8;
    bool normalize = true;
    // When set, image tokens pass through this projector (sized for
    // volume_dims) before pooling; otherwise the high-level tokens are pooled.
    std::optional<ProjectorKind> projector;
    std::size_t projector_dim = 64;
    std::array<std::size_t, 3> volume_dims {32, 32, 32};
    double init_log_t = 2.302585092994046;  // log 10
    // Printed convention; the logit carries -b, so +10 is a -10 prior.
    double init_bias = 10.0;
    SiglipOptions siglip;

    void validate() const;
};

/// Projections into the shared space plus the learnable temperature and bias.
template <typename T>
struct AlignmentHead {
    Linear<T> image_proj;
    Linear<T> text_proj;
    Tensor<T> log_t;  // scalar; t = exp(log_t) stays positive
    Tensor<T> bias;   // scalar, SigLIP only

    static AlignmentHead create(std::size_t image_dim, std::size_t text_dim, std::size_t shared, double log_t,
                                double bias, Rng& rng);
    Tensor<T> temperature() const;
    void collect(ParamList<T>& out, const std::string& prefix, bool with_bias) const;
};

/// Two towers joined by an AlignmentHead.
template <typename T>
class ContrastiveModel {
 public:
    ContrastiveModel(const AlignmentConfig& cfg, Rng& rng);

    const AlignmentConfig& config() const { return cfg_; }

    /// Mean over tokens, then the image projection (and L2 normalisation when
    /// enabled). tokens is (B, n, d).
    Tensor<T> pool_and_project(const Tensor<T>& tokens) const;
    /// volumes is (B, 1, H, W, D).
    Tensor<T> image_embed(const Tensor<T>& volumes) const;
    Tensor<T> text_embed(const std::vector<std::size_t>& ids, std::size_t batch) const;
    Tensor<T> text_embed(const std::vector<std::string>& captions) const;

    Tensor<T> loss(const Tensor<T>& image, const Tensor<T>& text) const;

    DCFormerEncoder<T>& encoder() { return encoder_; }
    ToyTextTower<T>& text_tower() { return text_; }
    const AlignmentHead<T>& head() const { return head_; }
    const Projector<T>* projector() const { return projector_ ? &*projector_ : nullptr; }

    ParamList<T> parameters() const;

 private:
    AlignmentConfig cfg_;
    DCFormerEncoder<T> encoder_;
    ToyTextTower<T> text_;
    AlignmentHead<T> head_;
    std::optional<Projector<T>> projector_;
};

/// Raw dot products X Y^T, rows are images.
template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& x, const Tensor<T>& y);

}  // namespace dcvlm
