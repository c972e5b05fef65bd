#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcvlm/cost.hpp"
#include "dcvlm/encoder.hpp"
#include "dcvlm/nn.hpp"

namespace dcvlm {

/// Token mixing across n then channel mixing across d, each pre-normalised
/// over d. Residuals follow the MLP-Mixer convention unless `residual` is off.
template <typename T>
struct MixerBlock {
    std::size_t tokens = 0;
    std::size_t dim = 0;
    bool residual = true;
    NormParams<T> norm1;
    Mlp<T> token_mlp;    // n -> hidden_t -> n, applied on the transposed view
    NormParams<T> norm2;
    Mlp<T> channel_mlp;  // d -> hidden_c -> d

    static MixerBlock create(std::size_t tokens, std::size_t dim, std::size_t token_hidden, std::size_t channel_hidden,
                             bool residual, Rng& rng);

    /// x is (B, n, d).
    Tensor<T> operator()(const Tensor<T>& x) const;

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

enum class ProjectorKind { mlp2, mlp2h, mixer1h, mixer2h };

const char* projector_kind_name(ProjectorKind kind);
/// Accepts mlp2, mlp2h, mixer1h, mixer2h.
ProjectorKind parse_projector_kind(const std::string& name);
/// Row label used in the cost comparison.
const char* projector_table_label(ProjectorKind kind);

struct ProjectorConfig {
    ProjectorKind kind = ProjectorKind::mixer2h;
    std::size_t n_low = 256;
    std::size_t d_low = 384;
    std::size_t n_high = 32;
    std::size_t d_high = 768;
    std::size_t d_llm = 3584;
    std::size_t hidden_ratio = 2;  // hidden_t = 2n, hidden_c = 2d
    std::size_t depth = 2;         // mixer blocks per stream for the hybrid design
    bool no_residual = false;      // mixer blocks without their skip connections
    std::size_t token_budget = 512;

    static ProjectorConfig full_size(ProjectorKind kind);
    /// Sized for encoder outputs of the given config and input volume.
    static ProjectorConfig for_encoder(ProjectorKind kind, const EncoderConfig& enc,
                                       const std::array<std::size_t, 3>& spatial, std::size_t d_llm);

    std::size_t output_tokens() const;
    void validate() const;
};

/// Dual-stream low-high hybrid: each stream runs `depth` mixer blocks and a
/// two-layer projection to d_llm; the streams share no parameters and are
/// concatenated low then high.
template <typename T>
struct HybridProjector {
    std::vector<MixerBlock<T>> low_blocks;
    std::vector<MixerBlock<T>> high_blocks;
    Mlp<T> low_proj;
    Mlp<T> high_proj;

    static HybridProjector create(const ProjectorConfig& cfg, Rng& rng);
    Tensor<T> operator()(const FeaturePair<T>& f) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// One of the four projector architectures compared in the ablation.
template <typename T>
class Projector {
 public:
    Projector() = default;
    Projector(const ProjectorConfig& cfg, Rng& rng);

    const ProjectorConfig& config() const { return cfg_; }

    /// (B, n_out, d_llm) image tokens.
    Tensor<T> forward(const FeaturePair<T>& f) const;

    void collect(ParamList<T>& out, const std::string& prefix) const;
    ParamList<T> parameters(const std::string& prefix = "projector") const;

    /// Direct access for the hybrid variant (used by ablation-by-zero checks).
    const HybridProjector<T>* hybrid() const { return hybrid_ ? &*hybrid_ : nullptr; }

 private:
    ProjectorConfig cfg_;
    // mlp2: high tokens through a two-layer MLP.
    Mlp<T> mlp_;
    // mlp2h: per-stream first linear, shared second linear over all tokens.
    Linear<T> low_in_;
    Linear<T> high_in_;
    Linear<T> shared_out_;
    // mixer1h: low tokens lifted to d_high, one mixer block over the joint
    // sequence, then the two-layer projection.
    std::optional<MixerBlock<T>> joint_block_;
    std::optional<HybridProjector<T>> hybrid_;
};

/// Exact counts for batch size 1. Record names match parameter names.
CostReport count_projector_cost(const ProjectorConfig& cfg);

/// Cost of one linear layer applied to `tokens` rows.
CostReport count_linear_cost(std::size_t in, std::size_t out, std::size_t tokens, bool bias = true);

}  // namespace dcvlm
