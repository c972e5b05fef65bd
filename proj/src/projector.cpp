#include "dcvlm/projector.hpp"

#include "dcvlm/ops.hpp"

namespace dcvlm {

namespace {

template <typename T>
void check_stream(const Tensor<T>& t, std::size_t n, std::size_t d, const char* which) {
    require(t.defined() && t.rank() == 3 && t.dim(1) == n && t.dim(2) == d, ErrorCode::configuration,
            std::string(which) + " features must be (B, " + std::to_string(n) + ", " + std::to_string(d) + "), got " +
                (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

void add_norm(CostReport& r, const std::string& name, std::size_t d) {
    r.add(name + ".gamma", 0, d);
    r.add(name + ".beta", 0, d);
}

void add_mlp(CostReport& r, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             std::size_t rows) {
    r.append(name + ".fc1", count_linear_cost(in, hidden, rows));
    r.append(name + ".fc2", count_linear_cost(hidden, out, rows));
}

void add_mixer(CostReport& r, const std::string& name, std::size_t n, std::size_t d, std::size_t ratio) {
    add_norm(r, name + ".norm1", d);
    // Token MLP runs once per channel (d rows of length n).
    add_mlp(r, name + ".token_mlp", n, ratio * n, n, d);
    add_norm(r, name + ".norm2", d);
    add_mlp(r, name + ".channel_mlp", d, ratio * d, d, n);
}

}  // namespace

template <typename T>
MixerBlock<T> MixerBlock<T>::create(std::size_t tokens, std::size_t dim, std::size_t token_hidden,
                                    std::size_t channel_hidden, bool residual, Rng& rng) {
    MixerBlock b;
    b.tokens = tokens;
    b.dim = dim;
    b.residual = residual;
    b.norm1 = NormParams<T>::create(dim);
    b.token_mlp = Mlp<T>::create(tokens, token_hidden, tokens, rng);
    b.norm2 = NormParams<T>::create(dim);
    b.channel_mlp = Mlp<T>::create(dim, channel_hidden, dim, rng);
    return b;
}

template <typename T>
Tensor<T> MixerBlock<T>::operator()(const Tensor<T>& x) const {
    require(x.rank() == 3 && x.dim(1) == tokens && x.dim(2) == dim, ErrorCode::configuration,
            "mixer block expects (B, " + std::to_string(tokens) + ", " + std::to_string(dim) + "), got " +
                shape_str(x.shape()));
    auto mixed = transpose(token_mlp(transpose(layer_norm(x, 2, norm1.gamma, norm1.beta))));
    auto u = residual ? add(x, mixed) : mixed;
    auto y = channel_mlp(layer_norm(u, 2, norm2.gamma, norm2.beta));
    return residual ? add(u, y) : y;
}

template <typename T>
void MixerBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    token_mlp.collect(out, prefix + ".token_mlp");
    norm2.collect(out, prefix + ".norm2");
    channel_mlp.collect(out, prefix + ".channel_mlp");
}

const char* projector_kind_name(ProjectorKind kind) {
    switch (kind) {
        case ProjectorKind::mlp2: return "mlp2";
        case ProjectorKind::mlp2h: return "mlp2h";
        case ProjectorKind::mixer1h: return "mixer1h";
        case ProjectorKind::mixer2h: return "mixer2h";
    }
    return "?";
}

ProjectorKind parse_projector_kind(const std::string& name) {
    for (auto k : {ProjectorKind::mlp2, ProjectorKind::mlp2h, ProjectorKind::mixer1h, ProjectorKind::mixer2h})
        if (name == projector_kind_name(k)) return k;
    fail(ErrorCode::configuration, "unknown projector variant '" + name + "' (expected mlp2|mlp2h|mixer1h|mixer2h)");
}

const char* projector_table_label(ProjectorKind kind) {
    switch (kind) {
        case ProjectorKind::mlp2: return "2xMLP";
        case ProjectorKind::mlp2h: return "2xMLP-H";
        case ProjectorKind::mixer1h: return "1xMLP-Mixer-H";
        case ProjectorKind::mixer2h: return "2xMLP-Mixer-H";
    }
    return "?";
}

ProjectorConfig ProjectorConfig::full_size(ProjectorKind kind) {
    ProjectorConfig cfg;
    cfg.kind = kind;
    return cfg;
}

ProjectorConfig ProjectorConfig::for_encoder(ProjectorKind kind, const EncoderConfig& enc,
                                             const std::array<std::size_t, 3>& spatial, std::size_t d_llm) {
    ProjectorConfig cfg;
    cfg.kind = kind;
    const auto [n_low, n_high] = encoder_token_counts(enc, spatial);
    cfg.n_low = n_low;
    cfg.n_high = n_high;
    cfg.d_low = enc.low_dim();
    cfg.d_high = enc.high_dim();
    cfg.d_llm = d_llm;
    return cfg;
}

std::size_t ProjectorConfig::output_tokens() const {
    return kind == ProjectorKind::mlp2 ? n_high : n_low + n_high;
}

void ProjectorConfig::validate() const {
    require(n_low >= 1 && n_high >= 1 && d_low >= 1 && d_high >= 1 && d_llm >= 1 && hidden_ratio >= 1,
            ErrorCode::configuration, "projector dimensions must be positive");
    require(depth >= 1, ErrorCode::configuration, "hybrid projector depth must be at least 1");
    require(output_tokens() <= token_budget, ErrorCode::capacity,
            "projector emits " + std::to_string(output_tokens()) + " image tokens, over the budget of " +
                std::to_string(token_budget));
}

template <typename T>
HybridProjector<T> HybridProjector<T>::create(const ProjectorConfig& cfg, Rng& rng) {
    HybridProjector p;
    const std::size_t r = cfg.hidden_ratio;
    for (std::size_t i = 0; i < cfg.depth; ++i)
        p.low_blocks.push_back(
            MixerBlock<T>::create(cfg.n_low, cfg.d_low, r * cfg.n_low, r * cfg.d_low, !cfg.no_residual, rng));
    for (std::size_t i = 0; i < cfg.depth; ++i)
        p.high_blocks.push_back(
            MixerBlock<T>::create(cfg.n_high, cfg.d_high, r * cfg.n_high, r * cfg.d_high, !cfg.no_residual, rng));
    p.low_proj = Mlp<T>::create(cfg.d_low, cfg.d_llm, cfg.d_llm, rng);
    p.high_proj = Mlp<T>::create(cfg.d_high, cfg.d_llm, cfg.d_llm, rng);
    return p;
}

template <typename T>
Tensor<T> HybridProjector<T>::operator()(const FeaturePair<T>& f) const {
    Tensor<T> low = f.low;
    for (const auto& b : low_blocks) low = b(low);
    Tensor<T> high = f.high;
    for (const auto& b : high_blocks) high = b(high);
    return concat<T>({low_proj(low), high_proj(high)}, 1);
}

template <typename T>
void HybridProjector<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < low_blocks.size(); ++i) low_blocks[i].collect(out, prefix + ".low.block" + std::to_string(i));
    low_proj.collect(out, prefix + ".low.proj");
    for (std::size_t i = 0; i < high_blocks.size(); ++i)
        high_blocks[i].collect(out, prefix + ".high.block" + std::to_string(i));
    high_proj.collect(out, prefix + ".high.proj");
}

template <typename T>
Projector<T>::Projector(const ProjectorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t r = cfg_.hidden_ratio;
    switch (cfg_.kind) {
        case ProjectorKind::mlp2:
            mlp_ = Mlp<T>::create(cfg_.d_high, cfg_.d_llm, cfg_.d_llm, rng);
            break;
        case ProjectorKind::mlp2h:
            low_in_ = Linear<T>::create(cfg_.d_low, cfg_.d_llm, rng);
            high_in_ = Linear<T>::create(cfg_.d_high, cfg_.d_llm, rng);
            shared_out_ = Linear<T>::create(cfg_.d_llm, cfg_.d_llm, rng);
            break;
        case ProjectorKind::mixer1h: {
            low_in_ = Linear<T>::create(cfg_.d_low, cfg_.d_high, rng);
            const std::size_t n = cfg_.n_low + cfg_.n_high;
            joint_block_ = MixerBlock<T>::create(n, cfg_.d_high, r * n, r * cfg_.d_high, !cfg_.no_residual, rng);
            mlp_ = Mlp<T>::create(cfg_.d_high, cfg_.d_llm, cfg_.d_llm, rng);
            break;
        }
        case ProjectorKind::mixer2h:
            hybrid_ = HybridProjector<T>::create(cfg_, rng);
            break;
    }
}

template <typename T>
Tensor<T> Projector<T>::forward(const FeaturePair<T>& f) const {
    check_stream(f.high, cfg_.n_high, cfg_.d_high, "high");
    if (cfg_.kind != ProjectorKind::mlp2) check_stream(f.low, cfg_.n_low, cfg_.d_low, "low");
    switch (cfg_.kind) {
        case ProjectorKind::mlp2:
            return mlp_(f.high);
        case ProjectorKind::mlp2h:
            return shared_out_(gelu(concat<T>({low_in_(f.low), high_in_(f.high)}, 1)));
        case ProjectorKind::mixer1h:
            return mlp_((*joint_block_)(concat<T>({low_in_(f.low), f.high}, 1)));
        case ProjectorKind::mixer2h:
            return (*hybrid_)(f);
    }
    fail(ErrorCode::configuration, "unknown projector variant");
}

template <typename T>
void Projector<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    switch (cfg_.kind) {
        case ProjectorKind::mlp2:
            mlp_.collect(out, prefix + ".mlp");
            break;
        case ProjectorKind::mlp2h:
            low_in_.collect(out, prefix + ".low_in");
            high_in_.collect(out, prefix + ".high_in");
            shared_out_.collect(out, prefix + ".shared_out");
            break;
        case ProjectorKind::mixer1h:
            low_in_.collect(out, prefix + ".low_in");
            joint_block_->collect(out, prefix + ".joint");
            mlp_.collect(out, prefix + ".mlp");
            break;
        case ProjectorKind::mixer2h:
            hybrid_->collect(out, prefix);
            break;
    }
}

template <typename T>
ParamList<T> Projector<T>::parameters(const std::string& prefix) const {
    ParamList<T> out;
    collect(out, prefix);
    return out;
}

CostReport count_linear_cost(std::size_t in, std::size_t out, std::size_t tokens, bool bias) {
    CostReport r;
    r.add("weight", static_cast<std::uint64_t>(tokens) * in * out, static_cast<std::uint64_t>(in) * out);
    if (bias) r.add("bias", 0, out);
    return r;
}

CostReport count_projector_cost(const ProjectorConfig& cfg) {
    cfg.validate();
    CostReport r;
    const std::size_t ratio = cfg.hidden_ratio;
    switch (cfg.kind) {
        case ProjectorKind::mlp2:
            add_mlp(r, "mlp", cfg.d_high, cfg.d_llm, cfg.d_llm, cfg.n_high);
            break;
        case ProjectorKind::mlp2h:
            r.append("low_in", count_linear_cost(cfg.d_low, cfg.d_llm, cfg.n_low));
            r.append("high_in", count_linear_cost(cfg.d_high, cfg.d_llm, cfg.n_high));
            r.append("shared_out", count_linear_cost(cfg.d_llm, cfg.d_llm, cfg.n_low + cfg.n_high));
            break;
        case ProjectorKind::mixer1h: {
            const std::size_t n = cfg.n_low + cfg.n_high;
            r.append("low_in", count_linear_cost(cfg.d_low, cfg.d_high, cfg.n_low));
            add_mixer(r, "joint", n, cfg.d_high, ratio);
            add_mlp(r, "mlp", cfg.d_high, cfg.d_llm, cfg.d_llm, n);
            break;
        }
        case ProjectorKind::mixer2h:
            for (std::size_t i = 0; i < cfg.depth; ++i)
                add_mixer(r, "low.block" + std::to_string(i), cfg.n_low, cfg.d_low, ratio);
            add_mlp(r, "low.proj", cfg.d_low, cfg.d_llm, cfg.d_llm, cfg.n_low);
            for (std::size_t i = 0; i < cfg.depth; ++i)
                add_mixer(r, "high.block" + std::to_string(i), cfg.n_high, cfg.d_high, ratio);
            add_mlp(r, "high.proj", cfg.d_high, cfg.d_llm, cfg.d_llm, cfg.n_high);
            break;
    }
    return r;
}

#define DCVLM_PROJECTOR(T)             \
    template struct MixerBlock<T>;      \
    template struct HybridProjector<T>; \
    template class Projector<T>;

DCVLM_PROJECTOR(float)
DCVLM_PROJECTOR(double)

}  // namespace dcvlm
