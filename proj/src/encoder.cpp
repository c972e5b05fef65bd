#include "dcvlm/encoder.hpp"

#include "dcvlm/ops.hpp"

namespace dcvlm {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
    std::size_t k = 0;
    while ((std::size_t {1} << k) < n) ++k;
    return k;
}

// Channel widths of the stem convolutions. Stride 2^n uses n stride-2 convs
// whose widths double up to the stage-1 width; stride 1 uses one conv.
std::vector<std::size_t> stem_widths(const EncoderConfig& cfg) {
    const std::size_t n = cfg.stem_stride == 1 ? 1 : log2_exact(cfg.stem_stride);
    std::vector<std::size_t> widths {cfg.in_channels};
    for (std::size_t i = 0; i < n; ++i) widths.push_back(std::max<std::size_t>(1, cfg.channels[0] >> (n - 1 - i)));
    return widths;
}

std::size_t stem_conv_stride(const EncoderConfig& cfg) { return cfg.stem_stride == 1 ? 1 : 2; }

std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s + 1); }

}  // namespace

const char* token_mixer_name(TokenMixer mixer) {
    return mixer == TokenMixer::decomposed ? "dcformer" : "naive-full-conv";
}

TokenMixer parse_token_mixer(const std::string& name) {
    if (name == "dcformer" || name == "decomposed") return TokenMixer::decomposed;
    if (name == "naive-full-conv" || name == "full") return TokenMixer::full_depthwise;
    fail(ErrorCode::configuration, "unknown encoder '" + name + "' (expected dcformer or naive-full-conv)");
}

EncoderConfig EncoderConfig::dcformer_small() { return EncoderConfig {}; }

EncoderConfig EncoderConfig::desk() {
    EncoderConfig cfg;
    for (auto& c : cfg.channels) c /= 4;
    cfg.stem_stride = 1;
    return cfg;
}

EncoderConfig EncoderConfig::toy() {
    EncoderConfig cfg = desk();
    cfg.channels = {8, 16, 32, 64};
    cfg.depths = {1, 1, 2, 1};
    return cfg;
}

void EncoderConfig::validate() const {
    for (std::size_t s = 0; s < 4; ++s) {
        require(depths[s] >= 1, ErrorCode::configuration, "every encoder stage needs at least one block");
        require(kernels[s] % 2 == 1, ErrorCode::configuration, "encoder kernels must be odd");
        if (s > 0)
            require(channels[s] > channels[s - 1], ErrorCode::configuration,
                    "encoder stage channels must be strictly increasing");
    }
    require(channels[0] >= 1 && in_channels >= 1, ErrorCode::configuration, "encoder channels must be positive");
    require(stem_stride == 1 || is_power_of_two(stem_stride), ErrorCode::configuration,
            "stem stride must be 1 or a power of two, got " + std::to_string(stem_stride));
    require(stage_stride == 2, ErrorCode::configuration, "every stage halves each spatial dimension (stride 2)");
    require(mlp_ratio >= 1, ErrorCode::configuration, "mlp ratio must be positive");
}

std::size_t EncoderConfig::total_stride() const { return stem_stride * 16; }

std::array<std::array<std::size_t, 3>, 5> encoder_grids(const EncoderConfig& cfg,
                                                       const std::array<std::size_t, 3>& spatial) {
    cfg.validate();
    const std::size_t f = cfg.total_stride();
    for (std::size_t a = 0; a < 3; ++a)
        require(spatial[a] % f == 0, ErrorCode::shape,
                "encoder input dims " + std::to_string(spatial[0]) + "x" + std::to_string(spatial[1]) + "x" +
                    std::to_string(spatial[2]) + " must each be divisible by " + std::to_string(f));
    std::array<std::array<std::size_t, 3>, 5> grids {};
    for (std::size_t a = 0; a < 3; ++a) {
        grids[0][a] = spatial[a] / cfg.stem_stride;
        for (std::size_t s = 1; s < 5; ++s) grids[s][a] = grids[s - 1][a] / 2;
    }
    return grids;
}

std::pair<std::size_t, std::size_t> encoder_token_counts(const EncoderConfig& cfg,
                                                         const std::array<std::size_t, 3>& spatial) {
    const auto g = encoder_grids(cfg, spatial);
    return {g[3][0] * g[3][1] * g[3][2], g[4][0] * g[4][1] * g[4][2]};
}

template <typename T>
MetaFormerBlock<T> MetaFormerBlock<T>::create(std::size_t channels, std::size_t kernel, std::size_t mlp_ratio,
                                              TokenMixer mixer, Rng& rng) {
    MetaFormerBlock b;
    b.channels = channels;
    b.mixer_kind = mixer;
    b.norm1 = NormParams<T>::create(channels);
    if (mixer == TokenMixer::decomposed) {
        b.decomposed = DecomposedConvLayer<T>::create(channels, kernel, rng);
    } else {
        b.full = FullDWConv3dLayer<T>::create(channels, kernel, rng);
        b.full_norm = NormParams<T>::create(channels);
    }
    b.norm2 = NormParams<T>::create(channels);
    const std::size_t hidden = channels * mlp_ratio;
    b.fc1_weight = fan_in_uniform<T>({hidden, channels}, channels, rng);
    b.fc1_bias = Tensor<T>::zeros({hidden}, true);
    b.fc2_weight = fan_in_uniform<T>({channels, hidden}, hidden, rng);
    b.fc2_bias = Tensor<T>::zeros({channels}, true);
    return b;
}

template <typename T>
Tensor<T> MetaFormerBlock<T>::token_mix(const Tensor<T>& x) const {
    if (mixer_kind == TokenMixer::decomposed) return decomposed_branches(x, decomposed);
    return instance_norm(full_dwconv3d(x, full), full_norm.gamma, full_norm.beta);
}

template <typename T>
Tensor<T> MetaFormerBlock<T>::operator()(const Tensor<T>& x) const {
    require(x.rank() == 5 && x.dim(1) == channels, ErrorCode::configuration,
            "block expects " + std::to_string(channels) + " channels, got input " + shape_str(x.shape()));
    auto h = add(x, token_mix(layer_norm(x, 1, norm1.gamma, norm1.beta)));
    auto m = pointwise_conv(layer_norm(h, 1, norm2.gamma, norm2.beta), fc1_weight, fc1_bias);
    return add(h, pointwise_conv(gelu(m), fc2_weight, fc2_bias));
}

template <typename T>
void MetaFormerBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    if (mixer_kind == TokenMixer::decomposed) {
        decomposed.collect(out, prefix + ".mixer");
    } else {
        full.collect(out, prefix + ".mixer.dwconv3d");
        full_norm.collect(out, prefix + ".mixer.norm");
    }
    norm2.collect(out, prefix + ".norm2");
    out.push_back({prefix + ".mlp.fc1.weight", fc1_weight});
    out.push_back({prefix + ".mlp.fc1.bias", fc1_bias});
    out.push_back({prefix + ".mlp.fc2.weight", fc2_weight});
    out.push_back({prefix + ".mlp.fc2.bias", fc2_bias});
}

template <typename T>
ConvLayer<T> ConvLayer<T>::create(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                                  std::size_t padding, Rng& rng) {
    ConvLayer layer;
    layer.weight = fan_in_uniform<T>({c_out, c_in, k, k, k}, c_in * k * k * k, rng);
    // A zero bias ahead of the channel norm would make flat regions of the
    // stem output independent of voxel intensity.
    layer.bias = fan_in_uniform<T>({c_out}, c_in * k * k * k, rng);
    layer.stride = stride;
    layer.padding = padding;
    return layer;
}

template <typename T>
void ConvLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
DCFormerEncoder<T>::DCFormerEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto widths = stem_widths(cfg_);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        stem_.push_back(ConvLayer<T>::create(widths[i], widths[i + 1], 3, stem_conv_stride(cfg_), 1, rng));
    stem_norm_ = NormParams<T>::create(cfg_.channels[0]);
    std::size_t prev = cfg_.channels[0];
    for (std::size_t s = 0; s < 4; ++s) {
        auto& st = stages_[s];
        st.down_norm = NormParams<T>::create(prev);
        st.down = ConvLayer<T>::create(prev, cfg_.channels[s], 2, 2, 0, rng);
        for (std::size_t d = 0; d < cfg_.depths[s]; ++d)
            st.blocks.push_back(
                MetaFormerBlock<T>::create(cfg_.channels[s], cfg_.kernels[s], cfg_.mlp_ratio, cfg_.mixer, rng));
        prev = cfg_.channels[s];
    }
}

template <typename T>
FeaturePair<T> DCFormerEncoder<T>::forward(const Tensor<T>& x) const {
    require(x.rank() == 5 && x.dim(1) == cfg_.in_channels, ErrorCode::shape,
            "encoder expects (B, " + std::to_string(cfg_.in_channels) + ", H, W, D), got " + shape_str(x.shape()));
    (void)encoder_grids(cfg_, {x.dim(2), x.dim(3), x.dim(4)});
    Tensor<T> h = x;
    for (std::size_t i = 0; i < stem_.size(); ++i) {
        h = stem_[i](h);
        if (i + 1 < stem_.size()) h = gelu(h);
    }
    h = layer_norm(h, 1, stem_norm_.gamma, stem_norm_.beta);
    FeaturePair<T> out;
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& st = stages_[s];
        h = st.down(layer_norm(h, 1, st.down_norm.gamma, st.down_norm.beta));
        for (const auto& block : st.blocks) h = block(h);
        if (s == 2) out.low = to_tokens(h);
    }
    out.high = to_tokens(h);
    return out;
}

template <typename T>
void DCFormerEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].collect(out, prefix + ".stem.conv" + std::to_string(i));
    stem_norm_.collect(out, prefix + ".stem.norm");
    for (std::size_t s = 0; s < 4; ++s) {
        const auto p = prefix + "." + stage_prefix(s);
        stages_[s].down_norm.collect(out, p + ".down.norm");
        stages_[s].down.collect(out, p + ".down.conv");
        for (std::size_t d = 0; d < stages_[s].blocks.size(); ++d)
            stages_[s].blocks[d].collect(out, p + ".block" + std::to_string(d));
    }
}

template <typename T>
ParamList<T> DCFormerEncoder<T>::parameters(const std::string& prefix) const {
    ParamList<T> out;
    collect(out, prefix);
    return out;
}

CostReport count_encoder_cost(const EncoderConfig& cfg, const std::array<std::size_t, 3>& spatial) {
    const auto grids = encoder_grids(cfg, spatial);
    CostReport report;
    auto norm = [&report](const std::string& name, std::size_t c) {
        report.add(name + ".gamma", 0, c);
        report.add(name + ".beta", 0, c);
    };
    const auto widths = stem_widths(cfg);
    Shape shape {1, cfg.in_channels, spatial[0], spatial[1], spatial[2]};
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const std::size_t stride = stem_conv_stride(cfg);
        report.append("stem.conv" + std::to_string(i), count_conv3d_cost(widths[i], widths[i + 1], 3, stride, 1, shape));
        shape = {1, widths[i + 1], conv_output_size(shape[2], 3, stride, 1), conv_output_size(shape[3], 3, stride, 1),
                 conv_output_size(shape[4], 3, stride, 1)};
    }
    norm("stem.norm", cfg.channels[0]);
    std::size_t prev = cfg.channels[0];
    for (std::size_t s = 0; s < 4; ++s) {
        const auto p = stage_prefix(s);
        const std::size_t c = cfg.channels[s];
        norm(p + ".down.norm", prev);
        report.append(p + ".down.conv", count_conv3d_cost(prev, c, 2, 2, 0, shape));
        shape = {1, c, grids[s + 1][0], grids[s + 1][1], grids[s + 1][2]};
        const std::uint64_t positions = shape[2] * shape[3] * shape[4];
        const std::size_t hidden = c * cfg.mlp_ratio;
        for (std::size_t d = 0; d < cfg.depths[s]; ++d) {
            const auto b = p + ".block" + std::to_string(d);
            norm(b + ".norm1", c);
            if (cfg.mixer == TokenMixer::decomposed) {
                const std::size_t k = cfg.kernels[s];
                report.append(b + ".mixer", count_decomposed_cost(c, {k, k, k}, shape));
            } else {
                report.append(b + ".mixer.dwconv3d", count_full_dw_cost(c, cfg.kernels[s], shape));
                norm(b + ".mixer.norm", c);
            }
            norm(b + ".norm2", c);
            report.add(b + ".mlp.fc1.weight", positions * c * hidden, c * hidden);
            report.add(b + ".mlp.fc1.bias", 0, hidden);
            report.add(b + ".mlp.fc2.weight", positions * hidden * c, hidden * c);
            report.add(b + ".mlp.fc2.bias", 0, c);
        }
        prev = c;
    }
    return report;
}

#define DCVLM_ENCODER(T)               \
    template struct MetaFormerBlock<T>; \
    template struct ConvLayer<T>;       \
    template class DCFormerEncoder<T>;

DCVLM_ENCODER(float)
DCVLM_ENCODER(double)

}  // namespace dcvlm
