#include "dcvlm/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "dcvlm/ops.hpp"

namespace dcvlm {

namespace {

template <typename T>
void check_pair(const Tensor<T>& x, const Tensor<T>& y) {
    require(x.rank() == 2 && y.rank() == 2 && x.shape() == y.shape() && x.dim(0) >= 1, ErrorCode::shape,
            "contrastive losses need matching (|B|, D) embeddings, got " + shape_str(x.shape()) + " and " +
                shape_str(y.shape()));
}

template <typename T>
Tensor<T> eye(std::size_t n) {
    std::vector<T> d(n * n, T {0});
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = T {1};
    return Tensor<T>::from_vector({n, n}, std::move(d));
}

template <typename T>
void check_scalar(const Tensor<T>& s, const char* what) {
    require(s.defined() && s.numel() == 1, ErrorCode::shape, std::string(what) + " must be a scalar tensor");
}

}  // namespace

const char* loss_name(LossKind k) { return k == LossKind::siglip ? "siglip" : "clip"; }

LossKind parse_loss(const std::string& name) {
    if (name == "siglip") return LossKind::siglip;
    if (name == "clip") return LossKind::clip;
    fail(ErrorCode::configuration, "unknown loss '" + name + "' (expected siglip|clip)");
}

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& x, const Tensor<T>& y) {
    check_pair(x, y);
    return matmul(x, transpose(y));
}

template <typename T>
Tensor<T> siglip_pair_terms(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& b,
                            SiglipOptions opts) {
    check_pair(x, y);
    check_scalar(t, "temperature");
    check_scalar(b, "bias");
    const std::size_t n = x.dim(0);
    auto scaled = mul(similarity_matrix(x, y), reshape(t, {}));
    auto logits = opts.common_form ? add(scaled, reshape(b, {})) : sub(scaled, reshape(b, {}));
    // z = 2I - 1
    auto z = add_scalar(scale(eye<T>(n), T {2}), T {-1});
    return neg(log_sigmoid(mul(z, logits)));
}

template <typename T>
Tensor<T> siglip_loss(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t, const Tensor<T>& b,
                      SiglipOptions opts) {
    const auto terms = siglip_pair_terms(x, y, t, b, opts);
    return scale(sum_all(terms), static_cast<T>(1.0 / static_cast<double>(x.dim(0))));
}

template <typename T>
Tensor<T> clip_loss(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& t) {
    check_pair(x, y);
    check_scalar(t, "temperature");
    const std::size_t n = x.dim(0);
    auto logits = mul(similarity_matrix(x, y), reshape(t, {}));
    auto mask = eye<T>(n);
    auto diag = add(sum_all(mul(log_softmax(logits, 1), mask)), sum_all(mul(log_softmax(logits, 0), mask)));
    return scale(diag, static_cast<T>(-1.0 / (2.0 * static_cast<double>(n))));
}

template <typename T>
ToyTextTower<T> ToyTextTower<T>::create(std::size_t vocab, std::size_t seq_len, std::size_t dim, std::size_t depth,
                                        Rng& rng) {
    require(vocab >= 3 && seq_len >= 2 && dim >= 2, ErrorCode::configuration, "text tower sizes are too small");
    ToyTextTower tower;
    tower.seq_len = seq_len;
    tower.dim = dim;
    tower.token_table = Tensor<T>::normal({vocab, dim}, 0.5, rng, true);
    // The pooling row and the positions are shared by every caption; starting
    // them small keeps the pooled state from collapsing to one vector.
    auto cls_row = tower.token_table.mutable_data().subspan(Vocabulary::cls * dim, dim);
    std::fill(cls_row.begin(), cls_row.end(), T {0});
    tower.position_table = Tensor<T>::normal({seq_len, dim}, 0.05, rng, true);
    for (std::size_t i = 0; i < depth; ++i)
        tower.blocks.push_back(MixerBlock<T>::create(seq_len, dim, 2 * seq_len, 2 * dim, true, rng));
    tower.final_norm = NormParams<T>::create(dim);
    return tower;
}

template <typename T>
Tensor<T> ToyTextTower<T>::operator()(const std::vector<std::size_t>& ids, std::size_t batch) const {
    require(ids.size() == batch * seq_len, ErrorCode::shape,
            "text tower expects batch * " + std::to_string(seq_len) + " ids, got " + std::to_string(ids.size()));
    for (auto id : ids)
        require(id < token_table.dim(0), ErrorCode::argument, "token id " + std::to_string(id) + " outside vocabulary");
    auto h = add(embedding(token_table, ids, {batch, seq_len}), position_table);
    for (const auto& b : blocks) h = b(h);
    h = layer_norm(h, 2, final_norm.gamma, final_norm.beta);
    return reshape(slice(h, 1, 0, 1), {batch, dim});
}

template <typename T>
std::vector<Linear<T>*> ToyTextTower<T>::linears() {
    std::vector<Linear<T>*> out;
    for (auto& b : blocks)
        for (auto* l : {&b.token_mlp.fc1, &b.token_mlp.fc2, &b.channel_mlp.fc1, &b.channel_mlp.fc2}) out.push_back(l);
    return out;
}

template <typename T>
void ToyTextTower<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".token_table", token_table});
    out.push_back({prefix + ".position_table", position_table});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
    final_norm.collect(out, prefix + ".final_norm");
}

void AlignmentConfig::validate() const {
    encoder.validate();
    require(shared_dim >= 1 && text_dim >= 2 && seq_len >= 2, ErrorCode::configuration,
            "alignment dimensions must be positive");
    require(std::isfinite(init_log_t) && std::isfinite(init_bias), ErrorCode::configuration,
            "temperature and bias init must be finite");
    if (projector) {
        require(projector_dim >= 1, ErrorCode::configuration, "projector width must be positive");
        encoder_token_counts(encoder, volume_dims);
    }
}

template <typename T>
AlignmentHead<T> AlignmentHead<T>::create(std::size_t image_dim, std::size_t text_dim, std::size_t shared,
                                          double log_t, double bias, Rng& rng) {
    AlignmentHead h;
    h.image_proj = Linear<T>::create(image_dim, shared, rng);
    h.text_proj = Linear<T>::create(text_dim, shared, rng);
    h.log_t = Tensor<T>::scalar(static_cast<T>(log_t), true);
    h.bias = Tensor<T>::scalar(static_cast<T>(bias), true);
    return h;
}

template <typename T>
Tensor<T> AlignmentHead<T>::temperature() const {
    return exp(log_t);
}

template <typename T>
void AlignmentHead<T>::collect(ParamList<T>& out, const std::string& prefix, bool with_bias) const {
    image_proj.collect(out, prefix + ".image_proj");
    text_proj.collect(out, prefix + ".text_proj");
    out.push_back({prefix + ".log_t", log_t});
    if (with_bias) out.push_back({prefix + ".bias", bias});
}

template <typename T>
ContrastiveModel<T>::ContrastiveModel(const AlignmentConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    Rng enc_rng = rng.derive(1), text_rng = rng.derive(2), head_rng = rng.derive(3);
    encoder_ = DCFormerEncoder<T>(cfg_.encoder, enc_rng);
    text_ = ToyTextTower<T>::create(Vocabulary::standard().size(), cfg_.seq_len, cfg_.text_dim, cfg_.text_depth,
                                    text_rng);
    std::size_t image_dim = cfg_.encoder.high_dim();
    if (cfg_.projector) {
        Rng proj_rng = rng.derive(4);
        projector_.emplace(
            ProjectorConfig::for_encoder(*cfg_.projector, cfg_.encoder, cfg_.volume_dims, cfg_.projector_dim), proj_rng);
        image_dim = cfg_.projector_dim;
    }
    head_ = AlignmentHead<T>::create(image_dim, cfg_.text_dim, cfg_.shared_dim, cfg_.init_log_t, cfg_.init_bias,
                                     head_rng);
}

template <typename T>
Tensor<T> ContrastiveModel<T>::pool_and_project(const Tensor<T>& tokens) const {
    auto e = head_.image_proj(mean(tokens, {1}));
    return cfg_.normalize ? l2_normalize(e) : e;
}

template <typename T>
Tensor<T> ContrastiveModel<T>::image_embed(const Tensor<T>& volumes) const {
    auto features = encoder_.forward(volumes);
    if (projector_) return pool_and_project(projector_->forward(features));
    return pool_and_project(features.high);
}

template <typename T>
Tensor<T> ContrastiveModel<T>::text_embed(const std::vector<std::size_t>& ids, std::size_t batch) const {
    auto e = head_.text_proj(text_(ids, batch));
    return cfg_.normalize ? l2_normalize(e) : e;
}

template <typename T>
Tensor<T> ContrastiveModel<T>::text_embed(const std::vector<std::string>& captions) const {
    std::vector<std::size_t> ids;
    for (const auto& c : captions) {
        auto row = Vocabulary::standard().encode(c, cfg_.seq_len);
        ids.insert(ids.end(), row.begin(), row.end());
    }
    return text_embed(ids, captions.size());
}

template <typename T>
Tensor<T> ContrastiveModel<T>::loss(const Tensor<T>& image, const Tensor<T>& text) const {
    if (cfg_.loss == LossKind::siglip) return siglip_loss(image, text, head_.temperature(), head_.bias, cfg_.siglip);
    return clip_loss(image, text, head_.temperature());
}

template <typename T>
ParamList<T> ContrastiveModel<T>::parameters() const {
    ParamList<T> out;
    encoder_.collect(out, "encoder");
    text_.collect(out, "text");
    if (projector_) projector_->collect(out, "projector");
    head_.collect(out, "head", cfg_.loss == LossKind::siglip);
    return out;
}

#define DCVLM_CONTRASTIVE(T)                                                                                        \
    template Tensor<T> similarity_matrix(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> siglip_pair_terms(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         SiglipOptions);                                                            \
    template Tensor<T> siglip_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                   SiglipOptions);                                                                  \
    template Tensor<T> clip_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template struct ToyTextTower<T>;                                                                                \
    template struct AlignmentHead<T>;                                                                               \
    template class ContrastiveModel<T>;

DCVLM_CONTRASTIVE(float)
DCVLM_CONTRASTIVE(double)

}  // namespace dcvlm
