#include "dcvlm/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "dcvlm/metrics.hpp"
#include "dcvlm/ops.hpp"
#include "dcvlm/optim.hpp"

namespace dcvlm {

namespace {

template <typename T>
Tensor<T> gather_volumes(const std::vector<SynthPair>& data, const std::vector<std::size_t>& idx) {
    const auto dims = data[idx.front()].dims;
    std::vector<T> v;
    v.reserve(idx.size() * dims[0] * dims[1] * dims[2]);
    for (auto i : idx) {
        require(data[i].dims == dims, ErrorCode::shape, "pairs in one batch must share dims");
        v.insert(v.end(), data[i].volume.begin(), data[i].volume.end());
    }
    return Tensor<T>::from_vector({idx.size(), 1, dims[0], dims[1], dims[2]}, std::move(v));
}

std::vector<std::string> gather_captions(const std::vector<SynthPair>& data, const std::vector<std::size_t>& idx) {
    std::vector<std::string> c;
    for (auto i : idx) c.push_back(data[i].caption);
    return c;
}

}  // namespace

template <typename T>
TrainResult train_contrastive(ContrastiveModel<T>& model, const std::vector<SynthPair>& data, const TrainConfig& cfg,
                              std::ostream* log) {
    require(!data.empty(), ErrorCode::argument, "training set is empty");
    require(cfg.batch >= 1, ErrorCode::configuration, "batch size must be at least 1");
    require(cfg.lr >= 0.0 && cfg.weight_decay >= 0.0 && cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio < 1.0,
            ErrorCode::configuration, "optimizer settings out of range");
    const auto start = std::chrono::steady_clock::now();
    AdamWOptions opts;
    opts.weight_decay = cfg.weight_decay;
    AdamW<T> optim(model.parameters(), opts);
    const std::size_t per_epoch = (data.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total = per_epoch * cfg.epochs;

    TrainResult result;
    Rng order_rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t {0});
        Rng shuffle = order_rng.derive(epoch);
        shuffle.shuffle(order.begin(), order.end());
        double epoch_sum = 0.0;
        for (std::size_t s = 0; s < per_epoch; ++s) {
            const std::size_t lo = s * cfg.batch, hi = std::min(data.size(), lo + cfg.batch);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
            auto image = model.image_embed(gather_volumes<T>(data, idx));
            auto text = model.text_embed(gather_captions(data, idx));
            auto loss = model.loss(image, text);
            const double value = loss.item();
            require(std::isfinite(value), ErrorCode::training,
                    "non-finite loss at step " + std::to_string(result.steps));
            backward(loss);
            optim.step(warmup_cosine(result.steps, total, cfg.warmup_ratio, cfg.lr));
            optim.zero_grad();
            result.step_losses.push_back(value);
            epoch_sum += value;
            ++result.steps;
        }
        result.epoch_losses.push_back(epoch_sum / static_cast<double>(per_epoch));
        if (log) *log << "epoch " << epoch + 1 << " loss " << result.epoch_losses.back() << '\n';
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

template <typename T>
Tensor<T> embed_images(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data, std::size_t batch) {
    require(!data.empty() && batch >= 1, ErrorCode::argument, "nothing to embed");
    NoGradGuard guard;
    std::vector<Tensor<T>> parts;
    for (std::size_t lo = 0; lo < data.size(); lo += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = lo; i < std::min(data.size(), lo + batch); ++i) idx.push_back(i);
        parts.push_back(model.image_embed(gather_volumes<T>(data, idx)));
    }
    return concat(parts, 0);
}

template <typename T>
Tensor<T> embed_texts(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data) {
    NoGradGuard guard;
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t {0});
    return model.text_embed(gather_captions(data, idx));
}

template <typename T>
RetrievalReport evaluate_retrieval(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data) {
    auto x = embed_images(model, data);
    auto y = embed_texts(model, data);
    NoGradGuard guard;
    const auto s = similarity_matrix(x, y);
    const std::size_t n = data.size();
    SimilarityMatrix sim(n, std::vector<double>(s.data().begin(), s.data().end()));
    RetrievalReport r;
    r.pairs = n;
    const std::size_t ks[] = {1, 5, 10};
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t k = std::min(ks[i], n);
        r.image_to_text[i] = recall_at_k(sim, k, RetrievalDirection::image_to_text);
        r.text_to_image[i] = recall_at_k(sim, k, RetrievalDirection::text_to_image);
    }
    return r;
}

#define DCVLM_TRAIN(T)                                                                                              \
    template TrainResult train_contrastive(ContrastiveModel<T>&, const std::vector<SynthPair>&, const TrainConfig&, \
                                           std::ostream*);                                                          \
    template Tensor<T> embed_images(const ContrastiveModel<T>&, const std::vector<SynthPair>&, std::size_t);        \
    template Tensor<T> embed_texts(const ContrastiveModel<T>&, const std::vector<SynthPair>&);                      \
    template RetrievalReport evaluate_retrieval(const ContrastiveModel<T>&, const std::vector<SynthPair>&);

DCVLM_TRAIN(float)
DCVLM_TRAIN(double)

}  // namespace dcvlm
