#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <vector>

#include "dcvlm/contrastive.hpp"
#include "dcvlm/synth.hpp"

namespace dcvlm {

struct TrainConfig {
    std::size_t epochs = 120;
    std::size_t batch = 16;
    double lr = 2e-3;
    double weight_decay = 0.1;
    double warmup_ratio = 0.03;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;  // mean over the epoch's steps
    std::size_t steps = 0;
    double seconds = 0.0;
};

/// Minibatch AdamW over shuffled pairs. A non-finite loss raises a training
/// error naming the step.
template <typename T>
TrainResult train_contrastive(ContrastiveModel<T>& model, const std::vector<SynthPair>& data, const TrainConfig& cfg,
                              std::ostream* log = nullptr);

/// (N, shared) embeddings, computed without the tape.
template <typename T>
Tensor<T> embed_images(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data, std::size_t batch = 16);
template <typename T>
Tensor<T> embed_texts(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data);

struct RetrievalReport {
    std::size_t pairs = 0;
    std::array<double, 3> image_to_text {};  // R@1, R@5, R@10 in percent
    std::array<double, 3> text_to_image {};
};

/// R@{1,5,10} over the dot-product similarity of the pairs. K values larger
/// than the set are clamped to its size.
template <typename T>
RetrievalReport evaluate_retrieval(const ContrastiveModel<T>& model, const std::vector<SynthPair>& data);

}  // namespace dcvlm
