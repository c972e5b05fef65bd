#include <gtest/gtest.h>

#include <cmath>

#include "dcvlm/optim.hpp"
#include "dcvlm/train.hpp"

using namespace dcvlm;

namespace {

AlignmentConfig small_alignment(LossKind loss) {
    AlignmentConfig cfg;
    cfg.encoder = EncoderConfig::toy();
    cfg.encoder.channels = {4, 6, 8, 12};
    cfg.encoder.depths = {1, 1, 1, 1};
    cfg.encoder.kernels = {5, 5, 3, 3};
    cfg.shared_dim = 16;
    cfg.text_dim = 16;
    cfg.loss = loss;
    return cfg;
}

std::vector<SynthPair> small_data(std::size_t n) {
    SynthOptions opts;
    opts.dims = {32, 32, 32};
    return generate(4, n, opts);
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
    EXPECT_DOUBLE_EQ(warmup_cosine(0, 100, 0.03, 1.0), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(warmup_cosine(2, 100, 0.03, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(warmup_cosine(3, 100, 0.03, 1.0), 1.0);
    EXPECT_NEAR(warmup_cosine(50, 100, 0.0, 2.0), 1.0, 1e-12);
    EXPECT_NEAR(warmup_cosine(99, 100, 0.0, 1.0), 0.5 * (1 + std::cos(M_PI * 0.99)), 1e-12);
}

TEST(Train, LossFallsOverFirstSteps) {
    Rng rng(1);
    ContrastiveModel<float> model(small_alignment(LossKind::siglip), rng);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch = 8;
    cfg.lr = 5e-4;
    cfg.warmup_ratio = 0.0;
    const auto r = train_contrastive(model, small_data(8), cfg);
    ASSERT_EQ(r.steps, 8u);
    for (std::size_t i = 1; i < r.step_losses.size(); ++i) EXPECT_LT(r.step_losses[i], r.step_losses[i - 1]) << i;
}

TEST(Train, ZeroLearningRateChangesNothing) {
    Rng rng(2);
    ContrastiveModel<double> model(small_alignment(LossKind::clip), rng);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.parameters()) before.push_back(p.tensor.to_vector());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 6;
    cfg.lr = 0.0;
    const auto r = train_contrastive(model, small_data(6), cfg);
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i].tensor.to_vector(), before[i]) << params[i].name;
    for (auto l : r.step_losses) EXPECT_NEAR(l, r.step_losses[0], 1e-12);
}

TEST(Train, NonFiniteLossIsTrainingError) {
    Rng rng(3);
    ContrastiveModel<float> model(small_alignment(LossKind::siglip), rng);
    auto log_t = model.head().log_t;
    log_t.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    try {
        train_contrastive(model, small_data(4), cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::training);
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
}

TEST(Train, RetrievalReportShape) {
    Rng rng(4);
    ContrastiveModel<float> model(small_alignment(LossKind::siglip), rng);
    const auto data = small_data(6);
    const auto rep = evaluate_retrieval(model, data);
    EXPECT_EQ(rep.pairs, 6u);
    // K = 10 is clamped to the six available pairs.
    EXPECT_EQ(rep.image_to_text[2], 100.0);
    EXPECT_LE(rep.image_to_text[0], rep.image_to_text[1]);
}
