#include <gtest/gtest.h>

#include <cmath>

#include "dcvlm/ops.hpp"
#include "dcvlm/projector.hpp"
#include "support/gradcheck.hpp"

using namespace dcvlm;

namespace {

template <typename T>
void zero(const Tensor<T>& t) {
    auto d = const_cast<Tensor<T>&>(t).mutable_data();
    std::fill(d.begin(), d.end(), T {0});
}

ProjectorConfig small_config(ProjectorKind kind) {
    ProjectorConfig cfg;
    cfg.kind = kind;
    cfg.n_low = 8;
    cfg.d_low = 6;
    cfg.n_high = 4;
    cfg.d_high = 10;
    cfg.d_llm = 12;
    return cfg;
}

FeaturePair<double> small_features(const ProjectorConfig& cfg, Rng& rng, std::size_t batch = 2) {
    return {Tensor<double>::uniform({batch, cfg.n_low, cfg.d_low}, -1, 1, rng),
            Tensor<double>::uniform({batch, cfg.n_high, cfg.d_high}, -1, 1, rng)};
}

constexpr ProjectorKind all_kinds[] = {ProjectorKind::mlp2, ProjectorKind::mlp2h, ProjectorKind::mixer1h,
                                       ProjectorKind::mixer2h};

}  // namespace

TEST(MixerBlock, ZeroOutputLayersGiveIdentity) {
    Rng rng(1);
    auto block = MixerBlock<double>::create(5, 7, 10, 14, true, rng);
    for (const auto* l : {&block.token_mlp.fc2, &block.channel_mlp.fc2}) {
        zero(l->weight);
        zero(l->bias);
    }
    auto x = Tensor<double>::uniform({2, 5, 7}, -1, 1, rng);
    EXPECT_EQ(block(x).to_vector(), x.to_vector());
}

TEST(MixerBlock, FullSizeHighStreamShape) {
    Rng rng(2);
    auto block = MixerBlock<float>::create(32, 768, 64, 1536, true, rng);
    NoGradGuard guard;
    auto y = block(Tensor<float>::uniform({1, 32, 768}, -1, 1, rng));
    EXPECT_EQ(y.shape(), (Shape {1, 32, 768}));
    for (float v : y.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(MixerBlock, TokenMlpEqualsChannelMlpOnTransposedInput) {
    Rng rng(3);
    auto mlp = Mlp<double>::create(6, 12, 6, rng);
    auto x = Tensor<double>::uniform({2, 6, 4}, -1, 1, rng);
    auto along_tokens = transpose(mlp(transpose(x)));
    EXPECT_EQ(along_tokens.shape(), x.shape());
    // Column by column: each channel's token vector is one MLP input row.
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 4; ++c) {
            std::vector<double> col(6);
            for (std::size_t t = 0; t < 6; ++t) col[t] = x.data()[(b * 6 + t) * 4 + c];
            auto y = mlp(Tensor<double>::from_vector({1, 6}, col));
            for (std::size_t t = 0; t < 6; ++t)
                EXPECT_NEAR(along_tokens.data()[(b * 6 + t) * 4 + c], y.data()[t], 1e-14);
        }
}

TEST(MixerBlock, RejectsWrongTokenCount) {
    Rng rng(4);
    auto block = MixerBlock<double>::create(5, 7, 10, 14, true, rng);
    EXPECT_THROW(block(Tensor<double>::zeros({1, 6, 7})), Error);
}

TEST(MixerBlock, Gradcheck) {
    for (bool residual : {true, false}) {
        Rng rng(5);
        auto block = MixerBlock<double>::create(4, 3, 8, 6, residual, rng);
        auto x = dcvlm::testing::random_leaf({2, 4, 3}, rng, -1, 1);
        ParamList<double> params;
        block.collect(params, "b");
        std::vector<Tensor<double>> leaves {x};
        for (auto& p : params) leaves.push_back(p.tensor);
        auto probe = dcvlm::testing::probe_weights({2, 4, 3});
        auto r = dcvlm::testing::gradcheck(leaves, [&] { return dcvlm::testing::weighted_sum(block(x), probe); });
        EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
    }
}

TEST(Projector, HybridEmits288TokensAtFullSize) {
    const auto cfg = ProjectorConfig::full_size(ProjectorKind::mixer2h);
    EXPECT_EQ(cfg.output_tokens(), 288u);
    EXPECT_EQ(ProjectorConfig::full_size(ProjectorKind::mlp2).output_tokens(), 32u);
}

TEST(Projector, OutputShapesForEveryVariant) {
    for (auto kind : all_kinds) {
        const auto cfg = small_config(kind);
        Rng rng(6);
        Projector<double> p(cfg, rng);
        auto f = small_features(cfg, rng, 3);
        auto y = p.forward(f);
        EXPECT_EQ(y.shape(), (Shape {3, cfg.output_tokens(), cfg.d_llm})) << projector_kind_name(kind);
        for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(Projector, ConcatenatesLowThenHigh) {
    const auto cfg = small_config(ProjectorKind::mixer2h);
    Rng rng(7);
    Projector<double> p(cfg, rng);
    const auto* h = p.hybrid();
    ASSERT_NE(h, nullptr);
    zero(h->high_proj.fc2.weight);
    auto bias = const_cast<Tensor<double>&>(h->high_proj.fc2.bias).mutable_data();
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.5 + static_cast<double>(i);
    auto f = small_features(cfg, rng, 1);
    auto y = p.forward(f);
    auto low = h->low_proj(
        [&] {
            Tensor<double> t = f.low;
            for (const auto& b : h->low_blocks) t = b(t);
            return t;
        }());
    for (std::size_t t = 0; t < cfg.n_high; ++t)
        for (std::size_t j = 0; j < cfg.d_llm; ++j)
            EXPECT_EQ(y.data()[(cfg.n_low + t) * cfg.d_llm + j], 0.5 + static_cast<double>(j));
    for (std::size_t i = 0; i < low.numel(); ++i) EXPECT_EQ(y.data()[i], low.data()[i]);
}

TEST(Projector, Mlp2IgnoresLowStream) {
    const auto cfg = small_config(ProjectorKind::mlp2);
    Rng rng(8);
    Projector<double> p(cfg, rng);
    auto f = small_features(cfg, rng);
    auto g = f;
    g.low = Tensor<double>::uniform(f.low.shape(), -5, 5, rng);
    EXPECT_EQ(p.forward(f).to_vector(), p.forward(g).to_vector());
}

TEST(Projector, Mixer2hMatchesHybridWithSameSeed) {
    const auto cfg = small_config(ProjectorKind::mixer2h);
    Rng a(9), b(9);
    Projector<double> p(cfg, a);
    auto h = HybridProjector<double>::create(cfg, b);
    Rng data(10);
    auto f = small_features(cfg, data);
    EXPECT_EQ(p.forward(f).to_vector(), h(f).to_vector());
}

TEST(Projector, TokenBudgetIsEnforced) {
    auto cfg = ProjectorConfig::full_size(ProjectorKind::mixer2h);
    cfg.n_low = 600;
    try {
        cfg.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::capacity);
    }
}

TEST(Projector, WrongFeatureShapeIsConfigurationError) {
    const auto cfg = small_config(ProjectorKind::mixer2h);
    Rng rng(11);
    Projector<double> p(cfg, rng);
    FeaturePair<double> f {Tensor<double>::zeros({1, cfg.n_low, cfg.d_low + 1}),
                           Tensor<double>::zeros({1, cfg.n_high, cfg.d_high})};
    try {
        p.forward(f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::configuration);
    }
}

TEST(Projector, GradcheckEveryVariant) {
    for (auto kind : all_kinds) {
        auto cfg = small_config(kind);
        cfg.n_low = 4;
        cfg.n_high = 2;
        cfg.d_low = 3;
        cfg.d_high = 4;
        cfg.d_llm = 5;
        Rng rng(12);
        Projector<double> p(cfg, rng);
        FeaturePair<double> f {dcvlm::testing::random_leaf({1, cfg.n_low, cfg.d_low}, rng, -1, 1),
                               dcvlm::testing::random_leaf({1, cfg.n_high, cfg.d_high}, rng, -1, 1)};
        std::vector<Tensor<double>> leaves {f.high};
        if (kind != ProjectorKind::mlp2) leaves.push_back(f.low);
        for (auto& pr : p.parameters()) leaves.push_back(pr.tensor);
        auto probe = dcvlm::testing::probe_weights({1, cfg.output_tokens(), cfg.d_llm});
        auto r = dcvlm::testing::gradcheck(leaves, [&] { return dcvlm::testing::weighted_sum(p.forward(f), probe); }, 1e-5, 24);
        EXPECT_LT(r.max_rel_err, 1e-4) << projector_kind_name(kind) << " " << r.worst;
    }
}

TEST(ProjectorCost, LinearHandExample) {
    const auto r = count_linear_cost(768, 3584, 32);
    EXPECT_EQ(r.total_parameters(), 768u * 3584 + 3584);
    EXPECT_EQ(r.total_multiply_adds(), 32ull * 768 * 3584);
}

TEST(ProjectorCost, ParameterCountsMatchModules) {
    for (auto kind : all_kinds) {
        const auto cfg = small_config(kind);
        Rng rng(13);
        Projector<double> p(cfg, rng);
        const auto params = p.parameters("");
        const auto report = count_projector_cost(cfg);
        ASSERT_EQ(params.size(), report.records().size()) << projector_kind_name(kind);
        for (std::size_t i = 0; i < params.size(); ++i) {
            EXPECT_EQ("." + report.records()[i].name, params[i].name);
            EXPECT_EQ(params[i].tensor.numel(), report.records()[i].parameters);
        }
    }
}

TEST(ProjectorCost, FullSizeOrdering) {
    auto cost = [](ProjectorKind k) { return count_projector_cost(ProjectorConfig::full_size(k)); };
    const auto m2 = cost(ProjectorKind::mlp2);
    const auto m2h = cost(ProjectorKind::mlp2h);
    const auto x1 = cost(ProjectorKind::mixer1h);
    const auto x2 = cost(ProjectorKind::mixer2h);
    EXPECT_EQ(m2.total_parameters(), 768u * 3584 + 3584 + 3584u * 3584 + 3584);
    EXPECT_GT(x2.total_parameters(), x1.total_parameters());
    EXPECT_GT(x1.total_parameters(), m2h.total_parameters());
    EXPECT_GT(m2h.total_parameters(), m2.total_parameters());
    EXPECT_GT(x2.total_multiply_adds(), m2h.total_multiply_adds());
}

TEST(ProjectorCost, MacsLinearInTokensParamsFixed) {
    auto cfg = ProjectorConfig::full_size(ProjectorKind::mlp2h);
    cfg.token_budget = 1024;
    const auto a = count_projector_cost(cfg);
    cfg.n_low *= 2;
    cfg.n_high *= 2;
    const auto b = count_projector_cost(cfg);
    EXPECT_EQ(a.total_parameters(), b.total_parameters());
    EXPECT_EQ(2 * a.total_multiply_adds(), b.total_multiply_adds());
}
