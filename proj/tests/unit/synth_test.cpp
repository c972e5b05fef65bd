#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "dcvlm/synth.hpp"
#include "dcvlm/vocab.hpp"

using namespace dcvlm;

TEST(Synth, SameSeedSameData) {
    const auto a = generate(5, 12);
    const auto b = generate(5, 12);
    const auto c = generate(6, 12);
    ASSERT_EQ(a.size(), 12u);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].latent, b[i].latent);
        EXPECT_EQ(a[i].caption, b[i].caption);
        EXPECT_EQ(a[i].volume, b[i].volume);
        any_diff |= !(a[i].latent == c[i].latent);
    }
    EXPECT_TRUE(any_diff);
}

TEST(Synth, UniqueModeCoversEveryLatentOnce) {
    SynthOptions opts;
    opts.dims = {8, 8, 8};
    const auto all = generate(3, latent_count, opts);
    std::set<std::size_t> seen;
    for (const auto& p : all) seen.insert(latent_index(p.latent));
    EXPECT_EQ(seen.size(), latent_count);
    try {
        generate(3, latent_count + 1, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::capacity);
    }
    opts.unique = false;
    EXPECT_EQ(generate(3, 200, opts).size(), 200u);
}

TEST(Synth, SphereRenderRule) {
    const std::array<std::size_t, 3> dims {32, 32, 32};
    const Latent l {ShapeKind::sphere, 3, 2};
    const auto v = render(l, dims, 0.05, 11);
    // Octant 3: bits 010, so the center sits at (0.25, 0.75, 0.25) of each axis.
    const double ch = 8, cw = 24, cd = 8, r = 0.18 * 32;
    std::size_t inside = 0;
    for (std::size_t h = 0; h < 32; ++h)
        for (std::size_t w = 0; w < 32; ++w)
            for (std::size_t d = 0; d < 32; ++d) {
                const float x = v[(h * 32 + w) * 32 + d];
                const double dist = std::hypot(h + 0.5 - ch, w + 0.5 - cw, d + 0.5 - cd);
                if (dist > r + 1.0) {
                    EXPECT_EQ(x, 0.0f);
                } else if (dist < r - 1.0) {
                    ++inside;
                    EXPECT_GE(x, 0.45f);
                    EXPECT_LE(x, 0.55f);
                }
                EXPECT_GE(x, 0.0f);
                EXPECT_LE(x, 1.0f);
            }
    EXPECT_GT(inside, 100u);
}

TEST(Synth, BrightestLevelStaysClamped) {
    const auto v = render({ShapeKind::box, 8, 4}, {16, 16, 16}, 0.05, 2);
    EXPECT_EQ(*std::max_element(v.begin(), v.end()), 1.0f);
    EXPECT_GE(*std::min_element(v.begin(), v.end()), 0.0f);
}

TEST(Synth, CaptionTemplate) {
    EXPECT_EQ(caption_of({ShapeKind::sphere, 3, 4}), "a bright sphere in octant 3");
    EXPECT_EQ(caption_of({ShapeKind::cross, 8, 1}), "a faint cross in octant 8");
    EXPECT_THROW(caption_of({ShapeKind::box, 9, 1}), Error);
    EXPECT_THROW(caption_of({ShapeKind::box, 1, 0}), Error);
}

TEST(Synth, CaptionsAreInjectiveAndInVocabulary) {
    const auto& vocab = Vocabulary::standard();
    std::set<std::string> captions;
    for (const auto& l : all_latents()) {
        const auto c = caption_of(l);
        captions.insert(c);
        for (auto id : vocab.encode(c, 8)) EXPECT_NE(id, Vocabulary::unk) << c;
    }
    EXPECT_EQ(captions.size(), latent_count);
    EXPECT_EQ(vocab.size(), 64u);
}

TEST(Synth, DecoderRecoversEveryLatent) {
    const std::array<std::size_t, 3> dims {32, 32, 32};
    for (const auto& l : all_latents()) {
        const auto v = render(l, dims, 0.05, latent_index(l));
        const auto got = decode_volume(v, dims);
        EXPECT_EQ(got, l) << caption_of(l) << " decoded as " << caption_of(got);
    }
}

TEST(Synth, NonCubicVolumes) {
    SynthOptions opts;
    opts.dims = {16, 24, 32};
    for (const auto& p : generate(1, 10, opts)) {
        EXPECT_EQ(p.volume.size(), 16u * 24 * 32);
        EXPECT_EQ(decode_volume(p.volume, p.dims), p.latent);
    }
}

TEST(Synth, StackVolumesLayout) {
    SynthOptions opts;
    opts.dims = {4, 5, 6};
    const auto pairs = generate(2, 3, opts);
    const auto t = stack_volumes<float>(pairs, 1, 2);
    EXPECT_EQ(t.shape(), (Shape {2, 1, 4, 5, 6}));
    EXPECT_TRUE(std::equal(pairs[2].volume.begin(), pairs[2].volume.end(), t.data().begin() + 120));
}

TEST(Synth, DatasetRoundtrip) {
    const auto dir = std::filesystem::temp_directory_path() / "dcvlm_synth_roundtrip";
    std::filesystem::remove_all(dir);
    SynthOptions opts;
    opts.dims = {8, 8, 8};
    const auto pairs = generate(9, 7, opts);
    write_dataset(dir, pairs);
    const auto back = read_dataset(dir);
    ASSERT_EQ(back.size(), pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(back[i].latent, pairs[i].latent);
        EXPECT_EQ(back[i].caption, pairs[i].caption);
        EXPECT_EQ(back[i].dims, pairs[i].dims);
        EXPECT_EQ(back[i].volume, pairs[i].volume);
    }
    std::filesystem::remove_all(dir);
}
