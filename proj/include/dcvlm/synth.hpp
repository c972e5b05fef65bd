#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcvlm/tensor.hpp"

namespace dcvlm {

enum class ShapeKind { sphere, box, cross };

const char* shape_name(ShapeKind s);
/// Caption word for intensity level 1..4.
const char* intensity_word(int level);

struct Latent {
    ShapeKind shape = ShapeKind::sphere;
    int octant = 1;     // 1..8
    int intensity = 1;  // 1..4

    bool operator==(const Latent&) const = default;
};

constexpr std::size_t latent_count = 3 * 8 * 4;

/// Every latent once, in (shape, octant, intensity) order.
std::vector<Latent> all_latents();
std::size_t latent_index(const Latent& l);
void validate_latent(const Latent& l);

/// "a <intensity> <shape> in octant <p>"
std::string caption_of(const Latent& l);

struct SynthPair {
    Latent latent;
    std::string caption;
    std::array<std::size_t, 3> dims {};  // H, W, D
    std::vector<float> volume;           // D contiguous
};

struct SynthOptions {
    std::array<std::size_t, 3> dims {32, 32, 32};
    bool unique = true;
    double noise = 0.05;
};

/// Pure function of (seed, n, options). Unique mode draws latents without
/// replacement and fails with a capacity error past 96.
std::vector<SynthPair> generate(std::uint64_t seed, std::size_t n, const SynthOptions& opts = {});

/// Background is exactly zero; object voxels are 0.25 * level plus uniform
/// noise in +-noise, clamped to [0, 1].
std::vector<float> render(const Latent& l, const std::array<std::size_t, 3>& dims, double noise, std::uint64_t seed);

/// Octant of the center of mass, rounded mean object intensity, and the shape
/// from how much of its bounding box the object fills.
Latent decode_volume(const std::vector<float>& volume, const std::array<std::size_t, 3>& dims);

/// (count, 1, H, W, D) batch of pairs[begin, begin + count).
template <typename T>
Tensor<T> stack_volumes(const std::vector<SynthPair>& pairs, std::size_t begin, std::size_t count);

/// Volumes in the checkpoint container (names pair0000, ...) plus
/// captions.tsv with "id<TAB>caption" lines.
void write_dataset(const std::filesystem::path& dir, const std::vector<SynthPair>& pairs);
std::vector<SynthPair> read_dataset(const std::filesystem::path& dir);

}  // namespace dcvlm
