#include "dcvlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dcvlm/checkpoint.hpp"
#include "dcvlm/error.hpp"
#include "dcvlm/random.hpp"

namespace dcvlm {

namespace {

constexpr const char* intensity_words[] = {"faint", "dim", "medium", "bright"};

// Geometry as fractions of the smallest volume side.
constexpr double sphere_radius = 0.18;
constexpr double box_half = 0.14;
constexpr double cross_half_length = 0.22;
constexpr double cross_half_thickness = 0.06;

std::array<double, 3> octant_center(int octant, const std::array<std::size_t, 3>& dims) {
    const int bits = octant - 1;
    const int hbit = bits & 1, wbit = (bits >> 1) & 1, dbit = (bits >> 2) & 1;
    auto c = [&](int bit, std::size_t n) { return (bit ? 0.75 : 0.25) * static_cast<double>(n); };
    return {c(hbit, dims[0]), c(wbit, dims[1]), c(dbit, dims[2])};
}

bool inside(ShapeKind s, double dh, double dw, double dd, double m) {
    switch (s) {
        case ShapeKind::sphere: {
            const double r = sphere_radius * m;
            return dh * dh + dw * dw + dd * dd <= r * r;
        }
        case ShapeKind::box: {
            const double h = box_half * m;
            return std::abs(dh) <= h && std::abs(dw) <= h && std::abs(dd) <= h;
        }
        case ShapeKind::cross: {
            const double l = cross_half_length * m, t = cross_half_thickness * m;
            const double a = std::abs(dh), b = std::abs(dw), c = std::abs(dd);
            return (a <= l && b <= t && c <= t) || (a <= t && b <= l && c <= t) || (a <= t && b <= t && c <= l);
        }
    }
    return false;
}

}  // namespace

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::box: return "box";
        case ShapeKind::cross: return "cross";
    }
    return "?";
}

const char* intensity_word(int level) {
    require(level >= 1 && level <= 4, ErrorCode::argument, "intensity level must be 1..4");
    return intensity_words[level - 1];
}

void validate_latent(const Latent& l) {
    require(l.octant >= 1 && l.octant <= 8, ErrorCode::argument, "octant must be 1..8");
    require(l.intensity >= 1 && l.intensity <= 4, ErrorCode::argument, "intensity level must be 1..4");
}

std::vector<Latent> all_latents() {
    std::vector<Latent> out;
    for (auto s : {ShapeKind::sphere, ShapeKind::box, ShapeKind::cross})
        for (int p = 1; p <= 8; ++p)
            for (int i = 1; i <= 4; ++i) out.push_back({s, p, i});
    return out;
}

std::size_t latent_index(const Latent& l) {
    validate_latent(l);
    return static_cast<std::size_t>(l.shape) * 32 + static_cast<std::size_t>(l.octant - 1) * 4 +
           static_cast<std::size_t>(l.intensity - 1);
}

std::string caption_of(const Latent& l) {
    validate_latent(l);
    return std::string("a ") + intensity_word(l.intensity) + " " + shape_name(l.shape) + " in octant " +
           std::to_string(l.octant);
}

std::vector<float> render(const Latent& l, const std::array<std::size_t, 3>& dims, double noise, std::uint64_t seed) {
    validate_latent(l);
    const auto [H, W, D] = dims;
    require(H >= 4 && W >= 4 && D >= 4, ErrorCode::argument, "volume sides must be at least 4");
    const double m = static_cast<double>(std::min({H, W, D}));
    const auto c = octant_center(l.octant, dims);
    const double level = 0.25 * l.intensity;
    Rng rng(seed);
    std::vector<float> v(H * W * D, 0.0f);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t d = 0; d < D; ++d) {
                // Voxel centers sit at integer + 0.5.
                const double dh = h + 0.5 - c[0], dw = w + 0.5 - c[1], dd = d + 0.5 - c[2];
                if (!inside(l.shape, dh, dw, dd, m)) continue;
                const double val = level + rng.uniform(-noise, noise);
                v[(h * W + w) * D + d] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
    return v;
}

std::vector<SynthPair> generate(std::uint64_t seed, std::size_t n, const SynthOptions& opts) {
    require(opts.noise >= 0.0 && opts.noise < 0.125, ErrorCode::argument, "noise must be in [0, 0.125)");
    auto latents = all_latents();
    Rng rng(seed);
    std::vector<Latent> chosen;
    if (opts.unique) {
        require(n <= latent_count, ErrorCode::capacity,
                "unique mode supports at most " + std::to_string(latent_count) + " pairs, asked for " + std::to_string(n));
        rng.shuffle(latents.begin(), latents.end());
        chosen.assign(latents.begin(), latents.begin() + static_cast<std::ptrdiff_t>(n));
    } else {
        for (std::size_t i = 0; i < n; ++i) chosen.push_back(latents[rng.below(latent_count)]);
    }
    std::vector<SynthPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto noise_seed = rng.derive(i).next_u64();
        out.push_back({chosen[i], caption_of(chosen[i]), opts.dims, render(chosen[i], opts.dims, opts.noise, noise_seed)});
    }
    return out;
}

Latent decode_volume(const std::vector<float>& volume, const std::array<std::size_t, 3>& dims) {
    const auto [H, W, D] = dims;
    require(volume.size() == H * W * D, ErrorCode::shape, "volume size does not match dims");
    double mass = 0, ch = 0, cw = 0, cd = 0;
    std::size_t count = 0;
    std::array<std::size_t, 3> lo {H, W, D}, hi {0, 0, 0};
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t d = 0; d < D; ++d) {
                const float v = volume[(h * W + w) * D + d];
                if (v <= 0.0f) continue;
                mass += v;
                ch += v * (h + 0.5);
                cw += v * (w + 0.5);
                cd += v * (d + 0.5);
                ++count;
                lo = {std::min(lo[0], h), std::min(lo[1], w), std::min(lo[2], d)};
                hi = {std::max(hi[0], h), std::max(hi[1], w), std::max(hi[2], d)};
            }
    require(count > 0, ErrorCode::argument, "volume has no foreground voxels");
    Latent l;
    const int hbit = ch / mass > H / 2.0, wbit = cw / mass > W / 2.0, dbit = cd / mass > D / 2.0;
    l.octant = 1 + 4 * dbit + 2 * wbit + hbit;
    l.intensity = std::clamp(static_cast<int>(std::lround(mass / count / 0.25)), 1, 4);
    const double box = static_cast<double>((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1));
    const double fill = count / box;
    // Box fills ~1, sphere ~pi/6, the three-bar cross well under 0.3.
    l.shape = fill > 0.8 ? ShapeKind::box : fill > 0.3 ? ShapeKind::sphere : ShapeKind::cross;
    return l;
}

template <typename T>
Tensor<T> stack_volumes(const std::vector<SynthPair>& pairs, std::size_t begin, std::size_t count) {
    require(count >= 1 && begin + count <= pairs.size(), ErrorCode::argument, "batch range out of bounds");
    const auto dims = pairs[begin].dims;
    const std::size_t vox = dims[0] * dims[1] * dims[2];
    std::vector<T> data;
    data.reserve(count * vox);
    for (std::size_t i = begin; i < begin + count; ++i) {
        require(pairs[i].dims == dims, ErrorCode::shape, "pairs in one batch must share dims");
        data.insert(data.end(), pairs[i].volume.begin(), pairs[i].volume.end());
    }
    return Tensor<T>::from_vector({count, 1, dims[0], dims[1], dims[2]}, std::move(data));
}

namespace {

Latent parse_caption(const std::string& caption) {
    std::istringstream in(caption);
    std::string a, intensity, shape, in_word, octant_word;
    int octant = 0;
    in >> a >> intensity >> shape >> in_word >> octant_word >> octant;
    Latent l;
    l.octant = octant;
    l.intensity = 0;
    for (int i = 1; i <= 4; ++i)
        if (intensity == intensity_words[i - 1]) l.intensity = i;
    bool known = false;
    for (auto s : {ShapeKind::sphere, ShapeKind::box, ShapeKind::cross})
        if (shape == shape_name(s)) {
            l.shape = s;
            known = true;
        }
    require(known && l.intensity > 0 && octant >= 1 && octant <= 8 && caption_of(l) == caption, ErrorCode::parse,
            "caption does not follow the template: '" + caption + "'");
    return l;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<SynthPair>& pairs) {
    std::filesystem::create_directories(dir);
    std::vector<CheckpointEntry> entries;
    std::ofstream captions(dir / "captions.tsv", std::ios::binary);
    require(static_cast<bool>(captions), ErrorCode::io, "cannot write " + (dir / "captions.tsv").string());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "pair%04zu", i);
        const auto& p = pairs[i];
        entries.push_back(to_entry(name, Tensor<float>::from_vector({p.dims[0], p.dims[1], p.dims[2]}, p.volume)));
        captions << name << '\t' << p.caption << '\n';
    }
    write_checkpoint(dir / "volumes.ckpt", entries);
}

std::vector<SynthPair> read_dataset(const std::filesystem::path& dir) {
    auto tensors = load_tensors<float>(dir / "volumes.ckpt");
    std::ifstream captions(dir / "captions.tsv");
    require(static_cast<bool>(captions), ErrorCode::io, "cannot read " + (dir / "captions.tsv").string());
    std::vector<SynthPair> out;
    std::string line;
    while (std::getline(captions, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        require(tab != std::string::npos, ErrorCode::parse, "caption line lacks a tab: '" + line + "'");
        const auto id = line.substr(0, tab);
        auto it = tensors.find(id);
        require(it != tensors.end(), ErrorCode::parse, "no volume named " + id);
        const auto& t = it->second;
        require(t.rank() == 3, ErrorCode::parse, "volume " + id + " is not rank 3");
        SynthPair p;
        p.caption = line.substr(tab + 1);
        p.latent = parse_caption(p.caption);
        p.dims = {t.dim(0), t.dim(1), t.dim(2)};
        p.volume = t.to_vector();
        out.push_back(std::move(p));
    }
    return out;
}

template Tensor<float> stack_volumes(const std::vector<SynthPair>&, std::size_t, std::size_t);
template Tensor<double> stack_volumes(const std::vector<SynthPair>&, std::size_t, std::size_t);

}  // namespace dcvlm
