#include "dcvlm/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

#include "dcvlm/conv.hpp"
#include "dcvlm/encoder.hpp"
#include "dcvlm/projector.hpp"

namespace dcvlm::harness {

namespace {

constexpr std::array<std::size_t, 3> full_volume {128, 256, 256};
constexpr double agreement_band = 25.0;  // percent

const PublishedCost encoder_published {"DCFormer-small", "18.2M", "21.59G", 18.2e6, 21.59e9};

const std::vector<std::pair<ProjectorKind, PublishedCost>>& projector_published() {
    static const std::vector<std::pair<ProjectorKind, PublishedCost>> rows {
        {ProjectorKind::mlp2, {"2xMLP", "15.60 M", "0.50 G", 15.60e6, 0.50e9}},
        {ProjectorKind::mlp2h, {"2xMLP-H", "16.98 M", "4.14 G", 16.98e6, 4.14e9}},
        {ProjectorKind::mixer1h, {"1xMLP-Mixer-H", "29.91 M", "3.85 G", 29.91e6, 3.85e9}},
        {ProjectorKind::mixer2h, {"2xMLP-Mixer-H", "47.22 M", "6.14 G", 47.22e6, 6.14e9}},
    };
    return rows;
}

std::string human(double v) {
    char buf[32];
    if (v >= 1e9)
        std::snprintf(buf, sizeof buf, "%.2fG", v / 1e9);
    else if (v >= 1e6)
        std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
    else if (v >= 1e3)
        std::snprintf(buf, sizeof buf, "%.2fK", v / 1e3);
    else
        std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
}

bool within_band(double measured, double published) {
    return std::abs(measured - published) / published * 100.0 <= agreement_band;
}

void comparison(std::ostream& out, const CostReport& r, const PublishedCost& pub) {
    const double p = static_cast<double>(r.total_parameters());
    const double m = static_cast<double>(r.total_multiply_adds());
    char line[256];
    std::snprintf(line, sizeof line, "  %-22s %14s %14s\n", "", "params", "multiply-adds");
    out << line;
    std::snprintf(line, sizeof line, "  %-22s %14llu %14llu\n", "measured (exact)",
                  static_cast<unsigned long long>(r.total_parameters()),
                  static_cast<unsigned long long>(r.total_multiply_adds()));
    out << line;
    std::snprintf(line, sizeof line, "  %-22s %14s %14s\n", "measured", human(p).c_str(), human(m).c_str());
    out << line;
    std::snprintf(line, sizeof line, "  %-22s %14s %14s\n", "published", pub.params_text, pub.macs_text);
    out << line;
    std::snprintf(line, sizeof line, "  %-22s %14s %14s\n", "delta", percent_delta(p, pub.params).c_str(),
                  percent_delta(m, pub.macs).c_str());
    out << line;
    const bool ok = within_band(p, pub.params) && within_band(m, pub.macs);
    out << "  within +-25%: " << (ok ? "yes" : "no") << "\n";
}

}  // namespace

std::string percent_delta(double measured, double published) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", (measured - published) / published * 100.0);
    return buf;
}

std::string itemize_by_layer(const CostReport& report, const std::string& indent) {
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> layers;
    for (const auto& rec : report.records()) {
        const auto dot = rec.name.rfind('.');
        const std::string layer = dot == std::string::npos ? rec.name : rec.name.substr(0, dot);
        if (!layers.count(layer)) order.push_back(layer);
        layers[layer].first += rec.parameters;
        layers[layer].second += rec.multiply_adds;
    }
    std::size_t width = 5;
    for (const auto& l : order) width = std::max(width, l.size());
    std::ostringstream out;
    char line[512];
    std::snprintf(line, sizeof line, "%s%-*s %14s %16s\n", indent.c_str(), static_cast<int>(width), "layer", "params",
                  "multiply-adds");
    out << line;
    for (const auto& l : order) {
        std::snprintf(line, sizeof line, "%s%-*s %14llu %16llu\n", indent.c_str(), static_cast<int>(width), l.c_str(),
                      static_cast<unsigned long long>(layers[l].first),
                      static_cast<unsigned long long>(layers[l].second));
        out << line;
    }
    return out.str();
}

std::string report_costs() {
    std::ostringstream out;
    out << "Cost report\n"
        << "Batch 1. A multiply-add counts as one FLOP, matching how the published\n"
        << "figures are usually tallied. Norms, activations and residual adds are\n"
        << "not counted.\n\n";

    // Encoder.
    const auto enc_cfg = EncoderConfig::dcformer_small();
    const auto enc = count_encoder_cost(enc_cfg, full_volume);
    const auto [n_low, n_high] = encoder_token_counts(enc_cfg, full_volume);
    out << "== 3D image encoder: " << encoder_published.label << ", input 1x128x256x256 ==\n";
    out << "  tokens: " << n_low << " low (d=" << enc_cfg.low_dim() << "), " << n_high << " high (d="
        << enc_cfg.high_dim() << ")\n";
    comparison(out, enc, encoder_published);
    out << "  baseline encoder of the reference system (ViT3D, literature value, not computed): 87.4M params, "
           "253.23G FLOPs\n";
    out << "  per layer:\n" << itemize_by_layer(enc, "    ") << "\n";

    // Projectors.
    out << "== Multimodal projector, full-size inputs (256x384 low, 32x768 high, d_llm 3584) ==\n";
    char line[256];
    std::snprintf(line, sizeof line, "  %-14s %7s %12s %10s %9s %12s %10s %9s\n", "variant", "tokens", "params",
                  "published", "delta", "mult-adds", "published", "delta");
    out << line;
    std::vector<std::pair<double, std::string>> measured_order, published_order;
    for (const auto& [kind, pub] : projector_published()) {
        const auto cfg = ProjectorConfig::full_size(kind);
        const auto r = count_projector_cost(cfg);
        const double p = static_cast<double>(r.total_parameters());
        const double m = static_cast<double>(r.total_multiply_adds());
        std::snprintf(line, sizeof line, "  %-14s %7zu %12s %10s %9s %12s %10s %9s\n", pub.label, cfg.output_tokens(),
                      human(p).c_str(), pub.params_text, percent_delta(p, pub.params).c_str(), human(m).c_str(),
                      pub.macs_text, percent_delta(m, pub.macs).c_str());
        out << line;
        measured_order.push_back({p, pub.label});
        published_order.push_back({pub.params, pub.label});
    }
    std::sort(measured_order.rbegin(), measured_order.rend());
    std::sort(published_order.rbegin(), published_order.rend());
    auto order_text = [](const std::vector<std::pair<double, std::string>>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " > " : "") + v[i].second;
        return s;
    };
    out << "  ordering by params, measured:  " << order_text(measured_order) << "\n";
    out << "  ordering by params, published: " << order_text(published_order) << "\n";
    out << "  ordering matches: " << (order_text(measured_order) == order_text(published_order) ? "yes" : "no")
        << "\n\n";

    const auto& final_pub = projector_published().back().second;
    const auto final = count_projector_cost(ProjectorConfig::full_size(ProjectorKind::mixer2h));
    out << "== Final projector: " << final_pub.label << " ==\n";
    comparison(out, final, final_pub);
    out << "  projector of the reference system (literature value, not computed): 19.9M params, 5.10G FLOPs\n";
    out << "  per layer:\n" << itemize_by_layer(final, "    ") << "\n";

    // Decomposed against full depthwise convolution.
    const Shape conv_shape {1, 32, 32, 32, 32};
    out << "== Decomposed vs full depthwise 3D convolution, input 1x32x32x32x32 ==\n";
    std::snprintf(line, sizeof line, "  %4s %16s %16s %10s %10s\n", "k", "decomposed", "full", "ratio", "k^2/3");
    out << line;
    for (std::size_t k : {7u, 9u, 11u, 13u}) {
        const auto d = count_decomposed_cost(32, {k, k, k}, conv_shape, false).total_multiply_adds();
        const auto f = count_full_dw_cost(32, k, conv_shape).total_multiply_adds();
        std::snprintf(line, sizeof line, "  %4zu %16llu %16llu %9.1fx %9.1fx\n", k, static_cast<unsigned long long>(d),
                      static_cast<unsigned long long>(f), static_cast<double>(f) / static_cast<double>(d),
                      static_cast<double>(k * k) / 3.0);
        out << line;
    }
    return out.str();
}

}  // namespace dcvlm::harness
