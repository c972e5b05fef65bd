#include "dcvlm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "dcvlm/error.hpp"

namespace dcvlm {

namespace {

using NGramCounts = std::map<std::vector<std::string>, std::size_t>;

NGramCounts ngrams(const Tokens& t, std::size_t n) {
    NGramCounts out;
    if (t.size() < n) return out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
    return out;
}

std::size_t total(std::size_t len, std::size_t n) { return len >= n ? len - n + 1 : 0; }

// Candidate n-grams credited at most as often as they occur in the reference.
std::size_t clipped_matches(const NGramCounts& cand, const NGramCounts& ref) {
    std::size_t m = 0;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) m += std::min(c, it->second);
    }
    return m;
}

}  // namespace

SimilarityMatrix::SimilarityMatrix(std::size_t n_, std::vector<double> v) : n(n_), values(std::move(v)) {
    require(values.size() == n * n, ErrorCode::shape,
            "similarity matrix needs " + std::to_string(n * n) + " entries, got " + std::to_string(values.size()));
}

std::size_t match_rank(const SimilarityMatrix& sim, std::size_t q, RetrievalDirection dir) {
    require(q < sim.n, ErrorCode::argument, "query index out of range");
    auto score = [&](std::size_t c) { return dir == RetrievalDirection::image_to_text ? sim(q, c) : sim(c, q); };
    const double target = score(q);
    std::size_t rank = 0;
    for (std::size_t c = 0; c < sim.n; ++c) {
        const double s = score(c);
        if (s > target || (s == target && c < q)) ++rank;
    }
    return rank;
}

double recall_at_k(const SimilarityMatrix& sim, std::size_t k, RetrievalDirection dir) {
    require(sim.n >= 1, ErrorCode::argument, "recall needs a non-empty similarity matrix");
    require(k >= 1 && k <= sim.n, ErrorCode::argument,
            "recall k=" + std::to_string(k) + " outside [1, " + std::to_string(sim.n) + "]");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < sim.n; ++q) hits += match_rank(sim, q, dir) < k;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(sim.n);
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isspace(ch) || std::ispunct(ch)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double brevity_penalty(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    if (c > r) return 1.0;
    return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

BleuResult bleu_detail(const Tokens& candidate, const Tokens& reference, BleuOptions opts) {
    require(opts.max_order >= 1, ErrorCode::argument, "BLEU order must be at least 1");
    BleuResult r;
    if (candidate.empty()) {
        r.empty_candidate = true;
        r.precisions.assign(opts.max_order, 0.0);
        return r;
    }
    r.brevity_penalty = brevity_penalty(candidate.size(), reference.size());
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= opts.max_order; ++n) {
        const std::size_t t = total(candidate.size(), n);
        const std::size_t m = clipped_matches(ngrams(candidate, n), ngrams(reference, n));
        double p = t == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(t);
        r.precisions.push_back(p);
        if (p == 0.0 && opts.smoothing) p = 0.1 / static_cast<double>(std::max<std::size_t>(t, 1));
        if (p == 0.0) zero = true;
        else log_sum += std::log(p) / static_cast<double>(opts.max_order);
    }
    r.score = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum);
    return r;
}

double bleu(const Tokens& candidate, const Tokens& reference, BleuOptions opts) {
    return bleu_detail(candidate, reference, opts).score;
}

double rouge(const Tokens& candidate, const Tokens& reference, std::size_t max_order) {
    require(!reference.empty(), ErrorCode::undefined_metric, "ROUGE is undefined for an empty reference");
    require(max_order >= 1, ErrorCode::argument, "ROUGE order must be at least 1");
    std::size_t matched = 0, denom = 0;
    for (std::size_t n = 1; n <= max_order; ++n) {
        matched += clipped_matches(ngrams(candidate, n), ngrams(reference, n));
        denom += total(reference.size(), n);
    }
    require(denom > 0, ErrorCode::undefined_metric, "reference is shorter than every requested n-gram order");
    return static_cast<double>(matched) / static_cast<double>(denom);
}

double meteor(const Tokens& candidate, const Tokens& reference, bool harmonic) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t m = clipped_matches(ngrams(candidate, 1), ngrams(reference, 1));
    if (m == 0) return 0.0;
    const double p = static_cast<double>(m) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(m) / static_cast<double>(reference.size());
    return (harmonic ? 2.0 : 1.0) * p * r / (p + r);
}

void EmbeddingProvider::add(const std::string& token, std::vector<double> vec) {
    require(!vec.empty(), ErrorCode::provider, "embedding for '" + token + "' is empty");
    double norm = 0.0;
    for (double v : vec) {
        require(std::isfinite(v), ErrorCode::provider, "embedding for '" + token + "' is not finite");
        norm += v * v;
    }
    require(norm > 0.0, ErrorCode::provider, "embedding for '" + token + "' has zero norm");
    if (!table_.empty())
        require(vec.size() == table_.begin()->second.size(), ErrorCode::provider,
                "embedding for '" + token + "' has the wrong dimension");
    table_[token] = std::move(vec);
}

const std::vector<double>& EmbeddingProvider::at(const std::string& token) const {
    auto it = table_.find(token);
    require(it != table_.end(), ErrorCode::provider, "no embedding for token '" + token + "'");
    return it->second;
}

EmbeddingProvider EmbeddingProvider::shared(const std::vector<std::string>& vocab, std::vector<double> vec) {
    EmbeddingProvider p;
    for (const auto& t : vocab) p.add(t, vec);
    return p;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCode::provider, "embedding dimensions differ");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    // sqrt(aa * aa) == aa in IEEE arithmetic, so identical vectors give exactly 1.
    return ab / std::sqrt(aa * bb);
}

double bert_score(const Tokens& candidate, const Tokens& reference, const EmbeddingProvider& provider) {
    require(!candidate.empty() && !reference.empty(), ErrorCode::undefined_metric,
            "embedding score needs non-empty candidate and reference");
    double outer = 0.0;
    for (const auto& c : candidate) {
        const auto& ec = provider.at(c);
        double inner = 0.0;
        for (const auto& r : reference) inner += cosine(ec, provider.at(r));
        outer += inner / static_cast<double>(reference.size());
    }
    return outer / static_cast<double>(candidate.size());
}

}  // namespace dcvlm
