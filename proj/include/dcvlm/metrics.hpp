#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcvlm {

/// Square score matrix, row-major; entry (i, j) compares image i to text j
/// and pair i matches i.
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    SimilarityMatrix() = default;
    SimilarityMatrix(std::size_t n, std::vector<double> values);
    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

enum class RetrievalDirection { image_to_text, text_to_image };

/// Rank of the true match for query q: candidates scoring strictly higher,
/// plus equal-scoring candidates with a lower index.
std::size_t match_rank(const SimilarityMatrix& sim, std::size_t query, RetrievalDirection dir);

/// Percentage of queries whose match has rank < k. Needs 1 <= k <= n.
double recall_at_k(const SimilarityMatrix& sim, std::size_t k, RetrievalDirection dir);

/// Lowercase, then split on whitespace and ASCII punctuation.
std::vector<std::string> tokenize(const std::string& text);

using Tokens = std::vector<std::string>;

/// 1 when c > r, otherwise exp(1 - r / c). c = 0 gives 0.
double brevity_penalty(std::size_t c, std::size_t r);

struct BleuResult {
    double score = 0.0;
    double brevity_penalty = 0.0;
    std::vector<double> precisions;  // clipped p_n, n = 1..N
    bool empty_candidate = false;
};

struct BleuOptions {
    std::size_t max_order = 4;
    // Replace zero matches with 0.1 so short hypotheses keep a nonzero score.
    bool smoothing = false;
};

/// Uniform weights 1/N. Any zero precision gives 0 unless smoothed.
BleuResult bleu_detail(const Tokens& candidate, const Tokens& reference, BleuOptions opts = {});
double bleu(const Tokens& candidate, const Tokens& reference, BleuOptions opts = {});

/// Matched reference n-grams over total reference n-grams, both summed over
/// n = 1..N. An empty reference is an undefined-metric error.
double rouge(const Tokens& candidate, const Tokens& reference, std::size_t max_order = 1);

/// P R / (P + R) from exact unigram matches. `harmonic` gives 2 P R / (P + R).
double meteor(const Tokens& candidate, const Tokens& reference, bool harmonic = false);

/// Token to vector lookup for the embedding-based score.
class EmbeddingProvider {
 public:
    void add(const std::string& token, std::vector<double> vec);
    const std::vector<double>& at(const std::string& token) const;
    bool contains(const std::string& token) const { return table_.count(token) != 0; }

    /// Every token of the vocabulary gets the same vector.
    static EmbeddingProvider shared(const std::vector<std::string>& vocab, std::vector<double> vec);

 private:
    std::unordered_map<std::string, std::vector<double>> table_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Mean cosine over all (candidate, reference) token pairs.
double bert_score(const Tokens& candidate, const Tokens& reference, const EmbeddingProvider& provider);

}  // namespace dcvlm
