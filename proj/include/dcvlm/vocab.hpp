#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcvlm {

/// Fixed 64-symbol vocabulary of the toy text tower. Ids 0..2 are the
/// pooling, padding and unknown markers; the caption words follow, and the
/// remainder is reserved filler so the table size stays fixed.
class Vocabulary {
 public:
    static constexpr std::size_t cls = 0;
    static constexpr std::size_t pad = 1;
    static constexpr std::size_t unk = 2;

    static const Vocabulary& standard();

    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    std::size_t id(const std::string& word) const;
    const std::string& token(std::size_t id) const;

    /// Whitespace split, prefixed with the pooling marker and padded (or
    /// truncated) to seq_len ids.
    std::vector<std::size_t> encode(const std::string& caption, std::size_t seq_len) const;

 private:
    explicit Vocabulary(std::vector<std::string> tokens);
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dcvlm
