#include "dcvlm/vocab.hpp"

#include <sstream>

#include "dcvlm/error.hpp"

namespace dcvlm {

namespace {

std::vector<std::string> standard_tokens() {
    std::vector<std::string> t {"[cls]", "[pad]", "[unk]", "a",     "in",   "octant", "faint", "dim",
                                "medium", "bright", "sphere", "box", "cross", "1",      "2",     "3",
                                "4",     "5",      "6",      "7",   "8"};
    for (std::size_t i = 0; t.size() < 64; ++i) t.push_back("[reserved" + std::to_string(i) + "]");
    return t;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary v(standard_tokens());
    return v;
}

std::size_t Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? unk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
    require(id < tokens_.size(), ErrorCode::argument, "token id " + std::to_string(id) + " out of range");
    return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::string& caption, std::size_t seq_len) const {
    require(seq_len >= 1, ErrorCode::argument, "sequence length must be at least 1");
    std::vector<std::size_t> ids {cls};
    std::istringstream in(caption);
    std::string word;
    while (ids.size() < seq_len && in >> word) ids.push_back(id(word));
    ids.resize(seq_len, pad);
    return ids;
}

}  // namespace dcvlm
