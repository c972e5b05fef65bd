#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "dcvlm/contrastive.hpp"
#include "dcvlm/synth.hpp"
#include "dcvlm/train.hpp"

namespace dcvlm::harness {

/// Flat `section.key = value` settings with a fixed schema. Every key has a
/// default; setting or parsing an unknown key is a configuration error.
class RunConfig {
 public:
    RunConfig();

    /// '#' starts a comment; blank lines are skipped. `origin` names the
    /// source in error messages.
    static RunConfig parse(std::istream& in, const std::string& origin = "<config>");
    static RunConfig load(const std::filesystem::path& path);

    /// Validates the value against the key's type.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has_key(const std::string& key) const;
    static std::vector<std::string> keys();

    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    /// Every key in schema order, one `key = value` per line.
    std::string to_string() const;
    /// Writes to_string() as `<dir>/config.resolved`.
    void write_resolved(const std::filesystem::path& dir) const;

    std::uint64_t seed() const { return get_u64("run.seed"); }
    std::filesystem::path output() const { return get("run.output"); }
    std::array<std::size_t, 3> dims() const;
    SynthOptions synth_options() const;
    AlignmentConfig alignment() const;
    TrainConfig train() const;

 private:
    std::map<std::string, std::string> values_;
};

/// "AxBxC" into three positive extents.
std::array<std::size_t, 3> parse_dims(const std::string& text);

/// Train and held-out pairs drawn from one seeded pool of distinct latents,
/// so held-out latents never appear in training.
struct SplitData {
    std::vector<SynthPair> train;
    std::vector<SynthPair> heldout;
};
SplitData make_split(const RunConfig& cfg);

/// The compile-time `git describe` of this build.
const char* build_id();

}  // namespace dcvlm::harness
