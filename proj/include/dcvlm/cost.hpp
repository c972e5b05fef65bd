#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcvlm {

struct CostRecord {
    std::string name;
    std::uint64_t multiply_adds = 0;
    std::uint64_t parameters = 0;
};

/// Exact per-layer multiply-add and parameter counts. Elementwise work
/// (norms, activations, residual adds) is not counted as multiply-adds.
class CostReport {
 public:
    void add(std::string name, std::uint64_t multiply_adds, std::uint64_t parameters) {
        records_.push_back({std::move(name), multiply_adds, parameters});
    }

    /// Appends every record of `other` with `prefix.` prepended.
    void append(const std::string& prefix, const CostReport& other) {
        for (const auto& r : other.records_)
            records_.push_back({prefix.empty() ? r.name : prefix + "." + r.name, r.multiply_adds, r.parameters});
    }

    const std::vector<CostRecord>& records() const { return records_; }

    std::uint64_t total_multiply_adds() const {
        std::uint64_t n = 0;
        for (const auto& r : records_) n += r.multiply_adds;
        return n;
    }

    std::uint64_t total_parameters() const {
        std::uint64_t n = 0;
        for (const auto& r : records_) n += r.parameters;
        return n;
    }

    /// Sub-report of records whose name starts with `prefix`.
    CostReport filter(const std::string& prefix) const {
        CostReport out;
        for (const auto& r : records_)
            if (r.name.rfind(prefix, 0) == 0) out.records_.push_back(r);
        return out;
    }

 private:
    std::vector<CostRecord> records_;
};

}  // namespace dcvlm
