#pragma once

#include <string>

#include "dcvlm/cost.hpp"

namespace dcvlm::harness {

/// Published module sizes the measured reports are compared against.
struct PublishedCost {
    const char* label;
    const char* params_text;  // as printed, e.g. "18.2M"
    const char* macs_text;
    double params;
    double macs;
};

/// Encoder, projector and convolution cost accounting in one plain-text
/// document. Depends only on the build, so repeated calls give the same bytes.
std::string report_costs();

/// Records grouped by layer (the record name without its last component), in
/// first-seen order, as aligned text.
std::string itemize_by_layer(const CostReport& report, const std::string& indent = "  ");

/// Signed relative difference in percent, "+15.7%".
std::string percent_delta(double measured, double published);

}  // namespace dcvlm::harness
