#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dcvlm/harness/run_config.hpp"

namespace dcvlm::harness {

/// Trains on the seeded split of `cfg` and writes model.ckpt,
/// loss_curve.csv and config.resolved into `dir`.
TrainResult run_train(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream* log = nullptr);

struct EvalOutcome {
    RetrievalReport train;
    RetrievalReport heldout;
};

/// Rebuilds the model described by `cfg`, loads `dir`/model.ckpt, scores both
/// splits and writes `dir`/retrieval.csv.
EvalOutcome run_eval(const RunConfig& cfg, const std::filesystem::path& dir);

/// Fixed-format CSV of both splits; identical inputs give identical bytes.
std::string retrieval_csv(const EvalOutcome& e);

struct AblationCell {
    std::uint64_t seed = 0;
    std::string loss;
    std::string encoder;
    std::string projector;

    /// Directory-safe name, e.g. s0_siglip_dcformer_mixer2h.
    std::string id() const;
};

struct AblationRow {
    AblationCell cell;
    std::string status = "ok";  // "ok" or "diverged"
    std::string error;
    double final_loss = 0.0;
    EvalOutcome eval;
    std::string build;
    double seconds = 0.0;  // train plus eval wall time; not written to the CSV
};

/// seeds x losses x encoders x projectors, in that nesting order.
std::vector<AblationCell> ablation_cells(const RunConfig& cfg);
/// `base` with the cell's axes filled in and run.output pointed at the cell's
/// directory under `root`.
RunConfig cell_config(const RunConfig& base, const AblationCell& cell, const std::filesystem::path& root);

/// Runs every cell (train then eval, each into root/cells/<id>), `parallel`
/// at a time. A diverging cell is recorded and the grid continues. Writes
/// ablation.csv, ablation.txt and config.resolved into `root`.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::filesystem::path& root,
                                      std::size_t parallel = 1, std::ostream* log = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Held-out recalls per (encoder, loss, projector) averaged over seeds, laid
/// out like the retrieval ablation table, plus the per-seed SigLIP vs CLIP
/// comparison.
std::string ablation_table(const std::vector<AblationRow>& rows);

/// Worker cap: DCVLM_THREADS when set to a positive integer, otherwise the
/// hardware thread count.
std::size_t thread_cap();

}  // namespace dcvlm::harness
