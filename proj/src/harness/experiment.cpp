#include "dcvlm/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "dcvlm/checkpoint.hpp"
#include "dcvlm/error.hpp"

namespace dcvlm::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << text;
}

std::string loss_curve_csv(const TrainResult& r) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < r.step_losses.size(); ++i)
        out += std::to_string(i) + "," + fmt("%.9g", r.step_losses[i]) + "\n";
    return out;
}

ContrastiveModel<float> build_model(const RunConfig& cfg) {
    Rng rng(cfg.seed());
    return ContrastiveModel<float>(cfg.alignment(), rng);
}

// Mean of the two retrieval directions at R@1.
double headline(const RetrievalReport& r) { return 0.5 * (r.image_to_text[0] + r.text_to_image[0]); }

}  // namespace

TrainResult run_train(const RunConfig& cfg, const fs::path& dir, std::ostream* log) {
    cfg.write_resolved(dir);
    const auto split = make_split(cfg);
    auto model = build_model(cfg);
    auto result = train_contrastive(model, split.train, cfg.train(), log);
    save_params(dir / "model.ckpt", model.parameters());
    write_text(dir / "loss_curve.csv", loss_curve_csv(result));
    return result;
}

EvalOutcome run_eval(const RunConfig& cfg, const fs::path& dir) {
    auto model = build_model(cfg);
    load_params(dir / "model.ckpt", model.parameters());
    const auto split = make_split(cfg);
    EvalOutcome e;
    e.train = evaluate_retrieval(model, split.train);
    if (!split.heldout.empty()) e.heldout = evaluate_retrieval(model, split.heldout);
    write_text(dir / "retrieval.csv", retrieval_csv(e));
    return e;
}

std::string retrieval_csv(const EvalOutcome& e) {
    std::string out = "split,direction,pairs,r1,r5,r10\n";
    auto rows = [&](const char* split, const RetrievalReport& r) {
        for (int dir = 0; dir < 2; ++dir) {
            const auto& v = dir == 0 ? r.image_to_text : r.text_to_image;
            out += std::string(split) + (dir == 0 ? ",image_to_text," : ",text_to_image,") + std::to_string(r.pairs);
            for (double x : v) out += "," + fmt("%.4f", x);
            out += "\n";
        }
    };
    rows("train", e.train);
    rows("heldout", e.heldout);
    return out;
}

std::string AblationCell::id() const {
    return "s" + std::to_string(seed) + "_" + loss + "_" + encoder + "_" + projector;
}

std::vector<AblationCell> ablation_cells(const RunConfig& cfg) {
    std::vector<AblationCell> cells;
    for (const auto& s : cfg.get_list("ablate.seeds"))
        for (const auto& l : cfg.get_list("ablate.losses"))
            for (const auto& e : cfg.get_list("ablate.encoders"))
                for (const auto& p : cfg.get_list("ablate.projectors"))
                    cells.push_back({std::stoull(s), l, e, p});
    return cells;
}

RunConfig cell_config(const RunConfig& base, const AblationCell& cell, const fs::path& root) {
    RunConfig c = base;
    c.set("run.seed", std::to_string(cell.seed));
    c.set("loss.kind", cell.loss);
    c.set("model.encoder", cell.encoder);
    c.set("model.projector", cell.projector);
    c.set("run.output", (root / "cells" / cell.id()).string());
    return c;
}

std::size_t thread_cap() {
    if (const char* env = std::getenv("DCVLM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const fs::path& root, std::size_t parallel,
                                      std::ostream* log) {
    const auto cells = ablation_cells(cfg);
    std::vector<RunConfig> configs;
    // Surface configuration errors before any cell starts training.
    for (const auto& cell : cells) {
        configs.push_back(cell_config(cfg, cell, root));
        configs.back().alignment();
        configs.back().train();
        make_split(configs.back());
    }
    cfg.write_resolved(root);

    std::vector<AblationRow> rows(cells.size());
    std::atomic<std::size_t> next {0};
    std::mutex log_mutex;
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            auto& row = rows[i];
            row.cell = cells[i];
            row.build = build_id();
            const fs::path dir = configs[i].output();
            const auto start = std::chrono::steady_clock::now();
            try {
                const auto r = run_train(configs[i], dir);
                row.final_loss = r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back();
                row.eval = run_eval(configs[i], dir);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::training) {
                    std::lock_guard lock(log_mutex);
                    if (!failure) failure = std::current_exception();
                    next = cells.size();
                    return;
                }
                row.status = "diverged";
                row.error = e.what();
            } catch (...) {
                std::lock_guard lock(log_mutex);
                if (!failure) failure = std::current_exception();
                next = cells.size();
                return;
            }
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (log) {
                std::lock_guard lock(log_mutex);
                *log << "cell " << row.cell.id() << ": " << row.status;
                if (row.status == "ok")
                    *log << " held-out R@1 " << fmt("%.1f", headline(row.eval.heldout)) << " train R@1 "
                         << fmt("%.1f", headline(row.eval.train));
                *log << "\n" << std::flush;
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min({parallel, thread_cap(), cells.size()}));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    write_text(root / "ablation.csv", ablation_csv(rows));
    write_text(root / "ablation.txt", ablation_table(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out =
        "seed,loss,encoder,projector,status,final_loss,train_tr_r1,train_ir_r1,heldout_tr_r1,heldout_tr_r5,"
        "heldout_tr_r10,heldout_ir_r1,heldout_ir_r5,heldout_ir_r10,build_id\n";
    for (const auto& r : rows) {
        out += std::to_string(r.cell.seed) + "," + r.cell.loss + "," + r.cell.encoder + "," + r.cell.projector + "," +
               r.status + "," + fmt("%.6f", r.final_loss);
        // TR queries with an image and retrieves text; IR the reverse.
        out += "," + fmt("%.4f", r.eval.train.image_to_text[0]) + "," + fmt("%.4f", r.eval.train.text_to_image[0]);
        for (double v : r.eval.heldout.image_to_text) out += "," + fmt("%.4f", v);
        for (double v : r.eval.heldout.text_to_image) out += "," + fmt("%.4f", v);
        out += "," + r.build + "\n";
    }
    return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    struct Acc {
        std::size_t seeds = 0;
        std::size_t diverged = 0;
        double ir[3] {}, tr[3] {};
    };
    using Key = std::tuple<std::string, std::string, std::string>;
    std::vector<Key> order;
    std::map<Key, Acc> groups;
    for (const auto& r : rows) {
        Key k {r.cell.encoder, r.cell.loss, r.cell.projector};
        if (!groups.count(k)) order.push_back(k);
        auto& g = groups[k];
        if (r.status != "ok") {
            ++g.diverged;
            continue;
        }
        ++g.seeds;
        for (int i = 0; i < 3; ++i) {
            g.ir[i] += r.eval.heldout.text_to_image[i];
            g.tr[i] += r.eval.heldout.image_to_text[i];
        }
    }

    std::ostringstream out;
    const std::size_t pairs = rows.empty() ? 0 : rows.front().eval.heldout.pairs;
    out << "Held-out retrieval (" << pairs << " pairs), mean over seeds\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-7s %-9s %5s %8s %8s %8s %8s %8s %8s %9s\n", "encoder", "loss",
                  "projector", "seeds", "IR R@1", "IR R@5", "IR R@10", "TR R@1", "TR R@5", "TR R@10", "diverged");
    out << line;
    for (const auto& k : order) {
        const auto& g = groups[k];
        const double n = g.seeds ? static_cast<double>(g.seeds) : 1.0;
        std::snprintf(line, sizeof line, "%-16s %-7s %-9s %5zu %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %9zu\n",
                      std::get<0>(k).c_str(), std::get<1>(k).c_str(), std::get<2>(k).c_str(), g.seeds, g.ir[0] / n,
                      g.ir[1] / n, g.ir[2] / n, g.tr[0] / n, g.tr[1] / n, g.tr[2] / n, g.diverged);
        out << line;
    }

    // SigLIP against CLIP with everything else matched.
    std::map<std::tuple<std::string, std::string, std::uint64_t>, std::map<std::string, const AblationRow*>> matched;
    for (const auto& r : rows)
        if (r.status == "ok") matched[{r.cell.encoder, r.cell.projector, r.cell.seed}][r.cell.loss] = &r;
    std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> wins;
    std::vector<std::pair<std::string, std::string>> win_order;
    bool header = false;
    for (const auto& [key, by_loss] : matched) {
        if (!by_loss.count("siglip") || !by_loss.count("clip")) continue;
        if (!header) {
            out << "\nSigLIP vs CLIP, held-out R@1 (mean of IR and TR)\n";
            std::snprintf(line, sizeof line, "%-16s %-9s %5s %8s %8s %s\n", "encoder", "projector", "seed", "siglip",
                          "clip", "siglip>=clip");
            out << line;
            header = true;
        }
        const double s = headline(by_loss.at("siglip")->eval.heldout);
        const double c = headline(by_loss.at("clip")->eval.heldout);
        std::snprintf(line, sizeof line, "%-16s %-9s %5llu %8.2f %8.2f %s\n", std::get<0>(key).c_str(),
                      std::get<1>(key).c_str(), static_cast<unsigned long long>(std::get<2>(key)), s, c,
                      s >= c ? "yes" : "no");
        out << line;
        const std::pair<std::string, std::string> wk {std::get<0>(key), std::get<1>(key)};
        if (!wins.count(wk)) win_order.push_back(wk);
        auto& w = wins[wk];
        w.first += s >= c ? 1 : 0;
        ++w.second;
    }
    for (const auto& wk : win_order) {
        const auto& w = wins[wk];
        out << wk.first << "/" << wk.second << ": siglip >= clip on " << w.first << " of " << w.second << " seeds"
            << (2 * w.first > w.second ? " (majority)" : "") << "\n";
    }
    return out.str();
}

}  // namespace dcvlm::harness
