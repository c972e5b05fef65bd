#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dcvlm/conv.hpp"
#include "dcvlm/encoder.hpp"
#include "dcvlm/error.hpp"
#include "dcvlm/harness/experiment.hpp"
#include "dcvlm/harness/report.hpp"
#include "dcvlm/harness/run_config.hpp"
#include "dcvlm/metrics.hpp"
#include "dcvlm/projector.hpp"
#include "dcvlm/synth.hpp"

using namespace dcvlm;
using namespace dcvlm::harness;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;
    std::string out;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "section.key = value settings file");
        cmd->add_option("--set", overrides, "override one setting, key=value (repeatable)");
        cmd->add_option("--out", out, "output directory (overrides run.output)");
    }

    RunConfig resolve() const {
        RunConfig cfg = file.empty() ? RunConfig() : RunConfig::load(file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            require(eq != std::string::npos, ErrorCode::argument, "--set expects key=value, got '" + kv + "'");
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(' '));
                s.erase(s.find_last_not_of(' ') + 1);
                return s;
            };
            cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (!out.empty()) cfg.set("run.output", out);
        return cfg;
    }
};

void print_retrieval(const char* label, const RetrievalReport& r) {
    std::printf("%-8s pairs %3zu  TR R@1 %6.2f R@5 %6.2f R@10 %6.2f  IR R@1 %6.2f R@5 %6.2f R@10 %6.2f\n", label,
                r.pairs, r.image_to_text[0], r.image_to_text[1], r.image_to_text[2], r.text_to_image[0],
                r.text_to_image[1], r.text_to_image[2]);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

// "token v1 v2 ..." per line.
EmbeddingProvider read_embeddings(const std::string& path) {
    EmbeddingProvider p;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok)) continue;
        std::vector<double> v;
        for (double x; ss >> x;) v.push_back(x);
        require(ss.eof(), ErrorCode::parse, path + ":" + std::to_string(lineno) + ": non-numeric embedding entry");
        p.add(tok, std::move(v));
    }
    return p;
}

Shape parse_shape(const std::string& text) {
    Shape s;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, 'x');) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == part.size() && v > 0, ErrorCode::argument, "shape '" + text + "' must look like 1x32x32x32x32");
        s.push_back(v);
    }
    require(s.size() == 5, ErrorCode::argument, "shape '" + text + "' must have five extents (B x C x H x W x D)");
    return s;
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
    out << text;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app {"Desk-scale 3D vision-language toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a seeded synthetic volume/caption dataset");
    std::uint64_t gen_seed = 0;
    std::size_t gen_n = 96;
    std::string gen_dims = "32x32x32", gen_out;
    double gen_noise = 0.05;
    bool gen_replace = false;
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("-n,--pairs", gen_n, "number of pairs");
    gen->add_option("--dims", gen_dims, "volume extents HxWxD");
    gen->add_option("--noise", gen_noise, "half-width of the uniform intensity noise");
    gen->add_flag("--with-replacement", gen_replace, "allow repeated latents");
    gen->add_option("--out", gen_out, "output directory")->required();

    // train / eval-retrieval / ablate
    ConfigArgs train_args, eval_args, ablate_args;
    auto* train = app.add_subcommand("train", "contrastive training on the synthetic split");
    train_args.attach(train);
    bool train_verbose = false;
    train->add_flag("-v,--verbose", train_verbose, "log every epoch to stderr");

    auto* eval = app.add_subcommand("eval-retrieval", "R@1/5/10 of a trained run on both splits");
    eval_args.attach(eval);

    auto* ablate = app.add_subcommand("ablate", "run the loss x encoder x projector grid");
    ablate_args.attach(ablate);
    std::size_t parallel = 1;
    ablate->add_option("--parallel", parallel, "cells run concurrently (capped by DCVLM_THREADS)");

    // score
    auto* score = app.add_subcommand("score", "BLEU, ROUGE, METEOR and BERTScore of candidate text");
    std::string cand, ref, cand_file, ref_file, emb_file, metric = "all";
    bool smoothing = false, harmonic = false;
    std::size_t rouge_order = 1;
    score->add_option("--candidate", cand, "candidate sentence");
    score->add_option("--reference", ref, "reference sentence");
    score->add_option("--candidates", cand_file, "file with one candidate per line");
    score->add_option("--references", ref_file, "file with one reference per line");
    score->add_option("--metric", metric, "all|bleu|rouge|meteor|bertscore")
        ->check(CLI::IsMember({"all", "bleu", "rouge", "meteor", "bertscore"}));
    score->add_option("--embeddings", emb_file, "token vectors for BERTScore, 'token v1 v2 ...' per line");
    score->add_flag("--smooth", smoothing, "smoothed BLEU");
    score->add_flag("--harmonic", harmonic, "METEOR as 2PR/(P+R)");
    score->add_option("--rouge-order", rouge_order, "largest n-gram order for ROUGE");

    // bench-conv
    auto* bench = app.add_subcommand("bench-conv", "time decomposed against full depthwise 3D convolution");
    std::string bench_shape = "1x32x32x32x32", bench_csv;
    std::vector<std::size_t> bench_k {13};
    std::size_t bench_reps = 5, bench_warmup = 1;
    std::uint64_t bench_seed = 7;
    bench->add_option("--shape", bench_shape, "input B x C x H x W x D");
    bench->add_option("-k,--kernel", bench_k, "kernel sizes (odd)");
    bench->add_option("--reps", bench_reps, "timed repetitions");
    bench->add_option("--warmup", bench_warmup, "untimed repetitions");
    bench->add_option("--seed", bench_seed, "input seed");
    bench->add_option("--csv", bench_csv, "also write a CSV file");

    // count-cost
    auto* count = app.add_subcommand("count-cost", "exact parameter and multiply-add counts");
    std::string module, variant, input = "128x256x256", count_csv;
    count->add_option("--module", module, "encoder|projector")->required()->check(CLI::IsMember({"encoder", "projector"}));
    count->add_option("--variant", variant,
                      "encoder: dcformer-small|desk|toy, projector: mlp2|mlp2h|mixer1h|mixer2h");
    count->add_option("--input", input, "volume extents HxWxD the counts are taken at");
    count->add_option("--csv", count_csv, "write per-record CSV here");

    // report-costs
    auto* report = app.add_subcommand("report-costs", "encoder and projector accounting against published sizes");
    std::string report_out;
    report->add_option("--out", report_out, "write the report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::fprintf(stderr, "error: argument: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    try {
        if (*gen) {
            SynthOptions o;
            o.dims = parse_dims(gen_dims);
            o.noise = gen_noise;
            o.unique = !gen_replace;
            const auto pairs = generate(gen_seed, gen_n, o);
            write_dataset(gen_out, pairs);
            std::printf("wrote %zu pairs to %s\n", pairs.size(), gen_out.c_str());
        } else if (*train) {
            const auto cfg = train_args.resolve();
            const auto r = run_train(cfg, cfg.output(), train_verbose ? &std::cerr : nullptr);
            std::printf("trained %zu steps in %.1fs, loss %.4f -> %.4f, artifacts in %s\n", r.steps, r.seconds,
                        r.epoch_losses.front(), r.epoch_losses.back(), cfg.output().c_str());
        } else if (*eval) {
            const auto cfg = eval_args.resolve();
            const auto e = run_eval(cfg, cfg.output());
            print_retrieval("train", e.train);
            if (e.heldout.pairs) print_retrieval("heldout", e.heldout);
        } else if (*ablate) {
            const auto cfg = ablate_args.resolve();
            require(parallel >= 1, ErrorCode::argument, "--parallel must be at least 1");
            const auto rows = run_ablation(cfg, cfg.output(), parallel, &std::cerr);
            std::cout << ablation_table(rows);
            std::printf("%zu rows written to %s\n", rows.size(), (cfg.output() / "ablation.csv").c_str());
        } else if (*score) {
            std::vector<std::string> cands, refs;
            if (!cand_file.empty() || !ref_file.empty()) {
                require(!cand_file.empty() && !ref_file.empty(), ErrorCode::argument,
                        "--candidates and --references go together");
                cands = read_lines(cand_file);
                refs = read_lines(ref_file);
                require(cands.size() == refs.size(), ErrorCode::argument, "candidate and reference files differ in length");
            } else {
                cands = {cand};
                refs = {ref};
            }
            const bool all = metric == "all";
            std::optional<EmbeddingProvider> provider;
            if (all ? !emb_file.empty() : metric == "bertscore") {
                require(!emb_file.empty(), ErrorCode::provider, "BERTScore needs --embeddings");
                provider = read_embeddings(emb_file);
            }
            double sb = 0, sr = 0, sm = 0, sbs = 0;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                const auto c = tokenize(cands[i]), r = tokenize(refs[i]);
                if (all || metric == "bleu") sb += bleu(c, r, {4, smoothing});
                if (all || metric == "rouge") sr += rouge(c, r, rouge_order);
                if (all || metric == "meteor") sm += meteor(c, r, harmonic);
                if (provider) sbs += bert_score(c, r, *provider);
            }
            const double n = static_cast<double>(cands.size());
            if (all || metric == "bleu") std::printf("bleu %.6f\n", sb / n);
            if (all || metric == "rouge") std::printf("rouge %.6f\n", sr / n);
            if (all || metric == "meteor") std::printf("meteor %.6f\n", sm / n);
            if (provider) std::printf("bertscore %.6f\n", sbs / n);
        } else if (*bench) {
            const auto shape = parse_shape(bench_shape);
            for (auto k : bench_k)
                require(k % 2 == 1, ErrorCode::argument, "kernel sizes must be odd, got " + std::to_string(k));
            std::string csv = "shape,k,reps,decomposed_median_s,full_median_s,speedup,decomposed_macs,full_macs,mac_ratio\n";
            std::printf("%4s %16s %16s %9s %18s %18s %10s\n", "k", "decomposed (s)", "full (s)", "speedup",
                        "decomposed MACs", "full MACs", "MAC ratio");
            for (auto k : bench_k) {
                const auto r = benchmark_pair(shape, k, bench_reps, bench_warmup, bench_seed);
                std::printf("%4zu %16.6f %16.6f %8.2fx %18llu %18llu %9.1fx\n", k, r.decomposed_median_s,
                            r.full_median_s, r.speedup(), static_cast<unsigned long long>(r.decomposed_multiply_adds),
                            static_cast<unsigned long long>(r.full_multiply_adds), r.multiply_add_ratio());
                char line[256];
                std::snprintf(line, sizeof line, "%s,%zu,%zu,%.6f,%.6f,%.3f,%llu,%llu,%.4f\n", bench_shape.c_str(), k,
                              bench_reps, r.decomposed_median_s, r.full_median_s, r.speedup(),
                              static_cast<unsigned long long>(r.decomposed_multiply_adds),
                              static_cast<unsigned long long>(r.full_multiply_adds), r.multiply_add_ratio());
                csv += line;
            }
            if (!bench_csv.empty()) write_or_print(bench_csv, csv);
        } else if (*count) {
            const auto dims = parse_dims(input);
            CostReport r;
            if (module == "encoder") {
                const std::string v = variant.empty() ? "dcformer-small" : variant;
                EncoderConfig cfg;
                if (v == "dcformer-small")
                    cfg = EncoderConfig::dcformer_small();
                else if (v == "desk")
                    cfg = EncoderConfig::desk();
                else if (v == "toy")
                    cfg = EncoderConfig::toy();
                else
                    fail(ErrorCode::argument, "unknown encoder variant '" + v + "' (dcformer-small|desk|toy)");
                r = count_encoder_cost(cfg, dims);
            } else {
                const auto kind = parse_projector_kind(variant.empty() ? "mixer2h" : variant);
                r = count_projector_cost(
                    ProjectorConfig::for_encoder(kind, EncoderConfig::dcformer_small(), dims, 3584));
            }
            std::cout << itemize_by_layer(r, "");
            std::printf("total params %llu, multiply-adds %llu\n", static_cast<unsigned long long>(r.total_parameters()),
                        static_cast<unsigned long long>(r.total_multiply_adds()));
            if (!count_csv.empty()) {
                std::string csv = "name,params,multiply_adds\n";
                for (const auto& rec : r.records())
                    csv += rec.name + "," + std::to_string(rec.parameters) + "," + std::to_string(rec.multiply_adds) +
                           "\n";
                write_or_print(count_csv, csv);
            }
        } else if (*report) {
            write_or_print(report_out, report_costs());
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", error_code_name(e.code()), one_line(e.what()).c_str());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
        return 3;
    }
    return 0;
}
