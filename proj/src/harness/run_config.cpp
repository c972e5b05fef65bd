#include "dcvlm/harness/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dcvlm/error.hpp"

#ifndef DCVLM_BUILD_ID
#define DCVLM_BUILD_ID "unknown"
#endif

namespace dcvlm::harness {

namespace {

enum class Kind { u64, real, boolean, text, choice, choices, dims, counts };

struct KeySpec {
    const char* key;
    const char* fallback;
    Kind kind;
    std::vector<std::string> allowed = {};
};

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> specs {
        {"run.seed", "0", Kind::u64},
        {"run.output", "runs/default", Kind::text},
        {"data.train_pairs", "64", Kind::u64},
        {"data.heldout_pairs", "32", Kind::u64},
        {"data.dims", "32x32x32", Kind::dims},
        {"data.noise", "0.05", Kind::real},
        {"model.encoder", "dcformer", Kind::choice, {"dcformer", "naive-full-conv"}},
        {"model.channels", "8,16,32,64", Kind::counts},
        {"model.depths", "1,1,2,1", Kind::counts},
        {"model.kernels", "13,11,9,7", Kind::counts},
        {"model.stem_stride", "1", Kind::u64},
        {"model.mlp_ratio", "4", Kind::u64},
        {"model.projector", "none", Kind::choice, {"none", "mlp2", "mlp2h", "mixer1h", "mixer2h"}},
        {"model.projector_dim", "64", Kind::u64},
        {"model.shared_dim", "64", Kind::u64},
        {"model.text_dim", "64", Kind::u64},
        {"model.text_depth", "2", Kind::u64},
        {"model.seq_len", "8", Kind::u64},
        {"model.normalize", "true", Kind::boolean},
        {"loss.kind", "siglip", Kind::choice, {"siglip", "clip"}},
        {"loss.common_form", "false", Kind::boolean},
        {"loss.init_log_t", "2.302585092994046", Kind::real},
        {"loss.init_bias", "10", Kind::real},
        {"optim.lr", "0.002", Kind::real},
        {"optim.weight_decay", "0.1", Kind::real},
        {"optim.warmup_ratio", "0.03", Kind::real},
        {"optim.schedule", "cosine", Kind::choice, {"cosine"}},
        {"train.epochs", "120", Kind::u64},
        {"train.batch", "16", Kind::u64},
        {"ablate.seeds", "0,1,2", Kind::counts},
        {"ablate.losses", "siglip,clip", Kind::choices, {"siglip", "clip"}},
        {"ablate.encoders", "dcformer,naive-full-conv", Kind::choices, {"dcformer", "naive-full-conv"}},
        {"ablate.projectors", "mlp2,mlp2h,mixer1h,mixer2h", Kind::choices,
         {"none", "mlp2", "mlp2h", "mixer1h", "mixer2h"}},
    };
    return specs;
}

const KeySpec* find_spec(const std::string& key) {
    for (const auto& s : schema())
        if (key == s.key) return &s;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

bool parse_u64(const std::string& s, std::uint64_t& v) {
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    return ec == std::errc {} && p == end && !s.empty();
}

bool parse_real(const std::string& s, double& v) {
    try {
        std::size_t used = 0;
        v = std::stod(s, &used);
        return used == s.size() && std::isfinite(v);
    } catch (const std::exception&) {
        return false;
    }
}

void check_value(const KeySpec& spec, const std::string& value) {
    const std::string where = std::string("'") + spec.key + "' = '" + value + "'";
    std::uint64_t u = 0;
    double d = 0;
    switch (spec.kind) {
        case Kind::u64:
            require(parse_u64(value, u), ErrorCode::configuration, where + " is not a non-negative integer");
            break;
        case Kind::real:
            require(parse_real(value, d), ErrorCode::configuration, where + " is not a finite number");
            break;
        case Kind::boolean:
            require(value == "true" || value == "false", ErrorCode::configuration, where + " is not true|false");
            break;
        case Kind::text:
            require(!value.empty(), ErrorCode::configuration, where + " is empty");
            break;
        case Kind::choice:
            require(std::find(spec.allowed.begin(), spec.allowed.end(), value) != spec.allowed.end(),
                    ErrorCode::configuration, where + " is not one of the allowed values");
            break;
        case Kind::choices: {
            const auto items = split_list(value);
            require(!items.empty(), ErrorCode::configuration, where + " is empty");
            for (const auto& item : items)
                require(std::find(spec.allowed.begin(), spec.allowed.end(), item) != spec.allowed.end(),
                        ErrorCode::configuration, where + " lists unknown value '" + item + "'");
            break;
        }
        case Kind::dims:
            parse_dims(value);
            break;
        case Kind::counts: {
            const auto items = split_list(value);
            require(!items.empty(), ErrorCode::configuration, where + " is empty");
            for (const auto& item : items)
                require(parse_u64(item, u), ErrorCode::configuration, where + " has a non-integer entry");
            break;
        }
    }
}

template <std::size_t N>
std::array<std::size_t, N> fixed_counts(const RunConfig& cfg, const std::string& key) {
    const auto items = cfg.get_list(key);
    require(items.size() == N, ErrorCode::configuration,
            "'" + key + "' needs exactly " + std::to_string(N) + " entries");
    std::array<std::size_t, N> out {};
    for (std::size_t i = 0; i < N; ++i) out[i] = std::stoull(items[i]);
    return out;
}

}  // namespace

std::array<std::size_t, 3> parse_dims(const std::string& text) {
    std::array<std::size_t, 3> out {};
    std::stringstream ss(text);
    std::string part;
    std::size_t n = 0;
    while (std::getline(ss, part, 'x')) {
        std::uint64_t v = 0;
        require(n < 3 && parse_u64(part, v) && v > 0, ErrorCode::configuration,
                "dims '" + text + "' must look like HxWxD with positive extents");
        out[n++] = v;
    }
    require(n == 3, ErrorCode::configuration, "dims '" + text + "' must look like HxWxD with positive extents");
    return out;
}

RunConfig::RunConfig() {
    for (const auto& s : schema()) values_[s.key] = s.fallback;
}

RunConfig RunConfig::parse(std::istream& in, const std::string& origin) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::parse,
                origin + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const Error& e) {
            throw Error(e.code(), origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path.string());
    return parse(in, path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto* spec = find_spec(key);
    require(spec != nullptr, ErrorCode::configuration, "unknown config key '" + key + "'");
    check_value(*spec, value);
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::configuration, "unknown config key '" + key + "'");
    return it->second;
}

bool RunConfig::has_key(const std::string& key) const { return find_spec(key) != nullptr; }

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& s : schema()) out.push_back(s.key);
    return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const { return std::stoull(get(key)); }
double RunConfig::get_double(const std::string& key) const { return std::stod(get(key)); }
bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }
std::vector<std::string> RunConfig::get_list(const std::string& key) const { return split_list(get(key)); }

std::string RunConfig::to_string() const {
    std::string out;
    for (const auto& s : schema()) out += std::string(s.key) + " = " + values_.at(s.key) + "\n";
    return out;
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.resolved");
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + (dir / "config.resolved").string());
    out << to_string();
}

std::array<std::size_t, 3> RunConfig::dims() const { return parse_dims(get("data.dims")); }

SynthOptions RunConfig::synth_options() const {
    SynthOptions o;
    o.dims = dims();
    o.noise = get_double("data.noise");
    o.unique = true;
    return o;
}

AlignmentConfig RunConfig::alignment() const {
    AlignmentConfig a;
    a.encoder.channels = fixed_counts<4>(*this, "model.channels");
    a.encoder.depths = fixed_counts<4>(*this, "model.depths");
    a.encoder.kernels = fixed_counts<4>(*this, "model.kernels");
    a.encoder.stem_stride = get_u64("model.stem_stride");
    a.encoder.mlp_ratio = get_u64("model.mlp_ratio");
    a.encoder.mixer = get("model.encoder") == "dcformer" ? TokenMixer::decomposed : TokenMixer::full_depthwise;
    if (get("model.projector") != "none") a.projector = parse_projector_kind(get("model.projector"));
    a.projector_dim = get_u64("model.projector_dim");
    a.volume_dims = dims();
    a.shared_dim = get_u64("model.shared_dim");
    a.text_dim = get_u64("model.text_dim");
    a.text_depth = get_u64("model.text_depth");
    a.seq_len = get_u64("model.seq_len");
    a.normalize = get_bool("model.normalize");
    a.loss = parse_loss(get("loss.kind"));
    a.siglip.common_form = get_bool("loss.common_form");
    a.init_log_t = get_double("loss.init_log_t");
    a.init_bias = get_double("loss.init_bias");
    a.validate();
    return a;
}

TrainConfig RunConfig::train() const {
    TrainConfig t;
    t.epochs = get_u64("train.epochs");
    t.batch = get_u64("train.batch");
    t.lr = get_double("optim.lr");
    t.weight_decay = get_double("optim.weight_decay");
    t.warmup_ratio = get_double("optim.warmup_ratio");
    t.seed = seed();
    require(t.batch >= 1, ErrorCode::configuration, "train.batch must be at least 1");
    require(t.lr >= 0.0 && t.weight_decay >= 0.0, ErrorCode::configuration, "optimizer settings must be >= 0");
    require(t.warmup_ratio >= 0.0 && t.warmup_ratio <= 1.0, ErrorCode::configuration,
            "optim.warmup_ratio must be in [0, 1]");
    return t;
}

SplitData make_split(const RunConfig& cfg) {
    const std::size_t n_train = cfg.get_u64("data.train_pairs");
    const std::size_t n_held = cfg.get_u64("data.heldout_pairs");
    require(n_train >= 1, ErrorCode::configuration, "data.train_pairs must be at least 1");
    auto pool = generate(cfg.seed(), n_train + n_held, cfg.synth_options());
    SplitData s;
    s.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.heldout.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
    return s;
}

const char* build_id() { return DCVLM_BUILD_ID; }

}  // namespace dcvlm::harness
