#include "dcvlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dcvlm {

namespace {

constexpr const char* kMagic = "DCVLM-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void swap_if_big_endian(std::vector<std::byte>& bytes, std::size_t width) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i + width <= bytes.size(); i += width)
            for (std::size_t j = 0; j < width / 2; ++j) std::swap(bytes[i + j], bytes[i + width - 1 - j]);
    } else {
        (void)bytes;
        (void)width;
    }
}

std::size_t dtype_width(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "f64") return 8;
    fail(ErrorCode::parse, "unknown checkpoint dtype '" + dtype + "'");
}

template <typename T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

std::string dims_str(const Shape& shape) {
    if (shape.empty()) return "-";
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(shape[i]);
    }
    return out;
}

Shape parse_dims(const std::string& text) {
    Shape shape;
    if (text == "-") return shape;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) shape.push_back(static_cast<std::size_t>(std::stoull(part)));
    return shape;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    std::ostringstream header;
    header << kMagic << '\n' << "tensors " << entries.size() << '\n';
    std::size_t offset = 0;
    for (const auto& e : entries) {
        require(!e.name.empty() && e.name.find_first_of(" \t\n") == std::string::npos, ErrorCode::argument,
                "checkpoint tensor names must be non-empty without whitespace: '" + e.name + "'");
        header << e.name << ' ' << e.dtype << ' ' << dims_str(e.shape) << ' ' << offset << ' ' << e.bytes.size()
               << '\n';
        offset += e.bytes.size();
    }
    header << "end\n";
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::io, "cannot open checkpoint for writing: " + path.string());
    const auto text = header.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries) {
        auto bytes = e.bytes;
        swap_if_big_endian(bytes, dtype_width(e.dtype));
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    require(out.good(), ErrorCode::io, "failed writing checkpoint: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::io, "cannot open checkpoint: " + path.string());
    std::string line;
    std::getline(in, line);
    require(line == kMagic, ErrorCode::parse, "not a checkpoint file (bad magic): " + path.string());
    std::getline(in, line);
    std::istringstream count_line(line);
    std::string word;
    std::size_t count = 0;
    count_line >> word >> count;
    require(word == "tensors" && !count_line.fail(), ErrorCode::parse, "malformed checkpoint header count line");
    struct Pending {
        CheckpointEntry entry;
        std::size_t offset;
        std::size_t nbytes;
    };
    std::vector<Pending> pending;
    for (std::size_t i = 0; i < count; ++i) {
        std::getline(in, line);
        std::istringstream fields(line);
        Pending p;
        std::string dims;
        fields >> p.entry.name >> p.entry.dtype >> dims >> p.offset >> p.nbytes;
        require(!fields.fail(), ErrorCode::parse, "malformed checkpoint header line: '" + line + "'");
        p.entry.shape = parse_dims(dims);
        require(shape_numel(p.entry.shape) * dtype_width(p.entry.dtype) == p.nbytes, ErrorCode::parse,
                "checkpoint entry '" + p.entry.name + "' size does not match its shape");
        pending.push_back(std::move(p));
    }
    std::getline(in, line);
    require(line == "end", ErrorCode::parse, "checkpoint header missing 'end'");
    const auto data_start = in.tellg();
    std::vector<CheckpointEntry> entries;
    for (auto& p : pending) {
        in.seekg(data_start + static_cast<std::streamoff>(p.offset));
        p.entry.bytes.resize(p.nbytes);
        in.read(reinterpret_cast<char*>(p.entry.bytes.data()), static_cast<std::streamsize>(p.nbytes));
        require(in.good(), ErrorCode::io, "truncated checkpoint data for '" + p.entry.name + "'");
        swap_if_big_endian(p.entry.bytes, dtype_width(p.entry.dtype));
        entries.push_back(std::move(p.entry));
    }
    return entries;
}

template <typename T>
CheckpointEntry to_entry(const std::string& name, const Tensor<T>& tensor) {
    CheckpointEntry e;
    e.name = name;
    e.dtype = dtype_name<T>();
    e.shape = tensor.shape();
    e.bytes.resize(tensor.numel() * sizeof(T));
    std::memcpy(e.bytes.data(), tensor.data().data(), e.bytes.size());
    return e;
}

template <typename T>
Tensor<T> from_entry(const CheckpointEntry& entry) {
    const std::size_t n = shape_numel(entry.shape);
    std::vector<T> values(n);
    if (entry.dtype == "f32") {
        std::vector<float> raw(n);
        std::memcpy(raw.data(), entry.bytes.data(), n * sizeof(float));
        std::copy(raw.begin(), raw.end(), values.begin());
    } else if (entry.dtype == "f64") {
        std::vector<double> raw(n);
        std::memcpy(raw.data(), entry.bytes.data(), n * sizeof(double));
        for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
    } else {
        fail(ErrorCode::parse, "unknown checkpoint dtype '" + entry.dtype + "'");
    }
    return Tensor<T>::from_vector(entry.shape, std::move(values));
}

template <typename T>
void save_params(const std::filesystem::path& path, const ParamList<T>& params) {
    std::vector<CheckpointEntry> entries;
    entries.reserve(params.size());
    for (const auto& p : params) entries.push_back(to_entry(p.name, p.tensor));
    write_checkpoint(path, entries);
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const std::filesystem::path& path) {
    std::map<std::string, Tensor<T>> out;
    for (const auto& e : read_checkpoint(path)) out.emplace(e.name, from_entry<T>(e));
    return out;
}

template <typename T>
void load_params(const std::filesystem::path& path, const ParamList<T>& params) {
    auto stored = load_tensors<T>(path);
    for (const auto& p : params) {
        auto it = stored.find(p.name);
        require(it != stored.end(), ErrorCode::io, "checkpoint is missing parameter '" + p.name + "'");
        require(it->second.shape() == p.tensor.shape(), ErrorCode::shape,
                "checkpoint shape " + shape_str(it->second.shape()) + " for '" + p.name + "' expected " +
                    shape_str(p.tensor.shape()));
        auto target = p.tensor;
        auto dst = target.mutable_data();
        std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
    }
}

#define DCVLM_CKPT(T)                                                                      \
    template CheckpointEntry to_entry<T>(const std::string&, const Tensor<T>&);            \
    template Tensor<T> from_entry<T>(const CheckpointEntry&);                              \
    template void save_params<T>(const std::filesystem::path&, const ParamList<T>&);       \
    template std::map<std::string, Tensor<T>> load_tensors<T>(const std::filesystem::path&); \
    template void load_params<T>(const std::filesystem::path&, const ParamList<T>&);

DCVLM_CKPT(float)
DCVLM_CKPT(double)

}  // namespace dcvlm
