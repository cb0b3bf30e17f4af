#include "rce/serialize.hpp"

#include "rce/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace rce {

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'C', 'E', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint64_t kMaxRank = 8;

template <class T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError("truncated parameter file");
    }
    return value;
}

std::string get_string(std::istream& in, std::uint32_t len) {
    std::string s(len, '\0');
    if (len > 0 && !in.read(s.data(), len)) {
        throw FormatError("truncated parameter file");
    }
    return s;
}

} // namespace

void write_parameters(std::ostream& out, const ParameterFile& file) {
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kParameterFileVersion);
    put<std::uint64_t>(out, file.alphabet_hash);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.meta.size()));
    out.write(file.meta.data(), static_cast<std::streamsize>(file.meta.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, t] : file.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            put<std::uint64_t>(out, d);
        }
    }
    for (const auto& [name, t] : file.tensors) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) {
        throw FormatError("failed writing parameter file");
    }
}

ParameterFile read_parameters(std::istream& in) {
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a parameter file");
    }
    const auto version = get<std::uint32_t>(in);
    if (version != kParameterFileVersion) {
        throw FormatError("unsupported parameter file version " + std::to_string(version));
    }
    ParameterFile file;
    file.alphabet_hash = get<std::uint64_t>(in);
    file.meta = get_string(in, get<std::uint32_t>(in));
    const auto count = get<std::uint32_t>(in);
    std::vector<std::pair<std::string, Shape>> headers;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(in, get<std::uint32_t>(in));
        const auto rank = get<std::uint32_t>(in);
        if (rank > kMaxRank) {
            throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = get<std::uint64_t>(in);
        }
        headers.emplace_back(std::move(name), std::move(shape));
    }
    for (auto& [name, shape] : headers) {
        std::vector<double> values(numel(shape));
        if (!values.empty() &&
            !in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
            throw FormatError("truncated payload for tensor '" + name + "'");
        }
        file.tensors.push_back({name, Tensor::from(shape, std::move(values))});
    }
    return file;
}

void save_parameters(const std::string& path, const ParameterFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open '" + path + "' for writing");
    }
    write_parameters(out, file);
}

ParameterFile load_parameters(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'");
    }
    return read_parameters(in);
}

void assign_parameters(const ParamList& target, const ParamList& source) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : source) {
        by_name[name] = &t;
    }
    for (const auto& [name, t] : target) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("parameter '" + name + "' missing from file");
        }
        if (it->second->shape() != t.shape()) {
            throw ShapeMismatch("parameter '" + name + "' has shape " + to_string(it->second->shape()) +
                                ", expected " + to_string(t.shape()));
        }
        Tensor handle = t; // shares storage
        auto dst = handle.data();
        auto src = it->second->data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

} // namespace rce
