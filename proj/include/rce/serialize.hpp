#pragma once

#include "rce/nn.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace rce {

/// Contents of a parameter file.
///
/// Binary layout (little-endian):
///   "RCEPARAM"  u32 version  u64 alphabet_hash
///   u32 meta_len  meta bytes (JSON text)
///   u32 count, then per tensor: u32 name_len  name  u32 rank  u64 dims[rank]
///   payload: every tensor's values as f64, in header order
struct ParameterFile {
    std::uint64_t alphabet_hash = 0;
    std::string meta;
    ParamList tensors;
};

inline constexpr std::uint32_t kParameterFileVersion = 1;

void write_parameters(std::ostream& out, const ParameterFile& file);
ParameterFile read_parameters(std::istream& in);
void save_parameters(const std::string& path, const ParameterFile& file);
ParameterFile load_parameters(const std::string& path);

/// Copies values from `source` into the same-named tensors of `target`.
/// Every target name must be present in `source` with an identical shape.
void assign_parameters(const ParamList& target, const ParamList& source);

} // namespace rce
