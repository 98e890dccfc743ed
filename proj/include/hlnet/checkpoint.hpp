#pragma once

// "HLNP" parameter container: magic, u32 version, then one record per named
// matrix until end of file: u32 name length, name bytes, u32 rows, u32 cols,
// rows×cols little-endian f64 values (row-major). The model configuration
// travels as the record "meta.config".

#include <string>
#include <string_view>

#include "hlnet/model.hpp"

namespace hlnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const HLNetParams& params);
/// Throws FormatError (with byte offset) on any malformed input.
HLNetParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const HLNetParams& params);
HLNetParams load_checkpoint(const std::string& path);

}  // namespace hlnet
