#include <cmath>
#include <filesystem>
#include <fstream>

#include "byte_io.hpp"
#include "hlnet/data.hpp"
#include "hlnet/error.hpp"

namespace hlnet {

namespace {

constexpr std::string_view kMagic = "XDVF";
constexpr std::uint32_t kMaxExtent = 1u << 24;

FeatureHeader parse_header(detail::ByteReader& r) {
  if (r.bytes(4, "magic") != kMagic) throw FormatError("not an XDVF feature file (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureVersion) {
    throw FormatError("unsupported XDVF version " + std::to_string(version), 4);
  }
  FeatureHeader h{};
  const std::uint8_t tag = r.u8("modality");
  if (tag > 1) throw FormatError("unknown modality tag " + std::to_string(tag), 8);
  h.modality = static_cast<FeatureModality>(tag);
  h.t_prime = r.u32("t_prime");
  if (h.t_prime == 0 || h.t_prime > kMaxExtent) throw FormatError("t_prime out of range", 9);
  h.dim = r.u32("dim");
  if (h.dim == 0 || h.dim > kMaxExtent) throw FormatError("dim out of range", 13);
  h.fps = r.u32("fps");
  if (h.fps == 0) throw FormatError("fps must be positive", 17);
  h.snippet_len = r.u32("snippet_len");
  if (h.snippet_len == 0) throw FormatError("snippet_len must be positive", 21);
  return h;
}

std::uint64_t payload_bytes(const FeatureHeader& h) {
  return static_cast<std::uint64_t>(h.t_prime) * h.dim * 4;
}

}  // namespace

std::string encode_features(const FeatureSequence& fs) {
  if (fs.t_prime() == 0 || fs.dim() == 0) {
    throw ArgumentError("encode_features: empty feature sequence");
  }
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kFeatureVersion);
  w.u8(static_cast<std::uint8_t>(fs.modality));
  w.u32(static_cast<std::uint32_t>(fs.t_prime()));
  w.u32(static_cast<std::uint32_t>(fs.dim()));
  w.u32(fs.fps);
  w.u32(fs.snippet_len);
  for (double v : fs.values.data()) w.f32(static_cast<float>(v));
  return w.take();
}

FeatureHeader decode_feature_header(std::string_view bytes) {
  detail::ByteReader r(bytes);
  return parse_header(r);
}

FeatureSequence decode_features(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const FeatureHeader h = parse_header(r);
  const std::uint64_t need = payload_bytes(h);
  if (r.remaining() < need) {
    throw FormatError("truncated payload: header declares " + std::to_string(need) +
                          " bytes, " + std::to_string(r.remaining()) + " present",
                      r.offset() + r.remaining());
  }
  if (r.remaining() > need) {
    throw FormatError("trailing bytes after payload", r.offset() + need);
  }
  FeatureSequence fs;
  fs.modality = h.modality;
  fs.fps = h.fps;
  fs.snippet_len = h.snippet_len;
  fs.values = Matrix(h.t_prime, h.dim);
  for (double& v : fs.values.data()) {
    v = r.f32("value");
    if (!std::isfinite(v)) throw FormatError("non-finite feature value", r.offset() - 4);
  }
  return fs;
}

void write_features(const FeatureSequence& fs, const std::string& path) {
  detail::write_file(path, encode_features(fs));
}

FeatureSequence read_features(const std::string& path) {
  return decode_features(detail::read_file(path));
}

FeatureHeader read_feature_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string head(kFeatureHeaderSize, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const FeatureHeader h = decode_feature_header(head);
  const auto size = std::filesystem::file_size(path);
  if (size != kFeatureHeaderSize + payload_bytes(h)) {
    throw FormatError("file size " + std::to_string(size) + " disagrees with header",
                      std::min<std::uint64_t>(size, kFeatureHeaderSize + payload_bytes(h)));
  }
  return h;
}

}  // namespace hlnet
