#include "hlnet/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "byte_io.hpp"
#include "hlnet/error.hpp"

namespace hlnet {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace detail

namespace {

constexpr std::string_view kMagic = "HLNP";
constexpr const char* kMetaName = "meta.config";
constexpr std::uint32_t kMaxNameLength = 256;
constexpr std::uint32_t kMaxDim = 1u << 20;

Matrix encode_config(const ModelConfig& c) {
  const RelationConfig& r = c.relation;
  return Matrix(1, 13,
                {static_cast<double>(c.visual_dim), static_cast<double>(c.audio_dim),
                 static_cast<double>(c.modality), static_cast<double>(c.branches.holistic),
                 static_cast<double>(c.branches.localized), static_cast<double>(c.branches.score),
                 r.tau, r.gamma, r.sigma, static_cast<double>(r.similarity),
                 static_cast<double>(r.zero_handling), static_cast<double>(r.proximity_norm),
                 c.dropout_rate});
}

ModelConfig decode_config(const Matrix& m, std::size_t offset) {
  if (m.rows() != 1 || m.cols() != 13) throw FormatError("meta.config must be 1x13", offset);
  auto integral = [&](std::size_t i, double hi) {
    const double v = m[i];
    if (!(v >= 0.0 && v <= hi && std::floor(v) == v)) {
      throw FormatError("meta.config field " + std::to_string(i) + " out of range", offset);
    }
    return static_cast<std::size_t>(v);
  };
  ModelConfig c;
  c.visual_dim = integral(0, kMaxDim);
  c.audio_dim = integral(1, kMaxDim);
  c.modality = static_cast<Modality>(integral(2, 2));
  c.branches = BranchSet{integral(3, 1) == 1, integral(4, 1) == 1, integral(5, 1) == 1};
  c.relation.tau = m[6];
  c.relation.gamma = m[7];
  c.relation.sigma = m[8];
  c.relation.similarity = static_cast<SimilarityKind>(integral(9, 1));
  c.relation.zero_handling = static_cast<ZeroHandling>(integral(10, 1));
  c.relation.proximity_norm = static_cast<ProximityNorm>(integral(11, 1));
  c.dropout_rate = m[12];
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid meta.config: ") + e.what(), offset);
  }
  return c;
}

void put_matrix(detail::ByteWriter& w, const std::string& name, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) w.f64(v);
}

}  // namespace

std::string encode_checkpoint(const HLNetParams& params) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  put_matrix(w, kMetaName, encode_config(params.config()));
  for (const auto& [name, m] : params.weights()) put_matrix(w, name, m);
  return w.take();
}

HLNetParams decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != kMagic) throw FormatError("not an HLNP checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }

  std::map<std::string, std::pair<Matrix, std::size_t>> records;
  while (!r.at_end()) {
    const std::size_t record_offset = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > kMaxNameLength) {
      throw FormatError("parameter name length " + std::to_string(name_len) + " out of range",
                        record_offset);
    }
    std::string name(r.bytes(name_len, "parameter name"));
    for (char ch : name) {
      if (ch < 0x21 || ch > 0x7e) throw FormatError("non-printable parameter name", record_offset);
    }
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    if (rows == 0 || cols == 0 || rows > kMaxDim || cols > kMaxDim) {
      throw FormatError("parameter '" + name + "' has invalid shape", record_offset);
    }
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count > r.remaining() / 8) {
      throw FormatError("truncated values for '" + name + "'", r.offset());
    }
    Matrix m(rows, cols);
    for (double& v : m.data()) {
      v = r.f64("value");
      if (!std::isfinite(v)) {
        throw FormatError("non-finite value in '" + name + "'", r.offset() - 8);
      }
    }
    if (!records.emplace(name, std::make_pair(std::move(m), record_offset)).second) {
      throw FormatError("duplicate parameter '" + name + "'", record_offset);
    }
  }

  auto meta = records.find(kMetaName);
  if (meta == records.end()) throw FormatError("checkpoint lacks meta.config", r.offset());
  HLNetParams params(decode_config(meta->second.first, meta->second.second));
  records.erase(meta);

  std::map<std::string, std::pair<std::size_t, std::size_t>> expected;
  for (const auto& [name, shape] : HLNetParams::layout(params.config())) expected[name] = shape;
  for (auto& [name, rec] : records) {
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw FormatError("unexpected parameter '" + name + "'", rec.second);
    }
    if (rec.first.rows() != it->second.first || rec.first.cols() != it->second.second) {
      throw FormatError("parameter '" + name + "' has the wrong shape", rec.second);
    }
    params.set(name, std::move(rec.first));
  }
  return params;
}

void save_checkpoint(const std::string& path, const HLNetParams& params) {
  detail::write_file(path, encode_checkpoint(params));
}

HLNetParams load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace hlnet
