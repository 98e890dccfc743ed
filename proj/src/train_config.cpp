#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "hlnet/error.hpp"
#include "hlnet/train.hpp"

namespace hlnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_count(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ArgumentError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& v) {
  std::istringstream in(v);
  double out = 0.0;
  in >> out;
  if (!in || !in.eof() || !std::isfinite(out)) {
    throw ArgumentError("expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError("expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_counts(const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_count(trim(item)));
  return out;
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"q", [](RunConfig& c, const std::string& v) { c.train.q = to_count(v); }},
      {"lambda", [](RunConfig& c, const std::string& v) { c.train.lambda = to_real(v); }},
      {"gamma_len", [](RunConfig& c, const std::string& v) { c.train.gamma_len = to_count(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_count(v); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_count(v); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_real(v); }},
      {"lr_drop_epochs",
       [](RunConfig& c, const std::string& v) { c.train.lr_drop_epochs = to_counts(v); }},
      {"dropout_rate",
       [](RunConfig& c, const std::string& v) {
         c.train.dropout_rate = to_real(v);
         c.model.dropout_rate = c.train.dropout_rate;
       }},
      {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_count(v); }},
      {"distill_sum", [](RunConfig& c, const std::string& v) { c.train.distill_sum = to_bool(v); }},
      {"train_approximator",
       [](RunConfig& c, const std::string& v) { c.train.train_approximator = to_bool(v); }},
      {"threads", [](RunConfig& c, const std::string& v) { c.train.threads = to_count(v); }},
      {"visual_dim", [](RunConfig& c, const std::string& v) { c.model.visual_dim = to_count(v); }},
      {"audio_dim", [](RunConfig& c, const std::string& v) { c.model.audio_dim = to_count(v); }},
      {"modality", [](RunConfig& c, const std::string& v) { c.model.modality = parse_modality(v); }},
      {"branches", [](RunConfig& c, const std::string& v) { c.model.branches = BranchSet::parse(v); }},
      {"similarity",
       [](RunConfig& c, const std::string& v) {
         if (v == "v1") {
           c.model.relation.similarity = SimilarityKind::cosine_v1;
         } else if (v == "v3") {
           c.model.relation.similarity = SimilarityKind::exp_v3;
         } else {
           throw ArgumentError("similarity must be v1 or v3, got '" + v + "'");
         }
       }},
      {"tau", [](RunConfig& c, const std::string& v) { c.model.relation.tau = to_real(v); }},
      {"gamma", [](RunConfig& c, const std::string& v) { c.model.relation.gamma = to_real(v); }},
      {"sigma", [](RunConfig& c, const std::string& v) { c.model.relation.sigma = to_real(v); }},
      {"zero_handling",
       [](RunConfig& c, const std::string& v) {
         if (v == "literal") {
           c.model.relation.zero_handling = ZeroHandling::literal;
         } else if (v == "masked") {
           c.model.relation.zero_handling = ZeroHandling::masked;
         } else {
           throw ArgumentError("zero_handling must be literal or masked, got '" + v + "'");
         }
       }},
      {"proximity_norm",
       [](RunConfig& c, const std::string& v) {
         if (v == "softmax") {
           c.model.relation.proximity_norm = ProximityNorm::softmax;
         } else if (v == "raw") {
           c.model.relation.proximity_norm = ProximityNorm::raw;
         } else {
           throw ArgumentError("proximity_norm must be softmax or raw, got '" + v + "'");
         }
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw FormatError("expected 'key = value'", line, FormatError::Where::line);
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw FormatError("unknown config key '" + key + "'", line, FormatError::Where::line);
    }
    try {
      it->second(base, value);
    } catch (const ArgumentError& e) {
      throw FormatError(key + ": " + e.what(), line, FormatError::Where::line);
    }
  }
  return base;
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream out;
  const TrainConfig& t = c.train;
  const ModelConfig& m = c.model;
  out << "q = " << t.q << '\n';
  out << "lambda = " << real_text(t.lambda) << '\n';
  out << "gamma_len = " << t.gamma_len << '\n';
  out << "batch_size = " << t.batch_size << '\n';
  out << "epochs = " << t.epochs << '\n';
  out << "lr = " << real_text(t.lr) << '\n';
  out << "lr_drop_epochs = ";
  if (t.lr_drop_epochs.empty()) out << "none";
  for (std::size_t i = 0; i < t.lr_drop_epochs.size(); ++i)
    out << (i ? "," : "") << t.lr_drop_epochs[i];
  out << '\n';
  out << "dropout_rate = " << real_text(t.dropout_rate) << '\n';
  out << "seed = " << t.seed << '\n';
  out << "distill_sum = " << (t.distill_sum ? "true" : "false") << '\n';
  out << "train_approximator = " << (t.train_approximator ? "true" : "false") << '\n';
  out << "threads = " << t.threads << '\n';
  out << "visual_dim = " << m.visual_dim << '\n';
  out << "audio_dim = " << m.audio_dim << '\n';
  out << "modality = " << modality_name(m.modality) << '\n';
  out << "branches = " << m.branches.to_string() << '\n';
  out << "similarity = " << (m.relation.similarity == SimilarityKind::cosine_v1 ? "v1" : "v3")
      << '\n';
  out << "tau = " << real_text(m.relation.tau) << '\n';
  out << "gamma = " << real_text(m.relation.gamma) << '\n';
  out << "sigma = " << real_text(m.relation.sigma) << '\n';
  out << "zero_handling = "
      << (m.relation.zero_handling == ZeroHandling::literal ? "literal" : "masked") << '\n';
  out << "proximity_norm = "
      << (m.relation.proximity_norm == ProximityNorm::softmax ? "softmax" : "raw") << '\n';
  return out.str();
}

}  // namespace hlnet
