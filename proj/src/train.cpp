#include "hlnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

#include "hlnet/error.hpp"

namespace hlnet {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void add_into(ParamGrads& dst, ParamGrads&& src) {
  for (auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, std::move(g));
      continue;
    }
    auto d = it->second.data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
}

constexpr std::size_t kGradientGroup = 8;
const double kLogClampLow = std::log(kProbabilityClamp);
const double kLogClampHigh = std::log1p(-kProbabilityClamp);

struct VideoOutcome {
  double l_bce = 0.0;
  double l_bce2 = 0.0;
  double l_distill = 0.0;
};

}  // namespace

void TrainConfig::validate() const {
  if (q < 1) throw ArgumentError("train: q must be >= 1");
  if (!(lambda >= 0.0)) throw ArgumentError("train: lambda must be >= 0");
  if (gamma_len < 1) throw ArgumentError("train: gamma_len must be >= 1");
  if (batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("train: lr must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ArgumentError("train: dropout_rate must lie in [0, 1)");
  if (threads < 1) throw ArgumentError("train: threads must be >= 1");
}

std::size_t k_of(std::size_t t_prime, std::size_t q) {
  if (t_prime < 1 || q < 1) throw ArgumentError("k_of: t_prime and q must be >= 1");
  return std::min(t_prime / q + 1, t_prime);
}

Var bag_logit(Var activations, std::size_t q) {
  return topk_mean(activations, k_of(activations.value().size(), q));
}

Var bag_score(Var activations, std::size_t q) { return sigmoid(bag_logit(activations, q)); }

Var bce(Var probability, int label) {
  if (label != 0 && label != 1) throw ArgumentError("bce: label must be 0 or 1");
  Var p = clamp(probability, kProbabilityClamp, 1.0 - kProbabilityClamp);
  if (label == 1) return scale(log(p), -1.0);
  Tape& t = *probability.tape();
  Var one_minus = sub(t.constant(Matrix(1, 1, 1.0)), p);
  return scale(log(one_minus), -1.0);
}

Var bce_with_logits(Var logit, int label) {
  if (label != 0 && label != 1) throw ArgumentError("bce: label must be 0 or 1");
  // ln(1 - s(z)) = ln s(-z).
  Var z = label == 1 ? logit : scale(logit, -1.0);
  return scale(log_sigmoid(z, kLogClampLow, kLogClampHigh), -1.0);
}

Var distill_loss(Var online_activations, const Matrix& offline_activations) {
  const Matrix& cs = online_activations.value();
  if (cs.rows() != offline_activations.rows() || cs.cols() != offline_activations.cols()) {
    throw ShapeError("distill_loss: online and offline activations differ in length");
  }
  Matrix teacher = offline_activations;
  for (double& v : teacher.data()) v = stable_sigmoid(v);
  Var log_student = log_sigmoid(online_activations, kLogClampLow, kLogClampHigh);
  return scale(sum(hadamard_const(log_student, teacher)), -1.0);
}

LossReport total_loss(double l_bce, double l_bce2, double l_distill, double lambda) {
  return {l_bce, l_bce2, l_distill, l_bce + l_bce2 + lambda * l_distill};
}

std::vector<std::size_t> sample_indices(std::size_t t_prime, std::size_t gamma_len) {
  if (t_prime < 1) throw ArgumentError("sample_indices: empty sequence");
  if (gamma_len < 1) throw ArgumentError("sample_indices: gamma_len must be >= 1");
  const std::size_t n = std::min(t_prime, gamma_len);
  std::vector<std::size_t> idx(n);
  if (t_prime <= gamma_len) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  for (std::size_t j = 0; j < n; ++j) idx[j] = j * t_prime / gamma_len;
  return idx;
}

Matrix take_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ShapeError("take_rows: row index out of range");
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  int drops = 0;
  for (std::size_t d : config.lr_drop_epochs)
    if (d <= epoch) ++drops;
  return config.lr * std::pow(10.0, -drops);
}

void Adam::step(HLNetParams& params, const ParamGrads& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& w = params.at(name);
    if (w.rows() != g.rows() || w.cols() != g.cols()) {
      throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
    }
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) it->second = {Matrix(w.rows(), w.cols()), Matrix(w.rows(), w.cols())};
    auto m = it->second.m.data();
    auto v = it->second.v.data();
    auto wd = w.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gd[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gd[i] * gd[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      wd[i] -= lr * mhat / (std::sqrt(vhat) + kEpsilon);
    }
  }
}

VideoLoss video_loss(BoundParams& p, const Matrix& visual, const Matrix& audio, int label,
                     std::size_t q, Mode mode, std::mt19937_64& rng) {
  VideoLoss out;
  out.forward = hl_net_forward(p, visual, audio, mode, rng, true);
  out.l_bce = bce_with_logits(bag_logit(out.forward.offline, q), label);
  out.l_bce2 = bce_with_logits(bag_logit(out.forward.online, q), label);
  const Matrix teacher = out.forward.offline.value();
  out.l_distill = distill_loss(out.forward.online, teacher);
  return out;
}

Var video_objective(const VideoLoss& loss, const TrainConfig& config, std::size_t batch_size) {
  const double inv_n = 1.0 / static_cast<double>(batch_size);
  if (!config.train_approximator) return scale(loss.l_bce, inv_n);
  const double distill_weight =
      config.lambda * (config.distill_sum ? static_cast<double>(batch_size) : 1.0);
  Var total = add(loss.l_bce, loss.l_bce2);
  if (distill_weight != 0.0) total = add(total, scale(loss.l_distill, distill_weight));
  return scale(total, inv_n);
}

std::size_t threads_from_env(std::size_t fallback) {
  const char* env = std::getenv("HLNET_THREADS");
  if (env == nullptr) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return fallback;
  return static_cast<std::size_t>(v);
}

FitResult fit(std::span<const VideoRecord> videos, const RunConfig& config,
              const EpochCallback& on_epoch) {
  ModelConfig model = config.model;
  model.dropout_rate = config.train.dropout_rate;
  return fit_from(HLNetParams::initialize(model, mix(config.train.seed, 0x1417)), videos,
                  config.train, on_epoch);
}

FitResult fit_from(HLNetParams params, std::span<const VideoRecord> videos,
                   const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (!params.has_offline_head()) throw ArgumentError("fit: parameter set is incomplete");
  const bool has_pos = std::any_of(videos.begin(), videos.end(),
                                   [](const VideoRecord& v) { return v.weak_label == 1; });
  const bool has_neg = std::any_of(videos.begin(), videos.end(),
                                   [](const VideoRecord& v) { return v.weak_label == 0; });
  if (!has_pos || !has_neg) {
    throw ArgumentError("fit: training set needs at least one positive and one negative video");
  }

  FitResult result{std::move(params), {}};
  HLNetParams& weights = result.params;
  Adam adam;
  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::mt19937_64 shuffle_rng(mix(config.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[j]);
    }

    LossReport epoch_sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::vector<VideoOutcome> outcomes(n);
      // Gradients accumulate in fixed groups so the summation order, and
      // hence the trajectory, does not depend on the worker count.
      const std::size_t groups = (n + kGradientGroup - 1) / kGradientGroup;
      std::vector<ParamGrads> partial(groups);

      auto run_group = [&](std::size_t g) {
        const std::size_t lo = g * kGradientGroup;
        const std::size_t hi = std::min(n, lo + kGradientGroup);
        for (std::size_t b = lo; b < hi; ++b) {
          const VideoRecord& video = videos[order[start + b]];
          const auto rows = sample_indices(video.t_prime(), config.gamma_len);
          const Matrix visual = video.visual.t_prime() ? take_rows(video.visual.values, rows) : Matrix{};
          const Matrix audio = video.audio.t_prime() ? take_rows(video.audio.values, rows) : Matrix{};
          std::mt19937_64 rng(mix(mix(config.seed, epoch), start + b));
          Tape tape;
          BoundParams bound(tape, weights, true);
          VideoLoss loss = video_loss(bound, visual, audio, video.weak_label, config.q,
                                      Mode::train, rng);
          Var objective = video_objective(loss, config, n);
          outcomes[b] = {loss.l_bce.value()[0], loss.l_bce2.value()[0],
                         loss.l_distill.value()[0]};
          if (!std::isfinite(objective.value()[0])) {
            throw NumericError("non-finite loss on video '" + video.id + "' (epoch " +
                               std::to_string(epoch) + ")");
          }
          tape.backward(objective);
          bound.collect_gradients(partial[g]);
        }
      };

      const std::size_t workers = std::min(config.threads, groups);
      if (workers <= 1) {
        for (std::size_t g = 0; g < groups; ++g) run_group(g);
      } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t g = w; g < groups; g += workers) run_group(g);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }

      ParamGrads grads;
      for (auto& g : partial) add_into(grads, std::move(g));
      if (!config.train_approximator) {
        std::erase_if(grads, [](const auto& kv) { return kv.first.starts_with("approx."); });
      }
      for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
          throw NumericError("non-finite gradient for '" + name + "' (epoch " +
                             std::to_string(epoch) + ")");
        }
      }
      adam.step(weights, grads, lr);

      LossReport batch;
      for (const auto& o : outcomes) {
        batch.l_bce += o.l_bce;
        batch.l_bce2 += o.l_bce2;
        batch.l_distill += o.l_distill;
      }
      batch.l_bce /= static_cast<double>(n);
      batch.l_bce2 /= static_cast<double>(n);
      if (!config.distill_sum) batch.l_distill /= static_cast<double>(n);
      epoch_sum.l_bce += batch.l_bce;
      epoch_sum.l_bce2 += batch.l_bce2;
      epoch_sum.l_distill += batch.l_distill;
      ++batches;
    }

    const double nb = static_cast<double>(batches);
    EpochRecord record{epoch, lr,
                       total_loss(epoch_sum.l_bce / nb, epoch_sum.l_bce2 / nb,
                                  epoch_sum.l_distill / nb, config.lambda)};
    if (!std::isfinite(record.loss.l_total)) {
      throw NumericError("non-finite epoch loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record, weights);
  }
  return result;
}

}  // namespace hlnet
