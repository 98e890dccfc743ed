#include "hlnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "byte_io.hpp"
#include "hlnet/checkpoint.hpp"
#include "hlnet/data.hpp"
#include "hlnet/error.hpp"
#include "hlnet/eval.hpp"
#include "hlnet/train.hpp"

namespace hlnet {

namespace fs = std::filesystem;

namespace {

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  detail::write_file(path.string(), text);
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::size_t videos = 400;
  double test_fraction = 0.25;
  std::string out;
  bool force = false;
  CorpusSpec spec;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  if (a.videos == 0) throw ArgumentError("--videos must be at least 1");
  if (!(a.test_fraction >= 0.0 && a.test_fraction <= 1.0))
    throw ArgumentError("--test-fraction must lie in [0, 1]");
  const fs::path dir(a.out);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ArgumentError("--out '" + a.out + "' is not a directory");
    if (!fs::is_empty(dir)) {
      if (!a.force) {
        throw ArgumentError("output directory '" + a.out + "' is not empty (use --force)");
      }
      fs::remove_all(dir / "features");
      fs::remove(dir / "manifest.jsonl");
    }
  }
  CorpusSpec spec = a.spec;
  spec.test_videos = static_cast<std::size_t>(
      std::llround(static_cast<double>(a.videos) * a.test_fraction));
  spec.train_videos = a.videos - spec.test_videos;
  const auto corpus = generate_corpus(spec);
  write_corpus(corpus, a.out);

  std::size_t counts[2][2] = {{0, 0}, {0, 0}};
  for (const auto& v : corpus) ++counts[v.split == Split::test][v.weak_label];
  out << "wrote " << corpus.size() << " videos to " << a.out << "\n";
  for (int s = 0; s < 2; ++s) {
    out << "  " << (s ? "test " : "train") << ": " << counts[s][1] << " positive, " << counts[s][0]
        << " negative\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string config;
  std::string modality;
  std::string branches;
  std::string similarity;
  double lambda = 0.0;
  bool distill_sum = false;
  bool freeze_approximator = false;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::size_t save_every = 1;
};

std::string epoch_file(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.hlnp", epoch);
  return buf;
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  if (a.save_every == 0) throw ArgumentError("--save-every must be at least 1");
  RunConfig config;
  if (!a.config.empty()) config = parse_run_config(detail::read_file(a.config));
  if (sub.count("--modality")) config.model.modality = parse_modality(a.modality);
  if (sub.count("--branches")) config.model.branches = BranchSet::parse(a.branches);
  if (sub.count("--similarity")) {
    config = parse_run_config("similarity = " + a.similarity, config);
  }
  if (sub.count("--lambda")) config.train.lambda = a.lambda;
  if (sub.count("--distill-sum")) config.train.distill_sum = a.distill_sum;
  if (sub.count("--freeze-approximator")) config.train.train_approximator = false;
  if (sub.count("--epochs")) config.train.epochs = a.epochs;
  if (sub.count("--batch-size")) config.train.batch_size = a.batch_size;
  if (sub.count("--lr")) config.train.lr = a.lr;
  if (sub.count("--seed")) config.train.seed = a.seed;
  config.train.threads = sub.count("--threads") ? a.threads : config.train.threads;
  config.train.threads = std::min(config.train.threads, threads_from_env(config.train.threads));
  config.model.dropout_rate = config.train.dropout_rate;

  const auto entries = load_manifest(a.manifest);
  const auto videos = load_split(entries, Split::train);
  if (videos.empty()) throw ArgumentError("manifest has no training videos");
  const VideoRecord& first = videos.front();
  if (config.model.modality != Modality::audio) {
    if (first.visual.t_prime() == 0) throw ArgumentError("modality needs visual features");
    config.model.visual_dim = first.visual.dim();
  }
  if (config.model.modality != Modality::visual) {
    if (first.audio.t_prime() == 0) throw ArgumentError("modality needs audio features");
    config.model.audio_dim = first.audio.dim();
  }
  config.model.validate();
  config.train.validate();

  const fs::path run(a.out);
  fs::create_directories(run / "checkpoints");
  write_text(run / "config.txt", format_run_config(config));

  std::string history = "epoch,lr,l_bce,l_bce2,l_distill,l_total\n";
  const std::size_t last = config.train.epochs;
  auto on_epoch = [&](const EpochRecord& r, const HLNetParams& params) {
    history += std::to_string(r.epoch) + "," + real_text(r.lr) + "," + real_text(r.loss.l_bce) +
               "," + real_text(r.loss.l_bce2) + "," + real_text(r.loss.l_distill) + "," +
               real_text(r.loss.l_total) + "\n";
    write_text(run / "loss_history.csv", history);
    if (r.epoch % a.save_every == 0 || r.epoch == last) {
      save_checkpoint((run / "checkpoints" / epoch_file(r.epoch)).string(), params);
    }
    out << "epoch " << r.epoch << "  lr " << r.lr << "  l_total " << r.loss.l_total << "\n";
  };
  const FitResult result = fit(videos, config, on_epoch);
  write_text(run / "loss_history.csv", history);
  save_checkpoint((run / "final.hlnp").string(), result.params);
  out << "trained " << videos.size() << " videos for " << config.train.epochs << " epochs; run in "
      << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string head = "both";
  bool per_epoch = false;
  std::size_t threads = 1;
};

std::vector<std::pair<std::size_t, fs::path>> saved_checkpoints(const fs::path& where) {
  fs::path dir = where;
  if (fs::is_directory(dir / "checkpoints")) dir /= "checkpoints";
  if (!fs::is_directory(dir)) {
    throw IoError("--per-epoch needs a run directory, got '" + where.string() + "'");
  }
  static const std::regex pattern(R"(epoch_(\d+)\.hlnp)");
  std::vector<std::pair<std::size_t, fs::path>> found;
  for (const auto& item : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = item.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoul(m[1].str()), item.path());
  }
  if (found.empty()) throw IoError("no epoch checkpoints under '" + dir.string() + "'");
  std::sort(found.begin(), found.end());
  return found;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.head != "both" && a.head != "offline" && a.head != "online")
    throw ArgumentError("--head must be offline, online or both");
  const std::size_t threads = std::min(a.threads, threads_from_env(a.threads));
  const auto entries = load_manifest(a.manifest);
  const auto test = load_split(entries, Split::test);
  if (test.empty()) throw ArgumentError("manifest has no test videos");
  const fs::path dir(a.out);
  fs::create_directories(dir);

  auto heads_for = [&](const HLNetParams& params) {
    std::vector<Head> heads;
    if (a.head != "online" && params.has_offline_head()) heads.push_back(Head::offline);
    if (a.head != "offline") heads.push_back(Head::online);
    if (a.head == "offline" && !params.has_offline_head())
      throw ArgumentError("checkpoint has no offline head");
    return heads;
  };

  if (a.per_epoch) {
    std::string table = "epoch,offline_ap,online_ap\n";
    for (const auto& [epoch, path] : saved_checkpoints(a.checkpoint)) {
      const HLNetParams params = load_checkpoint(path.string());
      std::string row = std::to_string(epoch);
      double ap[2] = {NAN, NAN};
      for (Head h : heads_for(params)) ap[h == Head::online] = evaluate(params, test, h, threads).ap;
      row += "," + real_text(ap[0]) + "," + real_text(ap[1]) + "\n";
      table += row;
      out << row;
    }
    write_text(dir / "per_epoch.csv", table);
    return kExitOk;
  }

  if (!fs::is_regular_file(a.checkpoint)) {
    throw IoError("checkpoint '" + a.checkpoint + "' does not exist");
  }
  const HLNetParams params = load_checkpoint(a.checkpoint);
  for (Head h : heads_for(params)) {
    const CurveReport r = evaluate(params, test, h, threads);
    write_text(dir / (std::string(head_name(h)) + "_curve.csv"), curve_csv(r));
    write_text(dir / (std::string(head_name(h)) + "_summary.json"), curve_json(r));
    out << head_name(h) << " AP " << real_text(r.ap);
    if (r.auc) out << "  AUC " << real_text(*r.auc);
    out << "  (" << r.n_frames << " frames, " << r.n_positive << " positive)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer

/// Reads an XDVF file one snippet row at a time.
class FeatureStream {
 public:
  explicit FeatureStream(const std::string& path)
      : header_(read_feature_header(path)), in_(path, std::ios::binary), row_(header_.dim) {
    if (!in_) throw IoError("cannot open '" + path + "'");
    in_.seekg(static_cast<std::streamoff>(kFeatureHeaderSize));
  }

  const FeatureHeader& header() const { return header_; }

  std::span<const double> next() {
    std::string bytes(static_cast<std::size_t>(header_.dim) * 4, '\0');
    in_.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in_.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw FormatError("truncated feature payload", offset_ + static_cast<std::uint64_t>(in_.gcount()));
    }
    detail::ByteReader r(bytes);
    for (double& v : row_) {
      v = r.f32("value");
      if (!std::isfinite(v)) throw FormatError("non-finite feature value", offset_);
    }
    offset_ += bytes.size();
    return row_;
  }

 private:
  FeatureHeader header_;
  std::ifstream in_;
  std::vector<double> row_;
  std::uint64_t offset_ = kFeatureHeaderSize;
};

struct InferArgs {
  std::string checkpoint;
  std::string visual;
  std::string audio;
  std::string out;
  bool online = false;
  bool offline = false;
};

void check_inputs(const ModelConfig& c, const InferArgs& a) {
  const bool need_v = c.modality != Modality::audio;
  const bool need_a = c.modality != Modality::visual;
  if (need_v != !a.visual.empty() || need_a != !a.audio.empty()) {
    throw ArgumentError(std::string("checkpoint modality '") + modality_name(c.modality) +
                        "' needs " + (need_v && need_a ? "--visual and --audio" : need_v ? "--visual only" : "--audio only"));
  }
}

void check_dims(const FeatureHeader& h, std::size_t dim, const std::string& path) {
  if (h.dim != dim) {
    throw FormatError("'" + path + "' has dim " + std::to_string(h.dim) + ", checkpoint expects " +
                          std::to_string(dim),
                      13);
  }
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (a.online && a.offline) throw ArgumentError("--online and --offline are exclusive");
  if (!fs::is_regular_file(a.checkpoint)) {
    throw IoError("checkpoint '" + a.checkpoint + "' does not exist");
  }
  const HLNetParams params = load_checkpoint(a.checkpoint);
  const ModelConfig& c = params.config();
  check_inputs(c, a);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write '" + a.out + "'");
  }
  std::ostream& sink = a.out.empty() ? out : file;
  sink << "snippet_index,score\n";
  char buf[64];

  if (a.online) {
    if (!params.has_online_head()) {
      throw ArgumentError("checkpoint lacks approximator weights; online inference impossible");
    }
    std::optional<FeatureStream> vs, as;
    std::uint32_t t_prime = 0;
    if (!a.visual.empty()) {
      vs.emplace(a.visual);
      check_dims(vs->header(), c.visual_dim, a.visual);
      t_prime = vs->header().t_prime;
    }
    if (!a.audio.empty()) {
      as.emplace(a.audio);
      check_dims(as->header(), c.audio_dim, a.audio);
      if (t_prime != 0 && as->header().t_prime != t_prime)
        throw FormatError("visual and audio files disagree on T'", 9);
      t_prime = as->header().t_prime;
    }
    OnlineScorer scorer(params);
    for (std::uint32_t t = 0; t < t_prime; ++t) {
      const auto v = vs ? vs->next() : std::span<const double>{};
      const auto au = as ? as->next() : std::span<const double>{};
      std::snprintf(buf, sizeof buf, "%u,%.17g\n", t, scorer.push(v, au));
      sink << buf;
    }
  } else {
    if (!params.has_offline_head()) {
      throw ArgumentError("checkpoint lacks the offline head; use --online");
    }
    Matrix visual, audio;
    if (!a.visual.empty()) {
      visual = read_features(a.visual).values;
      if (visual.cols() != c.visual_dim) check_dims(read_feature_header(a.visual), c.visual_dim, a.visual);
    }
    if (!a.audio.empty()) {
      audio = read_features(a.audio).values;
      if (audio.cols() != c.audio_dim) check_dims(read_feature_header(a.audio), c.audio_dim, a.audio);
    }
    if (!a.visual.empty() && !a.audio.empty() && visual.rows() != audio.rows())
      throw FormatError("visual and audio files disagree on T'", 9);
    const Scores s = predict(params, visual, audio, true);
    for (std::size_t t = 0; t < s.offline.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", t, s.offline[t]);
      sink << buf;
    }
  }
  if (!sink) throw IoError("short write of inference output");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised audio-visual violence detection", "hlnet"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* g = app.add_subcommand("gen", "Write a synthetic weakly labelled corpus");
  g->add_option("--videos", gen.videos, "Total number of videos")->capture_default_str();
  g->add_option("--test-fraction", gen.test_fraction, "Fraction of videos in the test split")
      ->capture_default_str();
  g->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--force", gen.force, "Overwrite an existing corpus in --out");
  g->add_option("--audio-dominant", gen.spec.audio_dominant,
                "Fraction of events visible only in the audio block")
      ->capture_default_str();
  g->add_option("--visual-dominant", gen.spec.visual_dominant,
                "Fraction of events visible only in the visual block")
      ->capture_default_str();
  g->add_option("--positive-fraction", gen.spec.positive_fraction, "Fraction of violent videos")
      ->capture_default_str();
  g->add_option("--min-snippets", gen.spec.min_snippets, "Shortest video in snippets")
      ->capture_default_str();
  g->add_option("--max-snippets", gen.spec.max_snippets, "Longest video in snippets")
      ->capture_default_str();
  g->add_option("--visual-dim", gen.spec.visual_dim, "Visual feature width")->capture_default_str();
  g->add_option("--audio-dim", gen.spec.audio_dim, "Audio feature width")->capture_default_str();
  g->add_option("--signal", gen.spec.signal, "Event amplitude")->capture_default_str();

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train a model and write a run directory");
  t->add_option("--manifest", tr.manifest, "Corpus manifest (train split is used)")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--config", tr.config, "key = value config file; flags override it");
  t->add_option("--modality", tr.modality, "audio, visual or both");
  t->add_option("--branches", tr.branches, "Relation branches, e.g. H,L,S");
  t->add_option("--similarity", tr.similarity, "Holistic similarity: v1 (cosine) or v3 (exp)");
  t->add_option("--lambda", tr.lambda, "Distillation weight");
  t->add_flag("--distill-sum", tr.distill_sum, "Sum the distillation loss over the batch");
  t->add_flag("--freeze-approximator", tr.freeze_approximator,
              "Train the offline head on L_BCE alone");
  t->add_option("--epochs", tr.epochs, "Number of epochs");
  t->add_option("--batch-size", tr.batch_size, "Videos per batch");
  t->add_option("--lr", tr.lr, "Initial learning rate");
  t->add_option("--seed", tr.seed, "Initialisation, shuffling and dropout seed");
  t->add_option("--threads", tr.threads, "Worker threads (capped by HLNET_THREADS)");
  t->add_option("--save-every", tr.save_every, "Checkpoint every N epochs (the last is always saved)")
      ->capture_default_str();

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Frame-level AP/AUC on the test split");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file, or run directory with --per-epoch")
      ->required();
  e->add_option("--manifest", ev.manifest, "Corpus manifest (test split is used)")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--head", ev.head, "offline, online or both")->capture_default_str();
  e->add_flag("--per-epoch", ev.per_epoch, "Evaluate every saved epoch checkpoint of a run");
  e->add_option("--threads", ev.threads, "Worker threads (capped by HLNET_THREADS)")
      ->capture_default_str();

  InferArgs in;
  CLI::App* i = app.add_subcommand("infer", "Per-snippet scores for one video");
  i->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
  i->add_option("--visual", in.visual, "Visual XDVF file");
  i->add_option("--audio", in.audio, "Audio XDVF file");
  i->add_option("--out", in.out, "Output CSV (default: stdout)");
  i->add_flag("--online", in.online, "Stream snippet by snippet with the causal head");
  i->add_flag("--offline", in.offline, "Score the whole video with the relation head (default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen, out);
    if (*t) return cmd_train(tr, *t, out);
    if (*e) return cmd_eval(ev, out);
    if (*i) return cmd_infer(in, out);
  } catch (const ArgumentError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const IoError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const ShapeError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace hlnet
