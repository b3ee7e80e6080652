#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "topiq/checkpoint.hpp"
#include "topiq/data.hpp"
#include "topiq/lpips_plus.hpp"
#include "topiq/trainer.hpp"

namespace topiq::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

namespace detail {

inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "mode",  "levels",       "channels",    "blocks", "freeze_backbone", "dim",        "head",
      "bins",  "heads",        "glp_hidden",  "input_height", "input_width",  "seed",      "lr",
      "weight_decay", "t_max", "eta_min",     "max_epochs",   "batch_size",   "patience",  "train_seed",
      "restart", "crop",       "hflip"};
  return keys;
}

inline nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + ": expected a flat JSON object");
  for (const auto& item : j.items()) {
    if (!config_keys().count(item.key())) throw UsageError("config " + path + ": unknown key '" + item.key() + "'");
  }
  return j;
}

// Fills mode and head from the manifest kind when the config leaves them out.
inline nlohmann::json complete_config(nlohmann::json j, ManifestKind kind, std::size_t bins) {
  if (!j.contains("mode")) {
    j["mode"] = kind == ManifestKind::mos_fr || kind == ManifestKind::pairwise ? "fr" : "nr";
  }
  if (kind == ManifestKind::distribution) {
    if (!j.contains("head")) j["head"] = "distribution";
    if (!j.contains("bins")) j["bins"] = bins;
  }
  return j;
}

template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

// Per-map min-max normalization to [0, 1]; a constant map becomes zeros.
inline Tensor<float> normalized(const Tensor<float>& map, float& lo, float& hi) {
  const auto v = map.data();
  lo = *std::min_element(v.begin(), v.end());
  hi = *std::max_element(v.begin(), v.end());
  std::vector<float> out(v.size(), 0.0f);
  if (hi > lo)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  return Tensor<float>(map.shape(), std::move(out));
}

// Attention received by each key token, averaged over queries, on the token grid.
inline Tensor<float> key_attention_grid(const Tensor<float>& weights, std::size_t h, std::size_t w) {
  const std::size_t nq = weights.dim(0), nk = weights.dim(1);
  if (nk != h * w) throw ArgumentError("export-attn: weight matrix does not match the token grid");
  std::vector<float> out(nk, 0.0f);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t k = 0; k < nk; ++k) out[k] += weights[q * nk + k] / static_cast<float>(nq);
  return Tensor<float>(Shape{1, h, w}, std::move(out));
}

// --------------------------------------------------------------- subcommands

struct TrainArgs {
  std::string config, train, val, out;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto json = read_config(a.config);
  const auto kind = detect_manifest_kind(a.train);
  if (detect_manifest_kind(a.val) != kind) throw UsageError("--train and --val manifests differ in kind");
  const auto train_set = load_dataset(load_manifest(a.train, kind));
  const auto val_set = load_dataset(load_manifest(a.val, kind));
  const auto full = complete_config(json, kind, train_set.samples.front().distribution.size());
  const auto model_cfg = as_usage([&] { return model_config_from_json(full); });
  const auto train_cfg = as_usage([&] { return train_config_from_json(full, model_cfg.mode); });
  auto model = Model<float>::create(model_cfg);
  const auto log = train(model, train_set, val_set, train_cfg);
  ensure_dir(a.out);
  save_checkpoint(model, (fs::path(a.out) / "model.ckpt").string());
  write_text(fs::path(a.out) / "train_log.csv", log.to_csv());
  out << "epochs=" << log.epochs.size() << "\n";
  out << "best_epoch=" << log.best_epoch << "\n";
  out << "best_val_srcc=" << fmt(log.epochs[log.best_epoch].val_srcc) << "\n";
  return ok;
}

struct EvalArgs {
  std::string ckpt, manifest, report;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto model = load_model<float>(a.ckpt);
  const auto kind = detect_manifest_kind(a.manifest);
  const auto ds = load_dataset(load_manifest(a.manifest, kind));
  const auto text = format_report(evaluate(model, ds));
  write_text(a.report, text);
  out << text;
  return ok;
}

struct ScoreArgs {
  std::string ckpt, dist, ref;
};

inline int cmd_score(const ScoreArgs& a, std::ostream& out) {
  auto model = load_model<float>(a.ckpt);
  const bool fr = model.config().mode == IqaMode::full_reference;
  if (fr && a.ref.empty()) throw UsageError("score: full-reference checkpoint needs --ref");
  if (!fr && !a.ref.empty()) throw UsageError("score: no-reference checkpoint takes no --ref");
  NoGradGuard no_grad;
  const auto dist = load_image(a.dist);
  double score = 0.0;
  if (fr) {
    score = Model<float>::to_score(model.forward_fr(dist, load_image(a.ref)));
  } else {
    score = Model<float>::to_score(model.forward_nr(dist));
  }
  if (!std::isfinite(score)) throw NumericError("score: model output is not finite");
  // scalar heads trained on MOS map back to the raw label scale
  if (model.label_range && model.config().head == HeadKind::scalar) score = model.label_range->denormalize(score);
  out << fmt(score) << "\n";
  return ok;
}

struct LpipsArgs {
  std::string dist, ref, sweep, ckpt, config;
  std::size_t layer = 3;
  bool distance = false;
};

inline Backbone<float> lpips_backbone(const LpipsArgs& a) {
  if (!a.ckpt.empty()) return load_model<float>(a.ckpt).backbone();
  ModelConfig cfg;
  if (!a.config.empty()) cfg = as_usage([&] { return model_config_from_json(read_config(a.config)); });
  Rng rng(cfg.seed);
  return Backbone<float>::create(cfg.backbone, rng);
}

inline int cmd_lpips(const LpipsArgs& a, std::ostream& out) {
  const auto net = lpips_backbone(a);
  const auto orientation = a.distance ? MapOrientation::distance : MapOrientation::similarity;
  NoGradGuard no_grad;
  if (!a.sweep.empty()) {
    const auto manifest = load_manifest(a.sweep, ManifestKind::mos_fr);
    const auto ds = load_dataset(manifest);
    std::vector<std::pair<FeaturePyramid<float>, FeaturePyramid<float>>> pairs;
    std::vector<double> mos;
    for (const auto& s : ds.samples) {
      pairs.push_back(net.extract_pair(s.images[0], s.images[1]));
      mos.push_back(s.target);
    }
    const std::span<const std::pair<FeaturePyramid<float>, FeaturePyramid<float>>> view(pairs);
    out << "layer,srcc\n";
    for (const auto& row : layer_sweep(view, mos, orientation)) {
      out << (row.layer == 0 ? std::string("uniform") : std::to_string(row.layer)) << "," << fmt(row.srcc) << "\n";
    }
    return ok;
  }
  if (a.dist.empty() || a.ref.empty()) throw UsageError("lpips-plus: --dist and --ref are required without --sweep");
  if (a.layer < 1 || a.layer > net.config().levels) {
    throw UsageError("lpips-plus: --layer " + std::to_string(a.layer) + " outside 1.." + std::to_string(net.config().levels));
  }
  const auto [pd, pr] = net.extract_pair(load_image(a.dist), load_image(a.ref));
  const auto maps = quality_maps(pd, pr, orientation);
  const auto result = lpips_plus(maps, semantic_weight(pr, a.layer));
  out << "lpips_plus=" << fmt(result.value) << "\n";
  for (std::size_t l = 0; l < result.layer_terms.size(); ++l) {
    out << "layer" << (l + 1) << "=" << fmt(result.layer_terms[l]) << "\n";
  }
  if (result.uniform_fallback) out << "uniform_fallback=1\n";
  return ok;
}

struct SplitArgs {
  std::string manifest, ratios = "6:2:2", out;
  std::uint64_t seed = 0;
  bool by_reference = false;
};

inline int cmd_split(const SplitArgs& a, std::ostream& out, std::ostream& err) {
  const auto ratios = as_usage([&] { return parse_ratios(a.ratios); });
  const auto kind = detect_manifest_kind(a.manifest);
  const auto m = load_manifest(a.manifest, kind);
  std::array<Manifest, 3> parts;
  if (a.by_reference && (kind == ManifestKind::mos_fr || kind == ManifestKind::pairwise)) {
    parts = split_by_reference(m, ratios, a.seed);
  } else {
    if (a.by_reference) err << "warning: " << kind_name(kind) << " manifest has no reference column; splitting records\n";
    parts = split_records(m, ratios, a.seed);
  }
  ensure_dir(a.out);
  const char* names[3] = {"train.csv", "val.csv", "test.csv"};
  for (int s = 0; s < 3; ++s) {
    write_manifest(parts[s], fs::path(a.out) / names[s]);
    out << names[s] << "=" << parts[s].size() << "\n";
  }
  return ok;
}

struct ExportArgs {
  std::string ckpt, dist, ref, out;
};

inline int cmd_export(const ExportArgs& a, std::ostream& out) {
  auto model = load_model<float>(a.ckpt);
  const bool fr = model.config().mode == IqaMode::full_reference;
  if (fr && a.ref.empty()) throw UsageError("export-attn: full-reference checkpoint needs --ref");
  NoGradGuard no_grad;
  ForwardTrace<float> trace;
  const auto dist = load_image(a.dist);
  if (fr) {
    model.forward_fr(dist, load_image(a.ref), &trace);
  } else {
    model.forward_nr(dist, &trace);
  }
  ensure_dir(a.out);
  std::string ranges;
  auto emit = [&](const Tensor<float>& map, const std::string& name) {
    float lo = 0, hi = 0;
    write_gray_png(normalized(map, lo, hi), fs::path(a.out) / name);
    ranges += name + " " + fmt(lo) + " " + fmt(hi) + "\n";
    out << name << "\n";
  };
  const std::size_t n = model.config().levels();
  for (std::size_t i = 1; i < n; ++i) emit(trace.masks[i - 1], "glp_mask_level" + std::to_string(i) + ".png");
  for (std::size_t i = 1; i < n; ++i) {
    emit(key_attention_grid(trace.csa_weights[i - 1], trace.grid_height, trace.grid_width),
         "csa_level" + std::to_string(i) + ".png");
  }
  write_text(fs::path(a.out) / "ranges.txt", ranges);
  return ok;
}

}  // namespace detail

/// Runs one command line. Errors go to `err` as a single
/// "error[usage|data|numeric]: ..." line and select the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Coarse-to-fine attention image quality assessment", "topiq"};
  app.require_subcommand(1);

  detail::TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from manifests");
  train_cmd->add_option("--config", train_args.config, "Flat JSON model/training config")->required();
  train_cmd->add_option("--train", train_args.train, "Training manifest")->required();
  train_cmd->add_option("--val", train_args.val, "Validation manifest")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();

  detail::EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "Manifest")->required();
  eval_cmd->add_option("--report", eval_args.report, "Report file")->required();

  detail::ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "Score one image or pair");
  score_cmd->add_option("--ckpt", score_args.ckpt, "Checkpoint")->required();
  score_cmd->add_option("--dist", score_args.dist, "Distorted image")->required();
  score_cmd->add_option("--ref", score_args.ref, "Reference image");

  detail::LpipsArgs lpips_args;
  auto* lpips_cmd = app.add_subcommand("lpips-plus", "Semantically weighted multi-scale feature distance");
  lpips_cmd->add_option("--dist", lpips_args.dist, "Distorted image");
  lpips_cmd->add_option("--ref", lpips_args.ref, "Reference image");
  lpips_cmd->add_option("--layer", lpips_args.layer, "Semantic weight layer")->capture_default_str();
  lpips_cmd->add_option("--sweep", lpips_args.sweep, "MOS-FR manifest: print SRCC per weight layer");
  lpips_cmd->add_option("--ckpt", lpips_args.ckpt, "Take the backbone from this checkpoint");
  lpips_cmd->add_option("--config", lpips_args.config, "Backbone config when no checkpoint is given");
  lpips_cmd->add_flag("--distance", lpips_args.distance, "Distance maps instead of similarity maps");

  detail::SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Split a manifest into train/val/test");
  split_cmd->add_option("--manifest", split_args.manifest, "Manifest")->required();
  split_cmd->add_option("--ratios", split_args.ratios, "train:val:test")->capture_default_str();
  split_cmd->add_option("--seed", split_args.seed, "Shuffle seed")->capture_default_str();
  split_cmd->add_flag("--by-reference", split_args.by_reference, "Keep each reference in one split");
  split_cmd->add_option("--out", split_args.out, "Output directory")->required();

  detail::ExportArgs export_args;
  auto* export_cmd = app.add_subcommand("export-attn", "Write GLP masks and CSA maps as PNGs");
  export_cmd->add_option("--ckpt", export_args.ckpt, "Checkpoint")->required();
  export_cmd->add_option("--dist", export_args.dist, "Distorted image")->required();
  export_cmd->add_option("--ref", export_args.ref, "Reference image");
  export_cmd->add_option("--out", export_args.out, "Output directory")->required();

  auto fail = [&](const char* tag, const std::string& msg, int code) {
    err << "error[" << tag << "]: " << detail::one_line(msg) << "\n";
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), usage);
  }

  try {
    if (*train_cmd) return detail::cmd_train(train_args, out);
    if (*eval_cmd) return detail::cmd_eval(eval_args, out);
    if (*score_cmd) return detail::cmd_score(score_args, out);
    if (*lpips_cmd) return detail::cmd_lpips(lpips_args, out);
    if (*split_cmd) return detail::cmd_split(split_args, out, err);
    if (*export_cmd) return detail::cmd_export(export_args, out);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), usage);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), numeric);
  } catch (const DataError& e) {
    return fail("data", e.what(), data);
  } catch (const CheckpointError& e) {
    return fail("data", e.what(), data);
  } catch (const ArgumentError& e) {
    return fail("data", e.what(), data);
  } catch (const std::exception& e) {
    return fail("data", e.what(), data);
  }
  return fail("usage", "no subcommand", usage);
}

/// Convenience overload for tests.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"topiq"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace topiq::cli
