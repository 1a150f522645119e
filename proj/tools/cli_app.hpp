#pragma once

// `cbcs` command-line front end. Each stage writes its artifacts plus a
// manifest holding the fully resolved argument list and content hashes of
// every input and output, so `cbcs rerun --manifest <file>` can replay it.

#include <concepts>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbcs/cbcs.hpp"

namespace cbcs::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutDirEnv = "CBCS_OUT_DIR";

inline std::string default_out_dir() {
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  return ".";
}

inline std::string abs_path(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

inline std::string fmt_real(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

/// Collects resolved arguments and artifact hashes for one stage.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void arg(const std::string& flag, const std::string& value) {
    argv_.push_back(flag);
    argv_.push_back(value);
    parameters_[flag.substr(2)] = value;
  }
  void arg(const std::string& flag, double value) { arg(flag, fmt_real(value)); }
  template <std::integral T>
  void arg(const std::string& flag, T value) {
    arg(flag, std::to_string(value));
  }
  void flag(const std::string& flag) {
    argv_.push_back(flag);
    parameters_[flag.substr(2)] = true;
  }

  void input(const std::string& role, const std::string& path) {
    inputs_[role] = {{"path", abs_path(path)}, {"hash", file_hash(path)}};
  }
  void output(const std::string& role, const std::string& path) {
    outputs_[role] = {{"path", abs_path(path)}, {"hash", file_hash(path)}};
  }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  json to_json() const {
    json j;
    j["tool"] = "cbcs";
    j["version"] = kToolVersion;
    j["command"] = command_;
    j["argv"] = argv_;
    j["parameters"] = parameters_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    if (!extra_.empty()) j["notes"] = extra_;
    return j;
  }

  void write(const fs::path& path) const { detail::write_file(path, to_json().dump(2) + "\n"); }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  json parameters_ = json::object();
  json inputs_ = json::object();
  json outputs_ = json::object();
  json extra_ = json::object();
};

// ---------------------------------------------------------------- options

struct BottleneckOptions {
  std::string catalog;
  std::string concept_embeddings;
  std::string concept_names;
  std::size_t k = 5;
  bool normalize = true;
};

struct ScoreCliOptions {
  std::string visual;
  std::string concepts;  // bottleneck CBE1
  std::string labels;
  std::string prompts;
  std::string mode = "labeled";
  std::size_t epochs = 100;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::string likelihood = "softmax";
  bool keep_margins = false;
  bool normalize = true;
};

struct SelectCliOptions {
  std::string scores;
  std::string visual;  // optional, only hashed into the coreset header
  std::string method = "ccs";
  double alpha = 0.0;
  std::optional<double> beta;
  std::string dataset_tag;
  std::string mode = "labeled";
  std::size_t bins = 50;
  std::uint64_t seed = 0;
  bool topup = true;
};

struct BenchCliOptions {
  std::vector<double> alphas{0.9};
  std::vector<double> betas{0.3};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t bins = 50;
  double capture_beta = 0.3;
};

struct SynthCliOptions {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  double noise = 0.35;
  double mislabel = 0.1;
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------- stages

inline ConceptSelection run_bottleneck(const BottleneckOptions& o, const fs::path& out_dir) {
  if (o.k < 1) throw Error(ErrorCode::InvalidK, "--k must be >= 1");
  Manifest m("bottleneck");
  m.arg("--catalog", abs_path(o.catalog));
  m.arg("--concept-embeddings", abs_path(o.concept_embeddings));
  m.arg("--concept-names", abs_path(o.concept_names));
  m.arg("--k", o.k);
  if (!o.normalize) m.flag("--no-normalize");
  m.arg("--out-dir", abs_path(out_dir.string()));

  const auto catalog = read_catalog(o.catalog);
  ConceptEmbeddings embeddings{read_concept_names(o.concept_names), read_embeddings(o.concept_embeddings)};
  const auto selection = select_discriminative(catalog, o.k);
  const auto bottleneck = assemble_bottleneck(selection, embeddings, o.normalize);
  for (const auto& w : selection.warnings) std::clog << "warning: " << w << '\n';

  const auto sel_path = (out_dir / "bottleneck.json").string();
  const auto mat_path = (out_dir / "bottleneck.cbe").string();
  write_selection(sel_path, selection);
  write_embeddings(mat_path, bottleneck.concept_matrix);
  m.input("catalog", o.catalog);
  m.input("concept_embeddings", o.concept_embeddings);
  m.input("concept_names", o.concept_names);
  m.output("selection", sel_path);
  m.output("concept_matrix", mat_path);
  m.write(out_dir / "bottleneck.manifest.json");
  return selection;
}

inline void validate_score_options(const ScoreCliOptions& o) {
  const auto mode = parse_mode(o.mode);
  parse_likelihood(o.likelihood);
  if (mode == SelectionMode::Labeled && o.labels.empty()) {
    throw Error(ErrorCode::InvalidArgument, "labeled mode requires --labels");
  }
  if (mode == SelectionMode::Labeled && !o.prompts.empty()) {
    throw Error(ErrorCode::InvalidArgument, "--prompts is only valid with --mode label-free");
  }
  if (mode == SelectionMode::LabelFree && !o.labels.empty()) {
    throw Error(ErrorCode::InvalidArgument, "label-free mode forbids --labels");
  }
  if (mode == SelectionMode::LabelFree && o.prompts.empty()) {
    throw Error(ErrorCode::InvalidArgument, "label-free mode requires --prompts");
  }
  if (o.epochs < 1) throw Error(ErrorCode::InvalidArgument, "--epochs must be >= 1");
  if (o.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "--batch-size must be >= 1");
}

inline void run_score(const ScoreCliOptions& o, const fs::path& out_dir) {
  validate_score_options(o);
  const auto mode = parse_mode(o.mode);
  Manifest m("score");
  m.arg("--visual", abs_path(o.visual));
  m.arg("--concepts", abs_path(o.concepts));
  if (!o.labels.empty()) m.arg("--labels", abs_path(o.labels));
  if (!o.prompts.empty()) m.arg("--prompts", abs_path(o.prompts));
  m.arg("--mode", to_string(mode));
  m.arg("--epochs", o.epochs);
  m.arg("--lr", o.lr);
  m.arg("--momentum", o.momentum);
  m.arg("--weight-decay", o.weight_decay);
  m.arg("--batch-size", o.batch_size);
  m.arg("--seed", o.seed);
  m.arg("--likelihood", o.likelihood);
  if (o.keep_margins) m.flag("--keep-margins");
  if (!o.normalize) m.flag("--no-normalize");
  m.arg("--out-dir", abs_path(out_dir.string()));

  ScoreOptions options;
  options.trainer.epochs = o.epochs;
  options.trainer.learning_rate = o.lr;
  options.trainer.momentum = o.momentum;
  options.trainer.weight_decay = o.weight_decay;
  options.trainer.batch_size = o.batch_size;
  options.trainer.seed = o.seed;
  options.trainer.likelihood = parse_likelihood(o.likelihood);
  options.keep_margins = o.keep_margins;
  options.require_normalized = o.normalize;

  const auto visual = read_embeddings(o.visual);
  const auto concepts = read_embeddings(o.concepts);
  ScoringResult result;
  if (mode == SelectionMode::Labeled) {
    result = score_dataset(visual, concepts, read_labels(o.labels), options);
  } else {
    result = score_dataset_label_free(visual, concepts, read_embeddings(o.prompts), options);
  }

  const auto table_path = (out_dir / "scores.jsonl").string();
  write_score_table(table_path, result.table);
  m.input("visual", o.visual);
  m.input("concepts", o.concepts);
  if (!o.labels.empty()) m.input("labels", o.labels);
  if (!o.prompts.empty()) m.input("prompts", o.prompts);
  m.output("scores", table_path);
  if (o.keep_margins) {
    const auto margins_path = (out_dir / "margins.jsonl").string();
    write_margins(margins_path, result.table);
    m.output("margins", margins_path);
  }
  m.note("initial_loss", result.training.initial_loss);
  m.note("final_loss", result.training.epoch_loss.back());
  m.write(out_dir / "score.manifest.json");
}

/// Resolves beta (explicit or from the built-in cutoff table) before any file is read.
inline SelectionSpec resolve_selection(const SelectCliOptions& o) {
  if (o.method != "ccs" && o.method != "random") {
    throw Error(ErrorCode::InvalidArgument, "--method must be 'ccs' or 'random'");
  }
  SelectionSpec spec;
  spec.alpha = o.alpha;
  spec.bins = o.bins;
  spec.seed = o.seed;
  spec.topup = o.topup;
  const auto mode = parse_mode(o.mode);
  if (o.beta) {
    spec.beta = *o.beta;
  } else if (o.method == "random") {
    spec.beta = 0.0;
  } else if (!o.dataset_tag.empty()) {
    spec.beta = lookup_cutoff(CutoffTable::builtin(), o.dataset_tag, o.alpha, mode);
  } else {
    throw Error(ErrorCode::UnknownConfig, "pass --beta or a --dataset-tag with a built-in cutoff rate");
  }
  if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) throw Error(ErrorCode::InvalidSpec, "--alpha must be in [0, 1)");
  if (!(spec.beta >= 0.0 && spec.beta < 1.0)) throw Error(ErrorCode::InvalidSpec, "--beta must be in [0, 1)");
  if (spec.bins < 1) throw Error(ErrorCode::InvalidSpec, "--bins must be >= 1");
  return spec;
}

inline Coreset run_select(const SelectCliOptions& o, const fs::path& out_dir) {
  const auto spec = resolve_selection(o);
  Manifest m("select");
  m.arg("--scores", abs_path(o.scores));
  if (!o.visual.empty()) m.arg("--visual", abs_path(o.visual));
  m.arg("--method", o.method);
  m.arg("--alpha", spec.alpha);
  m.arg("--beta", spec.beta);
  m.arg("--mode", to_string(parse_mode(o.mode)));
  m.arg("--bins", spec.bins);
  m.arg("--seed", spec.seed);
  m.flag(spec.topup ? "--topup" : "--no-topup");
  m.arg("--out-dir", abs_path(out_dir.string()));
  if (!o.dataset_tag.empty()) m.note("dataset_tag", o.dataset_tag);

  const auto table = read_score_table(o.scores);
  Coreset coreset;
  if (o.method == "ccs") {
    CcsTrace trace;
    coreset = ccs_select(table, spec, &trace);
    m.note("pre_topup", trace.pre_topup);
    m.note("topped_up", trace.topped_up);
    m.note("pruned", trace.pruned.size());
  } else {
    coreset = random_select(table.size(), spec.budget(table.size()), spec.seed);
    coreset.meta.spec = spec;
  }
  coreset.meta.score_hash = file_hash(o.scores);
  coreset.meta.dataset_hash = o.visual.empty() ? std::string() : file_hash(o.visual);

  const auto path = (out_dir / "coreset.txt").string();
  write_coreset(path, coreset);
  m.input("scores", o.scores);
  if (!o.visual.empty()) m.input("visual", o.visual);
  m.output("coreset", path);
  m.write(out_dir / "select.manifest.json");
  return coreset;
}

inline void run_pseudo_label(const std::string& visual_path, const std::string& prompts_path, const fs::path& out_dir) {
  Manifest m("pseudo-label");
  m.arg("--visual", abs_path(visual_path));
  m.arg("--prompts", abs_path(prompts_path));
  m.arg("--out-dir", abs_path(out_dir.string()));
  const auto labels = zero_shot_pseudo_labels(read_embeddings(visual_path), read_embeddings(prompts_path));
  const auto path = (out_dir / "pseudo_labels.cbl").string();
  write_labels(path, labels);
  m.input("visual", visual_path);
  m.input("prompts", prompts_path);
  m.output("pseudo_labels", path);
  m.write(out_dir / "pseudo-label.manifest.json");
}

inline void run_bench(const BenchCliOptions& o, const fs::path& out_dir) {
  if (o.alphas.size() != o.betas.size()) throw Error(ErrorCode::InvalidSpec, "--alphas and --betas must pair up");
  if (o.seeds.empty()) throw Error(ErrorCode::InvalidSpec, "--seeds must not be empty");
  Manifest m("bench");
  auto join = [](const auto& values) {
    std::string s;
    for (const auto& v : values) {
      if (!s.empty()) s += ',';
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
        s += fmt_real(v);
      } else {
        s += std::to_string(v);
      }
    }
    return s;
  };
  m.arg("--alphas", join(o.alphas));
  m.arg("--betas", join(o.betas));
  m.arg("--seeds", join(o.seeds));
  m.arg("--bins", o.bins);
  m.arg("--capture-beta", o.capture_beta);
  m.arg("--out-dir", abs_path(out_dir.string()));

  bench::ExperimentConfig cfg;
  cfg.synthetic = bench::noisy_label_spec();
  cfg.alphas = o.alphas;
  cfg.betas = o.betas;
  cfg.seeds = o.seeds;
  cfg.bins = o.bins;
  cfg.capture_beta = o.capture_beta;
  const auto report = bench::run_experiment(cfg);

  const auto csv = (out_dir / "bench_results.csv").string();
  const auto js = (out_dir / "bench_results.json").string();
  const auto md = (out_dir / "bench_summary.md").string();
  detail::write_file(csv, bench::results_csv(report));
  detail::write_file(js, bench::results_json(report).dump(2) + "\n");
  detail::write_file(md, bench::results_markdown(report));
  m.output("csv", csv);
  m.output("json", js);
  m.output("summary", md);
  m.write(out_dir / "bench.manifest.json");
  std::cout << bench::results_markdown(report);
}

inline void run_synth(const SynthCliOptions& o, const fs::path& out_dir) {
  Manifest m("synth");
  m.arg("--classes", o.classes);
  m.arg("--per-class", o.per_class);
  m.arg("--dim", o.dim);
  m.arg("--noise", o.noise);
  m.arg("--mislabel", o.mislabel);
  m.arg("--k", o.k);
  m.arg("--seed", o.seed);
  m.arg("--out-dir", abs_path(out_dir.string()));

  bench::SyntheticSpec spec;
  spec.num_classes = o.classes;
  spec.per_class = o.per_class;
  spec.dim = o.dim;
  spec.noise_sigma = o.noise;
  spec.mislabel_fraction = o.mislabel;
  spec.concepts_per_class = o.k;
  spec.seed = o.seed;
  const auto data = bench::generate_synthetic(spec);

  const std::map<std::string, std::string> paths{
      {"visual", (out_dir / "visual.cbe").string()},
      {"labels", (out_dir / "labels.cbl").string()},
      {"true_labels", (out_dir / "true_labels.cbl").string()},
      {"catalog", (out_dir / "catalog.json").string()},
      {"concept_names", (out_dir / "concept_names.json").string()},
      {"concept_embeddings", (out_dir / "concept_embeddings.cbe").string()},
      {"prompts", (out_dir / "prompts.cbe").string()},
  };
  write_embeddings(paths.at("visual"), data.visual);
  write_labels(paths.at("labels"), data.labels);
  write_labels(paths.at("true_labels"), data.true_labels);
  write_catalog(paths.at("catalog"), data.catalog);
  write_concept_names(paths.at("concept_names"), data.concept_embeddings.names);
  write_embeddings(paths.at("concept_embeddings"), data.concept_embeddings.matrix);
  write_embeddings(paths.at("prompts"), data.class_prompts);
  for (const auto& [role, path] : paths) m.output(role, path);
  m.write(out_dir / "synth.manifest.json");
}

// ---------------------------------------------------------------- dispatch

inline int report_error(const std::string& code, const std::string& message, int exit_code) {
  json j;
  j["error"] = code;
  j["message"] = message;
  j["exit_code"] = exit_code;
  std::cerr << j.dump() << '\n';
  return exit_code;
}

int run_cli(std::vector<std::string> args);

/// Replays the stage recorded in `manifest_path` and compares output hashes.
inline int run_rerun(const std::string& manifest_path) {
  const json manifest = detail::parse_json(detail::read_file(manifest_path), "manifest " + manifest_path);
  std::vector<std::string> args;
  try {
    args.push_back(manifest.at("command").get<std::string>());
    for (const auto& a : manifest.at("argv")) args.push_back(a.get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  // Replay overwrites the stage's manifest; keep the recorded hashes.
  const json recorded = manifest.at("outputs");
  const int status = run_cli(args);
  if (status != 0) return status;
  std::size_t mismatches = 0;
  for (const auto& [role, entry] : recorded.items()) {
    const auto path = entry.at("path").get<std::string>();
    const auto expected = entry.at("hash").get<std::string>();
    const auto actual = file_hash(path);
    const bool same = actual == expected;
    mismatches += same ? 0 : 1;
    std::cout << (same ? "identical " : "DIFFERS   ") << role << ' ' << path << '\n';
  }
  if (mismatches != 0) {
    return report_error("NonReproducible", std::to_string(mismatches) + " output(s) differ from the manifest", 3);
  }
  return 0;
}

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Concept-bottleneck coreset selection", "cbcs"};
  app.set_config("--config", "", "TOML/INI config file; one [section] per subcommand, flags override it");
  app.require_subcommand(1);
  std::string out_dir = default_out_dir();

  auto add_out_dir = [&](CLI::App* sub) {
    sub->add_option("--out-dir", out_dir, "Output directory (default: $CBCS_OUT_DIR or .)");
  };

  BottleneckOptions bo;
  ScoreCliOptions so;
  SelectCliOptions sel;
  BenchCliOptions be;
  SynthCliOptions sy;
  std::string pl_visual, pl_prompts, manifest_path;
  double beta_value = 0.0;

  auto add_bottleneck_flags = [&](CLI::App* sub, bool required) {
    auto* c = sub->add_option("--catalog", bo.catalog, "Catalog JSON {class: [concepts]}");
    auto* e = sub->add_option("--concept-embeddings", bo.concept_embeddings, "CBE1 file of concept text embeddings");
    auto* n = sub->add_option("--concept-names", bo.concept_names, "JSON array naming the rows of --concept-embeddings");
    if (required) {
      c->required();
      e->required();
      n->required();
    }
    sub->add_option("--k", bo.k, "Concepts per class (class name + k-1 attributes)")->capture_default_str();
  };
  auto add_trainer_flags = [&](CLI::App* sub) {
    sub->add_option("--mode", so.mode, "labeled | label-free")->capture_default_str();
    sub->add_option("--epochs", so.epochs, "Training epochs T")->capture_default_str();
    sub->add_option("--lr", so.lr, "SGD learning rate")->capture_default_str();
    sub->add_option("--momentum", so.momentum)->capture_default_str();
    sub->add_option("--weight-decay", so.weight_decay)->capture_default_str();
    sub->add_option("--batch-size", so.batch_size)->capture_default_str();
    sub->add_option("--likelihood", so.likelihood, "softmax | logit")->capture_default_str();
    sub->add_flag("--keep-margins", so.keep_margins, "Also write per-epoch margins");
  };
  auto add_select_flags = [&](CLI::App* sub) {
    sub->add_option("--method", sel.method, "ccs | random")->capture_default_str();
    sub->add_option("--alpha", sel.alpha, "Pruning rate (fraction removed)")->required();
    sub->add_option("--beta", beta_value, "Cutoff rate; overrides the built-in table");
    sub->add_option("--dataset-tag", sel.dataset_tag, "cifar10 | cifar100 | imagenet (built-in cutoff table)");
    sub->add_option("--bins", sel.bins)->capture_default_str();
    sub->add_flag("--topup,!--no-topup", sel.topup, "Fill the budget exactly from unselected survivors");
  };

  auto* bottleneck = app.add_subcommand("bottleneck", "Select discriminative concepts and build E_C");
  add_bottleneck_flags(bottleneck, true);
  bottleneck->add_flag("!--no-normalize", bo.normalize, "Keep concept rows unnormalized");
  add_out_dir(bottleneck);

  auto* score = app.add_subcommand("score", "Train the bottleneck layer and write AUM scores");
  score->add_option("--visual", so.visual, "CBE1 visual embeddings")->required();
  score->add_option("--concepts", so.concepts, "CBE1 bottleneck concept matrix")->required();
  score->add_option("--labels", so.labels, "CBL1 labels (labeled mode)");
  score->add_option("--prompts", so.prompts, "CBE1 class prompt embeddings (label-free mode)");
  score->add_option("--seed", so.seed)->capture_default_str();
  add_trainer_flags(score);
  score->add_flag("!--no-normalize", so.normalize, "Skip the unit-norm check");
  add_out_dir(score);

  auto* select = app.add_subcommand("select", "Select a coreset from a score table");
  select->add_option("--scores", sel.scores, "Score table (JSON lines)")->required();
  select->add_option("--visual", sel.visual, "Visual embeddings, hashed into the coreset header");
  select->add_option("--mode", sel.mode, "labeled | label-free (cutoff table lookup)")->capture_default_str();
  select->add_option("--seed", sel.seed)->capture_default_str();
  add_select_flags(select);
  add_out_dir(select);

  auto* pipeline = app.add_subcommand("pipeline", "bottleneck -> score -> select");
  add_bottleneck_flags(pipeline, true);
  pipeline->add_option("--visual", so.visual, "CBE1 visual embeddings")->required();
  pipeline->add_option("--labels", so.labels, "CBL1 labels (labeled mode)");
  pipeline->add_option("--prompts", so.prompts, "CBE1 class prompt embeddings (label-free mode)");
  pipeline->add_option("--seed", so.seed, "Seed for training and sampling")->capture_default_str();
  add_trainer_flags(pipeline);
  add_select_flags(pipeline);
  add_out_dir(pipeline);

  auto* pseudo = app.add_subcommand("pseudo-label", "Zero-shot pseudo-labels from class prompt embeddings");
  pseudo->add_option("--visual", pl_visual)->required();
  pseudo->add_option("--prompts", pl_prompts)->required();
  add_out_dir(pseudo);

  auto* benchcmd = app.add_subcommand("bench", "Synthetic CCS-vs-random comparison");
  benchcmd->add_option("--alphas", be.alphas)->delimiter(',')->capture_default_str();
  benchcmd->add_option("--betas", be.betas)->delimiter(',')->capture_default_str();
  benchcmd->add_option("--seeds", be.seeds)->delimiter(',')->capture_default_str();
  benchcmd->add_option("--bins", be.bins)->capture_default_str();
  benchcmd->add_option("--capture-beta", be.capture_beta)->capture_default_str();
  add_out_dir(benchcmd);

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in the on-disk formats");
  synth->add_option("--classes", sy.classes)->capture_default_str();
  synth->add_option("--per-class", sy.per_class)->capture_default_str();
  synth->add_option("--dim", sy.dim)->capture_default_str();
  synth->add_option("--noise", sy.noise)->capture_default_str();
  synth->add_option("--mislabel", sy.mislabel)->capture_default_str();
  synth->add_option("--k", sy.k)->capture_default_str();
  synth->add_option("--seed", sy.seed)->capture_default_str();
  add_out_dir(synth);

  auto* rerun = app.add_subcommand("rerun", "Replay a stage from its manifest and verify outputs");
  rerun->add_option("--manifest", manifest_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what(), 1);
  }

  auto beta_given = [&](CLI::App* sub) { return sub->get_option("--beta")->count() > 0; };

  try {
    const fs::path out(out_dir);
    if (*bottleneck) {
      run_bottleneck(bo, out);
    } else if (*score) {
      run_score(so, out);
    } else if (*select) {
      if (beta_given(select)) sel.beta = beta_value;
      run_select(sel, out);
    } else if (*pipeline) {
      if (beta_given(pipeline)) sel.beta = beta_value;
      sel.mode = so.mode;
      sel.seed = so.seed;
      // Validate every stage's flags before touching any file.
      validate_score_options(so);
      resolve_selection(sel);
      if (bo.k < 1) throw Error(ErrorCode::InvalidK, "--k must be >= 1");

      run_bottleneck(bo, out);
      so.concepts = (out / "bottleneck.cbe").string();
      run_score(so, out);
      sel.scores = (out / "scores.jsonl").string();
      sel.visual = so.visual;
      const auto coreset = run_select(sel, out);

      Manifest m("pipeline");
      m.arg("--catalog", abs_path(bo.catalog));
      m.arg("--concept-embeddings", abs_path(bo.concept_embeddings));
      m.arg("--concept-names", abs_path(bo.concept_names));
      m.arg("--k", bo.k);
      m.arg("--visual", abs_path(so.visual));
      if (!so.labels.empty()) m.arg("--labels", abs_path(so.labels));
      if (!so.prompts.empty()) m.arg("--prompts", abs_path(so.prompts));
      m.arg("--seed", so.seed);
      m.arg("--mode", to_string(parse_mode(so.mode)));
      m.arg("--epochs", so.epochs);
      m.arg("--lr", so.lr);
      m.arg("--momentum", so.momentum);
      m.arg("--weight-decay", so.weight_decay);
      m.arg("--batch-size", so.batch_size);
      m.arg("--likelihood", so.likelihood);
      if (so.keep_margins) m.flag("--keep-margins");
      m.arg("--method", sel.method);
      m.arg("--alpha", coreset.meta.spec.alpha);
      m.arg("--beta", coreset.meta.spec.beta);
      m.arg("--bins", coreset.meta.spec.bins);
      m.flag(coreset.meta.spec.topup ? "--topup" : "--no-topup");
      m.arg("--out-dir", abs_path(out.string()));
      m.note("stages", json::array({"bottleneck.manifest.json", "score.manifest.json", "select.manifest.json"}));
      m.note("coreset_size", coreset.size());
      m.output("selection", (out / "bottleneck.json").string());
      m.output("concept_matrix", (out / "bottleneck.cbe").string());
      m.output("scores", (out / "scores.jsonl").string());
      m.output("coreset", (out / "coreset.txt").string());
      m.write(out / "pipeline.manifest.json");
    } else if (*pseudo) {
      run_pseudo_label(pl_visual, pl_prompts, out);
    } else if (*benchcmd) {
      run_bench(be, out);
    } else if (*synth) {
      run_synth(sy, out);
    } else if (*rerun) {
      return run_rerun(manifest_path);
    }
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.code())), e.what(), static_cast<int>(e.category()));
  } catch (const fs::filesystem_error& e) {
    return report_error("IoFailure", e.what(), 2);
  } catch (const json::exception& e) {
    return report_error("ParseError", e.what(), 2);
  }
  return 0;
}

}  // namespace cbcs::cli
