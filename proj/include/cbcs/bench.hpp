#pragma once

// Desk-scale harness: synthetic embedding datasets with injected label noise,
// linear-probe evaluation of coresets, and a CCS-vs-random comparison grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cbcs/bottleneck.hpp"
#include "cbcs/error.hpp"
#include "cbcs/rng.hpp"
#include "cbcs/sampler.hpp"
#include "cbcs/scorer.hpp"
#include "cbcs/tensor_io.hpp"
#include "cbcs/types.hpp"

namespace cbcs::bench {

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  double separation = 1.0;       // length of each class center before noise
  double noise_sigma = 0.35;     // per-coordinate visual noise
  double mislabel_fraction = 0.1;
  std::size_t concepts_per_class = 5;  // k: class name + k-1 attributes
  std::size_t shared_per_class = 2;    // decoy attributes shared with the next class
  double concept_jitter = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw Error(ErrorCode::InvalidSpec, "need at least two classes");
    if (per_class < 1 || dim < 1 || concepts_per_class < 1) throw Error(ErrorCode::InvalidSpec, "counts must be >= 1");
    if (!(mislabel_fraction >= 0.0 && mislabel_fraction < 1.0)) {
      throw Error(ErrorCode::InvalidSpec, "mislabel fraction must be in [0, 1)");
    }
    if (!(noise_sigma >= 0.0) || !(concept_jitter >= 0.0) || !(separation > 0.0)) {
      throw Error(ErrorCode::InvalidSpec, "noise, jitter must be >= 0 and separation > 0");
    }
  }
};

/// N=10, 200 per class, d=64, 10% flipped labels; overlapping classes.
inline SyntheticSpec noisy_label_spec() { return SyntheticSpec{}; }

/// Clean labels and tight classes: zero-shot prompts recover the true class.
inline SyntheticSpec clean_label_spec() {
  SyntheticSpec spec;
  spec.mislabel_fraction = 0.0;
  spec.noise_sigma = 0.15;
  return spec;
}

/// Well separated classes with 10% flipped labels.
inline SyntheticSpec separable_noisy_spec() {
  SyntheticSpec spec;
  spec.noise_sigma = 0.1;
  return spec;
}

struct SyntheticData {
  EmbeddingMatrix visual;        // n x d, unit rows, class-major order
  LabelVector labels;            // observed (possibly flipped) labels
  LabelVector true_labels;
  std::vector<bool> flipped;     // flipped[i] iff labels[i] != true_labels[i]
  ConceptCatalog catalog;
  ConceptEmbeddings concept_embeddings;
  EmbeddingMatrix class_prompts;  // row c embeds "a photo of a <class c>"
};

inline std::string class_name(std::size_t c) {
  std::string digits = std::to_string(c);
  return "class_" + std::string(digits.size() < 2 ? 2 - digits.size() : 0, '0') + digits;
}

namespace detail {

inline std::vector<float> unit_row(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline std::vector<float> jittered(std::span<const double> base, double sigma, Rng& rng) {
  std::vector<double> v(base.begin(), base.end());
  for (double& x : v) x += sigma * rng.normal();
  return unit_row(v);
}

}  // namespace detail

/**
 * Class centers are uniform on the unit sphere scaled by `separation`. Visual
 * rows are center + N(0, sigma^2 I), then normalized. Every concept (class
 * name, unique attributes, prompts) embeds as its class center plus jitter;
 * a shared decoy attribute sits between two neighbouring classes' centers.
 * A mislabel_fraction of samples gets a uniformly drawn wrong label.
 */
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t N = spec.num_classes;
  const std::size_t d = spec.dim;
  const std::size_t n = N * spec.per_class;
  Rng rng(spec.seed);

  std::vector<std::vector<double>> centers(N, std::vector<double>(d));
  for (auto& c : centers) {
    double norm = 0.0;
    for (double& x : c) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : c) x *= spec.separation / norm;
  }

  SyntheticData out;
  std::vector<float> visual;
  visual.reserve(n * d);
  out.true_labels.num_classes = static_cast<std::uint32_t>(N);
  for (std::size_t c = 0; c < N; ++c) {
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      auto row = detail::jittered(centers[c], spec.noise_sigma, rng);
      visual.insert(visual.end(), row.begin(), row.end());
      out.true_labels.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  out.visual = EmbeddingMatrix(n, d, std::move(visual), true);

  out.labels = out.true_labels;
  out.flipped.assign(n, false);
  const auto flips = static_cast<std::size_t>(std::llround(spec.mislabel_fraction * static_cast<double>(n)));
  for (std::size_t i : rng.sample_without_replacement(n, flips)) {
    const auto shift = 1 + rng.uniform_index(N - 1);
    out.labels.labels[i] = static_cast<std::uint32_t>((out.true_labels.labels[i] + shift) % N);
    out.flipped[i] = true;
  }

  std::vector<std::vector<float>> concept_rows;
  auto add_concept = [&](std::string name, std::span<const double> base) {
    out.concept_embeddings.names.push_back(std::move(name));
    concept_rows.push_back(detail::jittered(base, spec.concept_jitter, rng));
  };
  for (std::size_t c = 0; c < N; ++c) {
    out.catalog.classes.push_back(class_name(c));
    std::vector<std::string> list;
    for (std::size_t s = 0; s < spec.shared_per_class; ++s) {
      list.push_back("shared trait " + std::to_string(c) + "." + std::to_string(s));
    }
    for (std::size_t a = 1; a < spec.concepts_per_class; ++a) {
      list.push_back(class_name(c) + " attribute " + std::to_string(a));
    }
    out.catalog.per_class_concepts.push_back(std::move(list));
  }
  // Each shared trait is listed by class c and by class c+1.
  for (std::size_t c = 0; c < N; ++c) {
    const std::size_t next = (c + 1) % N;
    for (std::size_t s = 0; s < spec.shared_per_class; ++s) {
      out.catalog.per_class_concepts[next].push_back("shared trait " + std::to_string(c) + "." + std::to_string(s));
    }
  }
  for (std::size_t c = 0; c < N; ++c) {
    add_concept(class_name(c), centers[c]);
    for (std::size_t a = 1; a < spec.concepts_per_class; ++a) {
      add_concept(class_name(c) + " attribute " + std::to_string(a), centers[c]);
    }
    std::vector<double> mid(d);
    const std::size_t next = (c + 1) % N;
    for (std::size_t k = 0; k < d; ++k) mid[k] = 0.5 * (centers[c][k] + centers[next][k]);
    for (std::size_t s = 0; s < spec.shared_per_class; ++s) {
      add_concept("shared trait " + std::to_string(c) + "." + std::to_string(s), mid);
    }
  }
  out.concept_embeddings.matrix = EmbeddingMatrix::from_rows(concept_rows, true);

  std::vector<std::vector<float>> prompt_rows;
  for (std::size_t c = 0; c < N; ++c) prompt_rows.push_back(detail::jittered(centers[c], spec.concept_jitter, rng));
  out.class_prompts = EmbeddingMatrix::from_rows(prompt_rows, true);
  return out;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per class, round(count * test_fraction) members go to test. Both lists ascending.
inline Split stratified_split(const LabelVector& labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error(ErrorCode::InvalidSpec, "bad test fraction");
  std::vector<std::vector<std::size_t>> members(labels.num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels.labels[i]].push_back(i);
  Rng rng(seed);
  Split out;
  for (auto& m : members) {
    rng.shuffle(std::span<std::size_t>(m));
    const auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(m.size())));
    out.test.insert(out.test.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(take));
    out.train.insert(out.train.end(), m.begin() + static_cast<std::ptrdiff_t>(take), m.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline Matrix<double> to_features(const EmbeddingMatrix& m) {
  Matrix<double> out(m.rows(), m.cols());
  const auto src = m.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  return out;
}

/// Probe settings for downstream evaluation (distinct from the scoring trainer).
inline TrainerConfig default_eval_config() {
  TrainerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 5e-4;
  cfg.epochs = 100;
  cfg.batch_size = 32;
  cfg.seed = 0;
  return cfg;
}

/**
 * Trains the linear probe on the coreset rows of `train_visual` (with their
 * observed labels) and returns accuracy on the held-out rows.
 */
inline double evaluate_coreset(const EmbeddingMatrix& train_visual, const LabelVector& train_labels,
                               const Coreset& coreset, const EmbeddingMatrix& test_visual,
                               const LabelVector& test_labels, const TrainerConfig& eval_cfg) {
  if (coreset.indices.empty()) throw Error(ErrorCode::EmptyCoreset, "cannot train on an empty coreset");
  if (test_visual.rows() == 0) throw Error(ErrorCode::EmptyDataset, "empty held-out set");
  const auto features = to_features(train_visual.select_rows(coreset.indices));
  const auto labels = train_labels.select(coreset.indices);
  auto cfg = eval_cfg;
  cfg.keep_snapshots = false;
  const auto trained = train_bottleneck(features, labels, cfg);
  const auto predicted = predict(to_features(test_visual), trained.layer.weights);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test_labels.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace detail {

inline std::vector<std::size_t> hardest(const ScoreTable& table, std::size_t count) {
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = table.entries[a];
    const auto& eb = table.entries[b];
    if (ea.aum != eb.aum) return ea.aum < eb.aum;
    return ea.index < eb.index;
  });
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < std::min(count, order.size()); ++p) out.push_back(table.entries[order[p]].index);
  return out;
}

}  // namespace detail

/// Fraction of flipped samples among the floor(n * beta) lowest-AUM samples. 0 when nothing was flipped.
inline double mislabeled_capture_rate(const ScoreTable& table, const std::vector<bool>& flipped, double beta) {
  const std::size_t total = static_cast<std::size_t>(std::count(flipped.begin(), flipped.end(), true));
  if (total == 0) return 0.0;
  const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(table.size()) * beta));
  std::size_t caught = 0;
  for (std::size_t idx : detail::hardest(table, count)) caught += flipped.at(idx) ? 1 : 0;
  return static_cast<double>(caught) / static_cast<double>(total);
}

/// P(aum_clean > aum_flipped) with ties counted half (Mann-Whitney AUC).
inline double separation_auc(const ScoreTable& table, const std::vector<bool>& flipped) {
  std::vector<std::pair<double, bool>> items;
  for (const auto& e : table.entries) items.emplace_back(e.aum, !flipped.at(e.index));
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;  // ranks of clean samples, average over ties
  std::size_t clean = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].second) {
        rank_sum += avg_rank;
        ++clean;
      }
    }
    i = j;
  }
  const std::size_t dirty = items.size() - clean;
  if (clean == 0 || dirty == 0) return 0.5;
  const double u = rank_sum - 0.5 * static_cast<double>(clean) * static_cast<double>(clean + 1);
  return u / (static_cast<double>(clean) * static_cast<double>(dirty));
}

// ---------------------------------------------------------------- experiments

struct PreparedSplit {
  SyntheticData data;
  Split split;
  EmbeddingMatrix train_visual;
  EmbeddingMatrix test_visual;
  LabelVector train_labels;       // observed
  LabelVector test_labels;        // true
  std::vector<bool> train_flipped;
  Bottleneck bottleneck;
};

inline PreparedSplit prepare(const SyntheticSpec& spec, double test_fraction = 0.2) {
  PreparedSplit p;
  p.data = generate_synthetic(spec);
  p.split = stratified_split(p.data.true_labels, test_fraction, derive_seed(spec.seed, 1));
  p.train_visual = p.data.visual.select_rows(p.split.train);
  p.test_visual = p.data.visual.select_rows(p.split.test);
  p.train_labels = p.data.labels.select(p.split.train);
  p.test_labels = p.data.true_labels.select(p.split.test);
  for (std::size_t i : p.split.train) p.train_flipped.push_back(p.data.flipped[i]);
  const auto selection = select_discriminative(p.data.catalog, spec.concepts_per_class);
  p.bottleneck = assemble_bottleneck(selection, p.data.concept_embeddings);
  return p;
}

struct ExperimentConfig {
  SyntheticSpec synthetic;
  std::vector<double> alphas{0.9};
  std::vector<double> betas{0.3};  // paired with alphas
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t bins = 50;
  double capture_beta = 0.3;
  TrainerConfig scorer;  // defaults match the scoring stage
  TrainerConfig eval = default_eval_config();
};

struct ResultRow {
  std::string method;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct SeedDiagnostics {
  std::uint64_t seed = 0;
  double capture_rate = 0.0;
  double separation_auc = 0.0;
  double full_accuracy = 0.0;
};

struct ExperimentReport {
  std::vector<ResultRow> rows;
  std::vector<SeedDiagnostics> diagnostics;

  struct Summary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
  };

  /// Mean and sample standard deviation of accuracy for one (method, alpha).
  Summary summarize(const std::string& method, double alpha) const {
    std::vector<double> values;
    for (const auto& r : rows) {
      if (r.method == method && std::abs(r.alpha - alpha) < 1e-12) values.push_back(r.accuracy);
    }
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
  }
};

/// For each seed: generate, split, score the train part, then compare CCS and random coresets per alpha.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.alphas.size() != cfg.betas.size()) throw Error(ErrorCode::InvalidSpec, "alphas and betas must pair up");
  ExperimentReport report;
  for (std::uint64_t seed : cfg.seeds) {
    auto spec = cfg.synthetic;
    spec.seed = seed;
    const auto p = prepare(spec);

    ScoreOptions options;
    options.trainer = cfg.scorer;
    options.trainer.seed = derive_seed(seed, 2);
    const auto scored = score_dataset(p.train_visual, p.bottleneck.concept_matrix, p.train_labels, options);

    SeedDiagnostics diag;
    diag.seed = seed;
    diag.capture_rate = mislabeled_capture_rate(scored.table, p.train_flipped, cfg.capture_beta);
    diag.separation_auc = separation_auc(scored.table, p.train_flipped);

    auto eval = cfg.eval;
    eval.seed = derive_seed(seed, 3);
    Coreset full;
    full.indices.resize(p.train_visual.rows());
    std::iota(full.indices.begin(), full.indices.end(), std::size_t{0});
    diag.full_accuracy = evaluate_coreset(p.train_visual, p.train_labels, full, p.test_visual, p.test_labels, eval);
    report.diagnostics.push_back(diag);

    for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
      SelectionSpec sel;
      sel.alpha = cfg.alphas[a];
      sel.beta = cfg.betas[a];
      sel.bins = cfg.bins;
      sel.seed = derive_seed(seed, 4);
      const auto ccs = ccs_select(scored.table, sel);
      const auto rnd = random_select(p.train_visual.rows(), sel.budget(p.train_visual.rows()), derive_seed(seed, 5));
      report.rows.push_back({"concept-ccs", sel.alpha, sel.beta, seed,
                             evaluate_coreset(p.train_visual, p.train_labels, ccs, p.test_visual, p.test_labels, eval)});
      report.rows.push_back({"random", sel.alpha, 0.0, seed,
                             evaluate_coreset(p.train_visual, p.train_labels, rnd, p.test_visual, p.test_labels, eval)});
    }
  }
  return report;
}

inline std::string results_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "method,alpha,beta,seed,accuracy\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.alpha << ',' << r.beta << ',' << r.seed << ',' << r.accuracy << '\n';
  }
  return out.str();
}

inline json results_json(const ExperimentReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method}, {"alpha", r.alpha}, {"beta", r.beta}, {"seed", r.seed}, {"accuracy", r.accuracy}});
  }
  json diags = json::array();
  for (const auto& d : report.diagnostics) {
    diags.push_back({{"seed", d.seed},
                     {"capture_rate", d.capture_rate},
                     {"separation_auc", d.separation_auc},
                     {"full_accuracy", d.full_accuracy}});
  }
  return {{"rows", rows}, {"diagnostics", diags}};
}

inline std::string results_markdown(const ExperimentReport& report) {
  std::vector<double> alphas;
  std::vector<std::string> methods;
  for (const auto& r : report.rows) {
    if (std::find(alphas.begin(), alphas.end(), r.alpha) == alphas.end()) alphas.push_back(r.alpha);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "| method |";
  for (double a : alphas) out << " alpha=" << a * 100.0 << "% |";
  out << "\n|---|";
  for (std::size_t i = 0; i < alphas.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& m : methods) {
    out << "| " << m << " |";
    for (double a : alphas) {
      const auto s = report.summarize(m, a);
      out << ' ' << 100.0 * s.mean << " ± " << 100.0 * s.stddev << " |";
    }
    out << '\n';
  }
  out << "\n| seed | capture rate | separation AUC | full-data accuracy |\n|---|---|---|---|\n";
  for (const auto& d : report.diagnostics) {
    out << "| " << d.seed << " | " << d.capture_rate << " | " << d.separation_auc << " | "
        << 100.0 * d.full_accuracy << " |\n";
  }
  return out.str();
}

}  // namespace cbcs::bench
