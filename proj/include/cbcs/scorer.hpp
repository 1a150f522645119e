#pragma once

// Concept-similarity features, the linear bottleneck layer trained with
// mini-batch SGD on cross-entropy, per-epoch margins and AUM scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbcs/error.hpp"
#include "cbcs/rng.hpp"
#include "cbcs/types.hpp"

namespace cbcs {

using SimilarityMatrix = Matrix<double>;

enum class Likelihood { Softmax, Logit };

inline std::string to_string(Likelihood l) { return l == Likelihood::Softmax ? "softmax" : "logit"; }

inline Likelihood parse_likelihood(const std::string& s) {
  if (s == "softmax") return Likelihood::Softmax;
  if (s == "logit") return Likelihood::Logit;
  throw Error(ErrorCode::InvalidArgument, "likelihood must be 'softmax' or 'logit', got '" + s + "'");
}

struct TrainerConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  Likelihood likelihood = Likelihood::Softmax;
  bool keep_snapshots = false;  // store W after every epoch
};

struct BottleneckLayer {
  Matrix<double> weights;  // num_classes x num_concepts
  TrainerConfig config;
};

/// margins(i, t) is sample i's margin after epoch t.
struct MarginTrajectory {
  Matrix<double> margins;

  std::size_t samples() const noexcept { return margins.rows(); }
  std::size_t epochs() const noexcept { return margins.cols(); }
};

struct TrainResult {
  BottleneckLayer layer;
  MarginTrajectory trajectory;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;          // full-data mean CE after each epoch
  std::vector<Matrix<double>> snapshots;  // W after each epoch, when requested
};

// ---------------------------------------------------------------- features

/// out(i, j) = <visual_i, concepts_j>.
inline SimilarityMatrix concept_similarity(const EmbeddingMatrix& visual, const EmbeddingMatrix& concepts,
                                           bool require_normalized = true) {
  if (visual.cols() != concepts.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "visual dim " + std::to_string(visual.cols()) +
                                                  " != concept dim " + std::to_string(concepts.cols()));
  }
  if (require_normalized) {
    for (const auto* m : {&visual, &concepts}) {
      for (std::size_t r = 0; r < m->rows(); ++r) {
        if (std::abs(m->row_norm(r) - 1.0) > kNormTolerance) {
          throw Error(ErrorCode::NotNormalized, "row " + std::to_string(r) + " is not unit norm");
        }
      }
    }
  }
  SimilarityMatrix out(visual.rows(), concepts.rows());
  for (std::size_t i = 0; i < visual.rows(); ++i) {
    const auto v = visual.row(i);
    for (std::size_t j = 0; j < concepts.rows(); ++j) {
      const auto c = concepts.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) acc += static_cast<double>(v[k]) * c[k];
      out(i, j) = acc;
    }
  }
  return out;
}

/// argmax_j <visual_i, prompt_j>; ties go to the smaller class index.
inline LabelVector zero_shot_pseudo_labels(const EmbeddingMatrix& visual, const EmbeddingMatrix& prompts) {
  if (visual.cols() != prompts.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "visual dim != prompt dim");
  }
  if (prompts.rows() == 0) throw Error(ErrorCode::InvalidArgument, "no class prompts");
  LabelVector out{std::vector<std::uint32_t>(visual.rows()), static_cast<std::uint32_t>(prompts.rows())};
  for (std::size_t i = 0; i < visual.rows(); ++i) {
    const auto v = visual.row(i);
    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t j = 0; j < prompts.rows(); ++j) {
      const auto p = prompts.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) acc += static_cast<double>(v[k]) * p[k];
      if (acc > best) {
        best = acc;
        arg = static_cast<std::uint32_t>(j);
      }
    }
    out.labels[i] = arg;
  }
  return out;
}

// ---------------------------------------------------------------- layer math

/// logits = W * features (one row of the similarity matrix).
inline void compute_logits(std::span<const double> features, const Matrix<double>& weights,
                           std::span<double> logits) {
  for (std::size_t c = 0; c < weights.rows(); ++c) {
    const auto w = weights.row(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < features.size(); ++j) acc += w[j] * features[j];
    logits[c] = acc;
  }
}

/// In-place numerically stable softmax.
inline void softmax_inplace(std::span<double> values) {
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double& v : values) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : values) v /= total;
}

/// h_y - max_{y' != y} h_{y'}.
inline double margin_of(std::span<const double> likelihoods, std::uint32_t label) {
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < likelihoods.size(); ++c) {
    if (c != label) other = std::max(other, likelihoods[c]);
  }
  return likelihoods[label] - other;
}

namespace detail {

inline void check_supervision(const SimilarityMatrix& sim, const LabelVector& labels,
                              const Matrix<double>& weights) {
  if (labels.size() != sim.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "label count " + std::to_string(labels.size()) +
                                                  " != sample count " + std::to_string(sim.rows()));
  }
  if (weights.rows() != labels.num_classes || weights.cols() != sim.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "weight shape does not match classes x concepts");
  }
  labels.validate();
}

}  // namespace detail

/// Mean cross-entropy -log softmax(W s_i)_{y_i} over `indices` (all rows when empty).
inline double cross_entropy_loss(const SimilarityMatrix& sim, const LabelVector& labels,
                                 const Matrix<double>& weights, std::span<const std::size_t> indices = {}) {
  detail::check_supervision(sim, labels, weights);
  std::vector<double> logits(weights.rows());
  const std::size_t count = indices.empty() ? sim.rows() : indices.size();
  double total = 0.0;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t i = indices.empty() ? b : indices[b];
    compute_logits(sim.row(i), weights, logits);
    const double peak = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - peak);
    total += peak + std::log(z) - logits[labels.labels[i]];
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

/// d(mean CE)/dW over `indices` (all rows when empty): mean of (p_i - onehot(y_i)) s_i^T.
inline Matrix<double> cross_entropy_gradient(const SimilarityMatrix& sim, const LabelVector& labels,
                                             const Matrix<double>& weights,
                                             std::span<const std::size_t> indices = {}) {
  detail::check_supervision(sim, labels, weights);
  Matrix<double> grad(weights.rows(), weights.cols());
  std::vector<double> probs(weights.rows());
  const std::size_t count = indices.empty() ? sim.rows() : indices.size();
  if (count == 0) return grad;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t i = indices.empty() ? b : indices[b];
    const auto s = sim.row(i);
    compute_logits(s, weights, probs);
    softmax_inplace(probs);
    probs[labels.labels[i]] -= 1.0;
    for (std::size_t c = 0; c < grad.rows(); ++c) {
      auto g = grad.row(c);
      const double coeff = probs[c];
      for (std::size_t j = 0; j < s.size(); ++j) g[j] += coeff * s[j];
    }
  }
  const double scale = 1.0 / static_cast<double>(count);
  for (double& g : grad.data()) g *= scale;
  return grad;
}

/// Margin of every sample under `weights`, using softmax probabilities or raw logits.
inline std::vector<double> sample_margins(const SimilarityMatrix& sim, const LabelVector& labels,
                                          const Matrix<double>& weights, Likelihood likelihood) {
  detail::check_supervision(sim, labels, weights);
  if (labels.num_classes < 2) throw Error(ErrorCode::InvalidArgument, "margins need at least two classes");
  std::vector<double> out(sim.rows());
  std::vector<double> h(weights.rows());
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    compute_logits(sim.row(i), weights, h);
    if (likelihood == Likelihood::Softmax) softmax_inplace(h);
    out[i] = margin_of(h, labels.labels[i]);
  }
  return out;
}

/// argmax_c (W s_i)_c, ties to the smaller class.
inline std::vector<std::uint32_t> predict(const SimilarityMatrix& features, const Matrix<double>& weights) {
  if (weights.cols() != features.cols()) throw Error(ErrorCode::DimensionMismatch, "feature dim mismatch");
  std::vector<std::uint32_t> out(features.rows());
  std::vector<double> logits(weights.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    compute_logits(features.row(i), weights, logits);
    out[i] = static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

// ---------------------------------------------------------------- training

/**
 * Trains W (zero-initialized) with mini-batch SGD, momentum and coupled
 * weight decay:
 *
 *   g = grad CE(batch) + weight_decay * W
 *   v = momentum * v + g
 *   W = W - learning_rate * v
 *
 * Each epoch visits a fresh seeded permutation in batches of batch_size (the
 * last partial batch is kept). After each epoch one full pass records every
 * sample's margin under the current W.
 */
inline TrainResult train_bottleneck(const SimilarityMatrix& sim, const LabelVector& labels,
                                    const TrainerConfig& cfg) {
  if (sim.rows() == 0) throw Error(ErrorCode::EmptyDataset, "no samples to train on");
  if (cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (cfg.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.momentum >= 0.0) || !(cfg.weight_decay >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "learning rate, momentum and weight decay must be >= 0");
  }

  const std::size_t n = sim.rows();
  TrainResult result;
  result.layer.config = cfg;
  auto& weights = result.layer.weights;
  weights = Matrix<double>(labels.num_classes, sim.cols());
  Matrix<double> velocity(weights.rows(), weights.cols());
  result.trajectory.margins = Matrix<double>(n, cfg.epochs);
  result.initial_loss = cross_entropy_loss(sim, labels, weights);
  result.epoch_loss.reserve(cfg.epochs);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const auto batch = std::span<const std::size_t>(order).subspan(start, stop - start);
      const auto grad = cross_entropy_gradient(sim, labels, weights, batch);
      auto w = weights.data();
      auto v = velocity.data();
      const auto g = grad.data();
      for (std::size_t p = 0; p < w.size(); ++p) {
        v[p] = cfg.momentum * v[p] + g[p] + cfg.weight_decay * w[p];
        w[p] -= cfg.learning_rate * v[p];
      }
    }

    const double loss = cross_entropy_loss(sim, labels, weights);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch + 1));
    }
    result.epoch_loss.push_back(loss);
    const auto margins = sample_margins(sim, labels, weights, cfg.likelihood);
    for (std::size_t i = 0; i < n; ++i) result.trajectory.margins(i, epoch) = margins[i];
    if (cfg.keep_snapshots) result.snapshots.push_back(weights);
  }
  return result;
}

// ---------------------------------------------------------------- AUM

inline double compute_aum(std::span<const double> margins) {
  if (margins.empty()) throw Error(ErrorCode::EmptyTrajectory, "no margins to average");
  double sum = 0.0;
  for (double m : margins) sum += m;
  return sum / static_cast<double>(margins.size());
}

inline std::vector<double> compute_aum(const MarginTrajectory& trajectory) {
  if (trajectory.epochs() == 0) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no epochs");
  std::vector<double> out(trajectory.samples());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = compute_aum(trajectory.margins.row(i));
  return out;
}

// ---------------------------------------------------------------- scoring

struct ScoreOptions {
  TrainerConfig trainer;
  bool keep_margins = false;        // attach full trajectories to the table
  bool require_normalized = true;   // reject non-unit rows in the similarity step
};

struct ScoringResult {
  ScoreTable table;
  TrainResult training;
  std::optional<LabelVector> pseudo_labels;
};

namespace detail {

inline ScoringResult score_with(const SimilarityMatrix& sim, const LabelVector& targets, bool label_free,
                                const ScoreOptions& options) {
  ScoringResult out;
  out.training = train_bottleneck(sim, targets, options.trainer);
  const auto aum = compute_aum(out.training.trajectory);
  out.table.entries.reserve(sim.rows());
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    ScoreEntry e;
    e.index = i;
    e.label = targets.labels[i];
    if (label_free) e.pseudo_label = targets.labels[i];
    e.aum = aum[i];
    if (options.keep_margins) {
      const auto row = out.training.trajectory.margins.row(i);
      e.margins = std::vector<double>(row.begin(), row.end());
    }
    out.table.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

/// Labeled mode: margins are measured against the given labels.
inline ScoringResult score_dataset(const EmbeddingMatrix& visual, const EmbeddingMatrix& concepts,
                                   const LabelVector& labels, const ScoreOptions& options = {}) {
  if (labels.size() != visual.rows()) throw Error(ErrorCode::DimensionMismatch, "label count != visual rows");
  const auto sim = concept_similarity(visual, concepts, options.require_normalized);
  return detail::score_with(sim, labels, false, options);
}

/// Label-free mode: zero-shot pseudo-labels from class prompt embeddings replace labels.
/// Entries carry the pseudo-label in both `label` and `pseudo_label`.
inline ScoringResult score_dataset_label_free(const EmbeddingMatrix& visual, const EmbeddingMatrix& concepts,
                                              const EmbeddingMatrix& class_prompts,
                                              const ScoreOptions& options = {}) {
  auto pseudo = zero_shot_pseudo_labels(visual, class_prompts);
  const auto sim = concept_similarity(visual, concepts, options.require_normalized);
  auto out = detail::score_with(sim, pseudo, true, options);
  out.pseudo_labels = std::move(pseudo);
  return out;
}

}  // namespace cbcs
