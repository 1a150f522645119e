#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cbcs/error.hpp"

namespace cbcs {

/// Dense row-major matrix used for similarities, weights and gradients.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::DimensionMismatch, "matrix data length != rows*cols");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline constexpr double kNormTolerance = 1e-5;

/**
 * Encoder outputs: one real32 row per sample (or per concept).
 *
 * Immutable once built. Construction enforces the container invariants:
 * payload length, finiteness, and unit row norms when `normalized` is set.
 */
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<float> data, bool normalized = false)
      : rows_(rows), cols_(cols), normalized_(normalized), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::TruncatedPayload, "embedding payload has " + std::to_string(data_.size()) +
                                                   " values, expected " + std::to_string(rows_ * cols_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(ErrorCode::NonFiniteValue, "non-finite value at flat offset " + std::to_string(i));
      }
    }
    if (normalized_) {
      for (std::size_t r = 0; r < rows_; ++r) {
        const double norm = row_norm(r);
        if (std::abs(norm - 1.0) > kNormTolerance) {
          throw Error(ErrorCode::NotNormalized,
                      "row " + std::to_string(r) + " has norm " + std::to_string(norm));
        }
      }
    }
  }

  static EmbeddingMatrix from_rows(const std::vector<std::vector<float>>& rows, bool normalized = false) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    std::vector<float> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw Error(ErrorCode::DimensionMismatch, "ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return EmbeddingMatrix(rows.size(), cols, std::move(flat), normalized);
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool normalized() const noexcept { return normalized_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  double row_norm(std::size_t r) const noexcept {
    double acc = 0.0;
    for (float v : row(r)) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
  }

  /// Copy with every row scaled to unit L2 norm. Zero rows are rejected.
  EmbeddingMatrix normalized_copy() const {
    std::vector<float> out(data_.size());
    for (std::size_t r = 0; r < rows_; ++r) {
      const double norm = row_norm(r);
      if (norm == 0.0) throw Error(ErrorCode::NotNormalized, "cannot normalize zero row " + std::to_string(r));
      for (std::size_t c = 0; c < cols_; ++c) {
        out[r * cols_ + c] = static_cast<float>(data_[r * cols_ + c] / norm);
      }
    }
    return EmbeddingMatrix(rows_, cols_, std::move(out), true);
  }

  /// Rows picked by index, in the order given.
  EmbeddingMatrix select_rows(std::span<const std::size_t> indices) const {
    std::vector<float> out;
    out.reserve(indices.size() * cols_);
    for (std::size_t i : indices) {
      if (i >= rows_) throw Error(ErrorCode::InvalidArgument, "row index out of range");
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
    return EmbeddingMatrix(indices.size(), cols_, std::move(out), normalized_);
  }

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  bool normalized_ = false;
  std::vector<float> data_;
};

/// Class ids in [0, num_classes).
struct LabelVector {
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }

  void validate() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw Error(ErrorCode::OutOfRangeLabel, "label " + std::to_string(labels[i]) + " at position " +
                                                    std::to_string(i) + " >= class count " +
                                                    std::to_string(num_classes));
      }
    }
  }

  LabelVector select(std::span<const std::size_t> indices) const {
    LabelVector out{{}, num_classes};
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
  }

  bool operator==(const LabelVector&) const = default;
};

struct ScoreEntry {
  std::size_t index = 0;
  std::uint32_t label = 0;
  std::optional<std::uint32_t> pseudo_label;
  double aum = 0.0;
  std::optional<std::vector<double>> margins;

  bool operator==(const ScoreEntry&) const = default;
};

struct ScoreTable {
  std::vector<ScoreEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }

  /// Checks index uniqueness/range and aum = mean(margins) where margins exist.
  void validate(std::optional<std::size_t> n = std::nullopt) const {
    const std::size_t bound = n.value_or(entries.size());
    std::unordered_set<std::size_t> seen;
    for (const auto& e : entries) {
      if (e.index >= bound) {
        throw Error(ErrorCode::InvalidArgument, "score index " + std::to_string(e.index) + " out of range");
      }
      if (!seen.insert(e.index).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate score index " + std::to_string(e.index));
      }
      if (!std::isfinite(e.aum)) throw Error(ErrorCode::NonFiniteValue, "non-finite aum");
      if (e.margins) {
        if (e.margins->empty()) throw Error(ErrorCode::EmptyTrajectory, "empty margin list");
        double sum = 0.0;
        for (double m : *e.margins) sum += m;
        if (std::abs(sum / static_cast<double>(e.margins->size()) - e.aum) > 1e-6) {
          throw Error(ErrorCode::InvalidArgument,
                      "aum disagrees with margin mean for index " + std::to_string(e.index));
        }
      }
    }
  }

  bool operator==(const ScoreTable&) const = default;
};

/// Coverage-centric selection parameters. alpha is the fraction REMOVED.
struct SelectionSpec {
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t bins = 50;
  std::uint64_t seed = 0;
  bool topup = true;

  /// Coreset size m = round(n * (1 - alpha)).
  std::size_t budget(std::size_t n) const noexcept {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - alpha)));
  }

  /// Number of hardest samples removed before binning: floor(n * beta).
  std::size_t cutoff_count(std::size_t n) const noexcept {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * beta));
  }

  bool operator==(const SelectionSpec&) const = default;
};

struct CoresetMeta {
  std::string method;  // "ccs" or "random"
  SelectionSpec spec;
  std::size_t pool_size = 0;
  std::string dataset_hash;
  std::string score_hash;

  bool operator==(const CoresetMeta&) const = default;
};

struct Coreset {
  std::vector<std::size_t> indices;  // ascending, unique
  CoresetMeta meta;

  std::size_t size() const noexcept { return indices.size(); }
  bool operator==(const Coreset&) const = default;
};

}  // namespace cbcs
