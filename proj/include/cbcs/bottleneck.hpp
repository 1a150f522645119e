#pragma once

// Concept bottleneck construction: pick class-discriminative attributes from
// per-class concept catalogs and stack their text embeddings into E_C.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cbcs/error.hpp"
#include "cbcs/tensor_io.hpp"
#include "cbcs/types.hpp"

namespace cbcs {

/// Lowercase, trim whitespace, strip trailing punctuation. Used for matching only.
inline std::string normalize_concept(std::string_view text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto is_trailing_punct = [](unsigned char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
  };
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<char>(std::tolower(c)));
  while (!out.empty() && (is_space(out.back()) || is_trailing_punct(out.back()))) out.pop_back();
  std::size_t start = 0;
  while (start < out.size() && is_space(out[start])) ++start;
  return out.substr(start);
}

struct ConceptCatalog {
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> per_class_concepts;

  /// Drops empty and duplicate (normalized) concepts within each class, keeping first occurrences.
  void deduplicate() {
    for (auto& concepts : per_class_concepts) {
      std::set<std::string> seen;
      std::vector<std::string> kept;
      for (auto& c : concepts) {
        auto key = normalize_concept(c);
        if (key.empty() || !seen.insert(key).second) continue;
        kept.push_back(std::move(c));
      }
      concepts = std::move(kept);
    }
  }

  void validate() const {
    if (classes.empty()) throw Error(ErrorCode::EmptyCatalog, "catalog has no classes");
    if (classes.size() != per_class_concepts.size()) {
      throw Error(ErrorCode::InvalidArgument, "catalog class count != concept list count");
    }
    std::set<std::string> names;
    for (const auto& name : classes) {
      const auto key = normalize_concept(name);
      if (key.empty()) throw Error(ErrorCode::InvalidArgument, "empty class name");
      if (!names.insert(key).second) throw Error(ErrorCode::InvalidArgument, "duplicate class name '" + name + "'");
    }
    for (std::size_t c = 0; c < per_class_concepts.size(); ++c) {
      std::set<std::string> seen;
      for (const auto& concept_text : per_class_concepts[c]) {
        if (!seen.insert(normalize_concept(concept_text)).second) {
          throw Error(ErrorCode::InvalidArgument,
                      "duplicate concept '" + concept_text + "' in class '" + classes[c] + "'");
        }
      }
    }
  }
};

/// Parses {class_name: [concept, ...], ...}; class order follows the file.
inline ConceptCatalog catalog_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "catalog must be a JSON object");
  ConceptCatalog catalog;
  for (const auto& [name, list] : j.items()) {
    if (!list.is_array()) throw Error(ErrorCode::ParseError, "catalog entry '" + name + "' is not an array");
    catalog.classes.push_back(name);
    std::vector<std::string> concepts;
    for (const auto& item : list) {
      if (!item.is_string()) throw Error(ErrorCode::ParseError, "catalog entry '" + name + "' has a non-string");
      concepts.push_back(item.get<std::string>());
    }
    catalog.per_class_concepts.push_back(std::move(concepts));
  }
  catalog.deduplicate();
  catalog.validate();
  return catalog;
}

inline json catalog_to_json(const ConceptCatalog& catalog) {
  json j = json::object();
  for (std::size_t c = 0; c < catalog.classes.size(); ++c) j[catalog.classes[c]] = catalog.per_class_concepts[c];
  return j;
}

inline ConceptCatalog read_catalog(const std::filesystem::path& path) {
  return catalog_from_json(detail::parse_json(detail::read_file(path), "catalog " + path.string()));
}

inline void write_catalog(const std::filesystem::path& path, const ConceptCatalog& catalog) {
  detail::write_file(path, catalog_to_json(catalog).dump(2) + "\n");
}

/// Per-class selected concept strings; entry 0 of each list is the class name.
struct ConceptSelection {
  std::size_t k = 0;
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> selected;
  std::vector<std::string> warnings;

  std::size_t concept_count() const noexcept {
    std::size_t total = 0;
    for (const auto& s : selected) total += s.size();
    return total;
  }

  /// Selected strings in class-major order; this is the row order of E_C.
  std::vector<std::string> flattened() const {
    std::vector<std::string> out;
    out.reserve(concept_count());
    for (const auto& s : selected) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  bool operator==(const ConceptSelection&) const = default;
};

struct Bottleneck {
  ConceptSelection selection;
  EmbeddingMatrix concept_matrix;  // N_C x d, rows aligned with selection.flattened()
};

/**
 * Keeps, per class, the class name followed by the first k-1 attributes (in
 * catalog order) that no other class lists. Attributes that coincide with
 * any class name are skipped. Classes with too few unique attributes get a
 * shorter list and a warning; they are never padded with shared concepts.
 */
inline ConceptSelection select_discriminative(const ConceptCatalog& catalog, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidK, "k must be >= 1");
  if (catalog.classes.empty()) throw Error(ErrorCode::EmptyCatalog, "catalog has no classes");
  catalog.validate();

  std::set<std::string> class_keys;
  for (const auto& name : catalog.classes) class_keys.insert(normalize_concept(name));

  // normalized concept -> number of classes listing it
  std::unordered_map<std::string, std::size_t> owners;
  for (const auto& concepts : catalog.per_class_concepts) {
    for (const auto& c : concepts) ++owners[normalize_concept(c)];
  }

  ConceptSelection out;
  out.k = k;
  out.classes = catalog.classes;
  out.selected.resize(catalog.classes.size());
  for (std::size_t c = 0; c < catalog.classes.size(); ++c) {
    auto& picked = out.selected[c];
    picked.push_back(catalog.classes[c]);
    for (const auto& concept_text : catalog.per_class_concepts[c]) {
      if (picked.size() == k) break;
      const auto key = normalize_concept(concept_text);
      if (owners.at(key) != 1 || class_keys.contains(key)) continue;
      picked.push_back(concept_text);
    }
    if (picked.size() < k) {
      out.warnings.push_back("class '" + catalog.classes[c] + "': only " + std::to_string(picked.size() - 1) +
                             " of " + std::to_string(k - 1) + " discriminative attributes available");
    }
  }
  return out;
}

/// Text embeddings for a set of concept strings, row i embedding names[i].
struct ConceptEmbeddings {
  std::vector<std::string> names;
  EmbeddingMatrix matrix;
};

/**
 * Stacks the embedding of every selected concept, in flattened selection
 * order. Lookup matches on the normalized string. Rows are L2-normalized
 * unless `normalize` is false.
 */
inline Bottleneck assemble_bottleneck(const ConceptSelection& selection, const ConceptEmbeddings& embeddings,
                                      bool normalize = true) {
  if (embeddings.names.size() != embeddings.matrix.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "concept name count != embedding row count");
  }
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < embeddings.names.size(); ++i) {
    row_of.emplace(normalize_concept(embeddings.names[i]), i);
  }

  const auto flat = selection.flattened();
  std::vector<std::size_t> rows;
  std::vector<std::string> missing;
  rows.reserve(flat.size());
  for (const auto& name : flat) {
    auto it = row_of.find(normalize_concept(name));
    if (it == row_of.end()) {
      missing.push_back(name);
    } else {
      rows.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "'" : ", '") + m + "'";
    throw Error(ErrorCode::MissingConceptEmbedding, "no embedding for " + list);
  }

  auto matrix = embeddings.matrix.select_rows(rows);
  if (normalize && !matrix.normalized()) matrix = matrix.normalized_copy();
  return Bottleneck{selection, std::move(matrix)};
}

inline json selection_to_json(const ConceptSelection& s) {
  json j;
  j["k"] = s.k;
  json classes = json::array();
  for (std::size_t c = 0; c < s.classes.size(); ++c) {
    json entry;
    entry["name"] = s.classes[c];
    entry["concepts"] = s.selected[c];
    classes.push_back(std::move(entry));
  }
  j["classes"] = std::move(classes);
  j["concept_count"] = s.concept_count();
  j["warnings"] = s.warnings;
  return j;
}

inline ConceptSelection selection_from_json(const json& j) {
  ConceptSelection s;
  try {
    s.k = j.at("k").get<std::size_t>();
    for (const auto& entry : j.at("classes")) {
      s.classes.push_back(entry.at("name").get<std::string>());
      s.selected.push_back(entry.at("concepts").get<std::vector<std::string>>());
    }
    if (j.contains("warnings")) s.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("selection: ") + e.what());
  }
  return s;
}

inline void write_selection(const std::filesystem::path& path, const ConceptSelection& s) {
  detail::write_file(path, selection_to_json(s).dump(2) + "\n");
}

inline ConceptSelection read_selection(const std::filesystem::path& path) {
  return selection_from_json(detail::parse_json(detail::read_file(path), "selection " + path.string()));
}

/// Concept name list paired with a CBE1 file: a JSON array of strings.
inline void write_concept_names(const std::filesystem::path& path, const std::vector<std::string>& names) {
  detail::write_file(path, json(names).dump(2) + "\n");
}

inline std::vector<std::string> read_concept_names(const std::filesystem::path& path) {
  const json j = detail::parse_json(detail::read_file(path), "concept names " + path.string());
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "concept names must be a JSON array");
  try {
    return j.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("concept names: ") + e.what());
  }
}

}  // namespace cbcs
