#pragma once

// On-disk formats.
//
//   CBE1 embeddings: "CBE1" | u32 version=1 | u64 rows | u64 cols | u8 normalized
//                    | rows*cols f32, row-major
//   CBL1 labels:     "CBL1" | u32 version=1 | u64 n | u32 num_classes | n * u32
//   score table:     JSON lines {"index","label","pseudo_label","aum"}
//   margins:         JSON lines {"index","margins":[...]}
//   coreset:         one JSON header line, then one index per line
//
// All integers and floats are little-endian regardless of host.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cbcs/error.hpp"
#include "cbcs/types.hpp"

namespace cbcs {

using json = nlohmann::ordered_json;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::array<char, 4> kEmbeddingMagic{'C', 'B', 'E', '1'};
inline constexpr std::array<char, 4> kLabelMagic{'C', 'B', 'L', '1'};
inline constexpr std::size_t kEmbeddingHeaderSize = 4 + 4 + 8 + 8 + 1;
inline constexpr std::size_t kLabelHeaderSize = 4 + 4 + 8 + 4;

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
  }
}

template <typename U>
U get_le(std::string_view bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline void check_magic(std::string_view bytes, const std::array<char, 4>& magic, const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    throw Error(ErrorCode::BadMagic, what + ": bad magic");
  }
}

inline void check_version(std::uint32_t version, const std::string& what) {
  if (version != kFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, what + ": version " + std::to_string(version) + " unsupported");
  }
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream stream(text);
  for (std::string line; std::getline(stream, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

inline json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------- hashing

/// FNV-1a 64-bit digest rendered as "fnv1a64:<16 hex>".
inline std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "fnv1a64:";
  for (int shift = 60; shift >= 0; shift -= 4) out.push_back(kHex[(h >> shift) & 0xF]);
  return out;
}

inline std::string file_hash(const std::filesystem::path& path) { return content_hash(detail::read_file(path)); }

// ---------------------------------------------------------------- CBE1

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(kEmbeddingHeaderSize + m.data().size() * 4);
  out.append(kEmbeddingMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint64_t>(out, m.rows());
  detail::put_le<std::uint64_t>(out, m.cols());
  out.push_back(m.normalized() ? 1 : 0);
  for (float v : m.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline EmbeddingMatrix decode_embeddings(std::string_view bytes) {
  detail::check_magic(bytes, kEmbeddingMagic, "embeddings");
  if (bytes.size() < kEmbeddingHeaderSize) throw Error(ErrorCode::TruncatedPayload, "embeddings: short header");
  detail::check_version(detail::get_le<std::uint32_t>(bytes, 4), "embeddings");
  const auto rows = detail::get_le<std::uint64_t>(bytes, 8);
  const auto cols = detail::get_le<std::uint64_t>(bytes, 16);
  const auto flag = static_cast<unsigned char>(bytes[24]);
  if (flag > 1) throw Error(ErrorCode::ParseError, "embeddings: normalized flag must be 0 or 1");
  const std::uint64_t payload = bytes.size() - kEmbeddingHeaderSize;
  if ((cols != 0 && rows > payload / 4 / cols) || payload != rows * cols * 4) {
    throw Error(ErrorCode::TruncatedPayload, "embeddings: header declares " + std::to_string(rows) + "x" +
                                                 std::to_string(cols) + " but payload has " +
                                                 std::to_string(payload) + " bytes");
  }
  std::vector<float> data(rows * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, kEmbeddingHeaderSize + 4 * i));
  }
  return EmbeddingMatrix(rows, cols, std::move(data), flag == 1);
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  detail::write_file(path, encode_embeddings(m));
}

inline EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::read_file(path));
}

// ---------------------------------------------------------------- CBL1

inline std::string encode_labels(const LabelVector& v) {
  v.validate();
  std::string out;
  out.reserve(kLabelHeaderSize + v.size() * 4);
  out.append(kLabelMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint64_t>(out, v.size());
  detail::put_le<std::uint32_t>(out, v.num_classes);
  for (auto label : v.labels) detail::put_le<std::uint32_t>(out, label);
  return out;
}

inline LabelVector decode_labels(std::string_view bytes) {
  detail::check_magic(bytes, kLabelMagic, "labels");
  if (bytes.size() < kLabelHeaderSize) throw Error(ErrorCode::TruncatedPayload, "labels: short header");
  detail::check_version(detail::get_le<std::uint32_t>(bytes, 4), "labels");
  const auto n = detail::get_le<std::uint64_t>(bytes, 8);
  LabelVector v;
  v.num_classes = detail::get_le<std::uint32_t>(bytes, 16);
  const std::uint64_t payload = bytes.size() - kLabelHeaderSize;
  if (n > payload / 4 || payload != n * 4) {
    throw Error(ErrorCode::TruncatedPayload, "labels: header declares " + std::to_string(n) +
                                                 " labels but payload has " + std::to_string(payload) + " bytes");
  }
  v.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.labels[i] = detail::get_le<std::uint32_t>(bytes, kLabelHeaderSize + 4 * i);
  v.validate();
  return v;
}

inline void write_labels(const std::filesystem::path& path, const LabelVector& v) {
  detail::write_file(path, encode_labels(v));
}

inline LabelVector read_labels(const std::filesystem::path& path) { return decode_labels(detail::read_file(path)); }

// ---------------------------------------------------------------- score table

inline std::string encode_score_table(const ScoreTable& table) {
  std::string out;
  for (const auto& e : table.entries) {
    json line;
    line["index"] = e.index;
    line["label"] = e.label;
    line["pseudo_label"] = e.pseudo_label ? json(*e.pseudo_label) : json(nullptr);
    line["aum"] = e.aum;
    out += line.dump();
    out += '\n';
  }
  return out;
}

/// Side file with full trajectories; only entries carrying margins are written.
inline std::string encode_margins(const ScoreTable& table) {
  std::string out;
  for (const auto& e : table.entries) {
    if (!e.margins) continue;
    json line;
    line["index"] = e.index;
    line["margins"] = *e.margins;
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline ScoreTable decode_score_table(const std::string& text) {
  ScoreTable table;
  for (const auto& line : detail::split_lines(text)) {
    const json j = detail::parse_json(line, "score table");
    try {
      ScoreEntry e;
      e.index = j.at("index").get<std::size_t>();
      e.label = j.at("label").get<std::uint32_t>();
      if (j.contains("pseudo_label") && !j.at("pseudo_label").is_null()) {
        e.pseudo_label = j.at("pseudo_label").get<std::uint32_t>();
      }
      e.aum = j.at("aum").get<double>();
      table.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::ParseError, std::string("score table: ") + ex.what());
    }
  }
  return table;
}

/// Attaches trajectories from a margins side file to matching entries.
inline void attach_margins(ScoreTable& table, const std::string& text) {
  std::unordered_map<std::size_t, std::size_t> position;
  for (std::size_t i = 0; i < table.entries.size(); ++i) position[table.entries[i].index] = i;
  for (const auto& line : detail::split_lines(text)) {
    const json j = detail::parse_json(line, "margins");
    try {
      const auto index = j.at("index").get<std::size_t>();
      auto it = position.find(index);
      if (it == position.end()) {
        throw Error(ErrorCode::ParseError, "margins: index " + std::to_string(index) + " not in score table");
      }
      table.entries[it->second].margins = j.at("margins").get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::ParseError, std::string("margins: ") + ex.what());
    }
  }
}

inline void write_score_table(const std::filesystem::path& path, const ScoreTable& table) {
  table.validate();
  detail::write_file(path, encode_score_table(table));
}

inline void write_margins(const std::filesystem::path& path, const ScoreTable& table) {
  detail::write_file(path, encode_margins(table));
}

inline ScoreTable read_score_table(const std::filesystem::path& path,
                                   const std::filesystem::path& margins_path = {}) {
  ScoreTable table = decode_score_table(detail::read_file(path));
  if (!margins_path.empty()) attach_margins(table, detail::read_file(margins_path));
  table.validate();
  return table;
}

// ---------------------------------------------------------------- coreset

inline std::string encode_coreset(const Coreset& c) {
  json header;
  header["format"] = "cbcs-coreset";
  header["version"] = kFormatVersion;
  header["method"] = c.meta.method;
  header["alpha"] = c.meta.spec.alpha;
  header["beta"] = c.meta.spec.beta;
  header["bins"] = c.meta.spec.bins;
  header["seed"] = c.meta.spec.seed;
  header["topup"] = c.meta.spec.topup;
  header["pool_size"] = c.meta.pool_size;
  header["size"] = c.indices.size();
  header["dataset_hash"] = c.meta.dataset_hash;
  header["score_hash"] = c.meta.score_hash;
  std::string out = header.dump();
  out += '\n';
  for (auto i : c.indices) {
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

inline Coreset decode_coreset(const std::string& text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw Error(ErrorCode::ParseError, "coreset: missing header line");
  const json h = detail::parse_json(lines.front(), "coreset header");
  Coreset c;
  try {
    if (h.at("format").get<std::string>() != "cbcs-coreset") throw Error(ErrorCode::BadMagic, "coreset: bad format tag");
    detail::check_version(h.at("version").get<std::uint32_t>(), "coreset");
    c.meta.method = h.at("method").get<std::string>();
    c.meta.spec.alpha = h.at("alpha").get<double>();
    c.meta.spec.beta = h.at("beta").get<double>();
    c.meta.spec.bins = h.at("bins").get<std::size_t>();
    c.meta.spec.seed = h.at("seed").get<std::uint64_t>();
    c.meta.spec.topup = h.at("topup").get<bool>();
    c.meta.pool_size = h.at("pool_size").get<std::size_t>();
    c.meta.dataset_hash = h.at("dataset_hash").get<std::string>();
    c.meta.score_hash = h.at("score_hash").get<std::string>();
    const auto declared = h.at("size").get<std::size_t>();
    if (declared != lines.size() - 1) {
      throw Error(ErrorCode::TruncatedPayload, "coreset: header declares " + std::to_string(declared) +
                                                   " indices, file has " + std::to_string(lines.size() - 1));
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("coreset header: ") + ex.what());
  }
  c.indices.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::size_t pos = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(lines[i], &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != lines[i].size()) throw Error(ErrorCode::ParseError, "coreset: bad index line '" + lines[i] + "'");
    if (value >= c.meta.pool_size) throw Error(ErrorCode::ParseError, "coreset: index out of range");
    if (!c.indices.empty() && value <= c.indices.back()) {
      throw Error(ErrorCode::ParseError, "coreset: indices must be strictly ascending");
    }
    c.indices.push_back(static_cast<std::size_t>(value));
  }
  return c;
}

inline void write_coreset(const std::filesystem::path& path, const Coreset& c) {
  detail::write_file(path, encode_coreset(c));
}

inline Coreset read_coreset(const std::filesystem::path& path) { return decode_coreset(detail::read_file(path)); }

}  // namespace cbcs
