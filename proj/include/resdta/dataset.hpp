// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "resdta/error.hpp"
#include "resdta/random.hpp"
#include "resdta/vocab.hpp"

namespace resdta {

struct NamedSequence {
  std::string id;
  std::string sequence;
};

/// Drugs, proteins and a drugs x proteins affinity grid (row-major, absent
/// cells are unmeasured pairs).
struct RawDataset {
  std::vector<NamedSequence> drugs;
  std::vector<NamedSequence> proteins;
  std::vector<std::optional<double>> affinity;

  std::size_t n_drugs() const { return drugs.size(); }
  std::size_t n_proteins() const { return proteins.size(); }
  const std::optional<double>& at(std::size_t drug, std::size_t protein) const {
    return affinity[drug * proteins.size() + protein];
  }
  std::size_t n_present() const {
    return static_cast<std::size_t>(
        std::count_if(affinity.begin(), affinity.end(), [](const auto& a) { return a.has_value(); }));
  }
};

struct InteractionRecord {
  std::size_t drug_index = 0;
  std::size_t protein_index = 0;
  double affinity = 0.0;

  bool operator==(const InteractionRecord&) const = default;
};

inline constexpr std::size_t kNumCvFolds = 5;

/// Part 0 of the six-way split is the held-out test set; parts 1..5 are the
/// cross-validation folds.
struct FoldSplit {
  std::vector<std::size_t> test_indices;
  std::array<std::vector<std::size_t>, kNumCvFolds> cv_folds;
  std::uint64_t seed = 0;

  bool operator==(const FoldSplit&) const = default;

  /// Union of every CV fold except `validation_fold`.
  std::vector<std::size_t> training_indices(std::size_t validation_fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < kNumCvFolds; ++f) {
      if (f == validation_fold) continue;
      out.insert(out.end(), cv_folds[f].begin(), cv_folds[f].end());
    }
    return out;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline bool looks_like_json(const std::string& path, const std::string& content) {
  if (std::filesystem::path(path).extension() == ".json") return true;
  const auto first = content.find_first_not_of(" \t\r\n");
  return first != std::string::npos && content[first] == '{';
}

inline void check_unique_ids(const std::vector<NamedSequence>& entries, const std::string& path) {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) {
      throw Error(ErrorKind::kParse, path + ": duplicate id '" + e.id + "'");
    }
  }
}

}  // namespace detail

/// Reads an id -> sequence map. A `.json` file (or any file whose first
/// non-blank character is '{') is parsed as a JSON object and keeps key
/// order; anything else is two-column TSV.
inline std::vector<NamedSequence> load_sequence_map(const std::string& path) {
  const std::string content = detail::read_file(path);
  std::vector<NamedSequence> out;
  if (detail::looks_like_json(path, content)) {
    nlohmann::ordered_json doc;
    try {
      doc = nlohmann::ordered_json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::kParse, path + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::kParse, path + ": expected a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (!value.is_string()) {
        throw Error(ErrorKind::kParse, path + ": value for '" + key + "' is not a string");
      }
      out.push_back({key, value.get<std::string>()});
    }
  } else {
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": expected id<TAB>sequence");
      }
      std::string id = detail::trim(std::string_view(line).substr(0, tab));
      std::string seq = detail::trim(std::string_view(line).substr(tab + 1));
      if (id.empty() || seq.find('\t') != std::string::npos) {
        throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": expected id<TAB>sequence");
      }
      out.push_back({std::move(id), std::move(seq)});
    }
  }
  detail::check_unique_ids(out, path);
  return out;
}

/// Numeric matrix, whitespace- or comma-delimited, "NaN" for missing cells.
/// Returns rows in file order; each row must have the same column count.
inline std::vector<std::vector<std::optional<double>>> load_affinity_matrix(const std::string& path) {
  const std::string content = detail::read_file(path);
  std::vector<std::vector<std::optional<double>>> rows;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<std::optional<double>> row;
    std::string field;
    while (fields >> field) {
      if (field == "NaN" || field == "nan" || field == "NAN") {
        row.emplace_back(std::nullopt);
        continue;
      }
      double value = 0.0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc() || end != field.data() + field.size() || !std::isfinite(value)) {
        throw Error(ErrorKind::kParse,
                    path + ":" + std::to_string(line_no) + ": bad numeric field '" + field + "'");
      }
      row.emplace_back(value);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(rows.front().size()) + " columns, got " +
                                         std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Negates the scores and shifts them so the smallest output is 0: the
/// strongest binder (lowest raw KIBA score) ends up with the largest value.
inline std::vector<double> kiba_transform(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorKind::kEmptyInput, "kiba_transform needs at least one score");
  double min_negated = -scores[0];
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::kInvalidArgument, "non-finite KIBA score");
    min_negated = std::min(min_negated, -s);
  }
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = -scores[i] - min_negated;
  return out;
}

struct LoadOptions {
  /// Apply kiba_transform to the present scores. Off by default: the
  /// commonly distributed KIBA matrix is already transformed.
  bool transform_scores = false;
};

inline RawDataset load_kiba(const std::string& drug_file, const std::string& protein_file,
                            const std::string& affinity_file, const LoadOptions& options = {}) {
  RawDataset raw;
  raw.drugs = load_sequence_map(drug_file);
  raw.proteins = load_sequence_map(protein_file);
  const auto rows = load_affinity_matrix(affinity_file);
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  if (rows.size() != raw.drugs.size() || (!rows.empty() && cols != raw.proteins.size())) {
    throw Error(ErrorKind::kDimensionMismatch,
                affinity_file + ": grid is " + std::to_string(rows.size()) + "x" + std::to_string(cols) +
                    " but there are " + std::to_string(raw.drugs.size()) + " drugs and " +
                    std::to_string(raw.proteins.size()) + " proteins");
  }
  raw.affinity.reserve(raw.drugs.size() * raw.proteins.size());
  for (const auto& row : rows) raw.affinity.insert(raw.affinity.end(), row.begin(), row.end());
  if (rows.empty()) raw.affinity.assign(raw.drugs.size() * raw.proteins.size(), std::nullopt);

  if (options.transform_scores && raw.n_present() > 0) {
    std::vector<double> present;
    for (const auto& a : raw.affinity) {
      if (a) present.push_back(*a);
    }
    const auto transformed = kiba_transform(present);
    std::size_t k = 0;
    for (auto& a : raw.affinity) {
      if (a) a = transformed[k++];
    }
  }
  return raw;
}

/// One record per measured cell, drug-major. Fold index files refer to
/// positions in this sequence.
inline std::vector<InteractionRecord> flatten(const RawDataset& raw) {
  std::vector<InteractionRecord> out;
  for (std::size_t d = 0; d < raw.n_drugs(); ++d) {
    for (std::size_t p = 0; p < raw.n_proteins(); ++p) {
      if (const auto& a = raw.at(d, p)) out.push_back({d, p, *a});
    }
  }
  return out;
}

/// Throws unless the six parts are disjoint and cover [0, n).
inline void validate_partition(const FoldSplit& split, std::size_t n) {
  std::vector<std::uint8_t> seen(n, 0);
  auto mark = [&](const std::vector<std::size_t>& part) {
    for (std::size_t idx : part) {
      if (idx >= n) {
        throw Error(ErrorKind::kIndexOutOfRange,
                    "fold index " + std::to_string(idx) + " >= " + std::to_string(n));
      }
      if (seen[idx]) throw Error(ErrorKind::kOverlappingFolds, "index " + std::to_string(idx) + " appears twice");
      seen[idx] = 1;
    }
  };
  mark(split.test_indices);
  for (const auto& fold : split.cv_folds) mark(fold);
  const auto covered = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), std::uint8_t{1}));
  if (covered != n) {
    throw Error(ErrorKind::kIncompletePartition,
                std::to_string(n - covered) + " of " + std::to_string(n) + " interactions are in no part");
  }
}

/// Seeded permutation of [0, n) cut into six parts whose sizes differ by at
/// most one (the first n % 6 parts take the extra element).
inline FoldSplit make_folds(std::size_t n_interactions, std::uint64_t seed) {
  constexpr std::size_t kParts = kNumCvFolds + 1;
  if (n_interactions < kParts) {
    throw Error(ErrorKind::kTooFewInteractions,
                "need at least 6 interactions, got " + std::to_string(n_interactions));
  }
  std::vector<std::size_t> order(n_interactions);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  FoldSplit split;
  split.seed = seed;
  const std::size_t base = n_interactions / kParts;
  const std::size_t extra = n_interactions % kParts;
  std::size_t offset = 0;
  for (std::size_t part = 0; part < kParts; ++part) {
    const std::size_t size = base + (part < extra ? 1 : 0);
    std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                   order.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
    if (part == 0) {
      split.test_indices = std::move(chunk);
    } else {
      split.cv_folds[part - 1] = std::move(chunk);
    }
  }
  return split;
}

namespace detail {

inline std::vector<std::size_t> index_array(const nlohmann::json& arr, const std::string& what) {
  if (!arr.is_array()) throw Error(ErrorKind::kParse, what + ": expected an array of indices");
  std::vector<std::size_t> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw Error(ErrorKind::kParse, what + ": non-integer index");
    const auto value = v.get<std::int64_t>();
    if (value < 0) throw Error(ErrorKind::kIndexOutOfRange, what + ": negative index");
    out.push_back(static_cast<std::size_t>(value));
  }
  return out;
}

inline nlohmann::json parse_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

}  // namespace detail

/// Test file: flat JSON array. CV file: JSON array of five arrays.
inline FoldSplit load_fold_files(const std::string& test_file, const std::string& cv_file,
                                 std::size_t n_interactions) {
  FoldSplit split;
  split.test_indices = detail::index_array(detail::parse_json_file(test_file), test_file);
  const auto cv = detail::parse_json_file(cv_file);
  if (!cv.is_array() || cv.size() != kNumCvFolds) {
    throw Error(ErrorKind::kParse, cv_file + ": expected an array of " + std::to_string(kNumCvFolds) + " arrays");
  }
  for (std::size_t f = 0; f < kNumCvFolds; ++f) {
    split.cv_folds[f] = detail::index_array(cv[f], cv_file + "[" + std::to_string(f) + "]");
  }
  validate_partition(split, n_interactions);
  return split;
}

inline void write_fold_files(const FoldSplit& split, const std::string& test_file, const std::string& cv_file) {
  auto write = [](const std::string& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
    out << doc.dump() << '\n';
  };
  write(test_file, nlohmann::json(split.test_indices));
  nlohmann::json cv = nlohmann::json::array();
  for (const auto& fold : split.cv_folds) cv.push_back(fold);
  write(cv_file, cv);
}

/// Token matrices for every drug and protein plus the flattened records.
struct EncodedDataset {
  std::size_t smiles_len = kSmilesMaxLen;
  std::size_t protein_len = kProteinMaxLen;
  std::vector<std::string> drug_ids;
  std::vector<std::string> protein_ids;
  std::vector<Token> drug_tokens;     // n_drugs x smiles_len
  std::vector<Token> protein_tokens;  // n_proteins x protein_len
  std::vector<InteractionRecord> records;

  std::size_t n_drugs() const { return drug_ids.size(); }
  std::size_t n_proteins() const { return protein_ids.size(); }

  std::span<const Token> drug(std::size_t i) const {
    return std::span<const Token>(drug_tokens).subspan(i * smiles_len, smiles_len);
  }
  std::span<const Token> protein(std::size_t i) const {
    return std::span<const Token>(protein_tokens).subspan(i * protein_len, protein_len);
  }

  std::vector<InteractionRecord> select(std::span<const std::size_t> positions) const {
    std::vector<InteractionRecord> out;
    out.reserve(positions.size());
    for (std::size_t pos : positions) {
      if (pos >= records.size()) {
        throw Error(ErrorKind::kIndexOutOfRange, "record " + std::to_string(pos));
      }
      out.push_back(records[pos]);
    }
    return out;
  }
};

struct EncodingOptions {
  std::size_t smiles_len = kSmilesMaxLen;
  std::size_t protein_len = kProteinMaxLen;
  EncodeOptions smiles;
  EncodeOptions protein;
};

inline EncodedDataset encode_dataset(const RawDataset& raw, const Vocabulary& smiles_vocab,
                                     const Vocabulary& protein_vocab, const EncodingOptions& options = {}) {
  EncodedDataset out;
  out.smiles_len = options.smiles_len;
  out.protein_len = options.protein_len;
  auto encode_all = [](const std::vector<NamedSequence>& entries, const Vocabulary& vocab, std::size_t len,
                       const EncodeOptions& opts, std::vector<std::string>& ids, std::vector<Token>& tokens,
                       const char* what) {
    tokens.reserve(entries.size() * len);
    for (const auto& e : entries) {
      try {
        const auto enc = encode(e.sequence, vocab, len, opts);
        tokens.insert(tokens.end(), enc.tokens.begin(), enc.tokens.end());
      } catch (const Error& err) {
        throw Error(err.kind(), std::string(what) + " '" + e.id + "': " + err.what());
      }
      ids.push_back(e.id);
    }
  };
  encode_all(raw.drugs, smiles_vocab, out.smiles_len, options.smiles, out.drug_ids, out.drug_tokens, "drug");
  encode_all(raw.proteins, protein_vocab, out.protein_len, options.protein, out.protein_ids, out.protein_tokens,
             "protein");
  out.records = flatten(raw);
  return out;
}

struct LengthStats {
  std::size_t max = 0;
  double mean = 0.0;
  std::size_t covered = 0;  // sequences no longer than the encoding cap
};

inline LengthStats length_stats(const std::vector<NamedSequence>& entries, std::size_t cap) {
  LengthStats s;
  if (entries.empty()) return s;
  double total = 0.0;
  for (const auto& e : entries) {
    s.max = std::max(s.max, e.sequence.size());
    total += static_cast<double>(e.sequence.size());
    if (e.sequence.size() <= cap) ++s.covered;
  }
  s.mean = total / static_cast<double>(entries.size());
  return s;
}

}  // namespace resdta
