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
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resdta/error.hpp"

namespace resdta {

using Token = std::int32_t;

/// Character table used by the SMILES stream. Line i (1-based) of
/// data/vocab/smiles.txt carries the same symbol as position i-1 here.
inline constexpr std::string_view kSmilesSymbols =
    "CHNcOnosSPFlBrI()[]1234567890#+-@/\\.%aeigKLMRTZutdAGbVWYEUfmhy=p";

/// IUPAC amino-acid letters plus the ambiguity/rare codes X, B, Z, U, O.
inline constexpr std::string_view kProteinSymbols = "ACDEFGHIKLMNPQRSTVWYXBZUO";

inline constexpr std::size_t kSmilesMaxLen = 100;
inline constexpr std::size_t kProteinMaxLen = 1000;

/// Ordered symbol table. Labels run 1..size; 0 is reserved for padding.
class Vocabulary {
 public:
  static constexpr Token kPadLabel = 0;

  static Vocabulary from_symbols(std::string_view symbols) {
    if (symbols.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "vocabulary must not be empty");
    }
    Vocabulary v;
    v.symbols_.assign(symbols.begin(), symbols.end());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      auto slot = static_cast<unsigned char>(symbols[i]);
      if (v.label_of_[slot] != kAbsent) {
        throw Error(ErrorKind::kInvalidArgument,
                    std::string("duplicate vocabulary symbol '") + symbols[i] + "'");
      }
      v.label_of_[slot] = static_cast<Token>(i + 1);
    }
    return v;
  }

  /// One symbol per line; the 1-based line number is the label.
  static Vocabulary from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kIo, "cannot open vocabulary file " + path);
    std::string symbols;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.size() != 1) {
        throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) +
                                           ": expected exactly one symbol per line");
      }
      symbols.push_back(line[0]);
    }
    return from_symbols(symbols);
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  Token pad_label() const noexcept { return kPadLabel; }
  std::span<const char> symbols() const noexcept { return symbols_; }

  std::optional<Token> label_of(char symbol) const noexcept {
    Token label = label_of_[static_cast<unsigned char>(symbol)];
    if (label == kAbsent) return std::nullopt;
    return label;
  }

  char symbol_of(Token label) const {
    if (label < 1 || static_cast<std::size_t>(label) > symbols_.size()) {
      throw Error(ErrorKind::kTokenOutOfRange, "label " + std::to_string(label));
    }
    return symbols_[static_cast<std::size_t>(label - 1)];
  }

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  static constexpr Token kAbsent = -1;

  Vocabulary() { label_of_.fill(kAbsent); }

  std::vector<char> symbols_;
  std::array<Token, 256> label_of_{};
};

inline const Vocabulary& smiles_vocabulary() {
  static const Vocabulary vocab = Vocabulary::from_symbols(kSmilesSymbols);
  return vocab;
}

inline const Vocabulary& protein_vocabulary() {
  static const Vocabulary vocab = Vocabulary::from_symbols(kProteinSymbols);
  return vocab;
}

struct EncodedSequence {
  std::vector<Token> tokens;
  std::size_t true_length = 0;
};

/// Unknown characters raise UnknownSymbol unless `strict` is false, in
/// which case they take `fallback_label` (must be an existing label).
struct EncodeOptions {
  bool strict = true;
  Token fallback_label = 1;
};

inline EncodedSequence encode(std::string_view text, const Vocabulary& vocab,
                              std::size_t max_len, const EncodeOptions& options = {}) {
  if (max_len == 0) throw Error(ErrorKind::kInvalidArgument, "InvalidMaxLen: max_len must be positive");
  if (!options.strict &&
      (options.fallback_label < 1 || static_cast<std::size_t>(options.fallback_label) > vocab.size())) {
    throw Error(ErrorKind::kInvalidArgument,
                "fallback label " + std::to_string(options.fallback_label) + " is not in the vocabulary");
  }
  EncodedSequence out;
  out.tokens.assign(max_len, Vocabulary::kPadLabel);
  out.true_length = std::min(text.size(), max_len);
  for (std::size_t i = 0; i < out.true_length; ++i) {
    if (auto label = vocab.label_of(text[i])) {
      out.tokens[i] = *label;
    } else if (options.strict) {
      throw Error(ErrorKind::kUnknownSymbol,
                  "character '" + std::string(1, text[i]) + "' at position " + std::to_string(i));
    } else {
      out.tokens[i] = options.fallback_label;
    }
  }
  return out;
}

/// Inverse of encode over the non-pad prefix.
inline std::string decode(std::span<const Token> tokens, const Vocabulary& vocab) {
  std::string out;
  for (Token t : tokens) {
    if (t == Vocabulary::kPadLabel) break;
    out.push_back(vocab.symbol_of(t));
  }
  return out;
}

}  // namespace resdta
