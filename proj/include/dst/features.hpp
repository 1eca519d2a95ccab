// SPDX-License-Identifier: Apache-2.0
//
// Tokenization and per-word input features: vocabulary id, speaker role bit,
// and six bits marking whether the word occurs inside a value of each
// restaurant-database column.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "dst/error.hpp"

namespace dst {

enum class Role : std::uint8_t { user = 0, system = 1 };

inline constexpr std::size_t kDbColumns = 6;

/// Column order of the database bits.
inline constexpr std::array<std::string_view, kDbColumns> kDbColumnNames = {
    "name", "food", "price_range", "area", "telephone", "address"};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation other
/// than apostrophes, drop empty tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  const auto strip = [](unsigned char c) { return std::ispunct(c) && c != '\''; };
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && strip(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && strip(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) words.push_back(to_lower(text.substr(b, e - b)));
    i = j;
  }
  return words;
}

/// Value normalization shared by database cells and slot values.
inline std::string normalize_value(std::string_view text) {
  std::string out;
  for (const auto& w : tokenize(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

/// How a word is matched against database cells.
enum class MatchMode {
  substring,   // raw character substring of the normalized cell
  whole_token  // equality with one whitespace token of the cell
};

using DbBits = std::array<std::uint8_t, kDbColumns>;

struct DatabaseRecord {
  std::array<std::string, kDbColumns> cells;
};

class Database {
 public:
  Database() = default;

  explicit Database(std::vector<DatabaseRecord> rows, MatchMode mode = MatchMode::substring)
      : rows_(std::move(rows)), mode_(mode) {
    for (auto& row : rows_)
      for (auto& cell : row.cells) cell = normalize_value(cell);
    build_index();
  }

  /// Parses a JSON array of objects with exactly the six column keys.
  static Database from_json(const nlohmann::json& doc, MatchMode mode = MatchMode::substring) {
    if (!doc.is_array()) throw ParseError("database: expected an array of records");
    std::vector<DatabaseRecord> rows;
    for (std::size_t r = 0; r < doc.size(); ++r) {
      const auto& rec = doc[r];
      if (!rec.is_object() || rec.size() != kDbColumns) {
        throw ParseError("database record " + std::to_string(r) +
                         ": expected exactly the six columns name, food, price_range, area, "
                         "telephone, address");
      }
      DatabaseRecord row;
      for (std::size_t c = 0; c < kDbColumns; ++c) {
        const auto it = rec.find(std::string(kDbColumnNames[c]));
        if (it == rec.end() || !it->is_string()) {
          throw ParseError("database record " + std::to_string(r) + ": missing string column '" +
                           std::string(kDbColumnNames[c]) + "'");
        }
        row.cells[c] = it->get<std::string>();
      }
      rows.push_back(std::move(row));
    }
    return Database(std::move(rows), mode);
  }

  static Database load(const std::string& path, MatchMode mode = MatchMode::substring) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open database file " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("database file " + path + ": " + e.what());
    }
    return from_json(doc, mode);
  }

  nlohmann::json to_json() const {
    auto doc = nlohmann::json::array();
    for (const auto& row : rows_) {
      nlohmann::json rec;
      for (std::size_t c = 0; c < kDbColumns; ++c) rec[std::string(kDbColumnNames[c])] = row.cells[c];
      doc.push_back(std::move(rec));
    }
    return doc;
  }

  const std::vector<DatabaseRecord>& rows() const { return rows_; }
  MatchMode match_mode() const { return mode_; }

  /// bit c is set iff `word` (already lowercase) matches a cell of column c.
  DbBits bits(std::string_view word) const {
    DbBits out{};
    if (word.empty()) return out;
    const std::string key(word);
    for (std::size_t c = 0; c < kDbColumns; ++c) out[c] = index_[c].contains(key) ? 1 : 0;
    return out;
  }

 private:
  // All distinct substrings (or tokens) of each column's cells.
  void build_index() {
    for (auto& set : index_) set.clear();
    for (const auto& row : rows_) {
      for (std::size_t c = 0; c < kDbColumns; ++c) {
        const std::string& cell = row.cells[c];
        if (mode_ == MatchMode::whole_token) {
          for (auto& tok : tokenize(cell)) index_[c].insert(std::move(tok));
          continue;
        }
        for (std::size_t b = 0; b < cell.size(); ++b)
          for (std::size_t len = 1; b + len <= cell.size(); ++len)
            index_[c].insert(cell.substr(b, len));
      }
    }
  }

  std::vector<DatabaseRecord> rows_;
  MatchMode mode_ = MatchMode::substring;
  std::array<std::unordered_set<std::string>, kDbColumns> index_;
};

inline DbBits extract_db_bits(std::string_view word, const Database& db) { return db.bits(word); }

/// Word vocabulary; id 0 is the reserved unknown-word entry.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() : words_{std::string(kUnkToken)} { ids_.emplace(words_[0], kUnk); }

  /// Words (excluding `<unk>`) in id order.
  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) add(w);
  }

  /// Keeps words with count >= min_count, sorted for a stable id assignment.
  static Vocabulary from_counts(const std::map<std::string, std::size_t>& counts,
                                std::size_t min_count) {
    std::vector<std::string> kept;
    for (const auto& [w, n] : counts)
      if (n >= min_count && w != kUnkToken) kept.push_back(w);
    return Vocabulary(kept);
  }

  int id(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void add(const std::string& w) {
    if (ids_.contains(w)) return;
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// One encoder input step.
struct TokenInput {
  int word_id = Vocabulary::kUnk;
  std::uint8_t role_bit = 0;  // 1 = system, 0 = user
  DbBits db_bits{};

  friend bool operator==(const TokenInput&, const TokenInput&) = default;
};

inline TokenInput featurize_word(std::string_view word, Role role, const Database& db,
                                 const Vocabulary& vocab) {
  return {vocab.id(word), static_cast<std::uint8_t>(role), db.bits(word)};
}

inline std::vector<TokenInput> featurize_turn(const std::vector<std::string>& words, Role role,
                                              const Database& db, const Vocabulary& vocab) {
  std::vector<TokenInput> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(featurize_word(w, role, db, vocab));
  return out;
}

}  // namespace dst
