// Copyright 2026 The motiondiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Text conditioning. A backend turns a prompt into a TextContext: a pooled
// vector plus a sequence of token vectors used as cross-attention context.
//
// Built-in backends:
//  * ToyTextEncoder: lowercase/whitespace tokenizer, FNV-1a hash bucketing
//    into a learned embedding table, mean pooling. Row 0 of the table is
//    reserved for the null (empty prompt) context.
//  * EmbeddingFileBackend: vectors computed offline by an external language
//    model, one JSON record per line:
//      {"text": "...", "pooled": [f, ...], "tokens": [[f, ...], ...]}
//    Duplicate texts: the last record wins. Unknown texts fall back to
//    another backend with a warning.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/log.hpp"
#include "motiondiff/nn.hpp"

namespace motiondiff {

struct TextConfig {
  Index vocab = 4096;
  Index dim = 768;
  Index max_words = 20;
};

template <class S>
struct TextContext {
  Mat<S> pooled;  // 1 x dim
  Mat<S> tokens;  // n x dim, n may be 0
  bool is_null = false;
};

/// Context as tape variables, so gradients can reach a trainable encoder.
template <class S>
struct ContextVars {
  ag::Var<S> pooled;
  ag::Var<S> tokens;
  bool is_null = false;
};

template <class S>
ContextVars<S> context_on_tape(ag::Tape<S>& tape, const TextContext<S>& c) {
  // A context without token vectors attends to its pooled vector instead.
  const Mat<S>& toks = c.tokens.rows() > 0 ? c.tokens : c.pooled;
  return {tape.constant(c.pooled), tape.constant(toks), c.is_null};
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Lowercases, splits on whitespace and strips punctuation from word edges.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) words.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)))
      flush();
    else
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  flush();
  return words;
}

template <class S>
class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual TextContext<S> encode(const std::string& text) const = 0;
  virtual Index dim() const = 0;
};

template <class S>
class ToyTextEncoder final : public TextBackend<S> {
 public:
  ToyTextEncoder() = default;
  ToyTextEncoder(const TextConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.vocab < 2) throw ConfigError("text vocabulary needs at least 2 rows");
    if (cfg.dim <= 0 || cfg.max_words <= 0) throw ConfigError("text dim and max_words must be positive");
    table_ = ag::Parameter<S>("text.embedding", nn::normal_init<S>(cfg.vocab, cfg.dim, 1.0, rng));
  }

  const TextConfig& config() const { return cfg_; }
  Index dim() const override { return cfg_.dim; }

  /// Table rows for the (truncated) word sequence; {0} for the null prompt.
  std::vector<int> token_ids(const std::string& text) const {
    auto words = tokenize(text);
    if (words.empty()) return {0};
    if (static_cast<Index>(words.size()) > cfg_.max_words) words.resize(static_cast<std::size_t>(cfg_.max_words));
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(1 + static_cast<int>(fnv1a(w) % static_cast<std::uint64_t>(cfg_.vocab - 1)));
    return ids;
  }

  static bool is_null_text(const std::string& text) { return tokenize(text).empty(); }

  TextContext<S> encode(const std::string& text) const override {
    const auto ids = token_ids(text);
    TextContext<S> c;
    c.tokens.resize(static_cast<Index>(ids.size()), cfg_.dim);
    for (std::size_t i = 0; i < ids.size(); ++i) c.tokens.row(static_cast<Index>(i)) = table_.value.row(ids[i]);
    c.pooled = c.tokens.colwise().mean();
    c.is_null = is_null_text(text);
    return c;
  }

  ContextVars<S> encode(ag::Tape<S>& tape, const std::string& text) const {
    const auto ids = token_ids(text);
    ContextVars<S> c;
    c.tokens = ag::embedding(tape, table_, std::span<const int>(ids));
    c.pooled = ag::mean_rows(c.tokens, c.tokens.rows());
    c.is_null = is_null_text(text);
    return c;
  }

  ag::Parameter<S>& table() { return table_; }
  const ag::Parameter<S>& table() const { return table_; }
  void set_frozen(bool f) { table_.frozen = f; }
  void collect(nn::ParamRefs<S>& out) { out.push_back(&table_); }

 private:
  TextConfig cfg_;
  ag::Parameter<S> table_;
};

/// Text -> stored vectors, parsed from the line-delimited embedding file.
template <class S>
class EmbeddingStore {
 public:
  static EmbeddingStore load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file " + path.string());
    EmbeddingStore store;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      store.add_record(line, path.string() + ":" + std::to_string(lineno));
    }
    return store;
  }

  std::optional<TextContext<S>> find(const std::string& text) const {
    auto it = records_.find(text);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t size() const { return records_.size(); }
  Index dim() const { return dim_; }

 private:
  void add_record(const std::string& line, const std::string& where) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    auto fail = [&](const std::string& ptr, const std::string& msg) { return ParseError(where + ": " + ptr + ": " + msg); };
    if (!j.is_object()) throw fail("", "expected an object");
    if (!j.contains("text") || !j["text"].is_string()) throw fail("/text", "expected a string");
    auto read_vec = [&](const nlohmann::json& a, const std::string& ptr) {
      if (!a.is_array() || a.empty()) throw fail(ptr, "expected a nonempty array of numbers");
      RowVec<S> v(static_cast<Index>(a.size()));
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw fail(ptr + "/" + std::to_string(i), "expected a number");
        v(static_cast<Index>(i)) = static_cast<S>(a[i].get<double>());
      }
      if (dim_ == 0) dim_ = v.size();
      if (v.size() != dim_)
        throw fail(ptr, "vector width " + std::to_string(v.size()) + " != " + std::to_string(dim_));
      return v;
    };
    if (!j.contains("pooled")) throw fail("/pooled", "missing");
    TextContext<S> c;
    c.pooled = read_vec(j["pooled"], "/pooled");
    const auto& toks = j.contains("tokens") ? j["tokens"] : nlohmann::json::array();
    if (!toks.is_array()) throw fail("/tokens", "expected an array");
    c.tokens.resize(static_cast<Index>(toks.size()), dim_);
    for (std::size_t i = 0; i < toks.size(); ++i) c.tokens.row(static_cast<Index>(i)) = read_vec(toks[i], "/tokens/" + std::to_string(i));
    const std::string text = j["text"].get<std::string>();
    c.is_null = text.empty();
    if (records_.count(text)) log::warn(where + ": duplicate text \"" + text + "\", last record wins");
    records_[text] = std::move(c);
  }

  std::unordered_map<std::string, TextContext<S>> records_;
  Index dim_ = 0;
};

template <class S>
class EmbeddingFileBackend final : public TextBackend<S> {
 public:
  EmbeddingFileBackend(EmbeddingStore<S> store, std::shared_ptr<const TextBackend<S>> fallback)
      : store_(std::move(store)), fallback_(std::move(fallback)) {
    if (!fallback_) throw ConfigError("embedding file backend needs a fallback encoder");
    if (store_.size() > 0 && store_.dim() != fallback_->dim())
      throw DimensionError("embedding file width " + std::to_string(store_.dim()) + " != encoder width " +
                           std::to_string(fallback_->dim()));
  }

  Index dim() const override { return fallback_->dim(); }

  TextContext<S> encode(const std::string& text) const override {
    if (auto hit = store_.find(text)) return *hit;
    log::warn("no stored embedding for \"" + text + "\", using the toy encoder");
    return fallback_->encode(text);
  }

  const EmbeddingStore<S>& store() const { return store_; }

 private:
  EmbeddingStore<S> store_;
  std::shared_ptr<const TextBackend<S>> fallback_;
};

template <class S>
EmbeddingFileBackend<S> load_embedding_file(const std::filesystem::path& path,
                                            std::shared_ptr<const TextBackend<S>> fallback) {
  return EmbeddingFileBackend<S>(EmbeddingStore<S>::load(path), std::move(fallback));
}

}  // namespace motiondiff
