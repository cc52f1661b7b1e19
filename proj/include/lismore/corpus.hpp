#pragma once

// Parallel and monolingual corpus ingestion plus the deterministic
// train/eval/test split.
//
// Parallel data is UTF-8 TSV, "source<TAB>target", one example per line.
// Monolingual data is plain UTF-8 text, whitespace-tokenized at load. The
// split shuffles example indices with the pinned generator, takes the eval
// and test sets from the front of the shuffle, and keeps every subset in
// original file order.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lismore/rng.hpp"
#include "lismore/unicode.hpp"

namespace lismore {

struct ParallelExample {
  std::string source;
  std::string target;
  std::size_t index = 0;  // 0-based line number in the source file

  bool operator==(const ParallelExample& o) const {
    return source == o.source && target == o.target;
  }
};

inline std::vector<ParallelExample> parse_parallel(const std::string& text,
                                                   const std::string& origin) {
  std::vector<ParallelExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fail = [&](const std::string& what) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " + what);
    };
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) fail("expected two tab-separated columns");
    if (line.find('\t', tab + 1) != std::string::npos) fail("more than two columns");
    ParallelExample ex;
    ex.source = normalize_utf8(line.substr(0, tab));
    ex.target = normalize_utf8(line.substr(tab + 1));
    ex.index = line_no - 1;
    if (ex.source.empty()) fail("empty source side");
    if (ex.target.empty()) fail("empty target side");
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw std::runtime_error(origin + ": no examples");
  return out;
}

inline std::vector<ParallelExample> load_parallel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parallel data: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_parallel(ss.str(), path);
}

inline void save_parallel(const std::string& path,
                          const std::vector<ParallelExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write parallel data: " + path);
  for (const ParallelExample& ex : examples) {
    out << ex.source << '\t' << ex.target << '\n';
  }
  if (!out) throw std::runtime_error("failed writing parallel data: " + path);
}

struct DataSplit {
  std::vector<ParallelExample> train;
  std::vector<ParallelExample> eval;
  std::vector<ParallelExample> test;
  std::uint64_t seed = 0;
};

// Seeded sampling without replacement; eval and test subsets keep original
// file order, the remainder is train.
inline DataSplit split_examples(const std::vector<ParallelExample>& examples,
                                std::uint64_t seed, std::size_t n_eval = 50,
                                std::size_t n_test = 50) {
  if (n_eval + n_test >= examples.size()) {
    throw std::invalid_argument(
        "split: need more than " + std::to_string(n_eval + n_test) +
        " examples, have " + std::to_string(examples.size()));
  }
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  std::set<std::size_t> eval_idx(order.begin(), order.begin() + n_eval);
  std::set<std::size_t> test_idx(order.begin() + n_eval, order.begin() + n_eval + n_test);

  DataSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (eval_idx.count(i)) {
      split.eval.push_back(examples[i]);
    } else if (test_idx.count(i)) {
      split.test.push_back(examples[i]);
    } else {
      split.train.push_back(examples[i]);
    }
  }
  return split;
}

struct MonoWordCorpus {
  std::vector<std::string> words;
  std::string source_description;
  std::size_t dropped_overlong = 0;
};

// Whitespace-tokenizes; tokens longer than max_raw_len normalized codepoints
// are dropped and counted. Punctuation stays attached to its word. Set dedup
// to keep each distinct word once instead of with corpus frequency.
inline MonoWordCorpus tokenize_monolingual(const std::string& text,
                                           const std::string& origin,
                                           std::size_t max_raw_len = 20,
                                           bool dedup = false) {
  MonoWordCorpus corpus;
  corpus.source_description = origin;
  std::set<std::string> seen;
  std::u32string token;
  const std::u32string cps = normalized_codepoints(text);
  const auto flush = [&]() {
    if (token.empty()) return;
    if (token.size() <= max_raw_len) {
      std::string word = encode_utf8(token);
      if (!dedup || seen.insert(word).second) corpus.words.push_back(std::move(word));
    } else {
      ++corpus.dropped_overlong;
    }
    token.clear();
  };
  for (const char32_t cp : cps) {
    // Unicode whitespace: ASCII space/tab/newlines plus the common separator
    // codepoints.
    const bool ws = cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
                    cp == U'\f' || cp == U'\v' || cp == 0x85 || cp == 0xA0 ||
                    (cp >= 0x2000 && cp <= 0x200A) || cp == 0x1680 || cp == 0x2028 ||
                    cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
    if (ws) {
      flush();
    } else {
      token.push_back(cp);
    }
  }
  flush();
  return corpus;
}

inline MonoWordCorpus load_monolingual(const std::string& path,
                                       std::size_t max_raw_len = 20,
                                       bool dedup = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open monolingual text: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return tokenize_monolingual(ss.str(), path, max_raw_len, dedup);
}

struct CorpusStats {
  std::size_t total = 0;
  std::size_t multi_word = 0;  // space on either side
  double multi_word_fraction = 0.0;
  std::map<std::size_t, std::size_t> source_length_hist;
  std::map<std::size_t, std::size_t> target_length_hist;
};

inline CorpusStats compute_stats(const std::vector<ParallelExample>& examples) {
  CorpusStats stats;
  stats.total = examples.size();
  for (const ParallelExample& ex : examples) {
    if (ex.source.find(' ') != std::string::npos ||
        ex.target.find(' ') != std::string::npos) {
      ++stats.multi_word;
    }
    ++stats.source_length_hist[decode_utf8(ex.source).size()];
    ++stats.target_length_hist[decode_utf8(ex.target).size()];
  }
  if (stats.total > 0) {
    stats.multi_word_fraction =
        static_cast<double>(stats.multi_word) / static_cast<double>(stats.total);
  }
  return stats;
}

inline std::string format_stats(const CorpusStats& stats) {
  std::ostringstream out;
  out << "examples\t" << stats.total << "\n";
  out << "multi_word\t" << stats.multi_word << "\n";
  char frac[32];
  std::snprintf(frac, sizeof(frac), "%.4f", stats.multi_word_fraction);
  out << "multi_word_fraction\t" << frac << "\n";
  out << "source_length_histogram";
  for (const auto& [len, n] : stats.source_length_hist) out << "\t" << len << ":" << n;
  out << "\n";
  out << "target_length_histogram";
  for (const auto& [len, n] : stats.target_length_hist) out << "\t" << len << ":" << n;
  out << "\n";
  return out.str();
}

// Audit trail for a split: three index files plus the seed.
inline void write_split_manifest(const std::string& dir, const DataSplit& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto write_indices = [&](const std::string& name,
                                 const std::vector<ParallelExample>& part) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write split manifest in " + dir);
    for (const ParallelExample& ex : part) out << ex.index << '\n';
  };
  write_indices("train_indices.txt", split.train);
  write_indices("eval_indices.txt", split.eval);
  write_indices("test_indices.txt", split.test);
  std::ofstream seed(fs::path(dir) / "seed.txt", std::ios::binary);
  seed << split.seed << '\n';
}

}  // namespace lismore
