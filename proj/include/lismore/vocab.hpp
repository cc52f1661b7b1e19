#pragma once

// Character-level vocabulary. Text is canonically composed, then split into
// codepoints; every codepoint that survives composition (including combining
// marks with no precomposed form, superscript letters, and the space
// character) is its own vocabulary entry. Ids 0-4 are reserved for the
// special tokens, real characters follow in order of first occurrence.
//
// File format: one entry per line, "id<TAB>codepoints-hex" with codepoints as
// zero-padded lowercase hex (space-separated if more than one). The five
// specials come first and are written as the codepoints of their bracketed
// display names.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lismore/unicode.hpp"

namespace lismore {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;
  static constexpr std::size_t kDefaultMaxRawLen = 20;

  // Builds from any set of corpus strings, in order. Character ids follow
  // first occurrence across the scan.
  static Vocabulary build(const std::vector<std::string>& corpora) {
    bool any = false;
    for (const std::string& s : corpora) any = any || !s.empty();
    if (!any) throw std::invalid_argument("build_vocab: no non-empty corpus strings");
    Vocabulary v;
    for (const std::string& text : corpora) {
      for (const char32_t cp : normalized_codepoints(text)) {
        if (v.char_to_id_.find(cp) == v.char_to_id_.end()) {
          v.char_to_id_.emplace(cp, static_cast<int>(v.chars_.size()) + kNumSpecials);
          v.chars_.push_back(cp);
        }
      }
    }
    return v;
  }

  int size() const { return static_cast<int>(chars_.size()) + kNumSpecials; }

  bool contains(char32_t cp) const { return char_to_id_.count(cp) != 0; }

  int id_of(char32_t cp) const {
    const auto it = char_to_id_.find(cp);
    return it == char_to_id_.end() ? kUnk : it->second;
  }

  // Normalizes, maps each codepoint (unknown -> UNK), and wraps BOS ... EOS.
  // The raw-length limit counts normalized codepoints, so the result has at
  // most max_raw_len + 2 ids.
  std::vector<int> encode(const std::string& word,
                          std::size_t max_raw_len = kDefaultMaxRawLen) const {
    const std::u32string cps = normalized_codepoints(word);
    if (cps.size() > max_raw_len) {
      throw std::length_error("encode: word \"" + word + "\" has " +
                              std::to_string(cps.size()) +
                              " characters after normalization (limit " +
                              std::to_string(max_raw_len) + ")");
    }
    std::vector<int> ids;
    ids.reserve(cps.size() + 2);
    ids.push_back(kBos);
    for (const char32_t cp : cps) ids.push_back(id_of(cp));
    ids.push_back(kEos);
    return ids;
  }

  // Strips PAD/BOS/EOS; UNK and MASK render as their bracketed names.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (const int id : ids) {
      if (id < 0 || id >= size()) {
        throw std::out_of_range("decode: id " + std::to_string(id) +
                                " not in vocabulary of size " + std::to_string(size()));
      }
      switch (id) {
        case kPad:
        case kBos:
        case kEos:
          break;
        case kUnk:
          out += "[UNK]";
          break;
        case kMask:
          out += "[MASK]";
          break;
        default:
          append_utf8(out, chars_[static_cast<std::size_t>(id - kNumSpecials)]);
      }
    }
    return out;
  }

  // Printable form of one entry, for reports and error messages.
  std::string char_at(int id) const {
    if (id < 0 || id >= size()) {
      throw std::out_of_range("char_at: id " + std::to_string(id) +
                              " not in vocabulary of size " + std::to_string(size()));
    }
    static const char* names[] = {"[PAD]", "[BOS]", "[EOS]", "[UNK]", "[MASK]"};
    if (id < kNumSpecials) return names[id];
    return encode_utf8(chars_[static_cast<std::size_t>(id - kNumSpecials)]);
  }

  const std::vector<char32_t>& characters() const { return chars_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    out << to_string();
    if (!out) throw std::runtime_error("failed writing vocabulary file: " + path);
  }

  std::string to_string() const {
    std::string out;
    for (int id = 0; id < size(); ++id) {
      out += std::to_string(id);
      out += '\t';
      if (id < kNumSpecials) {
        const std::string name = char_at(id);
        const std::u32string cps = decode_utf8(name);
        for (std::size_t i = 0; i < cps.size(); ++i) {
          if (i) out += ' ';
          out += hex_codepoint(cps[i]);
        }
      } else {
        out += hex_codepoint(chars_[static_cast<std::size_t>(id - kNumSpecials)]);
      }
      out += '\n';
    }
    return out;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
  }

  static Vocabulary from_string(const std::string& text) {
    Vocabulary v;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    int expected_id = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw std::runtime_error("vocabulary line " + std::to_string(line_no) +
                                 ": missing tab");
      }
      const int id = std::stoi(line.substr(0, tab));
      if (id != expected_id) {
        throw std::runtime_error("vocabulary line " + std::to_string(line_no) +
                                 ": ids must be contiguous from 0");
      }
      ++expected_id;
      if (id < kNumSpecials) continue;  // specials are positional
      std::istringstream cps(line.substr(tab + 1));
      std::string hex;
      std::vector<char32_t> parsed;
      while (cps >> hex) {
        parsed.push_back(static_cast<char32_t>(std::stoul(hex, nullptr, 16)));
      }
      if (parsed.size() != 1) {
        throw std::runtime_error("vocabulary line " + std::to_string(line_no) +
                                 ": expected exactly one codepoint");
      }
      if (v.char_to_id_.count(parsed[0])) {
        throw std::runtime_error("vocabulary line " + std::to_string(line_no) +
                                 ": duplicate character");
      }
      v.char_to_id_.emplace(parsed[0], static_cast<int>(v.chars_.size()) + kNumSpecials);
      v.chars_.push_back(parsed[0]);
    }
    if (expected_id < kNumSpecials) {
      throw std::runtime_error("vocabulary file lacks the 5 special entries");
    }
    return v;
  }

 private:
  static std::string hex_codepoint(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04x", static_cast<unsigned>(cp));
    return buf;
  }

  std::map<char32_t, int> char_to_id_;
  std::vector<char32_t> chars_;
};

}  // namespace lismore
