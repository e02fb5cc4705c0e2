#include "livetalk/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_set>

namespace livetalk {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string escape_piece(std::string_view piece) {
  std::string out;
  for (unsigned char c : piece) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02X", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

std::string unescape_piece(std::string_view line) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '\\') {
      out += line[i];
      continue;
    }
    if (++i >= line.size()) throw Error("dangling escape in vocabulary line");
    switch (line[i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      case '\\': out += '\\'; break;
      case 'x': {
        const int hi = i + 1 < line.size() ? hex_value(line[i + 1]) : -1;
        const int lo = i + 2 < line.size() ? hex_value(line[i + 2]) : -1;
        if (hi < 0 || lo < 0) throw Error("bad \\x escape in vocabulary line");
        out += static_cast<char>(hi * 16 + lo);
        i += 2;
        break;
      }
      default: throw Error(std::string("unknown escape \\") + line[i]);
    }
  }
  return out;
}

Tokenizer Tokenizer::bytes() {
  std::vector<std::string> pieces;
  for (int b = 0; b < 256; ++b) pieces.emplace_back(1, static_cast<char>(b));
  Tokenizer t;
  t.spec_ = "bytes";
  t.build(std::move(pieces));
  return t;
}

Tokenizer Tokenizer::optimized() {
  std::vector<std::string> pieces;
  for (int b = 0; b < 256; ++b) pieces.emplace_back(1, static_cast<char>(b));
  for (int n = 0; n < 1000; ++n) {
    char buf[4];
    std::snprintf(buf, sizeof buf, "%03d", n);
    pieces.emplace_back(buf);
  }
  Tokenizer t;
  t.spec_ = "optimized";
  t.build(std::move(pieces));
  return t;
}

Tokenizer Tokenizer::from_pieces(const std::vector<std::string>& pieces) {
  std::vector<std::string> all;
  std::unordered_set<std::string> seen;
  for (const std::string& p : pieces) {
    if (p.empty()) throw Error("empty token in vocabulary");
    if (seen.insert(p).second) all.push_back(p);
  }
  for (int b = 0; b < 256; ++b) {
    std::string p(1, static_cast<char>(b));
    if (seen.insert(p).second) all.push_back(p);
  }
  Tokenizer t;
  t.spec_ = "pieces";
  t.build(std::move(all));
  return t;
}

Tokenizer Tokenizer::from_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vocabulary file " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pieces.push_back(unescape_piece(line));
  }
  Tokenizer t = from_pieces(pieces);
  t.spec_ = "vocab:" + path.string();
  return t;
}

Tokenizer Tokenizer::from_spec(std::string_view spec) {
  if (spec == "bytes") return bytes();
  if (spec == "optimized") return optimized();
  if (spec.starts_with("vocab:")) return from_vocab_file(std::string(spec.substr(6)));
  throw Error("unknown tokenizer '" + std::string(spec) + "' (expected bytes, optimized or vocab:FILE)");
}

void Tokenizer::build(std::vector<std::string> pieces) {
  pieces_ = std::move(pieces);
  trie_.assign(1, TrieNode{});
  for (std::size_t id = 0; id < pieces_.size(); ++id) {
    std::int32_t node = 0;
    for (unsigned char c : pieces_[id]) {
      auto& kids = trie_[static_cast<std::size_t>(node)].children;
      auto it = std::lower_bound(kids.begin(), kids.end(), c,
                                 [](const auto& kv, unsigned char b) { return kv.first < b; });
      if (it != kids.end() && it->first == c) {
        node = it->second;
      } else {
        const auto next = static_cast<std::int32_t>(trie_.size());
        kids.insert(it, {c, next});
        trie_.emplace_back();
        node = next;
      }
    }
    trie_[static_cast<std::size_t>(node)].token = static_cast<TokenId>(id);
    if (pieces_[id].size() == 1) byte_tokens_[static_cast<unsigned char>(pieces_[id][0])] = static_cast<TokenId>(id);
  }
}

void Tokenizer::encode_append(std::string_view text, std::vector<TokenId>& out) const {
  std::size_t i = 0;
  while (i < text.size()) {
    std::int32_t node = 0;
    TokenId best = -1;
    std::size_t best_len = 0;
    for (std::size_t j = i; j < text.size(); ++j) {
      const auto& kids = trie_[static_cast<std::size_t>(node)].children;
      const auto c = static_cast<unsigned char>(text[j]);
      auto it = std::lower_bound(kids.begin(), kids.end(), c,
                                 [](const auto& kv, unsigned char b) { return kv.first < b; });
      if (it == kids.end() || it->first != c) break;
      node = it->second;
      if (trie_[static_cast<std::size_t>(node)].token >= 0) {
        best = trie_[static_cast<std::size_t>(node)].token;
        best_len = j - i + 1;
      }
    }
    out.push_back(best);
    i += best_len;
  }
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  encode_append(text, out);
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) out += piece(t);
  return out;
}

void Tokenizer::save_vocab(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  for (const std::string& p : pieces_) out << escape_piece(p) << '\n';
}

}  // namespace livetalk
