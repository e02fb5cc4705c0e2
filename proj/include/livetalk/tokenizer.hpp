#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "livetalk/types.hpp"

namespace livetalk {

/// Byte-string vocabulary with greedy longest-match tokenization. Every
/// single byte is always a token, so any string can be tokenized.
class Tokenizer {
 public:
  /// Prefix tree over token byte strings.
  struct TrieNode {
    TokenId token = -1;
    std::vector<std::pair<unsigned char, std::int32_t>> children;  // sorted by byte
  };

  /// One token per byte value; id == byte.
  static Tokenizer bytes();
  /// Byte tokens plus one token per three-digit string "000".."999".
  static Tokenizer optimized();
  /// Pieces in file order; missing single bytes are appended.
  static Tokenizer from_pieces(const std::vector<std::string>& pieces);
  /// One byte-escaped token per line (see escape_piece).
  static Tokenizer from_vocab_file(const std::filesystem::path& path);
  /// "bytes", "optimized" or "vocab:FILE".
  static Tokenizer from_spec(std::string_view spec);

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(TokenId id) const { return pieces_[static_cast<std::size_t>(id)]; }
  const std::string& spec() const { return spec_; }
  TokenId byte_token(unsigned char b) const { return byte_tokens_[b]; }

  std::vector<TokenId> encode(std::string_view text) const;
  void encode_append(std::string_view text, std::vector<TokenId>& out) const;
  std::string decode(std::span<const TokenId> tokens) const;

  const std::vector<TrieNode>& trie() const { return trie_; }

  void save_vocab(const std::filesystem::path& path) const;

 private:
  void build(std::vector<std::string> pieces);

  std::string spec_;
  std::vector<std::string> pieces_;
  std::vector<TrieNode> trie_;
  TokenId byte_tokens_[256] = {};
};

/// Line-safe escaping: \n, \t, \r, \\ and \xHH for other control bytes.
std::string escape_piece(std::string_view piece);
std::string unescape_piece(std::string_view line);

}  // namespace livetalk
