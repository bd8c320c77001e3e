#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "insertion/canvas.hpp"

namespace insertion {

// Reserved ids occupy the lowest indices of every vocabulary.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kEndOfSequence = 1;
inline constexpr TokenId kEndOfSlot = 2;
inline constexpr TokenId kLeftMark = 3;
inline constexpr TokenId kRightMark = 4;
inline constexpr TokenId kUnknown = 5;
inline constexpr std::size_t kCount = 6;

inline constexpr bool is_terminal(TokenId id) {
  return id == kEndOfSequence || id == kEndOfSlot;
}
// Ids that can never be placed on a canvas.
inline constexpr bool is_structural(TokenId id) {
  return id == kPad || id == kLeftMark || id == kRightMark;
}
}  // namespace special

class Vocab {
 public:
  // Reserved tokens only.
  Vocab();
  // Reserved tokens followed by `content` in order.
  explicit Vocab(std::span<const std::string> content);
  // Reserved tokens followed by w0..w{n-1}.
  static Vocab numbered(std::size_t content_size);
  // Full token list, reserved entries included; validated.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t content_size() const { return tokens_.size() - special::kCount; }
  TokenId first_content_id() const { return static_cast<TokenId>(special::kCount); }

  // Returns kUnknown for unseen tokens when frozen, otherwise adds them.
  TokenId add_or_lookup(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  TokenId lookup(std::string_view token) const;  // kUnknown if absent
  const std::string& token(TokenId id) const;

  TokenSeq encode(std::string_view line) const;  // whitespace-separated
  std::string decode(std::span<const TokenId> ids) const;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  bool frozen_ = false;
};

}  // namespace insertion
