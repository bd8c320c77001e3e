#include "insertion/vocab.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace insertion {

namespace {
const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens = {"<pad>", "<eos>", "<eoslot>",
                                                  "<l>",   "<r>",   "<unk>"};
  return tokens;
}
}  // namespace

Vocab::Vocab() {
  for (const auto& t : reserved_tokens()) add_or_lookup(t);
}

Vocab::Vocab(std::span<const std::string> content) : Vocab() {
  for (const auto& t : content) add_or_lookup(t);
}

Vocab Vocab::numbered(std::size_t content_size) {
  Vocab v;
  for (std::size_t i = 0; i < content_size; ++i) v.add_or_lookup("w" + std::to_string(i));
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary does not start with the reserved tokens");
  }
  Vocab v;
  for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
    if (v.find(tokens[i])) throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
    v.add_or_lookup(tokens[i]);
  }
  return v;
}

TokenId Vocab::add_or_lookup(std::string_view token) {
  if (auto id = find(token)) return *id;
  if (frozen_) return special::kUnknown;
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string_view::npos) {
    throw std::invalid_argument("vocabulary tokens must be non-empty and whitespace-free");
  }
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::lookup(std::string_view token) const {
  return find(token).value_or(special::kUnknown);
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::encode(std::string_view line) const {
  std::istringstream in{std::string(line)};
  TokenSeq out;
  std::string word;
  while (in >> word) out.push_back(lookup(word));
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace insertion
