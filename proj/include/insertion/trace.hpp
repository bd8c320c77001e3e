#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "insertion/decoding.hpp"
#include "insertion/vocab.hpp"

namespace insertion {

/// Token-string view of a decode trace, the unit stored in `.trace` files.
struct TextAction {
  std::string token;
  std::size_t location = 0;
  double log_prob = 0.0;
  bool operator==(const TextAction&) const = default;
};

struct TraceRecord {
  std::vector<std::string> canvas;
  std::vector<TextAction> actions;
  bool final = false;
  std::optional<TextAction> stop;
  bool operator==(const TraceRecord&) const = default;
};

struct TraceDocument {
  std::string mode;
  std::vector<std::string> source;
  std::vector<TraceRecord> records;
  std::vector<std::string> output;
  bool truncated = false;
  bool operator==(const TraceDocument&) const = default;
};

class TraceFormatError : public std::runtime_error {
 public:
  TraceFormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

TraceDocument to_document(const DecodeTrace& trace, const Vocab& vocab);
// Unknown token strings are an error rather than UNK.
DecodeTrace from_document(const TraceDocument& doc, const Vocab& vocab);

// One JSON object per line: a header, one line per step, then a footer.
void write_trace(std::ostream& out, const TraceDocument& doc);
std::vector<TraceDocument> parse_traces(std::string_view text);

std::string render_traces(const std::vector<TraceDocument>& docs);

}  // namespace insertion
