#include "insertion/trace.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace insertion {

using nlohmann::json;

namespace {

std::vector<std::string> to_strings(const TokenSeq& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

TokenSeq to_ids(const std::vector<std::string>& tokens, const Vocab& vocab) {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto id = vocab.find(t);
    if (!id) throw std::invalid_argument("trace token '" + t + "' is not in the vocabulary");
    out.push_back(*id);
  }
  return out;
}

TextAction text_action(const InsertionAction& a, double log_prob, const Vocab& vocab) {
  return {vocab.token(a.content), a.location, log_prob};
}

InsertionAction id_action(const TextAction& a, const Vocab& vocab) {
  const auto id = vocab.find(a.token);
  if (!id) throw std::invalid_argument("trace token '" + a.token + "' is not in the vocabulary");
  return {*id, a.location};
}

json action_json(const TextAction& a) { return json::array({a.token, a.location, a.log_prob}); }

TextAction parse_action(const json& j) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_string() || !j[1].is_number_unsigned() ||
      !j[2].is_number()) {
    throw std::invalid_argument("action must be [token, location, logprob]");
  }
  return {j[0].get<std::string>(), j[1].get<std::size_t>(), j[2].get<double>()};
}

std::vector<std::string> parse_tokens(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw std::invalid_argument(std::string("missing token list '") + field + "'");
  }
  std::vector<std::string> out;
  for (const auto& t : j[field]) {
    if (!t.is_string()) throw std::invalid_argument(std::string("non-string token in '") + field + "'");
    out.push_back(t.get<std::string>());
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

TraceDocument to_document(const DecodeTrace& trace, const Vocab& vocab) {
  TraceDocument doc;
  doc.mode = to_string(trace.mode);
  doc.source = to_strings(trace.source, vocab);
  doc.output = to_strings(trace.output, vocab);
  doc.truncated = trace.truncated;
  for (const auto& step : trace.steps) {
    TraceRecord rec;
    rec.canvas = to_strings(step.canvas, vocab);
    for (std::size_t i = 0; i < step.actions.size(); ++i) {
      rec.actions.push_back(text_action(step.actions[i], step.log_probs.at(i), vocab));
    }
    rec.final = step.final;
    if (step.stop) rec.stop = text_action(*step.stop, step.stop_log_prob, vocab);
    doc.records.push_back(std::move(rec));
  }
  return doc;
}

DecodeTrace from_document(const TraceDocument& doc, const Vocab& vocab) {
  DecodeTrace trace;
  trace.mode = parse_decode_mode(doc.mode);
  trace.source = to_ids(doc.source, vocab);
  trace.output = to_ids(doc.output, vocab);
  trace.truncated = doc.truncated;
  for (const auto& rec : doc.records) {
    TraceStep step;
    step.canvas = to_ids(rec.canvas, vocab);
    for (const auto& a : rec.actions) {
      step.actions.push_back(id_action(a, vocab));
      step.log_probs.push_back(a.log_prob);
    }
    step.final = rec.final;
    if (rec.stop) {
      step.stop = id_action(*rec.stop, vocab);
      step.stop_log_prob = rec.stop->log_prob;
    }
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

void write_trace(std::ostream& out, const TraceDocument& doc) {
  out << json{{"type", "header"}, {"mode", doc.mode}, {"source", doc.source}}.dump() << '\n';
  for (std::size_t t = 0; t < doc.records.size(); ++t) {
    const auto& rec = doc.records[t];
    json line{{"type", "step"}, {"iteration", t}, {"canvas", rec.canvas}, {"final", rec.final}};
    json actions = json::array();
    for (const auto& a : rec.actions) actions.push_back(action_json(a));
    line["actions"] = std::move(actions);
    if (rec.stop) line["stop"] = action_json(*rec.stop);
    out << line.dump() << '\n';
  }
  out << json{{"type", "footer"},
              {"output", doc.output},
              {"truncated", doc.truncated},
              {"steps", doc.records.size()}}
             .dump()
      << '\n';
}

std::vector<TraceDocument> parse_traces(std::string_view text) {
  std::vector<TraceDocument> docs;
  std::optional<TraceDocument> open;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    const std::size_t line_start = pos;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      const std::size_t in_line = e.byte > 0 ? e.byte - 1 : 0;
      throw TraceFormatError("malformed trace line", line_start + std::min(in_line, line.size()));
    }
    try {
      if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
        throw std::invalid_argument("record without a type");
      }
      const auto type = j["type"].get<std::string>();
      if (type == "header") {
        if (open) throw std::invalid_argument("header before the previous footer");
        TraceDocument doc;
        if (!j.contains("mode") || !j["mode"].is_string()) throw std::invalid_argument("header without mode");
        doc.mode = j["mode"].get<std::string>();
        parse_decode_mode(doc.mode);
        doc.source = parse_tokens(j, "source");
        open = std::move(doc);
      } else if (type == "step") {
        if (!open) throw std::invalid_argument("step outside a trace");
        if (!j.contains("iteration") || j["iteration"] != open->records.size()) {
          throw std::invalid_argument("step iterations out of order");
        }
        TraceRecord rec;
        rec.canvas = parse_tokens(j, "canvas");
        if (!j.contains("actions") || !j["actions"].is_array()) throw std::invalid_argument("step without actions");
        for (const auto& a : j["actions"]) rec.actions.push_back(parse_action(a));
        if (!j.contains("final") || !j["final"].is_boolean()) throw std::invalid_argument("step without final flag");
        rec.final = j["final"].get<bool>();
        if (j.contains("stop")) rec.stop = parse_action(j["stop"]);
        open->records.push_back(std::move(rec));
      } else if (type == "footer") {
        if (!open) throw std::invalid_argument("footer without header");
        open->output = parse_tokens(j, "output");
        if (!j.contains("truncated") || !j["truncated"].is_boolean()) {
          throw std::invalid_argument("footer without truncated flag");
        }
        open->truncated = j["truncated"].get<bool>();
        if (!j.contains("steps") || j["steps"] != open->records.size()) {
          throw std::invalid_argument("footer step count does not match");
        }
        docs.push_back(std::move(*open));
        open.reset();
      } else {
        throw std::invalid_argument("unknown record type '" + type + "'");
      }
    } catch (const TraceFormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw TraceFormatError(e.what(), line_start);
    }
  }
  if (open) throw TraceFormatError("trace ends without a footer", text.size());
  return docs;
}

std::string render_traces(const std::vector<TraceDocument>& docs) {
  std::ostringstream out;
  out << "insertion traces: " << docs.size() << '\n';
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    out << "\n[" << d + 1 << "] " << doc.mode << "  source: " << join(doc.source) << '\n';
    std::vector<std::size_t> fresh;  // canvas positions inserted by the previous step
    for (std::size_t t = 0; t < doc.records.size(); ++t) {
      const auto& rec = doc.records[t];
      std::string canvas;
      for (std::size_t i = 0; i < rec.canvas.size(); ++i) {
        if (i) canvas += ' ';
        const bool mark = std::find(fresh.begin(), fresh.end(), i) != fresh.end();
        canvas += mark ? "*" + rec.canvas[i] + "*" : rec.canvas[i];
      }
      out << "  t=" << t << "  [" << canvas << "]";
      if (rec.final) {
        out << "  stop";
        if (rec.stop) out << ' ' << rec.stop->token << '@' << rec.stop->location;
      } else {
        out << "  +";
        for (const auto& a : rec.actions) out << ' ' << a.token << '@' << a.location;
      }
      out << '\n';

      auto sorted = rec.actions;
      std::sort(sorted.begin(), sorted.end(),
                [](const TextAction& a, const TextAction& b) { return a.location < b.location; });
      fresh.clear();
      for (std::size_t k = 0; k < sorted.size(); ++k) fresh.push_back(sorted[k].location + k);
    }
    out << "  output: " << join(doc.output) << (doc.truncated ? "  (truncated)" : "") << '\n';
  }
  return out.str();
}

}  // namespace insertion
