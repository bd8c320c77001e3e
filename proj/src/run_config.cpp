#include "insertion/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "insertion/checkpoint.hpp"

namespace insertion {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_number(key, v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename M>
Field size_field(M RunConfig::*member) {
  return {[member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<M>(to_u64(k, v));
          }};
}

#define NESTED_SIZE(outer, inner)                                                              \
  Field {                                                                                      \
    [](const RunConfig& c) { return std::to_string(c.outer.inner); },                          \
        [](RunConfig& c, const std::string& k, const std::string& v) {                         \
          c.outer.inner = static_cast<decltype(c.outer.inner)>(to_u64(k, v));                  \
        }                                                                                      \
  }
#define NESTED_REAL(outer, inner)                                                              \
  Field {                                                                                      \
    [](const RunConfig& c) { return format_number(c.outer.inner); },                           \
        [](RunConfig& c, const std::string& k, const std::string& v) {                         \
          c.outer.inner = to_double(k, v);                                                     \
        }                                                                                      \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"model.vocab_size", NESTED_SIZE(model, vocab_size)},
      {"model.d_model", NESTED_SIZE(model, d_model)},
      {"model.num_layers", NESTED_SIZE(model, num_layers)},
      {"model.num_heads", NESTED_SIZE(model, num_heads)},
      {"model.d_ff", NESTED_SIZE(model, d_ff)},
      {"model.head",
       {[](const RunConfig& c) { return to_string(c.model.head); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.head = wrap(k, [&] { return parse_head_variant(v); });
        }}},
      {"model.contextual_bias",
       {[](const RunConfig& c) { return std::string(c.model.contextual_bias ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.contextual_bias = to_bool(k, v);
        }}},
      {"model.mos_components", NESTED_SIZE(model, mos_components)},
      {"model.shared_embeddings",
       {[](const RunConfig& c) { return std::string(c.model.shared_embeddings ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.shared_embeddings = to_bool(k, v);
        }}},
      {"model.max_positions", NESTED_SIZE(model, max_positions)},
      {"model.seed", size_field(&RunConfig::model_seed)},

      {"loss.order",
       {[](const RunConfig& c) { return to_string(c.loss.order); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.loss.order = wrap(k, [&] { return parse_order(v); });
        }}},
      {"loss.temperature", NESTED_REAL(loss, temperature)},
      {"loss.termination",
       {[](const RunConfig& c) { return to_string(c.loss.termination); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.loss.termination = wrap(k, [&] { return parse_termination(v); });
        }}},

      {"train.batch_size", NESTED_SIZE(train, batch_size)},
      {"train.samples_per_example", NESTED_SIZE(train, samples_per_example)},
      {"train.steps", NESTED_SIZE(train, steps)},
      {"train.learning_rate", NESTED_REAL(train, learning_rate)},
      {"train.beta1", NESTED_REAL(train, beta1)},
      {"train.beta2", NESTED_REAL(train, beta2)},
      {"train.epsilon", NESTED_REAL(train, epsilon)},
      {"train.warmup_steps", NESTED_SIZE(train, warmup_steps)},
      {"train.clip_norm", NESTED_REAL(train, clip_norm)},
      {"train.seed", NESTED_SIZE(train, seed)},
      {"train.checkpoint_interval", NESTED_SIZE(train, checkpoint_interval)},

      {"decode.mode",
       {[](const RunConfig& c) { return to_string(c.decode.mode); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.decode.mode = wrap(k, [&] { return parse_decode_mode(v); });
        }}},
      {"decode.eos_penalty", NESTED_REAL(decode, eos_penalty)},
      {"decode.max_output_length", NESTED_SIZE(decode, max_output_length)},
      {"decode.max_iterations", NESTED_SIZE(decode, max_iterations)},

      {"task.kind",
       {[](const RunConfig& c) { return to_string(c.task.kind); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.task.kind = wrap(k, [&] { return parse_task_kind(v); });
        }}},
      {"task.content_vocab", NESTED_SIZE(task, content_vocab)},
      {"task.min_length", NESTED_SIZE(task, min_length)},
      {"task.max_length", NESTED_SIZE(task, max_length)},
      {"task.swap_probability", NESTED_REAL(task, swap_probability)},
      {"task.seed", NESTED_SIZE(task, seed)},
      {"task.train_pairs", size_field(&RunConfig::train_pairs)},
      {"task.eval_pairs", size_field(&RunConfig::eval_pairs)},
      {"task.train_file",
       {[](const RunConfig& c) { return c.train_file; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.train_file = v; }}},
      {"task.eval_file",
       {[](const RunConfig& c) { return c.eval_file; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.eval_file = v; }}},
  };
  return table;
}

#undef NESTED_SIZE
#undef NESTED_REAL

const Field& field(const std::string& key) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

RunConfig::RunConfig() {
  train.loss = loss;
  decode.termination = loss.termination;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : fields()) out.push_back(k);
    return out;
  }();
  return names;
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
  train.loss = loss;
  decode.termination = loss.termination;
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::size_t number = 0;
  for (std::string line; std::getline(in, line);) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    try {
      c.apply_override(body);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  try {
    return parse(s.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::string RunConfig::effective() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  auto check = [](auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
  check([&] { train.validate(); });
  check([&] { decode.validate(); });
  check([&] { task.validate(); });
  if (model.vocab_size != 0) {
    check([&] { model.validate(); });
  } else {
    auto probe = model;
    probe.vocab_size = special::kCount + 1;
    check([&] { probe.validate(); });
  }
  if (train_file.empty() && train_pairs == 0) throw ConfigError("task.train_pairs must be positive");
  if (model.max_positions < task.max_length + 2) {
    throw ConfigError("model.max_positions must cover task.max_length plus the two boundary marks");
  }
  if (model.max_positions < decode.max_output_length + 2) {
    throw ConfigError("model.max_positions must cover decode.max_output_length plus the two boundary marks");
  }
}

}  // namespace insertion
