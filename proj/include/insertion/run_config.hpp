#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "insertion/decoding.hpp"
#include "insertion/losses.hpp"
#include "insertion/model.hpp"
#include "insertion/tasks.hpp"
#include "insertion/training.hpp"

namespace insertion {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a run needs, addressable by flat dotted keys such as
/// `loss.temperature` or `train.steps`. Text form: one `key = value` per
/// line, `#` starts a comment.
struct RunConfig {
  ModelConfig model;  // vocab_size 0: taken from the data
  std::uint64_t model_seed = 1;
  LossConfig loss;
  TrainConfig train;  // train.loss mirrors `loss`
  DecodeConfig decode;  // decode.termination mirrors loss.termination
  TaskSpec task;
  std::size_t train_pairs = 10000;
  std::size_t eval_pairs = 1000;
  std::string train_file;  // corpus files replace the generated task
  std::string eval_file;

  RunConfig();

  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  // "key=value"
  void apply_override(std::string_view assignment);

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  // Every key, sorted; parse(effective()) reproduces the config.
  std::string effective() const;
  std::map<std::string, std::string> entries() const;

  // Cross-field checks; throws ConfigError.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

}  // namespace insertion
