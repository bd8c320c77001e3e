#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "insertion/model.hpp"
#include "insertion/vocab.hpp"

namespace insertion {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;
};

/// In-memory image of an `.insr` file:
///
///   "INSR" | u32 version | u32 header bytes | header text ("key = value" lines)
///   u32 tensor count | per tensor: u32 name bytes, name, u32 rank, u32 dims...,
///                      u64 byte offset, u64 element count
///   f32 data, tensors back to back
///
/// All integers and floats little-endian; offsets are relative to the data block.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> header;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  const std::string& value(const std::string& key) const;  // throws when missing
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

// Writes to a sibling temporary file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Shortest round-trip text form of a double, for header values.
std::string format_number(double v);
double parse_number(const std::string& key, const std::string& text);

// model.* header keys.
std::map<std::string, std::string> model_config_entries(const ModelConfig& config);
ModelConfig model_config_from(const std::map<std::string, std::string>& header);

template <typename T>
void store_model(Checkpoint& ckpt, const InsertionTransformer<T>& model, const Vocab& vocab);

Vocab stored_vocab(const Checkpoint& ckpt);

template <typename T>
InsertionTransformer<T> restore_model(const Checkpoint& ckpt);

}  // namespace insertion
