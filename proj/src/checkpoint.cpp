#include "insertion/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

namespace insertion {

namespace {

constexpr std::string_view kMagic = "INSR";
constexpr std::string_view kParamPrefix = "param/";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t uint(std::size_t width, const char* what) {
    const auto raw = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return v;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw CheckpointError("header key '" + key + "' is not an unsigned integer: '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw CheckpointError("header key '" + key + "' is not a boolean: '" + text + "'");
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw CheckpointError("cannot format number");
  return std::string(buf, end);
}

double parse_number(const std::string& key, const std::string& text) {
  double v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw CheckpointError("header key '" + key + "' is not a number: '" + text + "'");
  }
  return v;
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const std::string& Checkpoint::value(const std::string& key) const {
  const auto it = header.find(key);
  if (it == header.end()) throw CheckpointError("checkpoint header has no '" + key + "'");
  return it->second;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string header;
  for (const auto& [key, value] : ckpt.header) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw CheckpointError("header entry '" + key + "' cannot be stored as a single line");
    }
    header += key + " = " + value + "\n";
  }

  std::string out(kMagic);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (nn::shape_size(t.shape) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' has shape " + nn::shape_string(t.shape) +
                            " but " + std::to_string(t.values.size()) + " values");
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u64(out, offset);
    put_u64(out, t.values.size());
    offset += 4 * t.values.size();
  }
  for (const auto& t : ckpt.tensors) {
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != kMagic) throw CheckpointError("not a checkpoint (bad magic bytes)");
  const auto version = in.uint(4, "version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header_len = in.uint(4, "header length");
  std::istringstream header(std::string(in.take(header_len, "header")));
  std::string line;
  while (std::getline(header, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointError("malformed header line '" + line + "'");
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 3);
  }

  struct Entry {
    std::uint64_t offset, count;
  };
  std::vector<Entry> layout;
  const auto count = in.uint(4, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = std::string(in.take(in.uint(4, "name length"), "tensor name"));
    const auto rank = in.uint(4, "rank");
    for (std::uint64_t r = 0; r < rank; ++r) t.shape.push_back(in.uint(4, "dimension"));
    Entry e{in.uint(8, "offset"), in.uint(8, "element count")};
    if (e.count != nn::shape_size(t.shape)) {
      throw CheckpointError("tensor '" + t.name + "' count does not match its shape");
    }
    layout.push_back(e);
    ckpt.tensors.push_back(std::move(t));
  }
  const auto data = in.take(in.remaining(), "data");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto [offset, n] = layout[i];
    if (offset > data.size() || n * 4 > data.size() - offset) {
      throw CheckpointError("tensor '" + ckpt.tensors[i].name + "' lies outside the data block");
    }
    auto& values = ckpt.tensors[i].values;
    values.resize(n);
    for (std::uint64_t j = 0; j < n; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + 4 * j + b]))
                << (8 * b);
      }
      values[j] = std::bit_cast<float>(bits);
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

std::map<std::string, std::string> model_config_entries(const ModelConfig& c) {
  return {
      {"model.vocab_size", std::to_string(c.vocab_size)},
      {"model.d_model", std::to_string(c.d_model)},
      {"model.num_layers", std::to_string(c.num_layers)},
      {"model.num_heads", std::to_string(c.num_heads)},
      {"model.d_ff", std::to_string(c.d_ff)},
      {"model.head", to_string(c.head)},
      {"model.contextual_bias", c.contextual_bias ? "true" : "false"},
      {"model.mos_components", std::to_string(c.mos_components)},
      {"model.max_positions", std::to_string(c.max_positions)},
      {"model.shared_embeddings", c.shared_embeddings ? "true" : "false"},
  };
}

ModelConfig model_config_from(const std::map<std::string, std::string>& header) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) throw CheckpointError("checkpoint header has no '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = parse_size("model.vocab_size", get("model.vocab_size"));
  c.d_model = parse_size("model.d_model", get("model.d_model"));
  c.num_layers = parse_size("model.num_layers", get("model.num_layers"));
  c.num_heads = parse_size("model.num_heads", get("model.num_heads"));
  c.d_ff = parse_size("model.d_ff", get("model.d_ff"));
  c.head = parse_head_variant(get("model.head"));
  c.contextual_bias = parse_bool("model.contextual_bias", get("model.contextual_bias"));
  c.shared_embeddings = parse_bool("model.shared_embeddings", get("model.shared_embeddings"));
  c.mos_components = parse_size("model.mos_components", get("model.mos_components"));
  c.max_positions = parse_size("model.max_positions", get("model.max_positions"));
  return c;
}

template <typename T>
void store_model(Checkpoint& ckpt, const InsertionTransformer<T>& model, const Vocab& vocab) {
  if (vocab.size() != model.config().vocab_size) {
    throw CheckpointError("vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but the model expects " +
                          std::to_string(model.config().vocab_size));
  }
  for (auto& [k, v] : model_config_entries(model.config())) ckpt.header[k] = v;
  std::string tokens;
  for (const auto& t : vocab.tokens()) tokens += (tokens.empty() ? "" : " ") + t;
  ckpt.header["vocab.tokens"] = tokens;

  std::erase_if(ckpt.tensors, [](const StoredTensor& t) { return t.name.starts_with(kParamPrefix); });
  std::vector<StoredTensor> params;
  for (const auto& e : model.parameters().entries()) {
    const auto data = e.tensor.data();
    params.push_back({std::string(kParamPrefix) + e.name, e.tensor.shape(),
                      std::vector<float>(data.begin(), data.end())});
  }
  ckpt.tensors.insert(ckpt.tensors.begin(), params.begin(), params.end());
}

Vocab stored_vocab(const Checkpoint& ckpt) {
  std::vector<std::string> tokens;
  std::istringstream in(ckpt.value("vocab.tokens"));
  for (std::string t; in >> t;) tokens.push_back(t);
  auto vocab = Vocab::from_tokens(tokens);
  vocab.freeze();
  return vocab;
}

template <typename T>
InsertionTransformer<T> restore_model(const Checkpoint& ckpt) {
  InsertionTransformer<T> model(model_config_from(ckpt.header), 0);
  for (auto& e : model.parameters().entries()) {
    const auto* stored = ckpt.find(std::string(kParamPrefix) + e.name);
    if (!stored) throw CheckpointError("checkpoint is missing parameter '" + e.name + "'");
    if (stored->shape != e.tensor.shape()) {
      throw CheckpointError("parameter '" + e.name + "' has shape " +
                            nn::shape_string(stored->shape) + ", model expects " +
                            nn::shape_string(e.tensor.shape()));
    }
    auto out = e.tensor.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(stored->values[i]);
  }
  return model;
}

template void store_model(Checkpoint&, const InsertionTransformer<float>&, const Vocab&);
template void store_model(Checkpoint&, const InsertionTransformer<double>&, const Vocab&);
template InsertionTransformer<float> restore_model(const Checkpoint&);
template InsertionTransformer<double> restore_model(const Checkpoint&);

}  // namespace insertion
