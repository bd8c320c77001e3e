#include "insertion/model.hpp"

#include <cmath>
#include <stdexcept>

#include "insertion/vocab.hpp"

namespace insertion {

std::string to_string(HeadVariant v) { return v == HeadVariant::kJoint ? "joint" : "factorized"; }

HeadVariant parse_head_variant(const std::string& s) {
  if (s == "joint") return HeadVariant::kJoint;
  if (s == "factorized") return HeadVariant::kFactorized;
  throw std::invalid_argument("unknown head variant '" + s + "' (expected joint|factorized)");
}

void ModelConfig::validate() const {
  if (vocab_size <= special::kCount) {
    throw std::invalid_argument("model vocab_size must exceed the " +
                                std::to_string(special::kCount) + " reserved ids");
  }
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0) {
    throw std::invalid_argument("d_model (" + std::to_string(d_model) +
                                ") must be a positive multiple of num_heads (" +
                                std::to_string(num_heads) + ")");
  }
  if (d_ff == 0) throw std::invalid_argument("d_ff must be positive");
  if (mos_components == 0) throw std::invalid_argument("mos_components must be at least 1");
  if (max_positions < 2) throw std::invalid_argument("max_positions must be at least 2");
}

template <typename T>
InsertionTransformer<T>::InsertionTransformer(ModelConfig config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  nn::Rng rng(seed);
  const std::size_t h = config_.d_model, v = config_.vocab_size;

  positional_.resize(config_.max_positions * h);
  for (std::size_t pos = 0; pos < config_.max_positions; ++pos) {
    for (std::size_t i = 0; i < h; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(h));
      positional_[pos * h + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < h) positional_[pos * h + i + 1] = static_cast<T>(std::cos(angle));
    }
  }

  const double embed_std = 1.0 / std::sqrt(static_cast<double>(h));
  if (config_.shared_embeddings) {
    source_embed_ = params_.add("embed.tokens", {v, h});
    nn::normal_fill(source_embed_, embed_std, rng);
    target_embed_ = source_embed_;
  } else {
    source_embed_ = params_.add("embed.source", {v, h});
    nn::normal_fill(source_embed_, embed_std, rng);
    target_embed_ = params_.add("embed.target", {v, h});
    nn::normal_fill(target_embed_, embed_std, rng);
  }

  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    EncoderLayer layer;
    layer.norm_attn = make_norm(p + "norm_attn");
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm_ffn = make_norm(p + "norm_ffn");
    layer.ffn = make_ffn(p + "ffn", rng);
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = make_norm("encoder.norm");

  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    DecoderLayer layer;
    layer.norm_self = make_norm(p + "norm_self");
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm_cross = make_norm(p + "norm_cross");
    layer.cross_attn = make_attention(p + "cross_attn", rng);
    layer.norm_ffn = make_norm(p + "norm_ffn");
    layer.ffn = make_ffn(p + "ffn", rng);
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = make_norm("decoder.norm");

  slot_merge_ = params_.add("head.slot_merge", {2 * h, h});
  nn::glorot_uniform(slot_merge_, rng);
  output_proj_ = params_.add("head.output", {h, v});
  nn::glorot_uniform(output_proj_, rng);
  if (config_.head == HeadVariant::kFactorized) {
    location_query_ = params_.add("head.location_query", {h, 1});
    nn::glorot_uniform(location_query_, rng);
  }
  if (config_.contextual_bias) {
    bias_proj_ = params_.add("head.bias_proj", {h, v});
    nn::glorot_uniform(bias_proj_, rng);
  }
  if (config_.mos_components > 1) {
    for (std::size_t k = 0; k < config_.mos_components; ++k) {
      const std::string p = "head.mos." + std::to_string(k) + ".";
      auto w = params_.add(p + "proj", {h, h});
      nn::glorot_uniform(w, rng);
      mos_proj_.push_back(w);
      mos_bias_.push_back(params_.add(p + "bias", {h}));
    }
    mos_prior_ = params_.add("head.mos.prior", {h, config_.mos_components});
    nn::glorot_uniform(mos_prior_, rng);
  }
}

template <typename T>
typename InsertionTransformer<T>::AttentionParams InsertionTransformer<T>::make_attention(
    const std::string& prefix, nn::Rng& rng) {
  const std::size_t h = config_.d_model;
  AttentionParams p;
  auto weight = [&](const std::string& name) {
    auto t = params_.add(prefix + "." + name, {h, h});
    nn::glorot_uniform(t, rng);
    return t;
  };
  auto bias = [&](const std::string& name) { return params_.add(prefix + "." + name, {h}); };
  p.wq = weight("wq");
  p.bq = bias("bq");
  p.wk = weight("wk");
  p.bk = bias("bk");
  p.wv = weight("wv");
  p.bv = bias("bv");
  p.wo = weight("wo");
  p.bo = bias("bo");
  return p;
}

template <typename T>
typename InsertionTransformer<T>::NormParams InsertionTransformer<T>::make_norm(
    const std::string& prefix) {
  NormParams p;
  p.gain = params_.add(prefix + ".gain", {config_.d_model});
  nn::constant_fill(p.gain, T(1));
  p.bias = params_.add(prefix + ".bias", {config_.d_model});
  return p;
}

template <typename T>
typename InsertionTransformer<T>::FeedForwardParams InsertionTransformer<T>::make_ffn(
    const std::string& prefix, nn::Rng& rng) {
  FeedForwardParams p;
  p.w1 = params_.add(prefix + ".w1", {config_.d_model, config_.d_ff});
  nn::glorot_uniform(p.w1, rng);
  p.b1 = params_.add(prefix + ".b1", {config_.d_ff});
  p.w2 = params_.add(prefix + ".w2", {config_.d_ff, config_.d_model});
  nn::glorot_uniform(p.w2, rng);
  p.b2 = params_.add(prefix + ".b2", {config_.d_model});
  return p;
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::embed(nn::Tape<T>& tape, const nn::Tensor<T>& table,
                                             std::span<const TokenId> ids,
                                             const nn::Segments& segments) const {
  const std::size_t h = config_.d_model;
  auto x = nn::embedding(tape, table, ids);
  x = nn::scale(tape, x, static_cast<T>(std::sqrt(static_cast<double>(h))));
  nn::Tensor<T> pe({ids.size(), h});
  auto pd = pe.data();
  for (std::size_t s = 0; s < segments.count(); ++s) {
    if (segments.length(s) > config_.max_positions) {
      throw std::length_error("sequence of length " + std::to_string(segments.length(s)) +
                              " exceeds max_positions " + std::to_string(config_.max_positions));
    }
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) {
      const std::size_t pos = r - segments.begin(s);
      std::copy_n(positional_.data() + pos * h, h, pd.data() + r * h);
    }
  }
  return nn::add(tape, x, pe);
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::norm(nn::Tape<T>& tape, const NormParams& p,
                                            const nn::Tensor<T>& x) const {
  return nn::layer_norm(tape, x, p.gain, p.bias, T(1e-5));
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::attend(nn::Tape<T>& tape, const AttentionParams& p,
                                              const nn::Tensor<T>& queries,
                                              const nn::Tensor<T>& keys,
                                              const nn::Segments& q_segments,
                                              const nn::Segments& k_segments) const {
  auto q = nn::add_bias(tape, nn::matmul(tape, queries, p.wq), p.bq);
  auto k = nn::add_bias(tape, nn::matmul(tape, keys, p.wk), p.bk);
  auto v = nn::add_bias(tape, nn::matmul(tape, keys, p.wv), p.bv);
  auto a = nn::attention(tape, q, k, v, config_.num_heads, q_segments, k_segments);
  return nn::add_bias(tape, nn::matmul(tape, a, p.wo), p.bo);
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::feed_forward(nn::Tape<T>& tape, const FeedForwardParams& p,
                                                    const nn::Tensor<T>& x) const {
  auto hidden = nn::relu(tape, nn::add_bias(tape, nn::matmul(tape, x, p.w1), p.b1));
  return nn::add_bias(tape, nn::matmul(tape, hidden, p.w2), p.b2);
}

template <typename T>
EncoderMemory<T> InsertionTransformer<T>::encode(nn::Tape<T>& tape,
                                                 std::span<const TokenSeq> sources) const {
  nn::Segments segments;
  TokenSeq ids;
  for (const auto& src : sources) {
    segments.push(src.size());
    ids.insert(ids.end(), src.begin(), src.end());
  }
  auto x = embed(tape, source_embed_, ids, segments);
  for (const auto& layer : encoder_) {
    auto n = norm(tape, layer.norm_attn, x);
    x = nn::add(tape, x, attend(tape, layer.self_attn, n, n, segments, segments));
    x = nn::add(tape, x, feed_forward(tape, layer.ffn, norm(tape, layer.norm_ffn, x)));
  }
  return {norm(tape, encoder_norm_, x), segments};
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::encode(nn::Tape<T>& tape, const TokenSeq& source) const {
  return encode(tape, std::span<const TokenSeq>(&source, 1)).states;
}

template <typename T>
SlotMatrix<T> InsertionTransformer<T>::slot_representations(nn::Tape<T>& tape,
                                                             const EncoderMemory<T>& memory,
                                                             std::span<const Canvas> canvases) const {
  if (canvases.size() != memory.segments.count()) {
    throw std::invalid_argument("slot_representations: " + std::to_string(canvases.size()) +
                                " canvases for " + std::to_string(memory.segments.count()) +
                                " encoded sources");
  }
  nn::Segments segments, slots;
  TokenSeq ids;
  for (const auto& canvas : canvases) {
    if (canvas.length() + 2 > config_.max_positions) {
      throw std::length_error("canvas of length " + std::to_string(canvas.length()) +
                              " exceeds max_positions " + std::to_string(config_.max_positions));
    }
    segments.push(canvas.length() + 2);
    slots.push(canvas.length() + 1);
    ids.push_back(special::kLeftMark);
    ids.insert(ids.end(), canvas.tokens().begin(), canvas.tokens().end());
    ids.push_back(special::kRightMark);
  }
  auto x = embed(tape, target_embed_, ids, segments);
  for (const auto& layer : decoder_) {
    auto n = norm(tape, layer.norm_self, x);
    x = nn::add(tape, x, attend(tape, layer.self_attn, n, n, segments, segments));
    x = nn::add(tape, x, attend(tape, layer.cross_attn, norm(tape, layer.norm_cross, x),
                                memory.states, segments, memory.segments));
    x = nn::add(tape, x, feed_forward(tape, layer.ffn, norm(tape, layer.norm_ffn, x)));
  }
  x = norm(tape, decoder_norm_, x);
  auto pairs = nn::adjacent_pairs(tape, x, segments);
  return {nn::matmul(tape, pairs, slot_merge_), slots};
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::contextual_vocab_bias(nn::Tape<T>& tape,
                                                             const SlotMatrix<T>& h) const {
  if (!config_.contextual_bias) {
    throw std::logic_error("contextual_vocab_bias: model built without contextual bias");
  }
  auto pooled = nn::segment_max(tape, h.rows, h.slots);
  return nn::matmul(tape, pooled, bias_proj_);
}

template <typename T>
std::vector<nn::Tensor<T>> InsertionTransformer<T>::content_logits(nn::Tape<T>& tape,
                                                                   const SlotMatrix<T>& h) const {
  std::vector<nn::Tensor<T>> logits;
  if (config_.mos_components > 1) {
    for (std::size_t k = 0; k < config_.mos_components; ++k) {
      auto projected =
          nn::tanh(tape, nn::add_bias(tape, nn::matmul(tape, h.rows, mos_proj_[k]), mos_bias_[k]));
      logits.push_back(nn::matmul(tape, projected, output_proj_));
    }
  } else {
    logits.push_back(nn::matmul(tape, h.rows, output_proj_));
  }
  if (config_.contextual_bias) {
    auto shared = nn::broadcast_segments(tape, contextual_vocab_bias(tape, h), h.slots);
    for (auto& z : logits) z = nn::add(tape, z, shared);
  }
  return logits;
}

template <typename T>
nn::Tensor<T> InsertionTransformer<T>::mixture_of_softmaxes(nn::Tape<T>& tape,
                                                            const SlotMatrix<T>& h) const {
  auto logits = content_logits(tape, h);
  for (auto& z : logits) z = nn::log_softmax(tape, z, h.slots, nn::Normalize::kRow);
  if (logits.size() == 1) return logits.front();
  auto prior = nn::log_softmax(tape, nn::matmul(tape, h.rows, mos_prior_), h.slots,
                               nn::Normalize::kRow);
  return nn::log_mixture(tape, logits, prior);
}

template <typename T>
HeadOutput<T> InsertionTransformer<T>::joint_distribution(nn::Tape<T>& tape,
                                                          const SlotMatrix<T>& h) const {
  auto logits = content_logits(tape, h);
  for (auto& z : logits) z = nn::log_softmax(tape, z, h.slots, nn::Normalize::kSegment);
  HeadOutput<T> out;
  out.slots = h.slots;
  if (logits.size() == 1) {
    out.joint = logits.front();
    return out;
  }
  // Whole-canvas mixture weights from the pooled slot states.
  auto pooled = nn::segment_max(tape, h.rows, h.slots);
  auto prior = nn::log_softmax(tape, nn::matmul(tape, pooled, mos_prior_),
                               nn::Segments::single(pooled.rows()), nn::Normalize::kRow);
  out.joint = nn::log_mixture(tape, logits, nn::broadcast_segments(tape, prior, h.slots));
  return out;
}

template <typename T>
HeadOutput<T> InsertionTransformer<T>::factorized_distribution(nn::Tape<T>& tape,
                                                               const SlotMatrix<T>& h) const {
  if (config_.head != HeadVariant::kFactorized) {
    throw std::logic_error("factorized_distribution: model uses the joint head");
  }
  HeadOutput<T> out;
  out.slots = h.slots;
  out.conditional = mixture_of_softmaxes(tape, h);
  out.location = nn::log_softmax(tape, nn::matmul(tape, h.rows, location_query_), h.slots,
                                 nn::Normalize::kSegment);
  out.joint = nn::add_column(tape, out.conditional, out.location);
  return out;
}

template <typename T>
HeadOutput<T> InsertionTransformer<T>::heads(nn::Tape<T>& tape, const SlotMatrix<T>& h) const {
  return config_.head == HeadVariant::kJoint ? joint_distribution(tape, h)
                                             : factorized_distribution(tape, h);
}

template <typename T>
HeadOutput<T> InsertionTransformer<T>::forward(nn::Tape<T>& tape,
                                               std::span<const TokenSeq> sources,
                                               std::span<const Canvas> canvases) const {
  auto memory = encode(tape, sources);
  return heads(tape, slot_representations(tape, memory, canvases));
}

template <typename T>
ContentLocationDistribution InsertionTransformer<T>::distribution(const EncoderMemory<T>& memory,
                                                                  const Canvas& canvas) const {
  nn::Tape<T> tape(/*recording=*/false);
  auto out = heads(tape, slot_representations(tape, memory, std::span<const Canvas>(&canvas, 1)));
  const std::size_t slots = canvas.slot_count(), v = config_.vocab_size;
  if (config_.head == HeadVariant::kFactorized) {
    std::vector<double> loc(out.location.data().begin(), out.location.data().end());
    std::vector<double> cond(out.conditional.data().begin(), out.conditional.data().end());
    return ContentLocationDistribution::from_factorized(std::move(loc), v, std::move(cond));
  }
  std::vector<double> joint(out.joint.data().begin(), out.joint.data().end());
  return ContentLocationDistribution::from_joint(slots, v, std::move(joint));
}

template <typename T>
ContentLocationDistribution InsertionTransformer<T>::distribution(const TokenSeq& source,
                                                                  const Canvas& canvas) const {
  nn::Tape<T> tape(/*recording=*/false);
  return distribution(encode(tape, std::span<const TokenSeq>(&source, 1)), canvas);
}

template <typename To, typename From>
void copy_parameters(const InsertionTransformer<From>& from, InsertionTransformer<To>& to) {
  if (!(from.config() == to.config())) {
    throw std::invalid_argument("copy_parameters: model configurations differ");
  }
  const auto& src = from.parameters().entries();
  auto& dst = to.parameters().entries();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto in = src[i].tensor.data();
    auto out = dst[i].tensor.data();
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<To>(in[j]);
  }
}

template class InsertionTransformer<float>;
template class InsertionTransformer<double>;
template void copy_parameters(const InsertionTransformer<float>&, InsertionTransformer<double>&);
template void copy_parameters(const InsertionTransformer<double>&, InsertionTransformer<float>&);
template void copy_parameters(const InsertionTransformer<float>&, InsertionTransformer<float>&);
template void copy_parameters(const InsertionTransformer<double>&, InsertionTransformer<double>&);

}  // namespace insertion
