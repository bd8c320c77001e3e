#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "insertion/canvas.hpp"
#include "insertion/distribution.hpp"
#include "insertion/nn/ops.hpp"
#include "insertion/nn/parameters.hpp"

namespace insertion {

enum class HeadVariant { kJoint, kFactorized };

std::string to_string(HeadVariant v);
HeadVariant parse_head_variant(const std::string& s);

struct ModelConfig {
  std::size_t vocab_size = 0;  // |C|, reserved ids included
  std::size_t d_model = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_ff = 256;
  HeadVariant head = HeadVariant::kFactorized;
  bool contextual_bias = false;
  std::size_t mos_components = 1;  // K; 1 disables the mixture
  std::size_t max_positions = 256;
  bool shared_embeddings = true;  // one token table for source and canvas

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Slot representations for a batch of canvases: canvas i owns rows
/// slots.begin(i) .. slots.end(i) (T_i + 1 of them), each of width d_model.
template <typename T>
struct SlotMatrix {
  nn::Tensor<T> rows;
  nn::Segments slots;
};

/// Head output for a batch: joint log p(c, l) per slot row, normalized per
/// canvas. For the factorized head `location` holds log p(l) (one column)
/// and `conditional` log p(c | l); for the joint head both are left empty.
template <typename T>
struct HeadOutput {
  nn::Tensor<T> joint;
  nn::Tensor<T> location;
  nn::Tensor<T> conditional;
  nn::Segments slots;
};

template <typename T>
struct EncoderMemory {
  nn::Tensor<T> states;
  nn::Segments segments;
};

/// Encoder-decoder Transformer whose decoder reads the whole canvas
/// (no causal mask) between boundary markers and scores every
/// (content, slot) pair.
template <typename T>
class InsertionTransformer {
 public:
  InsertionTransformer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  EncoderMemory<T> encode(nn::Tape<T>& tape, std::span<const TokenSeq> sources) const;
  nn::Tensor<T> encode(nn::Tape<T>& tape, const TokenSeq& source) const;

  SlotMatrix<T> slot_representations(nn::Tape<T>& tape, const EncoderMemory<T>& memory,
                                     std::span<const Canvas> canvases) const;

  // Dispatches on the configured variant (bias and mixture included).
  HeadOutput<T> heads(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;
  HeadOutput<T> forward(nn::Tape<T>& tape, std::span<const TokenSeq> sources,
                        std::span<const Canvas> canvases) const;

  // One softmax over all (T+1)·|C| logits per canvas.
  HeadOutput<T> joint_distribution(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;
  // p(l) = softmax(Hq), p(c|l) = row softmax; needs the factorized variant.
  HeadOutput<T> factorized_distribution(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;
  // b = maxpool(H)·V per canvas (S×|C|); needs contextual_bias.
  nn::Tensor<T> contextual_vocab_bias(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;
  // Per-row content log-probabilities: a K-component mixture when K > 1,
  // otherwise the plain row softmax of the content logits.
  nn::Tensor<T> mixture_of_softmaxes(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;

  // Inference convenience for a single (source, canvas) pair.
  ContentLocationDistribution distribution(const TokenSeq& source, const Canvas& canvas) const;
  ContentLocationDistribution distribution(const EncoderMemory<T>& memory,
                                           const Canvas& canvas) const;

 private:
  struct AttentionParams {
    nn::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct NormParams {
    nn::Tensor<T> gain, bias;
  };
  struct FeedForwardParams {
    nn::Tensor<T> w1, b1, w2, b2;
  };
  struct EncoderLayer {
    NormParams norm_attn, norm_ffn;
    AttentionParams self_attn;
    FeedForwardParams ffn;
  };
  struct DecoderLayer {
    NormParams norm_self, norm_cross, norm_ffn;
    AttentionParams self_attn, cross_attn;
    FeedForwardParams ffn;
  };

  AttentionParams make_attention(const std::string& prefix, nn::Rng& rng);
  NormParams make_norm(const std::string& prefix);
  FeedForwardParams make_ffn(const std::string& prefix, nn::Rng& rng);

  nn::Tensor<T> embed(nn::Tape<T>& tape, const nn::Tensor<T>& table,
                      std::span<const TokenId> ids, const nn::Segments& segments) const;
  nn::Tensor<T> attend(nn::Tape<T>& tape, const AttentionParams& p, const nn::Tensor<T>& queries,
                       const nn::Tensor<T>& keys, const nn::Segments& q_segments,
                       const nn::Segments& k_segments) const;
  nn::Tensor<T> feed_forward(nn::Tape<T>& tape, const FeedForwardParams& p,
                             const nn::Tensor<T>& x) const;
  nn::Tensor<T> norm(nn::Tape<T>& tape, const NormParams& p, const nn::Tensor<T>& x) const;
  // Content logits per mixture component (one entry when K = 1), bias added.
  std::vector<nn::Tensor<T>> content_logits(nn::Tape<T>& tape, const SlotMatrix<T>& h) const;

  ModelConfig config_;
  nn::ParameterSet<T> params_;
  std::vector<T> positional_;  // max_positions × d_model

  nn::Tensor<T> source_embed_, target_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  NormParams encoder_norm_, decoder_norm_;
  nn::Tensor<T> slot_merge_;
  nn::Tensor<T> output_proj_;      // W
  nn::Tensor<T> location_query_;   // q
  nn::Tensor<T> bias_proj_;        // V
  std::vector<nn::Tensor<T>> mos_proj_, mos_bias_;
  nn::Tensor<T> mos_prior_;
};

// Copies parameter values between precisions (names and shapes must match).
template <typename To, typename From>
void copy_parameters(const InsertionTransformer<From>& from, InsertionTransformer<To>& to);

}  // namespace insertion
