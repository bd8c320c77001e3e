#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "insertion/checkpoint.hpp"
#include "insertion/losses.hpp"
#include "insertion/model.hpp"
#include "insertion/tasks.hpp"

namespace insertion {

struct TrainConfig {
  LossConfig loss;
  std::size_t batch_size = 64;  // (example, canvas) pairs per step
  std::size_t samples_per_example = 1;
  std::size_t steps = 5000;
  double learning_rate = 1e-3;  // peak, reached at the end of warmup
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::size_t warmup_steps = 200;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 0;  // 0 writes only the final checkpoint

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct BatchItem {
  std::size_t example = 0;
  CanvasSample sample;
  std::vector<SlotTarget> targets;
};

// Examples are drawn uniformly with replacement; each contributes
// `samples_per_example` independently sampled canvases.
std::vector<BatchItem> make_training_batch(const std::vector<Example>& examples,
                                           const LossConfig& loss, Rng& rng,
                                           std::size_t batch_size,
                                           std::size_t samples_per_example = 1);

// Mean per-item loss of a batch as a scalar on `tape`.
template <typename T>
nn::Tensor<T> batch_loss(nn::Tape<T>& tape, const InsertionTransformer<T>& model,
                         const std::vector<Example>& examples, const std::vector<BatchItem>& batch);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;  // one per parameter, in parameter order
  std::size_t step = 0;

  static OptimizerState zeros(const nn::ParameterSet<T>& params);
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double clip_norm = 0.0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(nn::ParameterSet<T>& params, double max_norm);

// Clips (when configured), then applies one bias-corrected Adam update
// using each parameter's accumulated gradient.
template <typename T>
void adam_step(nn::ParameterSet<T>& params, OptimizerState<T>& state, const AdamOptions& options);

// Linear warmup to the peak, then inverse-square-root decay. `step` is 1-based.
double learning_rate_at(const TrainConfig& config, std::size_t step);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

// One JSON line; `with_wall = false` drops the only nondeterministic field.
std::string format_metrics_line(const StepRecord& record, bool with_wall = true);

struct TrainOutput {
  std::filesystem::path run_dir;  // empty: no files written
  std::map<std::string, std::string> header;  // extra checkpoint header entries
  std::function<void(const StepRecord&)> on_step;
};

template <typename T>
struct TrainingState {
  OptimizerState<T> optimizer;
  std::size_t step = 0;  // completed steps
};

/// Runs steps state.step+1 .. config.steps. The batch for step s is drawn
/// from make_rng(config.seed, s), so a resumed run replays exactly.
template <typename T>
void train(InsertionTransformer<T>& model, TrainingState<T>& state, const Dataset& data,
           const TrainConfig& config, const TrainOutput& output = {});

template <typename T>
Checkpoint training_checkpoint(const InsertionTransformer<T>& model, const TrainingState<T>& state,
                               const Vocab& vocab, const std::map<std::string, std::string>& header);
template <typename T>
TrainingState<T> restore_training_state(const Checkpoint& ckpt, const InsertionTransformer<T>& model);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::size_t step);

}  // namespace insertion
