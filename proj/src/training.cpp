#include "insertion/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace insertion {

void TrainConfig::validate() const {
  loss.validate();
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  if (samples_per_example == 0 || batch_size % samples_per_example != 0) {
    throw std::invalid_argument("train.samples_per_example must divide train.batch_size");
  }
  if (!(learning_rate > 0)) throw std::invalid_argument("train.learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0)) throw std::invalid_argument("train.epsilon must be positive");
  if (!(clip_norm >= 0)) throw std::invalid_argument("train.clip_norm must be nonnegative");
}

std::vector<BatchItem> make_training_batch(const std::vector<Example>& examples,
                                           const LossConfig& loss, Rng& rng,
                                           std::size_t batch_size,
                                           std::size_t samples_per_example) {
  if (examples.empty()) throw std::invalid_argument("make_training_batch: empty dataset");
  if (samples_per_example == 0) throw std::invalid_argument("samples_per_example must be positive");
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  std::vector<BatchItem> batch;
  batch.reserve(batch_size);
  while (batch.size() < batch_size) {
    const std::size_t e = pick(rng);
    const auto& y = examples[e].target;
    for (std::size_t s = 0; s < samples_per_example && batch.size() < batch_size; ++s) {
      BatchItem item;
      item.example = e;
      if (loss.order == Order::kLeftToRight) {
        item.sample = prefix_sample(y, std::uniform_int_distribution<std::size_t>(0, y.size())(rng));
      } else {
        item.sample = sample_subsequence(y, rng);
      }
      item.targets = build_slot_targets(y, item.sample, loss);
      batch.push_back(std::move(item));
    }
  }
  return batch;
}

template <typename T>
nn::Tensor<T> batch_loss(nn::Tape<T>& tape, const InsertionTransformer<T>& model,
                         const std::vector<Example>& examples, const std::vector<BatchItem>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::vector<TokenSeq> sources;
  std::vector<Canvas> canvases;
  sources.reserve(batch.size());
  canvases.reserve(batch.size());
  for (const auto& item : batch) {
    sources.push_back(examples[item.example].source);
    canvases.push_back(item.sample.canvas);
  }
  auto out = model.forward(tape, sources, canvases);
  const std::size_t vocab = model.config().vocab_size;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<nn::Pick> picks;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto p = target_picks(batch[i].targets, examples[batch[i].example].target, out.slots.begin(i),
                          vocab, scale);
    picks.insert(picks.end(), p.begin(), p.end());
  }
  return nn::weighted_nll(tape, out.joint, std::span<const nn::Pick>(picks));
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros(const nn::ParameterSet<T>& params) {
  OptimizerState<T> state;
  for (const auto& e : params.entries()) {
    state.m.emplace_back(e.tensor.size(), T(0));
    state.v.emplace_back(e.tensor.size(), T(0));
  }
  return state;
}

template <typename T>
double clip_grad_norm(nn::ParameterSet<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params.entries()) {
    for (T g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto factor = static_cast<T>(max_norm / norm);
    for (auto& e : params.entries()) {
      for (T& g : e.tensor.grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
void adam_step(nn::ParameterSet<T>& params, OptimizerState<T>& state, const AdamOptions& options) {
  auto& entries = params.entries();
  if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw nn::DimensionError("optimizer state holds " + std::to_string(state.m.size()) +
                             " moments for " + std::to_string(entries.size()) + " parameters");
  }
  if (options.clip_norm > 0) clip_grad_norm(params, options.clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<T>(options.beta1), b2 = static_cast<T>(options.beta2);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto value = entries[p].tensor.data();
    auto grad = entries[p].tensor.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != value.size() || v.size() != value.size()) {
      throw nn::DimensionError("optimizer moments for '" + entries[p].name + "' have " +
                               std::to_string(m.size()) + " entries, parameter has " +
                               std::to_string(value.size()));
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
      v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
      const double m_hat = static_cast<double>(m[i]) / c1;
      const double v_hat = static_cast<double>(v[i]) / c2;
      value[i] -= static_cast<T>(options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon));
    }
  }
}

double learning_rate_at(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps == 0) return config.learning_rate;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(config.warmup_steps);
  return config.learning_rate * std::min(s / w, std::sqrt(w / s));
}

std::string format_metrics_line(const StepRecord& r, bool with_wall) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["lr"] = r.learning_rate;
  j["grad_norm"] = r.grad_norm;
  if (with_wall) j["wall"] = r.wall_seconds;
  return j.dump();
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::size_t step) {
  return run_dir / ("ckpt-" + std::to_string(step) + ".insr");
}

namespace {

constexpr std::string_view kMomentM = "adam.m/";
constexpr std::string_view kMomentV = "adam.v/";

}  // namespace

template <typename T>
Checkpoint training_checkpoint(const InsertionTransformer<T>& model, const TrainingState<T>& state,
                               const Vocab& vocab, const std::map<std::string, std::string>& header) {
  Checkpoint ckpt;
  ckpt.header = header;
  store_model(ckpt, model, vocab);
  ckpt.header["state.completed_steps"] = std::to_string(state.step);
  ckpt.header["state.optimizer_steps"] = std::to_string(state.optimizer.step);
  const auto& entries = model.parameters().entries();
  if (state.optimizer.m.size() == entries.size()) {
    for (std::size_t p = 0; p < entries.size(); ++p) {
      const auto& m = state.optimizer.m[p];
      const auto& v = state.optimizer.v[p];
      ckpt.tensors.push_back({std::string(kMomentM) + entries[p].name, entries[p].tensor.shape(),
                              std::vector<float>(m.begin(), m.end())});
      ckpt.tensors.push_back({std::string(kMomentV) + entries[p].name, entries[p].tensor.shape(),
                              std::vector<float>(v.begin(), v.end())});
    }
  }
  return ckpt;
}

template <typename T>
TrainingState<T> restore_training_state(const Checkpoint& ckpt, const InsertionTransformer<T>& model) {
  TrainingState<T> state;
  state.optimizer = OptimizerState<T>::zeros(model.parameters());
  state.step = static_cast<std::size_t>(parse_number("state.completed_steps",
                                                     ckpt.value("state.completed_steps")));
  state.optimizer.step = static_cast<std::size_t>(
      parse_number("state.optimizer_steps", ckpt.value("state.optimizer_steps")));
  const auto& entries = model.parameters().entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const auto* m = ckpt.find(std::string(kMomentM) + entries[p].name);
    const auto* v = ckpt.find(std::string(kMomentV) + entries[p].name);
    if (!m || !v) {
      if (state.optimizer.step == 0) continue;
      throw CheckpointError("checkpoint lacks optimizer moments for '" + entries[p].name + "'");
    }
    if (m->values.size() != entries[p].tensor.size() || v->values.size() != entries[p].tensor.size()) {
      throw CheckpointError("optimizer moments for '" + entries[p].name + "' have the wrong size");
    }
    state.optimizer.m[p].assign(m->values.begin(), m->values.end());
    state.optimizer.v[p].assign(v->values.begin(), v->values.end());
  }
  return state;
}

template <typename T>
void train(InsertionTransformer<T>& model, TrainingState<T>& state, const Dataset& data,
           const TrainConfig& config, const TrainOutput& output) {
  config.validate();
  if (data.examples.empty()) throw std::invalid_argument("train: empty dataset");
  if (state.optimizer.m.empty()) state.optimizer = OptimizerState<T>::zeros(model.parameters());

  const bool write = !output.run_dir.empty();
  std::ofstream metrics;
  if (write) {
    std::filesystem::create_directories(output.run_dir);
    metrics.open(output.run_dir / "metrics.log", std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics log in " + output.run_dir.string());
  }
  auto save = [&](const std::filesystem::path& path) {
    save_checkpoint(path, training_checkpoint(model, state, data.vocab, output.header));
  };

  const auto start = std::chrono::steady_clock::now();
  auto& params = model.parameters();
  while (state.step < config.steps) {
    const std::size_t step = state.step + 1;
    auto rng = make_rng(config.seed, step);
    const auto batch = make_training_batch(data.examples, config.loss, rng, config.batch_size,
                                           config.samples_per_example);
    params.zero_grad();
    nn::Tape<T> tape;
    double loss = 0;
    std::string failure;
    try {
      auto l = batch_loss(tape, model, data.examples, batch);
      loss = static_cast<double>(l.item());
      if (!std::isfinite(loss)) failure = "non-finite loss";
      else tape.backward(l);
    } catch (const nn::NumericError& e) {
      failure = e.what();
    }
    if (failure.empty()) {
      for (const auto& e : params.entries()) {
        for (T g : e.tensor.grad_view()) {
          if (!std::isfinite(static_cast<double>(g))) {
            failure = "non-finite gradient in '" + e.name + "'";
            break;
          }
        }
        if (!failure.empty()) break;
      }
    }
    if (!failure.empty()) {
      std::string where;
      if (write) {
        const auto path = output.run_dir / ("nan-step-" + std::to_string(step) + ".insr");
        save(path);
        where = "; parameters before the step saved to " + path.string();
      }
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + failure +
                            where);
    }

    const double lr = learning_rate_at(config, step);
    const double norm = clip_grad_norm(params, config.clip_norm);
    adam_step(params, state.optimizer,
              AdamOptions{lr, config.beta1, config.beta2, config.epsilon, 0.0});
    tape.clear();
    state.step = step;

    const StepRecord record{
        step, loss, lr, norm,
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    if (write) metrics << format_metrics_line(record) << '\n' << std::flush;
    if (output.on_step) output.on_step(record);
    if (write && config.checkpoint_interval && step % config.checkpoint_interval == 0 &&
        step != config.steps) {
      save(checkpoint_path(output.run_dir, step));
    }
  }
  if (write) save(checkpoint_path(output.run_dir, state.step));
}

#define INSERTION_TRAINING_INSTANTIATE(T)                                                       \
  template nn::Tensor<T> batch_loss(nn::Tape<T>&, const InsertionTransformer<T>&,              \
                                    const std::vector<Example>&, const std::vector<BatchItem>&); \
  template struct OptimizerState<T>;                                                            \
  template double clip_grad_norm(nn::ParameterSet<T>&, double);                                 \
  template void adam_step(nn::ParameterSet<T>&, OptimizerState<T>&, const AdamOptions&);        \
  template Checkpoint training_checkpoint(const InsertionTransformer<T>&,                       \
                                          const TrainingState<T>&, const Vocab&,                \
                                          const std::map<std::string, std::string>&);           \
  template TrainingState<T> restore_training_state(const Checkpoint&,                           \
                                                   const InsertionTransformer<T>&);             \
  template void train(InsertionTransformer<T>&, TrainingState<T>&, const Dataset&,              \
                      const TrainConfig&, const TrainOutput&);

INSERTION_TRAINING_INSTANTIATE(float)
INSERTION_TRAINING_INSTANTIATE(double)

}  // namespace insertion
