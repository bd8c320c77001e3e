#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "insertion/checkpoint.hpp"
#include "insertion/training.hpp"
#include "model_support.hpp"

using namespace insertion;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Dataset copy_data(std::size_t count = 200) {
  TaskSpec spec;
  spec.content_vocab = 6;
  spec.min_length = 1;
  spec.max_length = 6;
  spec.seed = 3;
  return generate_dataset(spec, 0, count);
}

ModelConfig small_model() {
  auto c = tiny_config();
  c.vocab_size = special::kCount + 6;
  return c;
}

TrainConfig quick(std::size_t steps) {
  TrainConfig c;
  c.loss.order = Order::kBinaryTree;
  c.batch_size = 16;
  c.steps = steps;
  c.warmup_steps = 20;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

std::vector<std::string> log_without_wall(const std::vector<StepRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(format_metrics_line(r, false));
  return out;
}

}  // namespace

TEST_CASE("single Adam step matches the hand computation") {
  nn::ParameterSet<double> params;
  auto w = params.add("w", {1});
  w[0] = 0.0;
  w.grad()[0] = 1.0;
  auto state = OptimizerState<double>::zeros(params);
  adam_step(params, state, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  CHECK(w[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(-0.0999999990).epsilon(1e-9));
  CHECK(state.step == 1);
  CHECK(state.m[0][0] == doctest::Approx(0.1));
  CHECK(state.v[0][0] == doctest::Approx(0.001));
}

TEST_CASE("zero gradient leaves parameters and moments untouched") {
  nn::ParameterSet<double> params;
  auto w = params.add("w", {2, 3});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i);
  const std::vector<double> before(w.data().begin(), w.data().end());
  params.zero_grad();
  auto state = OptimizerState<double>::zeros(params);
  adam_step(params, state, AdamOptions{});
  CHECK(std::vector<double>(w.data().begin(), w.data().end()) == before);
  for (double m : state.m[0]) CHECK(m == 0.0);
  for (double v : state.v[0]) CHECK(v == 0.0);
}

TEST_CASE("gradient clipping halves a norm-2 gradient") {
  nn::ParameterSet<double> params;
  auto a = params.add("a", {1});
  auto b = params.add("b", {3});
  a.grad()[0] = 2.0 * 0.6;
  b.grad()[0] = 2.0 * 0.8;
  b.grad()[1] = 0.0;
  b.grad()[2] = 0.0;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(2.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  // Under the limit: untouched.
  CHECK(clip_grad_norm(params, 5.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));

  // Clipping inside adam_step happens before the moment update.
  auto state = OptimizerState<double>::zeros(params);
  a.grad()[0] = 1.2;
  b.grad()[0] = 1.6;
  adam_step(params, state, AdamOptions{0.1, 0.9, 0.999, 1e-8, 1.0});
  CHECK(state.m[0][0] == doctest::Approx(0.1 * 0.6));
  CHECK(state.m[1][0] == doctest::Approx(0.1 * 0.8));

  nn::ParameterSet<double> other;
  other.add("x", {4});
  CHECK_THROWS(adam_step(other, state, AdamOptions{}));
}

TEST_CASE("learning rate warms up linearly then decays") {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.warmup_steps = 200;
  CHECK(learning_rate_at(c, 1) == doctest::Approx(1e-3 / 200));
  CHECK(learning_rate_at(c, 100) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(c, 200) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 800) == doctest::Approx(5e-4));
  c.warmup_steps = 0;
  CHECK(learning_rate_at(c, 7) == 1e-3);
}

TEST_CASE("training batches follow the loss order") {
  const auto data = copy_data(50);
  LossConfig l2r{Order::kLeftToRight, 1.0, Termination::kSequence};
  auto rng = make_rng(1, 1);
  auto batch = make_training_batch(data.examples, l2r, rng, 64);
  CHECK(batch.size() == 64);
  for (const auto& item : batch) {
    const auto& y = data.examples[item.example].target;
    const auto k = item.sample.canvas.length();
    CHECK(TokenSeq(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k)) == item.sample.canvas.tokens());
  }

  LossConfig uniform{Order::kUniform, 1.0, Termination::kSlot};
  auto r1 = make_rng(9, 2), r2 = make_rng(9, 2);
  auto b1 = make_training_batch(data.examples, uniform, r1, 32, 2);
  auto b2 = make_training_batch(data.examples, uniform, r2, 32, 2);
  REQUIRE(b1.size() == b2.size());
  std::size_t full = 0;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].example == b2[i].example);
    CHECK(b1[i].sample.kept_indices == b2[i].sample.kept_indices);
    const auto& y = data.examples[b1[i].example].target;
    if (b1[i].sample.canvas.length() == y.size()) {
      ++full;
      for (const auto& t : b1[i].targets) CHECK(t.kind == TargetKind::kEndOfSlot);
    }
  }
  CHECK(full > 0);
  // Two canvases per example: items come in pairs.
  for (std::size_t i = 0; i + 1 < b1.size(); i += 2) CHECK(b1[i].example == b1[i + 1].example);
}

TEST_CASE("zero training steps write the initialization") {
  TempDir dir("insertion_train_zero");
  const auto data = copy_data(20);
  InsertionTransformer<float> model(small_model(), 11);
  TrainingState<float> state;
  train(model, state, data, quick(0), {dir.path, {}, {}});
  const auto ckpt = load_checkpoint(checkpoint_path(dir.path, 0));
  auto restored = restore_model<float>(ckpt);
  const InsertionTransformer<float> fresh(small_model(), 11);
  const auto& a = restored.parameters().entries();
  const auto& b = fresh.parameters().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    CHECK(a[p].name == b[p].name);
    CHECK(std::equal(a[p].tensor.data().begin(), a[p].tensor.data().end(), b[p].tensor.data().begin()));
  }
  CHECK(stored_vocab(ckpt) == data.vocab);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  TempDir dir("insertion_train_roundtrip");
  const auto data = copy_data(40);
  InsertionTransformer<float> model(small_model(), 12);
  TrainingState<float> state;
  auto cfg = quick(3);
  train(model, state, data, cfg, {dir.path, {{"run.note", "roundtrip"}}, {}});
  const auto first = checkpoint_path(dir.path, 3);
  const auto ckpt = load_checkpoint(first);
  auto model2 = restore_model<float>(ckpt);
  auto state2 = restore_training_state(ckpt, model2);
  CHECK(state2.step == 3);
  CHECK(state2.optimizer.step == 3);
  const auto second = dir.path / "again.insr";
  save_checkpoint(second, training_checkpoint(model2, state2, stored_vocab(ckpt), {{"run.note", "roundtrip"}}));
  CHECK(slurp(first) == slurp(second));
  CHECK(slurp(first).substr(0, 4) == "INSR");
  CHECK_FALSE(fs::exists(fs::path(first.string() + ".tmp")));
}

TEST_CASE("fixed-seed training is reproducible and resumable") {
  const auto data = copy_data(60);
  auto cfg = quick(12);

  auto run = [&](std::size_t stop_at, const TrainingState<float>* resume_from,
                 InsertionTransformer<float>* resume_model) {
    std::vector<StepRecord> records;
    TrainOutput out{{}, {}, [&](const StepRecord& r) { records.push_back(r); }};
    auto c = cfg;
    c.steps = stop_at;
    if (resume_from) {
      auto state = *resume_from;
      train(*resume_model, state, data, c, out);
    } else {
      InsertionTransformer<float> model(small_model(), 13);
      TrainingState<float> state;
      train(model, state, data, c, out);
    }
    return records;
  };

  const auto full = run(12, nullptr, nullptr);
  CHECK(log_without_wall(full) == log_without_wall(run(12, nullptr, nullptr)));
  REQUIRE(full.size() == 12);

  // Stop after 5 steps, persist, reload, continue.
  TempDir dir("insertion_train_resume");
  InsertionTransformer<float> model(small_model(), 13);
  TrainingState<float> state;
  auto c5 = cfg;
  c5.steps = 5;
  train(model, state, data, c5, {dir.path, {}, {}});
  const auto ckpt = load_checkpoint(checkpoint_path(dir.path, 5));
  auto resumed = restore_model<float>(ckpt);
  auto resumed_state = restore_training_state(ckpt, resumed);
  const auto tail = run(12, &resumed_state, &resumed);
  REQUIRE(tail.size() == 7);
  const auto expected = log_without_wall(full);
  CHECK(log_without_wall(tail) == std::vector<std::string>(expected.begin() + 5, expected.end()));

  // The on-disk log of the first leg has the same lines as the in-memory run.
  std::ifstream log(dir.path / "metrics.log");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    CHECK(line.rfind(expected[lines].substr(0, expected[lines].size() - 1), 0) == 0);
    CHECK(line.find("\"wall\"") != std::string::npos);
  }
  CHECK(lines == 5);
}

TEST_CASE("metrics lines are JSON with fixed keys") {
  const StepRecord r{3, 1.5, 0.001, 0.25, 2.0};
  CHECK(format_metrics_line(r, false) == R"({"step":3,"loss":1.5,"lr":0.001,"grad_norm":0.25})");
  CHECK(format_metrics_line(r) == R"({"step":3,"loss":1.5,"lr":0.001,"grad_norm":0.25,"wall":2.0})");
}

TEST_CASE("a NaN loss aborts with a snapshot") {
  TempDir dir("insertion_train_nan");
  const auto data = copy_data(20);
  InsertionTransformer<float> model(small_model(), 14);
  for (auto& x : model.parameters().entries().front().tensor.data()) x = std::numeric_limits<float>::quiet_NaN();
  TrainingState<float> state;
  CHECK_THROWS_AS(train(model, state, data, quick(3), {dir.path, {}, {}}), TrainingAborted);
  CHECK(fs::exists(dir.path / "nan-step-1.insr"));
  CHECK(state.step == 0);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.samples_per_example = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.loss.order = Order::kLeftToRight;
  c.loss.termination = Termination::kSlot;
  CHECK_THROWS(c.validate());
}

TEST_CASE("loss falls over the first 200 copy-task steps") {
  const auto data = copy_data(300);
  InsertionTransformer<float> model(small_model(), 15);
  TrainingState<float> state;
  std::vector<double> losses;
  auto cfg = quick(200);
  train(model, state, data, cfg, {{}, {}, [&](const StepRecord& r) { losses.push_back(r.loss); }});
  REQUIRE(losses.size() == 200);
  auto window = [&](std::size_t from) {
    return std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(from),
                           losses.begin() + static_cast<std::ptrdiff_t>(from + 50), 0.0) / 50.0;
  };
  // Window-50 means at the start, middle and end.
  CHECK(window(0) > window(75));
  CHECK(window(75) > window(150));
  for (double l : losses) CHECK(std::isfinite(l));
}
