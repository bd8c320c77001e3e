#include "insertion/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>

#include "insertion/checkpoint.hpp"
#include "insertion/run_config.hpp"
#include "insertion/trace.hpp"
#include "insertion/training.hpp"

namespace insertion {

namespace fs = std::filesystem;

namespace {

// Failures after the arguments were accepted.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  for (const auto& o : overrides) c.apply_override(o);
  c.validate();
  return c;
}

// Run configuration recorded in a checkpoint header; missing keys keep defaults.
RunConfig config_from_header(const Checkpoint& ckpt) {
  RunConfig c;
  for (const auto& key : RunConfig::keys()) {
    if (const auto it = ckpt.header.find(key); it != ckpt.header.end()) c.set(key, it->second);
  }
  return c;
}

Dataset training_data(const RunConfig& c) {
  if (!c.train_file.empty()) return load_corpus(c.train_file, Vocab());
  return generate_dataset(c.task, 0, c.train_pairs);
}

Dataset evaluation_data(const RunConfig& c, const Vocab& vocab, const std::string& override_file) {
  const std::string& file = override_file.empty() ? c.eval_file : override_file;
  if (!file.empty()) return load_corpus(file, vocab);
  auto data = generate_dataset(c.task, c.train_pairs, c.eval_pairs);
  if (!(data.vocab == vocab)) throw RuntimeFailure("checkpoint vocabulary does not match the task");
  return data;
}

std::optional<std::size_t> latest_checkpoint(const fs::path& dir) {
  static const std::regex pattern(R"(ckpt-(\d+)\.insr)");
  std::optional<std::size_t> best;
  if (!fs::exists(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      const auto step = static_cast<std::size_t>(std::stoull(m[1]));
      if (!best || step > *best) best = step;
    }
  }
  return best;
}

TokenSeq encode_strict(const Vocab& vocab, const std::string& line, std::size_t number) {
  TokenSeq out;
  std::istringstream in(line);
  for (std::string t; in >> t;) {
    const auto id = vocab.find(t);
    if (!id || special::is_structural(*id)) {
      throw RuntimeFailure("input line " + std::to_string(number) + ": token '" + t +
                           "' is not in the checkpoint vocabulary");
    }
    out.push_back(*id);
  }
  return out;
}

struct Loaded {
  Checkpoint ckpt;
  RunConfig config;
  Vocab vocab;
  InsertionTransformer<float> model;
};

Loaded load_model(const std::string& path) {
  auto ckpt = load_checkpoint(path);
  auto config = config_from_header(ckpt);
  auto vocab = stored_vocab(ckpt);
  auto model = restore_model<float>(ckpt);
  return {std::move(ckpt), std::move(config), std::move(vocab), std::move(model)};
}

DecodeMode wrap_mode(const std::string& m) {
  try {
    return parse_decode_mode(m);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--mode: ") + e.what());
  }
}

std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<double> parts;
  std::istringstream in(spec);
  for (std::string p; std::getline(in, p, ':');) {
    try {
      parts.push_back(parse_number("--sweep-beta", p));
    } catch (const std::exception&) {
      throw ConfigError("--sweep-beta expects lo:hi:step, got '" + spec + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("--sweep-beta expects lo:hi:step, got '" + spec + "'");
  try {
    return eos_penalty_grid(parts[0], parts[1], parts[2]);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--sweep-beta: ") + e.what());
  }
}

std::string format_sweep(const std::vector<EvalReport>& reports, std::size_t best) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "beta\taccuracy\tbleu\tmean_length\tmean_iterations\ttruncated\tbest\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << r.eos_penalty << '\t' << r.accuracy << '\t' << r.bleu << '\t' << r.mean_output_length
        << '\t' << r.mean_iterations << '\t' << r.truncated << '\t' << (i == best ? "*" : "")
        << '\n';
  }
  return out.str();
}

// Highest BLEU, then accuracy; the smallest beta wins remaining ties.
std::size_t best_report(const std::vector<EvalReport>& reports) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& a = reports[i];
    const auto& b = reports[best];
    if (a.bleu > b.bleu || (a.bleu == b.bleu && a.accuracy > b.accuracy)) best = i;
  }
  return best;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"train, decode, evaluate and inspect insertion models"};
  app.require_subcommand(1);

  std::string config_path, run_dir;
  std::vector<std::string> overrides;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoints and metrics.log");
  train_cmd->add_option("--config", config_path, "config file (key = value lines)");
  train_cmd->add_option("--set", overrides, "override a config key: key=value")->take_all();
  train_cmd->add_option("--run-dir", run_dir, "output directory")->required();
  train_cmd->add_flag("--resume", resume, "continue from the latest checkpoint in the run directory");

  std::string ckpt_path, input_path, inline_tokens, trace_path, mode;
  std::optional<double> beta;
  std::optional<std::size_t> max_length;
  auto* decode_cmd = app.add_subcommand("decode", "decode sources with a trained checkpoint");
  decode_cmd->add_option("--checkpoint", ckpt_path)->required();
  auto* input_opt = decode_cmd->add_option("--input", input_path, "one source per line");
  auto* tokens_opt = decode_cmd->add_option("--tokens", inline_tokens, "a single inline source");
  input_opt->excludes(tokens_opt);
  decode_cmd->add_option("--mode", mode, "greedy or parallel");
  decode_cmd->add_option("--beta", beta, "EOS penalty");
  decode_cmd->add_option("--max-length", max_length, "maximum output length");
  decode_cmd->add_option("--trace", trace_path, "write iteration-level traces here");

  std::string data_path, sweep, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--data", data_path, "corpus file; default: the run's held-out task pairs");
  eval_cmd->add_option("--mode", mode, "greedy or parallel");
  auto* beta_opt = eval_cmd->add_option("--beta", beta, "EOS penalty");
  eval_cmd->add_option("--sweep-beta", sweep, "lo:hi:step grid of EOS penalties")->excludes(beta_opt);
  eval_cmd->add_option("--max-length", max_length, "maximum output length");
  eval_cmd->add_option("--out", eval_out, "output directory (default: <checkpoint dir>/eval)");

  std::string render_path;
  auto* render_cmd = app.add_subcommand("trace-render", "print a trace file as text");
  render_cmd->add_option("trace", render_path)->required();

  std::string gen_out, split = "both";
  auto* gen_cmd = app.add_subcommand("gen-data", "write the configured task as corpus files");
  gen_cmd->add_option("--config", config_path);
  gen_cmd->add_option("--set", overrides)->take_all();
  gen_cmd->add_option("--out-dir", gen_out)->required();
  gen_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "eval", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      auto config = resolve_config(config_path, overrides);
      auto data = training_data(config);
      if (config.model.vocab_size == 0) config.model.vocab_size = data.vocab.size();
      if (config.model.vocab_size != data.vocab.size()) {
        throw ConfigError("model.vocab_size is " + std::to_string(config.model.vocab_size) +
                          " but the data has " + std::to_string(data.vocab.size()) + " tokens");
      }
      config.validate();
      if (auto w = config.decode.warning()) err << "warning: " << *w << '\n';
      fs::create_directories(run_dir);
      write_file(fs::path(run_dir) / "config.effective", config.effective());

      std::optional<InsertionTransformer<float>> model;
      TrainingState<float> state;
      if (resume) {
        if (const auto step = latest_checkpoint(run_dir)) {
          const auto ckpt = load_checkpoint(checkpoint_path(run_dir, *step));
          model.emplace(restore_model<float>(ckpt));
          if (!(model->config() == config.model)) {
            throw ConfigError("the model in " + checkpoint_path(run_dir, *step).string() +
                              " does not match the config");
          }
          state = restore_training_state(ckpt, *model);
          out << "resuming from step " << state.step << '\n';
        }
      }
      if (!model) model.emplace(config.model, config.model_seed);

      double last_loss = 0;
      TrainOutput output{run_dir, config.entries(), [&](const StepRecord& r) { last_loss = r.loss; }};
      train(*model, state, data, config.train, output);
      out << "trained " << state.step << " steps; final loss " << format_number(last_loss)
          << "; checkpoint " << checkpoint_path(run_dir, state.step).string() << '\n';
      return 0;
    }

    if (*decode_cmd) {
      if (input_path.empty() && !tokens_opt->count()) {
        throw ConfigError("decode needs --input or --tokens");
      }
      auto loaded = load_model(ckpt_path);
      auto cfg = loaded.config.decode;
      if (!mode.empty()) cfg.mode = wrap_mode(mode);
      if (beta) cfg.eos_penalty = *beta;
      if (max_length) cfg.max_output_length = *max_length;
      cfg.validate();
      if (auto w = cfg.warning()) err << "warning: " << *w << '\n';

      std::vector<std::string> lines;
      if (!input_path.empty()) {
        std::istringstream in(read_file(input_path));
        for (std::string line; std::getline(in, line);) {
          if (const auto tab = line.find('\t'); tab != std::string::npos) line.erase(tab);
          lines.push_back(line);
        }
      } else {
        lines.push_back(inline_tokens);
      }

      ModelPolicy<float> policy(loaded.model);
      std::ostringstream traces;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto source = encode_strict(loaded.vocab, lines[i], i + 1);
        const auto result = decode(policy, source, cfg);
        out << loaded.vocab.decode(result.output) << '\n';
        if (!trace_path.empty()) write_trace(traces, to_document(result.trace, loaded.vocab));
      }
      if (!trace_path.empty()) write_file(trace_path, traces.str());
      return 0;
    }

    if (*eval_cmd) {
      auto loaded = load_model(ckpt_path);
      auto cfg = loaded.config.decode;
      if (!mode.empty()) cfg.mode = wrap_mode(mode);
      if (beta) cfg.eos_penalty = *beta;
      if (max_length) cfg.max_output_length = *max_length;
      cfg.validate();
      const auto betas = sweep.empty() ? std::vector<double>{cfg.eos_penalty} : parse_sweep(sweep);
      if (auto w = cfg.warning()) err << "warning: " << *w << '\n';

      const auto data = evaluation_data(loaded.config, loaded.vocab, data_path);
      ModelPolicy<float> policy(loaded.model);
      std::vector<EvalReport> reports;
      for (double b : betas) {
        auto c = cfg;
        c.eos_penalty = b;
        reports.push_back(evaluate(policy, data.examples, c));
      }
      const std::size_t best = best_report(reports);
      std::string report;
      if (!sweep.empty()) report += format_sweep(reports, best) + "\n";
      report += "mode = " + to_string(cfg.mode) + "\n" + format_report(reports[best]);

      const fs::path dir = eval_out.empty() ? fs::path(ckpt_path).parent_path() / "eval" : fs::path(eval_out);
      write_file(dir / "report.txt", report);
      write_file(dir / "iterations.tsv", format_iteration_table(reports[best]));
      out << report;
      return 0;
    }

    if (*render_cmd) {
      out << render_traces(parse_traces(read_file(render_path)));
      return 0;
    }

    if (*gen_cmd) {
      const auto config = resolve_config(config_path, overrides);
      fs::create_directories(gen_out);
      if (split != "eval") {
        save_corpus(fs::path(gen_out) / "train.tsv", generate_dataset(config.task, 0, config.train_pairs));
      }
      if (split != "train") {
        save_corpus(fs::path(gen_out) / "eval.tsv",
                    generate_dataset(config.task, config.train_pairs, config.eval_pairs));
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace insertion
