// uit: command-line front end to the engine. Each subcommand maps onto one
// library entry point.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "uit/complexity.hpp"
#include "uit/dsp.hpp"
#include "uit/gradcheck.hpp"
#include "uit/metrics.hpp"
#include "uit/model.hpp"
#include "uit/runtime.hpp"
#include "uit/training.hpp"
#include "uit/weights_io.hpp"

namespace {

using namespace uit;

enum class Format { kText, kKv };

void add_format(CLI::App* cmd, std::string& format) {
  cmd->add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"text", "kv"}))
      ->capture_default_str();
}

Format parse_format(const std::string& s) { return s == "kv" ? Format::kKv : Format::kText; }

UiTConfig make_config(const std::string& model, const std::string& attention,
                      const std::string& activation, const std::string& labels_csv) {
  UiTConfig cfg = preset(model);
  cfg.attention = parse_attention(attention);
  cfg.activation = parse_activation(activation);
  if (!labels_csv.empty()) {
    cfg.labels = LabelSpace::unikw_at(LabelSpace::read_event_names(labels_csv));
  }
  return cfg;
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

int cmd_analyze(const std::string& model, const std::string& attention,
                const std::string& activation, Format format) {
  const ComplexityReport r = analyze(make_config(model, attention, activation, ""));
  std::cout << (format == Format::kKv ? format_kv(r) : format_text(r));
  return 0;
}

int cmd_features(const std::string& wav, const std::string& out, Format format) {
  const Spectrogram sg = log_mel(read_wav(wav));
  if (!out.empty()) save_tensor(out, "log_mel", sg.data);
  const auto vals = sg.data.data();
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / double(vals.size());
  if (format == Format::kKv) {
    std::cout << "frames=" << sg.frames() << "\nbins=" << sg.bins() << "\nmin=" << fmt(*lo)
              << "\nmax=" << fmt(*hi) << "\nmean=" << fmt(mean) << "\n";
    if (!out.empty()) std::cout << "out=" << out << "\n";
  } else {
    std::cout << "log-Mel spectrogram: " << sg.frames() << " frames x " << sg.bins() << " bins\n"
              << "range [" << fmt(*lo, "%.3f") << ", " << fmt(*hi, "%.3f") << "], mean "
              << fmt(mean, "%.3f") << "\n";
    if (!out.empty()) std::cout << "written to " << out << "\n";
  }
  return 0;
}

int cmd_init(const std::string& model, const std::string& attention, const std::string& activation,
             const std::string& out, std::uint64_t seed) {
  const UiTConfig cfg = make_config(model, attention, activation, "");
  Rng rng(seed);
  save_weights(out, init_weights<float>(cfg, rng));
  std::cout << "wrote " << count_params(cfg) << " parameters to " << out << "\n";
  return 0;
}

int cmd_infer(const std::string& wav, const std::string& weights, const UiTConfig& cfg,
              double threshold, std::size_t top_k, Format format) {
  const Waveform wave = read_wav(wav);
  const WeightStore w = load_weights(weights);
  const Tensor probs = infer_clip(wave, w, cfg);
  const auto decision = kws_decide(probs.data(), cfg.labels, threshold);

  const auto ev = cfg.labels.event_indices();
  std::vector<std::size_t> order(ev.size());
  std::iota(order.begin(), order.end(), ev.begin);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  order.resize(std::min(top_k, order.size()));

  const std::string decided = decision ? cfg.labels.name(*decision) : "none";
  if (format == Format::kKv) {
    std::cout << "chunks=" << (wave.size() + kSampleRate - 1) / kSampleRate << "\n";
    std::cout << "keyword=" << decided << "\n";
    if (decision) std::cout << "keyword_prob=" << fmt(probs[*decision]) << "\n";
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::cout << "event." << i + 1 << "=" << cfg.labels.name(order[i]) << "\n";
      std::cout << "event." << i + 1 << ".prob=" << fmt(probs[order[i]]) << "\n";
    }
  } else {
    std::cout << "keyword: " << decided;
    if (decision) std::cout << " (p=" << fmt(probs[*decision], "%.4f") << ")";
    std::cout << "\ntop events:\n";
    for (std::size_t i : order) {
      std::cout << "  " << fmt(probs[i], "%.4f") << "  " << cfg.labels.name(i) << "\n";
    }
  }
  return 0;
}

int cmd_bench(const std::vector<std::string>& models, const BenchOptions& opt, Format format) {
  std::vector<UiTConfig> configs;
  for (const auto& m : models) configs.push_back(preset(m));
  const auto reports = bench(configs, opt);
  std::cout << (format == Format::kKv ? format_kv(reports) : format_text(reports));
  return 0;
}

int cmd_gradcheck(std::size_t seeds, Format format) {
  const auto results = run_gradcheck_suite(seeds);
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed();
    if (format == Format::kKv) {
      std::cout << "gradcheck." << r.name << ".max_rel_error=" << fmt(r.max_rel_error, "%.3e")
                << "\ngradcheck." << r.name << ".pass=" << (r.passed() ? 1 : 0) << "\n";
    } else {
      std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << "  max rel err "
                << fmt(r.max_rel_error, "%.3e") << " (tol " << fmt(r.tolerance, "%.0e") << ", "
                << r.seeds << " seeds)\n";
    }
  }
  return ok ? 0 : 1;
}

int cmd_train_toy(const ToyTaskSpec& task, const std::string& log, const std::string& out,
                  Format format) {
  const ToyResult res = train_toy(task);
  if (!log.empty()) write_loss_log(log, res.curve);
  if (!out.empty()) save_weights(out, res.weights);
  for (const auto& e : res.curve) {
    if (format == Format::kKv) {
      std::cout << "epoch." << e.epoch << ".loss=" << fmt(e.loss, "%.8f") << "\nepoch." << e.epoch
                << ".lr=" << fmt(e.lr, "%.8f") << "\n";
    } else {
      std::cout << e.epoch << " " << fmt(e.loss, "%.6f") << " " << fmt(e.lr, "%.6e") << "\n";
    }
  }
  if (format == Format::kKv) std::cout << "final_loss=" << fmt(res.final_loss(), "%.8f") << "\n";
  return 0;
}

int cmd_eval(const std::string& scores_path, const std::string& truths_path, double threshold,
             Format format) {
  const Tensor scores = load_first_tensor(scores_path);
  const Tensor truths = load_first_tensor(truths_path);
  const double map = mean_ap(scores, truths);
  std::optional<double> acc;
  const LabelSpace labels = LabelSpace::unikw_at();
  if (scores.rank() == 2 && scores.dim(1) == labels.size()) {
    std::vector<KwsDecision> decisions, gold;
    for (std::size_t i = 0; i < scores.dim(0); ++i) {
      decisions.push_back(kws_decide(scores.row(i), labels, threshold));
      gold.push_back(kws_truth(truths.row(i), labels));
    }
    acc = kws_accuracy(decisions, gold);
  }
  if (format == Format::kKv) {
    std::cout << "clips=" << scores.dim(0) << "\nmap=" << fmt(map) << "\n";
    if (acc) std::cout << "kws_accuracy=" << fmt(*acc) << "\n";
  } else {
    std::cout << "clips: " << scores.dim(0) << "\nmAP: " << fmt(map, "%.4f") << "\n";
    if (acc) std::cout << "KWS accuracy: " << fmt(*acc, "%.4f") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UiT keyword spotting and audio tagging engine"};
  app.require_subcommand(1);

  std::string format = "text";
  std::string model = "uit-xs";
  std::string attention = "bottleneck";
  std::string activation = "relu";

  auto* analyze_cmd = app.add_subcommand("analyze", "Parameter, FLOP and peak-memory report");
  analyze_cmd->add_option("--model", model, "Model preset")->required();
  analyze_cmd->add_option("--attention", attention)->check(CLI::IsMember({"bottleneck", "standard"}));
  analyze_cmd->add_option("--activation", activation)->check(CLI::IsMember({"relu", "gelu"}));
  add_format(analyze_cmd, format);

  std::string wav, out;
  auto* features_cmd = app.add_subcommand("features", "Compute a log-Mel spectrogram");
  features_cmd->add_option("wav", wav, "16 kHz mono WAV")->required();
  features_cmd->add_option("--out", out, "Write the spectrogram as a tensor file");
  add_format(features_cmd, format);

  std::uint64_t seed = 0;
  auto* init_cmd = app.add_subcommand("init", "Write randomly initialized weights");
  init_cmd->add_option("--model", model)->required();
  init_cmd->add_option("--attention", attention)->check(CLI::IsMember({"bottleneck", "standard"}));
  init_cmd->add_option("--activation", activation)->check(CLI::IsMember({"relu", "gelu"}));
  init_cmd->add_option("--out", out)->required();
  init_cmd->add_option("--seed", seed);

  std::string weights, labels_csv;
  double threshold = kDefaultKeywordThreshold;
  std::size_t top_k = 5;
  auto* infer_cmd = app.add_subcommand("infer", "Keyword decision and top sound events for a clip");
  infer_cmd->add_option("wav", wav)->required();
  infer_cmd->add_option("--weights", weights)->required();
  infer_cmd->add_option("--model", model)->required();
  infer_cmd->add_option("--attention", attention)->check(CLI::IsMember({"bottleneck", "standard"}));
  infer_cmd->add_option("--activation", activation)->check(CLI::IsMember({"relu", "gelu"}));
  infer_cmd->add_option("--threshold", threshold)->capture_default_str();
  infer_cmd->add_option("--top-k", top_k)->capture_default_str();
  infer_cmd->add_option("--labels", labels_csv, "Audioset class_labels_indices.csv for event names");
  add_format(infer_cmd, format);

  std::vector<std::string> models = preset_names();
  BenchOptions bench_opt;
  auto* bench_cmd = app.add_subcommand("bench", "Forward-pass latency on a 1 s input");
  bench_cmd->add_option("--models", models)->capture_default_str();
  bench_cmd->add_option("--trials", bench_opt.trials)->capture_default_str();
  bench_cmd->add_option("--warmup", bench_opt.warmup)->capture_default_str();
  bench_cmd->add_flag("--with-features", bench_opt.with_features, "Also time log-Mel extraction");
  add_format(bench_cmd, format);

  std::size_t seeds = 20;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all backward passes");
  gradcheck_cmd->add_option("--seeds", seeds)->capture_default_str();
  add_format(gradcheck_cmd, format);

  ToyTaskSpec task;
  std::string log;
  auto* toy_cmd = app.add_subcommand("train-toy", "Train the tiny model on a synthetic task");
  toy_cmd->add_option("--seed", task.seed)->capture_default_str();
  toy_cmd->add_option("--epochs", task.epochs)->capture_default_str();
  toy_cmd->add_option("--batches-per-epoch", task.batches_per_epoch)->capture_default_str();
  toy_cmd->add_option("--lr", task.hp.lr0)->capture_default_str();
  toy_cmd->add_option("--log", log, "Write 'epoch loss lr' rows");
  toy_cmd->add_option("--out", out, "Write final weights");
  add_format(toy_cmd, format);

  std::string scores_path, truths_path;
  auto* eval_cmd = app.add_subcommand("eval", "mAP and keyword accuracy from score/label matrices");
  eval_cmd->add_option("--scores", scores_path)->required();
  eval_cmd->add_option("--truths", truths_path)->required();
  eval_cmd->add_option("--threshold", threshold)->capture_default_str();
  add_format(eval_cmd, format);

  CLI11_PARSE(app, argc, argv);

  try {
    const Format f = parse_format(format);
    if (analyze_cmd->parsed()) return cmd_analyze(model, attention, activation, f);
    if (features_cmd->parsed()) return cmd_features(wav, out, f);
    if (init_cmd->parsed()) return cmd_init(model, attention, activation, out, seed);
    if (infer_cmd->parsed()) {
      return cmd_infer(wav, weights, make_config(model, attention, activation, labels_csv),
                       threshold, top_k, f);
    }
    if (bench_cmd->parsed()) return cmd_bench(models, bench_opt, f);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(seeds, f);
    if (toy_cmd->parsed()) return cmd_train_toy(task, log, out, f);
    if (eval_cmd->parsed()) return cmd_eval(scores_path, truths_path, threshold, f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
