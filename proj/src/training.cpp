#include "uit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uit/tensor.hpp"

namespace uit {

std::string to_string(Source s) { return s == Source::kKws ? "kws" : "at"; }

void validate_sample(const Sample& s, const LabelSpace& labels) {
  if (s.targets.size() != labels.size()) {
    throw std::invalid_argument("sample: " + std::to_string(s.targets.size()) + " targets for " +
                                std::to_string(labels.size()) + " labels");
  }
  for (float v : s.targets.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("sample: target outside [0,1]");
  }
  if (s.source == Source::kKws) {
    std::size_t active = 0;
    bool allowed = true;
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      if (s.targets[i] > 0.0f) {
        ++active;
        allowed = allowed && (labels.keyword_indices().contains(i) || i == labels.speech_index());
      }
    }
    if (active != 1 || !allowed) {
      throw std::invalid_argument("sample: KWS sample must activate exactly one keyword or speech");
    }
  }
}

namespace {

std::size_t crop_samples(double seconds) {
  return static_cast<std::size_t>(std::lround(seconds * kSampleRate));
}

std::size_t crop_frames(double seconds, const MelConfig& mel) {
  return frame_count(crop_samples(seconds), mel);
}

}  // namespace

double duration_seconds(const Sample& s, const MelConfig& mel) {
  if (const auto* w = std::get_if<Waveform>(&s.audio)) return w->seconds();
  const auto& sg = std::get<Spectrogram>(s.audio);
  if (sg.frames() == 0) return 0.0;
  return double((sg.frames() - 1) * mel.hop_length() + mel.win_length()) / kSampleRate;
}

Sample random_crop(const Sample& s, double seconds, Rng& rng, const MelConfig& mel) {
  if (!(seconds > 0.0)) throw std::invalid_argument("random_crop: duration must be positive");
  Sample out;
  out.targets = s.targets;
  out.source = s.source;
  out.clip_id = s.clip_id;
  if (const auto* w = std::get_if<Waveform>(&s.audio)) {
    const std::size_t len = crop_samples(seconds);
    Waveform padded = *w;
    if (padded.samples.size() < len) padded.samples.resize(len, 0.0f);
    const std::size_t start =
        std::uniform_int_distribution<std::size_t>(0, padded.samples.size() - len)(rng);
    Waveform crop{std::vector<float>(padded.samples.begin() + start,
                                     padded.samples.begin() + start + len),
                  w->sample_rate};
    out.audio = std::move(crop);
    out.offset_seconds = s.offset_seconds + double(start) / kSampleRate;
  } else {
    const auto& sg = std::get<Spectrogram>(s.audio);
    const std::size_t len = crop_frames(seconds, mel);
    const std::size_t bins = sg.bins();
    const std::size_t have = sg.frames();
    const std::size_t total = std::max(have, len);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, total - len)(rng);
    Tensor crop({len, bins}, static_cast<float>(std::log(mel.log_floor)));
    for (std::size_t t = 0; t < len && start + t < have; ++t) {
      std::copy(sg.data.row(start + t).begin(), sg.data.row(start + t).end(), crop.row(t).begin());
    }
    out.audio = Spectrogram{std::move(crop)};
    out.offset_seconds = s.offset_seconds + double(start * mel.hop_length()) / kSampleRate;
  }
  return out;
}

// ---- soft labels -----------------------------------------------------------------

void PslTable::insert(const std::string& clip_id, double offset_seconds, Tensor targets) {
  for (float v : targets.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("psl: target outside [0,1] for clip '" + clip_id + "'");
    }
  }
  table_[clip_id][offset_seconds] = std::move(targets);
}

std::optional<Tensor> PslTable::lookup(const std::string& clip_id, double offset_seconds) const {
  auto it = table_.find(clip_id);
  if (it == table_.end() || it->second.empty()) return std::nullopt;
  const auto& rows = it->second;
  auto hi = rows.lower_bound(offset_seconds);
  if (hi == rows.begin()) return hi->second;
  if (hi == rows.end()) return std::prev(hi)->second;
  auto lo = std::prev(hi);
  return (offset_seconds - lo->first) <= (hi->first - offset_seconds) ? lo->second : hi->second;
}

std::size_t PslTable::size() const {
  std::size_t n = 0;
  for (const auto& [clip, rows] : table_) n += rows.size();
  return n;
}

PslTable PslTable::load(const std::string& path, std::size_t num_labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open soft-label sidecar");
  PslTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string clip;
    double offset = 0.0;
    if (!(row >> clip >> offset)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'clip offset values...'");
    }
    std::vector<float> values;
    float v;
    while (row >> v) values.push_back(v);
    if (values.size() != num_labels) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               std::to_string(values.size()) + " values, expected " +
                               std::to_string(num_labels));
    }
    table.insert(clip, offset, Tensor({num_labels}, std::move(values)));
  }
  return table;
}

// ---- manifests ---------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open manifest");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string source, labels;
    const std::string where = path + ":" + std::to_string(lineno);
    if (!(row >> e.path >> source >> labels)) {
      throw std::runtime_error(where + ": expected '<path> <kws|at> <labels>'");
    }
    if (source == "kws") {
      e.source = Source::kKws;
    } else if (source == "at") {
      e.source = Source::kAt;
    } else {
      throw std::runtime_error(where + ": unknown source '" + source + "'");
    }
    if (labels.rfind("psl:", 0) == 0) {
      e.psl_clip = labels.substr(4);
      if (e.psl_clip.empty()) throw std::runtime_error(where + ": empty soft-label clip id");
    } else {
      std::istringstream idx(labels);
      std::string tok;
      while (std::getline(idx, tok, ',')) {
        try {
          e.labels.push_back(std::stoul(tok));
        } catch (const std::exception&) {
          throw std::runtime_error(where + ": bad label index '" + tok + "'");
        }
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Sample> load_manifest_samples(const std::vector<ManifestEntry>& entries,
                                          const LabelSpace& labels) {
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Sample s;
    s.audio = read_wav(e.path);
    s.source = e.source;
    s.clip_id = e.psl_clip;
    s.targets = Tensor({labels.size()});
    for (std::size_t i : e.labels) {
      if (i >= labels.size()) {
        throw std::runtime_error(e.path + ": label index " + std::to_string(i) + " out of range");
      }
      s.targets[i] = 1.0f;
    }
    if (e.psl_clip.empty()) validate_sample(s, labels);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- batching --------------------------------------------------------------------

namespace {

Tensor featurize(const Sample& s, const UiTConfig& cfg, const BatchOptions& opt, Rng& rng) {
  Spectrogram sg;
  if (const auto* w = std::get_if<Waveform>(&s.audio)) {
    sg = log_mel(augment_waveform(*w, opt.augment, rng), opt.mel);
  } else {
    sg = std::get<Spectrogram>(s.audio);
  }
  return patchify(spec_augment(sg, opt.augment, rng), cfg);
}

}  // namespace

Batch make_batch(std::span<const Sample> kws_stream, std::span<const Sample> at_stream,
                 const UiTConfig& cfg, const BatchOptions& opt, Rng& rng) {
  if (opt.batch_size == 0 || opt.batch_size % 2 != 0) {
    throw std::invalid_argument("make_batch: batch size " + std::to_string(opt.batch_size) +
                                " must be even and positive");
  }
  if (kws_stream.empty() || at_stream.empty()) {
    throw std::invalid_argument("make_batch: both KWS and AT streams must be non-empty");
  }
  const std::size_t half = opt.batch_size / 2;
  std::vector<Sample> picked;
  picked.reserve(opt.batch_size);
  for (auto stream : {kws_stream, at_stream}) {
    std::uniform_int_distribution<std::size_t> pick(0, stream.size() - 1);
    for (std::size_t i = 0; i < half; ++i) {
      Sample s = random_crop(stream[pick(rng)], opt.crop_seconds, rng, opt.mel);
      if (opt.psl && s.source == Source::kAt && !s.clip_id.empty()) {
        if (auto soft = opt.psl->lookup(s.clip_id, s.offset_seconds)) s.targets = std::move(*soft);
      }
      picked.push_back(std::move(s));
    }
  }
  std::shuffle(picked.begin(), picked.end(), rng);

  Batch batch;
  batch.targets = Tensor({opt.batch_size, cfg.num_labels()});
  for (std::size_t b = 0; b < picked.size(); ++b) {
    const auto& s = picked[b];
    if (s.targets.size() != cfg.num_labels()) {
      throw std::invalid_argument("make_batch: sample has " + std::to_string(s.targets.size()) +
                                  " targets, model has " + std::to_string(cfg.num_labels()) +
                                  " labels");
    }
    batch.tokens.push_back(featurize(s, cfg, opt, rng));
    std::copy(s.targets.data().begin(), s.targets.data().end(), batch.targets.row(b).begin());
    batch.sources.push_back(s.source);
  }
  return batch;
}

// ---- optimizer -------------------------------------------------------------------

OptimState make_optim_state(const WeightStore& w, const UiTConfig& cfg, AdamWHyper hp) {
  OptimState st;
  st.hp = hp;
  st.m = zeros_like(w);
  st.v = zeros_like(w);
  for (const auto& spec : param_catalog(cfg)) {
    if (spec.decays) st.decayed.insert(spec.name);
  }
  return st;
}

double lr_at(double epoch, const AdamWHyper& hp) {
  if (!(epoch >= 0.0 && epoch <= hp.total_epochs)) {
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(hp.total_epochs) + "]");
  }
  if (epoch < hp.warmup_epochs) return hp.lr0 * epoch / hp.warmup_epochs;
  const double span = hp.total_epochs - hp.warmup_epochs;
  if (span <= 0.0) return hp.lr0;
  return hp.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - hp.warmup_epochs) / span));
}

void adamw_step(WeightStore& w, const WeightStore& grads, OptimState& st, double lr) {
  for (const auto& [name, g] : grads) require_finite(g, "adamw: gradient '" + name + "'");
  ++st.step;
  const auto& hp = st.hp;
  const double bc1 = 1.0 - std::pow(hp.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, double(st.step));
  for (auto& [name, p] : w) {
    const auto& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw std::invalid_argument("adamw: gradient '" + name + "' shape " +
                                  shape_to_string(g.shape()) + " vs weight " +
                                  shape_to_string(p.shape()));
    }
    auto& m = st.m.at(name);
    auto& v = st.v.at(name);
    const bool decay = st.decayed.count(name) != 0 && hp.weight_decay != 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(hp.beta1 * m[i] + (1.0 - hp.beta1) * gi);
      v[i] = static_cast<float>(hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi);
      double pi = p[i];
      if (decay) pi *= 1.0 - lr * hp.weight_decay;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      pi -= lr * mhat / (std::sqrt(vhat) + hp.eps);
      p[i] = static_cast<float>(pi);
    }
  }
}

// ---- toy task --------------------------------------------------------------------

UiTConfig toy_config() {
  UiTConfig cfg;
  cfg.name = "toy";
  cfg.layers = 2;
  cfg.dim = 32;
  cfg.bottleneck = 8;
  cfg.heads = 2;
  cfg.mlp_dim = 96;
  cfg.labels = LabelSpace({"speech", "tone"}, {"kw_a", "kw_b"}, 0);
  return cfg;
}

Sample toy_sample(std::size_t cls, const ToyTaskSpec& task, const UiTConfig& cfg, Rng& rng) {
  const LabelSpace& labels = cfg.labels;
  const bool keyword = cls >= 2;
  const MelConfig mel;
  const std::size_t frames = crop_frames(keyword ? 1.0 : 3.0, mel);
  // Class c lights the c-th quarter of the bins inside every frequency patch,
  // so each token carries the class and the mean-pooled features separate
  // linearly.
  const std::size_t band = std::max<std::size_t>(cfg.patch_f / 4, 1);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(task.noise));
  Tensor sg({frames, cfg.n_mels});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < cfg.n_mels; ++f) {
      const bool lit = (f % cfg.patch_f) / band == cls;
      sg(t, f) = -4.0f + noise(rng) + (lit ? static_cast<float>(task.band_gain) : 0.0f);
    }
  }
  Sample s;
  s.audio = Spectrogram{std::move(sg)};
  s.source = keyword ? Source::kKws : Source::kAt;
  s.targets = Tensor({labels.size()});
  // classes 0,1 are the events; 2,3 the keywords, matching label order.
  s.targets[cls] = 1.0f;
  return s;
}

namespace {

struct ToyData {
  std::vector<Sample> kws;
  std::vector<Sample> at;
};

ToyData toy_pool(const ToyTaskSpec& task, const UiTConfig& cfg, Rng& rng, std::size_t per_class) {
  ToyData d;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t cls = 0; cls < 4; ++cls) {
      Sample s = toy_sample(cls, task, cfg, rng);
      (s.source == Source::kKws ? d.kws : d.at).push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace

ToyResult train_toy(const ToyTaskSpec& task) {
  if (task.epochs == 0 || task.batches_per_epoch == 0) {
    throw std::invalid_argument("train_toy: need at least one epoch and one batch per epoch");
  }
  const UiTConfig cfg = toy_config();
  AdamWHyper hp = task.hp;
  hp.total_epochs = double(task.epochs);

  Rng data_rng(task.seed);
  Rng init_rng(task.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng batch_rng(task.seed + 1);

  const ToyData train = toy_pool(task, cfg, data_rng, 16);
  std::vector<Tensor> probe_tokens;
  Tensor probe_targets({task.probe_size, cfg.num_labels()});
  for (std::size_t i = 0; i < task.probe_size; ++i) {
    const Sample s = toy_sample(i % 4, task, cfg, data_rng);
    probe_tokens.push_back(patchify(std::get<Spectrogram>(s.audio), cfg));
    std::copy(s.targets.data().begin(), s.targets.data().end(), probe_targets.row(i).begin());
  }

  ToyResult result;
  result.weights = init_weights<float>(cfg, init_rng);
  OptimState st = make_optim_state(result.weights, cfg, hp);
  WeightStore grads = zeros_like(result.weights);

  BatchOptions opt;
  opt.batch_size = task.batch_size;
  opt.augment = task.augment;

  // Next batch is assembled while the current step runs; it draws only from
  // batch_rng, so the sequence is the same as building them serially.
  auto build = [&]() { return make_batch(train.kws, train.at, cfg, opt, batch_rng); };
  std::future<Batch> next = std::async(std::launch::async, build);

  for (std::size_t epoch = 0; epoch < task.epochs; ++epoch) {
    double train_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < task.batches_per_epoch; ++b) {
      Batch batch = next.get();
      const bool more = epoch + 1 < task.epochs || b + 1 < task.batches_per_epoch;
      if (more) next = std::async(std::launch::async, build);
      lr = lr_at(double(epoch) + double(b) / double(task.batches_per_epoch), hp);
      const float loss = batch_loss_and_grads(batch.tokens, batch.targets, result.weights, cfg, &grads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_toy: loss diverged at epoch " + std::to_string(epoch + 1));
      }
      train_sum += loss;
      adamw_step(result.weights, grads, st, lr);
    }
    const double probe = batch_loss_and_grads<float>(probe_tokens, probe_targets, result.weights, cfg, nullptr);
    if (!std::isfinite(probe)) {
      throw std::runtime_error("train_toy: loss diverged at epoch " + std::to_string(epoch + 1));
    }
    result.curve.push_back({epoch + 1, probe, train_sum / double(task.batches_per_epoch), lr});
  }
  return result;
}

void write_loss_log(const std::string& path, const std::vector<EpochLog>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open loss log for writing");
  out.precision(9);
  for (const auto& e : curve) out << e.epoch << ' ' << e.loss << ' ' << e.lr << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace uit
