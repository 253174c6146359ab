// Desk-scale joint keyword-spotting / audio-tagging training loop built on
// mixed-source batches and AdamW.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "uit/dsp.hpp"
#include "uit/model.hpp"

namespace uit {

enum class Source { kKws, kAt };
std::string to_string(Source s);

struct Sample {
  std::variant<Waveform, Spectrogram> audio;
  Tensor targets;               // [num_labels], values in [0,1]
  Source source = Source::kKws;
  std::string clip_id;          // soft-label lookup key, empty if none
  double offset_seconds = 0.0;  // crop start, set by random_crop
};

// Throws unless targets are in [0,1] and KWS samples have exactly one active
// label that is a keyword or the speech event.
void validate_sample(const Sample& s, const LabelSpace& labels);

double duration_seconds(const Sample& s, const MelConfig& mel = {});

// Uniformly placed window of `seconds`. Short inputs are padded first:
// waveforms with zeros, spectrograms with the log floor (digital silence).
Sample random_crop(const Sample& s, double seconds, Rng& rng, const MelConfig& mel = {});

// Precomputed soft targets per clip, keyed by crop offset in seconds.
class PslTable {
 public:
  void insert(const std::string& clip_id, double offset_seconds, Tensor targets);
  // Entry whose offset is closest to `offset_seconds`; nullopt if the clip is unknown.
  std::optional<Tensor> lookup(const std::string& clip_id, double offset_seconds) const;
  std::size_t size() const;

  // Text sidecar: one row per crop region, "clip_id offset v_0 ... v_{C-1}".
  static PslTable load(const std::string& path, std::size_t num_labels);

 private:
  std::map<std::string, std::map<double, Tensor>> table_;
};

struct ManifestEntry {
  std::string path;
  Source source = Source::kKws;
  std::vector<std::size_t> labels;  // active label indices
  std::string psl_clip;             // set for "psl:<clip_id>" entries
};

// Text manifest, one sample per line: "<path> <kws|at> <i,j,...|psl:<clip_id>>".
// Blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Reads each WAV and builds multi-hot targets.
std::vector<Sample> load_manifest_samples(const std::vector<ManifestEntry>& entries,
                                          const LabelSpace& labels);

struct BatchOptions {
  std::size_t batch_size = 64;
  double crop_seconds = 1.0;
  AugmentSpec augment;
  MelConfig mel;
  const PslTable* psl = nullptr;
};

struct Batch {
  std::vector<Tensor> tokens;  // each [N, P]
  Tensor targets;              // [B, num_labels]
  std::vector<Source> sources;
};

// Half the batch from each stream (uniform draws with replacement). Samples are
// cropped and augmented before featurizing; the batch order is shuffled.
Batch make_batch(std::span<const Sample> kws_stream, std::span<const Sample> at_stream,
                 const UiTConfig& cfg, const BatchOptions& opt, Rng& rng);

struct AdamWHyper {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_epochs = 20.0;
  double total_epochs = 800.0;
};

struct OptimState {
  AdamWHyper hp;
  WeightStore m;
  WeightStore v;
  std::uint64_t step = 0;
  std::unordered_set<std::string> decayed;
};

OptimState make_optim_state(const WeightStore& w, const UiTConfig& cfg, AdamWHyper hp = {});

// Linear warmup to lr0, then cosine annealing to 0 at total_epochs.
double lr_at(double epoch, const AdamWHyper& hp);
inline double lr_at(double epoch, const OptimState& st) { return lr_at(epoch, st.hp); }

// One decoupled-weight-decay Adam step at learning rate `lr`.
void adamw_step(WeightStore& w, const WeightStore& grads, OptimState& st, double lr);

// ---- toy task ------------------------------------------------------------------

// L=2, D=32, U=8, two heads; 4 labels: events {speech, tone}, keywords {kw_a, kw_b}.
UiTConfig toy_config();

// Four spectrogram classes over noise; class c brightens the c-th quarter of
// the bins in every patch column. KWS clips are 1 s, AT clips 3 s.
struct ToyTaskSpec {
  std::uint64_t seed = 0;
  std::size_t epochs = 40;
  std::size_t batches_per_epoch = 5;
  std::size_t batch_size = 16;
  std::size_t probe_size = 32;
  double noise = 0.5;
  double band_gain = 3.0;
  // 200 steps is short for the full-scale base rate; total_epochs is taken
  // from `epochs`.
  AdamWHyper hp{.lr0 = 3e-3};
  AugmentSpec augment;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // BCE on the fixed probe set after this epoch
  double train_loss = 0.0;
  double lr = 0.0;        // rate at the last step of the epoch
};

struct ToyResult {
  std::vector<EpochLog> curve;
  WeightStore weights;
  double final_loss() const { return curve.empty() ? 0.0 : curve.back().loss; }
};

// One synthetic sample of class `cls` (0..3 = speech, tone, kw_a, kw_b).
Sample toy_sample(std::size_t cls, const ToyTaskSpec& task, const UiTConfig& cfg, Rng& rng);

ToyResult train_toy(const ToyTaskSpec& task);

// "epoch loss lr" per line.
void write_loss_log(const std::string& path, const std::vector<EpochLog>& curve);

}  // namespace uit
