// UiT: patchify stem, factorized position embeddings, pre-norm transformer
// blocks with bottleneck (or standard) multi-head attention, mean pooling and
// a merged keyword/sound-event classifier.

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uit/dsp.hpp"
#include "uit/tensor.hpp"

namespace uit {

// Merged keyword-spotting and audio-tagging labels. Sound events come first
// so Audioset class indices are preserved; the keywords follow.
class LabelSpace {
 public:
  struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
  };

  LabelSpace() = default;
  LabelSpace(std::vector<std::string> events, std::vector<std::string> keywords,
             std::size_t speech_event);

  // 527 Audioset events (placeholder names unless supplied) + the 10
  // Speech Commands keywords. Event 0 is "Speech".
  static LabelSpace unikw_at(std::vector<std::string> event_names = {});

  // Reads Audioset's class_labels_indices.csv layout (index,mid,display_name).
  static std::vector<std::string> read_event_names(const std::string& path);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Range event_indices() const { return events_; }
  Range keyword_indices() const { return keywords_; }
  std::size_t speech_index() const { return speech_; }
  std::optional<std::size_t> find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  Range events_;
  Range keywords_;
  std::size_t speech_ = 0;
};

inline constexpr std::size_t kAudiosetClasses = 527;
const std::vector<std::string>& speech_commands_keywords();

enum class Attention { kBottleneck, kStandard };
std::string to_string(Attention a);
Attention parse_attention(const std::string& name);

struct UiTConfig {
  std::string name = "custom";
  std::size_t layers = 12;
  std::size_t dim = 128;
  std::size_t bottleneck = 32;
  std::size_t heads = 2;
  std::size_t mlp_dim = 384;
  std::size_t patch_t = 16;
  std::size_t patch_f = 16;
  std::size_t n_mels = 64;
  std::size_t input_frames = 96;
  Activation activation = Activation::kReLU;
  Attention attention = Attention::kBottleneck;
  LabelSpace labels = LabelSpace::unikw_at();

  std::size_t patch_size() const { return patch_t * patch_f; }
  std::size_t time_patches() const { return input_frames / patch_t; }
  std::size_t freq_patches() const { return n_mels / patch_f; }
  std::size_t tokens() const { return time_patches() * freq_patches(); }
  std::size_t num_labels() const { return labels.size(); }
  // Q/K/V width: U for bottleneck attention, D for standard attention.
  std::size_t attention_width() const {
    return attention == Attention::kStandard ? dim : bottleneck;
  }
  std::size_t head_dim() const { return attention_width() / heads; }

  void validate() const;
};

// Named presets "uit-xs", "uit-2xs", "uit-3xs".
UiTConfig preset(const std::string& name);
const std::vector<std::string>& preset_names();

// Ordered name -> tensor collection. Insertion order is the on-disk order.
template <typename T>
class BasicWeightStore {
 public:
  void insert(std::string name, BasicTensor<T> t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const BasicTensor<T>& at(const std::string& name) const;
  BasicTensor<T>& at(const std::string& name);
  std::size_t size() const { return entries_.size(); }
  std::size_t param_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  BasicWeightStore<U> cast() const {
    BasicWeightStore<U> out;
    for (const auto& [n, t] : entries_) out.insert(n, t.template cast<U>());
    return out;
  }

 private:
  std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using WeightStore = BasicWeightStore<float>;
using WeightStore64 = BasicWeightStore<double>;

struct ParamSpec {
  std::string name;
  Shape shape;
  // Only projection matrices get weight decay.
  bool decays = false;
};

// Every tensor the config needs, in canonical order.
std::vector<ParamSpec> param_catalog(const UiTConfig& cfg);

// Throws naming the first tensor that is missing or misshapen, or not part
// of the config.
template <typename T>
void validate_weights(const BasicWeightStore<T>& w, const UiTConfig& cfg);

// Truncated normal (sigma 0.02, cut at 2 sigma) projections, zero biases,
// unit/zero norm affine, same init for embeddings.
template <typename T>
BasicWeightStore<T> init_weights(const UiTConfig& cfg, Rng& rng);

// All projections and embeddings zero, norms gamma=1 beta=0.
WeightStore zero_weights(const UiTConfig& cfg);

// [input_frames, n_mels] -> [N, P]: tokens in time-major then frequency
// order, each tile flattened time-major. Frames past input_frames are ignored.
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& spectrogram, const UiTConfig& cfg);
Tensor patchify(const Spectrogram& sg, const UiTConfig& cfg);

// Raw logits [num_labels] for one chunk of tokens [N, P].
template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& tokens, const BasicWeightStore<T>& w,
                       const UiTConfig& cfg);

// Elementwise sigmoid.
template <typename T>
BasicTensor<T> score(const BasicTensor<T>& logits);

// Forward pass that keeps every intermediate for backpropagation. Always runs
// the projected-attention path; for standard attention the width is D.
template <typename T>
struct ForwardTrace;

template <typename T>
class Trainable {
 public:
  Trainable(const UiTConfig& cfg, const BasicWeightStore<T>& w);
  ~Trainable();
  Trainable(Trainable&&) noexcept;
  Trainable& operator=(Trainable&&) noexcept;

  BasicTensor<T> forward(const BasicTensor<T>& tokens);
  // Accumulates parameter gradients for the last forward() into `grads`.
  void backward(const BasicTensor<T>& dlogits, BasicWeightStore<T>& grads);

  // Attention probabilities [H*N, N] per block from the last forward().
  std::vector<BasicTensor<T>> attention_maps() const;
  // MLP hidden pre-activations [N, M] per block from the last forward().
  std::vector<BasicTensor<T>> mlp_preactivations() const;

 private:
  const UiTConfig* cfg_;
  const BasicWeightStore<T>* w_;
  std::unique_ptr<ForwardTrace<T>> trace_;
};

// Zero tensors shaped like every weight.
template <typename T>
BasicWeightStore<T> zeros_like(const BasicWeightStore<T>& w);

// Mean BCE over a batch of token tensors against targets [B, C]; fills
// `grads` (reset first) with d loss / d weight.
template <typename T>
T batch_loss_and_grads(const std::vector<BasicTensor<T>>& tokens,
                       const BasicTensor<T>& targets, const BasicWeightStore<T>& w,
                       const UiTConfig& cfg, BasicWeightStore<T>* grads);

}  // namespace uit
