#include "uit/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uit {

// ---- labels ------------------------------------------------------------------

const std::vector<std::string>& speech_commands_keywords() {
  static const std::vector<std::string> kw = {"yes",  "no",  "up", "down", "left",
                                              "right", "on", "off", "stop", "go"};
  return kw;
}

LabelSpace::LabelSpace(std::vector<std::string> events, std::vector<std::string> keywords,
                       std::size_t speech_event) {
  if (events.empty()) throw std::invalid_argument("label space: need at least one event label");
  if (speech_event >= events.size()) {
    throw std::invalid_argument("label space: speech index " + std::to_string(speech_event) +
                                " outside the event range");
  }
  events_ = {0, events.size()};
  keywords_ = {events.size(), events.size() + keywords.size()};
  speech_ = speech_event;
  names_ = std::move(events);
  names_.insert(names_.end(), keywords.begin(), keywords.end());
}

LabelSpace LabelSpace::unikw_at(std::vector<std::string> event_names) {
  if (event_names.empty()) {
    event_names.reserve(kAudiosetClasses);
    event_names.emplace_back("Speech");
    for (std::size_t i = 1; i < kAudiosetClasses; ++i) {
      event_names.push_back("event_" + std::to_string(i));
    }
  }
  if (event_names.size() != kAudiosetClasses) {
    throw std::invalid_argument("label space: expected 527 event names, got " +
                                std::to_string(event_names.size()));
  }
  std::size_t speech = 0;
  for (std::size_t i = 0; i < event_names.size(); ++i) {
    if (event_names[i] == "Speech") {
      speech = i;
      break;
    }
  }
  return LabelSpace(std::move(event_names), speech_commands_keywords(), speech);
}

std::vector<std::string> LabelSpace::read_event_names(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open label file");
  std::vector<std::string> names;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("index", 0) == 0) continue;
    }
    // index,mid,"display name, possibly with commas"
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw std::runtime_error(path + ": malformed line '" + line + "'");
    std::string display = line.substr(c2 + 1);
    if (display.size() >= 2 && display.front() == '"' && display.back() == '"') {
      display = display.substr(1, display.size() - 2);
    }
    names.push_back(display);
  }
  return names;
}

std::optional<std::size_t> LabelSpace::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

// ---- config ------------------------------------------------------------------

std::string to_string(Attention a) {
  return a == Attention::kBottleneck ? "bottleneck" : "standard";
}

Attention parse_attention(const std::string& name) {
  if (name == "bottleneck") return Attention::kBottleneck;
  if (name == "standard") return Attention::kStandard;
  throw std::invalid_argument("unknown attention '" + name +
                              "' (expected bottleneck or standard)");
}

void UiTConfig::validate() const {
  auto fail = [this](const std::string& why) {
    return std::invalid_argument("config " + name + ": " + why);
  };
  if (dim == 0 || mlp_dim == 0 || heads == 0) throw fail("dim, mlp_dim and heads must be positive");
  if (patch_t == 0 || patch_f == 0) throw fail("patch sizes must be positive");
  if (attention_width() == 0 || attention_width() % heads != 0) {
    throw fail("attention width " + std::to_string(attention_width()) +
               " not divisible by " + std::to_string(heads) + " heads");
  }
  if (input_frames == 0 || input_frames % patch_t != 0) {
    throw fail("input_frames " + std::to_string(input_frames) + " not a multiple of patch_t " +
               std::to_string(patch_t));
  }
  if (n_mels == 0 || n_mels % patch_f != 0) {
    throw fail("n_mels " + std::to_string(n_mels) + " not a multiple of patch_f " +
               std::to_string(patch_f));
  }
  if (labels.size() == 0) throw fail("empty label space");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"uit-xs", "uit-2xs", "uit-3xs"};
  return names;
}

UiTConfig preset(const std::string& name) {
  UiTConfig cfg;
  cfg.name = name;
  if (name == "uit-xs") {
    cfg.layers = 12;
  } else if (name == "uit-2xs") {
    cfg.layers = 6;
  } else if (name == "uit-3xs") {
    cfg.layers = 4;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown model preset '" + name + "' (known: " + known + ")");
  }
  cfg.dim = 128;
  cfg.mlp_dim = 3 * cfg.dim;
  cfg.bottleneck = cfg.dim / 4;
  cfg.heads = 2;
  return cfg;
}

// ---- weights -----------------------------------------------------------------

template <typename T>
void BasicWeightStore<T>::insert(std::string name, BasicTensor<T> t) {
  if (index_.count(name)) throw std::invalid_argument("weights: duplicate tensor '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
const BasicTensor<T>& BasicWeightStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("weights: missing tensor '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
BasicTensor<T>& BasicWeightStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("weights: missing tensor '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t BasicWeightStore<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template class BasicWeightStore<float>;
template class BasicWeightStore<double>;

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

std::vector<ParamSpec> param_catalog(const UiTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t w = cfg.attention_width();
  const std::size_t m = cfg.mlp_dim;
  std::vector<ParamSpec> specs;
  specs.push_back({"stem.weight", {cfg.patch_size(), d}, true});
  specs.push_back({"stem.bias", {d}, false});
  specs.push_back({"pos.time", {cfg.time_patches(), d}, false});
  specs.push_back({"pos.freq", {cfg.freq_patches(), d}, false});
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = block_prefix(i);
    specs.push_back({p + "norm1.gamma", {d}, false});
    specs.push_back({p + "norm1.beta", {d}, false});
    for (const char* proj : {"q", "k", "v"}) {
      specs.push_back({p + "attn." + proj + ".weight", {d, w}, true});
      specs.push_back({p + "attn." + proj + ".bias", {w}, false});
    }
    specs.push_back({p + "attn.out.weight", {w, d}, true});
    specs.push_back({p + "attn.out.bias", {d}, false});
    specs.push_back({p + "norm2.gamma", {d}, false});
    specs.push_back({p + "norm2.beta", {d}, false});
    specs.push_back({p + "mlp.fc1.weight", {d, m}, true});
    specs.push_back({p + "mlp.fc1.bias", {m}, false});
    specs.push_back({p + "mlp.fc2.weight", {m, d}, true});
    specs.push_back({p + "mlp.fc2.bias", {d}, false});
  }
  specs.push_back({"norm.gamma", {d}, false});
  specs.push_back({"norm.beta", {d}, false});
  specs.push_back({"head.weight", {d, cfg.num_labels()}, true});
  specs.push_back({"head.bias", {cfg.num_labels()}, false});
  return specs;
}

template <typename T>
void validate_weights(const BasicWeightStore<T>& w, const UiTConfig& cfg) {
  const auto specs = param_catalog(cfg);
  for (const auto& s : specs) {
    if (!w.contains(s.name)) throw std::invalid_argument("weights: missing tensor '" + s.name + "'");
    const auto& t = w.at(s.name);
    if (t.shape() != s.shape) {
      throw std::invalid_argument("weights: tensor '" + s.name + "' has shape " +
                                  shape_to_string(t.shape()) + ", expected " +
                                  shape_to_string(s.shape));
    }
  }
  if (w.size() != specs.size()) {
    for (const auto& [name, t] : w) {
      bool known = false;
      for (const auto& s : specs) known = known || s.name == name;
      if (!known) throw std::invalid_argument("weights: unexpected tensor '" + name + "'");
    }
  }
}

namespace {

bool is_norm_gamma(const std::string& name) {
  return name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
}
bool is_embedding(const std::string& name) { return name.rfind("pos.", 0) == 0; }

}  // namespace

template <typename T>
BasicWeightStore<T> init_weights(const UiTConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.02);
  BasicWeightStore<T> w;
  for (const auto& s : param_catalog(cfg)) {
    BasicTensor<T> t(s.shape);
    if (s.decays || is_embedding(s.name)) {
      for (auto& v : t.values()) {
        double x;
        do {
          x = normal(rng);
        } while (std::abs(x) > 0.04);
        v = static_cast<T>(x);
      }
    } else if (is_norm_gamma(s.name)) {
      t.fill(T(1));
    }
    w.insert(s.name, std::move(t));
  }
  return w;
}

WeightStore zero_weights(const UiTConfig& cfg) {
  WeightStore w;
  for (const auto& s : param_catalog(cfg)) {
    Tensor t(s.shape);
    if (is_norm_gamma(s.name)) t.fill(1.0f);
    w.insert(s.name, std::move(t));
  }
  return w;
}

template <typename T>
BasicWeightStore<T> zeros_like(const BasicWeightStore<T>& w) {
  BasicWeightStore<T> z;
  for (const auto& [name, t] : w) z.insert(name, BasicTensor<T>(t.shape()));
  return z;
}

// ---- patchify ----------------------------------------------------------------

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& sg, const UiTConfig& cfg) {
  cfg.validate();
  if (sg.rank() != 2 || sg.dim(1) != cfg.n_mels) {
    throw std::invalid_argument("patchify: spectrogram shape " + shape_to_string(sg.shape()) +
                                " needs " + std::to_string(cfg.n_mels) + " mel bins");
  }
  if (sg.dim(0) < cfg.input_frames) {
    throw std::invalid_argument("patchify: spectrogram has " + std::to_string(sg.dim(0)) +
                                " frames, at least " + std::to_string(cfg.input_frames) +
                                " required");
  }
  const std::size_t nt = cfg.time_patches();
  const std::size_t nf = cfg.freq_patches();
  BasicTensor<T> tokens({nt * nf, cfg.patch_size()});
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t f = 0; f < nf; ++f) {
      auto tok = tokens.row(t * nf + f);
      for (std::size_t r = 0; r < cfg.patch_t; ++r) {
        for (std::size_t c = 0; c < cfg.patch_f; ++c) {
          tok[r * cfg.patch_f + c] = sg(t * cfg.patch_t + r, f * cfg.patch_f + c);
        }
      }
    }
  }
  return tokens;
}

Tensor patchify(const Spectrogram& sg, const UiTConfig& cfg) { return patchify(sg.data, cfg); }

// ---- forward -----------------------------------------------------------------

namespace {

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicWeightStore<T>& w,
                      const std::string& prefix) {
  BasicTensor<T> y = matmul(x, w.at(prefix + ".weight"));
  add_bias_inplace(y, w.at(prefix + ".bias"));
  return y;
}

template <typename T>
void add_inplace(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
BasicTensor<T> take_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  BasicTensor<T> out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  }
  return out;
}

template <typename T>
void put_cols(BasicTensor<T>& dst, const BasicTensor<T>& src, std::size_t begin) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, begin + c) = src(r, c);
  }
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  BasicTensor<T> out({x.cols(), x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  }
  return out;
}

template <typename T>
void scale_inplace(BasicTensor<T>& x, T s) {
  for (auto& v : x.values()) v *= s;
}

template <typename T>
BasicTensor<T> embed(const BasicTensor<T>& tokens, const BasicWeightStore<T>& w,
                     const UiTConfig& cfg) {
  if (tokens.rank() != 2 || tokens.dim(0) != cfg.tokens() || tokens.dim(1) != cfg.patch_size()) {
    throw std::invalid_argument("forward: tokens shape " + shape_to_string(tokens.shape()) +
                                ", expected [" + std::to_string(cfg.tokens()) + "," +
                                std::to_string(cfg.patch_size()) + "]");
  }
  BasicTensor<T> x = linear(tokens, w, "stem");
  const auto& te = w.at("pos.time");
  const auto& fe = w.at("pos.freq");
  const std::size_t nf = cfg.freq_patches();
  for (std::size_t n = 0; n < x.rows(); ++n) {
    auto row = x.row(n);
    const auto trow = te.row(n / nf);
    const auto frow = fe.row(n % nf);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += trow[c] + frow[c];
  }
  return x;
}

// Projected multi-head attention on pre-normed input h: Q/K/V map D -> W,
// heads are column blocks of width W/H, output maps W -> D.
template <typename T>
BasicTensor<T> projected_attention(const BasicTensor<T>& h, const BasicWeightStore<T>& w,
                                   const std::string& p, const UiTConfig& cfg) {
  const BasicTensor<T> q = linear(h, w, p + "attn.q");
  const BasicTensor<T> k = linear(h, w, p + "attn.k");
  const BasicTensor<T> v = linear(h, w, p + "attn.v");
  const std::size_t dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(dh));
  BasicTensor<T> ctx({h.rows(), cfg.attention_width()});
  for (std::size_t head = 0; head < cfg.heads; ++head) {
    const auto qh = take_cols(q, head * dh, dh);
    const auto kh = take_cols(k, head * dh, dh);
    const auto vh = take_cols(v, head * dh, dh);
    auto s = matmul(qh, transpose(kh));
    scale_inplace(s, scale);
    put_cols(ctx, matmul(softmax_rows(s), vh), head * dh);
  }
  return linear(ctx, w, p + "attn.out");
}

// Textbook full-width attention written as direct loops over query, key and
// channel. Kept separate from the projected path so the two can be compared.
template <typename T>
BasicTensor<T> standard_attention(const BasicTensor<T>& h, const BasicWeightStore<T>& w,
                                  const std::string& p, const UiTConfig& cfg) {
  const BasicTensor<T> q = linear(h, w, p + "attn.q");
  const BasicTensor<T> k = linear(h, w, p + "attn.k");
  const BasicTensor<T> v = linear(h, w, p + "attn.v");
  const std::size_t n = h.rows();
  const std::size_t dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(dh));
  BasicTensor<T> ctx({n, cfg.attention_width()});
  BasicTensor<T> logits({1, n});
  for (std::size_t head = 0; head < cfg.heads; ++head) {
    const std::size_t off = head * dh;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(i, off + c) * k(j, off + c);
        logits[j] = dot * scale;
      }
      const auto prob = softmax_rows(logits);
      for (std::size_t c = 0; c < dh; ++c) {
        T acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += prob[j] * v(j, off + c);
        ctx(i, off + c) = acc;
      }
    }
  }
  return linear(ctx, w, p + "attn.out");
}

template <typename T>
BasicTensor<T> readout(const BasicTensor<T>& x, const BasicWeightStore<T>& w) {
  const auto hf = layer_norm(x, w.at("norm.gamma"), w.at("norm.beta"));
  BasicTensor<T> pooled({1, hf.cols()});
  for (std::size_t r = 0; r < hf.rows(); ++r) {
    for (std::size_t c = 0; c < hf.cols(); ++c) pooled[c] += hf(r, c);
  }
  scale_inplace(pooled, T(1) / T(hf.rows()));
  auto logits = linear(pooled, w, "head");
  return logits.reshaped({logits.size()});
}

}  // namespace

template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& tokens, const BasicWeightStore<T>& w,
                       const UiTConfig& cfg) {
  validate_weights(w, cfg);
  BasicTensor<T> x = embed(tokens, w, cfg);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = block_prefix(i);
    const auto h1 = layer_norm(x, w.at(p + "norm1.gamma"), w.at(p + "norm1.beta"));
    add_inplace(x, cfg.attention == Attention::kStandard ? standard_attention(h1, w, p, cfg)
                                                         : projected_attention(h1, w, p, cfg));
    const auto h2 = layer_norm(x, w.at(p + "norm2.gamma"), w.at(p + "norm2.beta"));
    add_inplace(x, linear(activate(cfg.activation, linear(h2, w, p + "mlp.fc1")), w, p + "mlp.fc2"));
  }
  return readout(x, w);
}

template <typename T>
BasicTensor<T> score(const BasicTensor<T>& logits) {
  BasicTensor<T> p(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = sigmoid(logits[i]);
  return p;
}

// ---- training path -----------------------------------------------------------

template <typename T>
struct BlockTrace {
  BasicTensor<T> x_in, h1, q, k, v, probs, ctx, x_mid, h2, pre_act, act;
};

template <typename T>
struct ForwardTrace {
  BasicTensor<T> tokens;
  std::vector<BlockTrace<T>> blocks;
  BasicTensor<T> x_final, pooled;
};

template <typename T>
Trainable<T>::Trainable(const UiTConfig& cfg, const BasicWeightStore<T>& w)
    : cfg_(&cfg), w_(&w) {
  validate_weights(w, cfg);
}

template <typename T>
Trainable<T>::~Trainable() = default;
template <typename T>
Trainable<T>::Trainable(Trainable&&) noexcept = default;
template <typename T>
Trainable<T>& Trainable<T>::operator=(Trainable&&) noexcept = default;

template <typename T>
BasicTensor<T> Trainable<T>::forward(const BasicTensor<T>& tokens) {
  const auto& cfg = *cfg_;
  const auto& w = *w_;
  trace_ = std::make_unique<ForwardTrace<T>>();
  auto& tr = *trace_;
  tr.tokens = tokens;
  BasicTensor<T> x = embed(tokens, w, cfg);
  const std::size_t n = x.rows();
  const std::size_t dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(dh));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = block_prefix(i);
    BlockTrace<T> b;
    b.x_in = x;
    b.h1 = layer_norm(x, w.at(p + "norm1.gamma"), w.at(p + "norm1.beta"));
    b.q = linear(b.h1, w, p + "attn.q");
    b.k = linear(b.h1, w, p + "attn.k");
    b.v = linear(b.h1, w, p + "attn.v");
    b.probs = BasicTensor<T>({cfg.heads * n, n});
    b.ctx = BasicTensor<T>({n, cfg.attention_width()});
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      auto s = matmul(take_cols(b.q, head * dh, dh), transpose(take_cols(b.k, head * dh, dh)));
      scale_inplace(s, scale);
      const auto pr = softmax_rows(s);
      std::copy(pr.data().begin(), pr.data().end(), b.probs.data().begin() + head * n * n);
      put_cols(b.ctx, matmul(pr, take_cols(b.v, head * dh, dh)), head * dh);
    }
    add_inplace(x, linear(b.ctx, w, p + "attn.out"));
    b.x_mid = x;
    b.h2 = layer_norm(x, w.at(p + "norm2.gamma"), w.at(p + "norm2.beta"));
    b.pre_act = linear(b.h2, w, p + "mlp.fc1");
    b.act = activate(cfg.activation, b.pre_act);
    add_inplace(x, linear(b.act, w, p + "mlp.fc2"));
    tr.blocks.push_back(std::move(b));
  }
  tr.x_final = x;
  const auto hf = layer_norm(x, w.at("norm.gamma"), w.at("norm.beta"));
  tr.pooled = BasicTensor<T>({1, hf.cols()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < hf.cols(); ++c) tr.pooled[c] += hf(r, c);
  }
  scale_inplace(tr.pooled, T(1) / T(n));
  auto logits = linear(tr.pooled, w, "head");
  return logits.reshaped({logits.size()});
}

namespace {

// Backward of y = x * W + b; accumulates dW, db and returns dx.
template <typename T>
BasicTensor<T> linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                               const BasicWeightStore<T>& w, BasicWeightStore<T>& grads,
                               const std::string& prefix) {
  auto g = matmul_backward(x, w.at(prefix + ".weight"), dy);
  add_inplace(grads.at(prefix + ".weight"), g.db);
  add_inplace(grads.at(prefix + ".bias"), bias_backward(dy));
  return std::move(g.da);
}

template <typename T>
BasicTensor<T> layer_norm_backward_acc(const BasicTensor<T>& x, const BasicTensor<T>& dy,
                                       const BasicWeightStore<T>& w, BasicWeightStore<T>& grads,
                                       const std::string& prefix) {
  auto g = layer_norm_backward(x, w.at(prefix + ".gamma"), dy);
  add_inplace(grads.at(prefix + ".gamma"), g.dgamma);
  add_inplace(grads.at(prefix + ".beta"), g.dbeta);
  return std::move(g.dx);
}

}  // namespace

template <typename T>
void Trainable<T>::backward(const BasicTensor<T>& dlogits, BasicWeightStore<T>& grads) {
  if (!trace_) throw std::logic_error("backward: no forward pass recorded");
  const auto& cfg = *cfg_;
  const auto& w = *w_;
  const auto& tr = *trace_;
  const std::size_t n = tr.x_final.rows();
  const std::size_t dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(T(dh));

  const BasicTensor<T> dl = dlogits.reshaped({1, dlogits.size()});
  const auto dpooled = linear_backward(tr.pooled, dl, w, grads, "head");
  BasicTensor<T> dhf({n, cfg.dim});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cfg.dim; ++c) dhf(r, c) = dpooled[c] / T(n);
  }
  BasicTensor<T> dx = layer_norm_backward_acc(tr.x_final, dhf, w, grads, "norm");

  for (std::size_t i = cfg.layers; i-- > 0;) {
    const std::string p = block_prefix(i);
    const auto& b = tr.blocks[i];
    // x_out = x_mid + fc2(act(fc1(LN2(x_mid))))
    const auto dact = linear_backward(b.act, dx, w, grads, p + "mlp.fc2");
    const auto dpre = activate_backward(cfg.activation, b.pre_act, dact);
    const auto dh2 = linear_backward(b.h2, dpre, w, grads, p + "mlp.fc1");
    add_inplace(dx, layer_norm_backward_acc(b.x_mid, dh2, w, grads, p + "norm2"));
    // x_mid = x_in + out(attention(LN1(x_in)))
    const auto dctx = linear_backward(b.ctx, dx, w, grads, p + "attn.out");
    BasicTensor<T> dq({n, cfg.attention_width()});
    BasicTensor<T> dk({n, cfg.attention_width()});
    BasicTensor<T> dv({n, cfg.attention_width()});
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      const std::size_t off = head * dh;
      BasicTensor<T> pr({n, n});
      std::copy(b.probs.data().begin() + head * n * n, b.probs.data().begin() + (head + 1) * n * n,
                pr.data().begin());
      const auto qh = take_cols(b.q, off, dh);
      const auto kh = take_cols(b.k, off, dh);
      const auto vh = take_cols(b.v, off, dh);
      const auto dctx_h = take_cols(dctx, off, dh);
      // ctx_h = P * V_h
      const auto mix = matmul_backward(pr, vh, dctx_h);
      auto ds = softmax_rows_backward(pr, mix.da);
      scale_inplace(ds, scale);
      // S = Q_h * K_h^T
      const auto qk = matmul_backward(qh, transpose(kh), ds);
      put_cols(dq, qk.da, off);
      put_cols(dk, transpose(qk.db), off);
      put_cols(dv, mix.db, off);
    }
    auto dh1 = linear_backward(b.h1, dq, w, grads, p + "attn.q");
    add_inplace(dh1, linear_backward(b.h1, dk, w, grads, p + "attn.k"));
    add_inplace(dh1, linear_backward(b.h1, dv, w, grads, p + "attn.v"));
    add_inplace(dx, layer_norm_backward_acc(b.x_in, dh1, w, grads, p + "norm1"));
  }

  auto& gt = grads.at("pos.time");
  auto& gf = grads.at("pos.freq");
  const std::size_t nf = cfg.freq_patches();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cfg.dim; ++c) {
      gt(r / nf, c) += dx(r, c);
      gf(r % nf, c) += dx(r, c);
    }
  }
  linear_backward(tr.tokens, dx, w, grads, "stem");
}

template <typename T>
std::vector<BasicTensor<T>> Trainable<T>::attention_maps() const {
  std::vector<BasicTensor<T>> maps;
  if (trace_) {
    for (const auto& b : trace_->blocks) maps.push_back(b.probs);
  }
  return maps;
}

template <typename T>
std::vector<BasicTensor<T>> Trainable<T>::mlp_preactivations() const {
  std::vector<BasicTensor<T>> out;
  if (trace_) {
    for (const auto& b : trace_->blocks) out.push_back(b.pre_act);
  }
  return out;
}

template <typename T>
T batch_loss_and_grads(const std::vector<BasicTensor<T>>& tokens, const BasicTensor<T>& targets,
                       const BasicWeightStore<T>& w, const UiTConfig& cfg,
                       BasicWeightStore<T>* grads) {
  const std::size_t batch = tokens.size();
  const std::size_t c = cfg.num_labels();
  if (batch == 0 || targets.rank() != 2 || targets.dim(0) != batch || targets.dim(1) != c) {
    throw std::invalid_argument("batch loss: targets shape " + shape_to_string(targets.shape()) +
                                " does not match batch of " + std::to_string(batch) + " x " +
                                std::to_string(c) + " labels");
  }
  if (grads) {
    for (auto& [name, g] : *grads) g.fill(T(0));
  }
  BasicTensor<T> logits({batch, c});
  std::vector<Trainable<T>> models;
  for (std::size_t b = 0; b < batch; ++b) {
    Trainable<T> m(cfg, w);
    const auto z = m.forward(tokens[b]);
    std::copy(z.data().begin(), z.data().end(), logits.row(b).begin());
    if (grads) models.push_back(std::move(m));
  }
  const T loss = bce_with_logits(logits, targets);
  if (grads) {
    const auto dz = bce_with_logits_backward(logits, targets);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = dz.row(b);
      models[b].backward(BasicTensor<T>({c}, std::vector<T>(row.begin(), row.end())), *grads);
    }
  }
  return loss;
}

#define UIT_INSTANTIATE_MODEL(T)                                                              \
  template void validate_weights(const BasicWeightStore<T>&, const UiTConfig&);               \
  template BasicWeightStore<T> init_weights(const UiTConfig&, Rng&);                          \
  template BasicWeightStore<T> zeros_like(const BasicWeightStore<T>&);                        \
  template BasicTensor<T> patchify(const BasicTensor<T>&, const UiTConfig&);                  \
  template BasicTensor<T> forward(const BasicTensor<T>&, const BasicWeightStore<T>&,          \
                                  const UiTConfig&);                                          \
  template BasicTensor<T> score(const BasicTensor<T>&);                                       \
  template class Trainable<T>;                                                                \
  template T batch_loss_and_grads(const std::vector<BasicTensor<T>>&, const BasicTensor<T>&,  \
                                  const BasicWeightStore<T>&, const UiTConfig&,               \
                                  BasicWeightStore<T>*);

UIT_INSTANTIATE_MODEL(float)
UIT_INSTANTIATE_MODEL(double)

#undef UIT_INSTANTIATE_MODEL

}  // namespace uit
