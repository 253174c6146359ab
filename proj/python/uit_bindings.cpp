#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
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

namespace py = pybind11;
using namespace uit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(float));
  return out;
}

WeightStore to_store(const py::dict& d) {
  WeightStore w;
  for (const auto& [k, v] : d) {
    w.insert(py::cast<std::string>(k), to_tensor(py::cast<FloatArray>(v)));
  }
  return w;
}

py::dict to_dict(const WeightStore& w) {
  py::dict d;
  for (const auto& [name, t] : w) d[py::str(name)] = to_array(t);
  return d;
}

Waveform to_wave(const FloatArray& a) {
  if (a.ndim() != 1) throw std::invalid_argument("waveform must be 1-D");
  return Waveform{std::vector<float>(a.data(), a.data() + a.size())};
}

std::span<const float> as_span(const FloatArray& a) { return {a.data(), std::size_t(a.size())}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Unified transformer for keyword spotting and audio tagging";

  py::enum_<Activation>(m, "Activation")
      .value("relu", Activation::kReLU)
      .value("gelu", Activation::kGeLU);
  py::enum_<Attention>(m, "Attention")
      .value("bottleneck", Attention::kBottleneck)
      .value("standard", Attention::kStandard);

  py::class_<UiTConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("name", &UiTConfig::name)
      .def_readwrite("layers", &UiTConfig::layers)
      .def_readwrite("dim", &UiTConfig::dim)
      .def_readwrite("bottleneck", &UiTConfig::bottleneck)
      .def_readwrite("heads", &UiTConfig::heads)
      .def_readwrite("mlp_dim", &UiTConfig::mlp_dim)
      .def_readwrite("patch_t", &UiTConfig::patch_t)
      .def_readwrite("patch_f", &UiTConfig::patch_f)
      .def_readwrite("n_mels", &UiTConfig::n_mels)
      .def_readwrite("input_frames", &UiTConfig::input_frames)
      .def_readwrite("activation", &UiTConfig::activation)
      .def_readwrite("attention", &UiTConfig::attention)
      .def_property_readonly("tokens", &UiTConfig::tokens)
      .def_property_readonly("patch_size", &UiTConfig::patch_size)
      .def_property_readonly("num_labels", &UiTConfig::num_labels)
      .def_property_readonly("label_names", [](const UiTConfig& c) { return c.labels.names(); })
      .def("validate", &UiTConfig::validate)
      .def("__repr__", [](const UiTConfig& c) {
        return "<Config " + c.name + " L=" + std::to_string(c.layers) +
               " D=" + std::to_string(c.dim) + ">";
      });

  m.def("preset", &preset, py::arg("name"));
  m.def("preset_names", &preset_names);
  m.def("toy_config", &toy_config);

  m.def("count_params", &count_params, py::arg("cfg"));
  m.def("count_flops", &count_flops, py::arg("cfg"), py::arg("seconds") = 1.0);
  m.def("analyze", [](const UiTConfig& cfg) {
    const auto r = analyze(cfg);
    py::dict d;
    d["model"] = r.model;
    d["params"] = r.params;
    d["flops"] = r.flops;
    d["mflops"] = r.mflops();
    d["weight_bytes"] = r.weight_bytes;
    d["peak_activation_bytes"] = r.peak_activation_bytes;
    d["m_pk_bytes"] = r.m_pk_bytes;
    py::list rows;
    for (const auto& row : r.rows) {
      rows.append(py::dict(py::arg("name") = row.name, py::arg("params") = row.params,
                           py::arg("flops") = row.flops,
                           py::arg("activation_bytes") = row.activation_bytes));
    }
    d["rows"] = rows;
    return d;
  }, py::arg("cfg"));

  m.def("frame_count", [](std::size_t n) { return frame_count(n, MelConfig{}); }, py::arg("num_samples"));
  m.def("log_mel", [](const FloatArray& wave) { return to_array(log_mel(to_wave(wave)).data); },
        py::arg("wave"), "Log-Mel spectrogram [frames, 64] of 16 kHz mono audio.");
  m.def("patchify", [](const FloatArray& spec, const UiTConfig& cfg) {
    return to_array(patchify(to_tensor(spec), cfg));
  }, py::arg("spectrogram"), py::arg("cfg"));

  m.def("init_weights", [](const UiTConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return to_dict(init_weights<float>(cfg, rng));
  }, py::arg("cfg"), py::arg("seed") = 0);
  m.def("zero_weights", [](const UiTConfig& cfg) { return to_dict(zero_weights(cfg)); }, py::arg("cfg"));
  m.def("save_weights", [](const std::string& path, const py::dict& w) {
    save_weights(path, to_store(w));
  }, py::arg("path"), py::arg("weights"));
  m.def("load_weights", [](const std::string& path) { return to_dict(load_weights(path)); },
        py::arg("path"));

  m.def("forward", [](const FloatArray& tokens, const py::dict& w, const UiTConfig& cfg) {
    const WeightStore store = to_store(w);
    validate_weights(store, cfg);
    return to_array(forward(to_tensor(tokens), store, cfg));
  }, py::arg("tokens"), py::arg("weights"), py::arg("cfg"), "Logits for one chunk of tokens.");
  m.def("score", [](const FloatArray& logits) { return to_array(score(to_tensor(logits))); },
        py::arg("logits"));
  m.def("infer_clip", [](const FloatArray& wave, const py::dict& w, const UiTConfig& cfg) {
    return to_array(infer_clip(to_wave(wave), to_store(w), cfg));
  }, py::arg("wave"), py::arg("weights"), py::arg("cfg"));
  m.def("infer_chunks", [](const FloatArray& wave, const py::dict& w, const UiTConfig& cfg) {
    return to_array(infer_chunks(to_wave(wave), to_store(w), cfg));
  }, py::arg("wave"), py::arg("weights"), py::arg("cfg"));

  m.def("kws_decide", [](const FloatArray& probs, const UiTConfig& cfg, double gamma) {
    return kws_decide(as_span(probs), cfg.labels, gamma);
  }, py::arg("probs"), py::arg("cfg"), py::arg("gamma") = kDefaultKeywordThreshold,
     "Keyword label index, or None for no keyword.");
  m.def("average_precision", [](const FloatArray& scores, const FloatArray& truths) {
    return average_precision(as_span(scores), as_span(truths));
  }, py::arg("scores"), py::arg("truths"));
  m.def("mean_ap", [](const FloatArray& scores, const FloatArray& truths) {
    return mean_ap(to_tensor(scores), to_tensor(truths));
  }, py::arg("scores"), py::arg("truths"));

  m.def("lr_at", [](double epoch, double lr0, double warmup, double total) {
    AdamWHyper hp;
    hp.lr0 = lr0;
    hp.warmup_epochs = warmup;
    hp.total_epochs = total;
    return lr_at(epoch, hp);
  }, py::arg("epoch"), py::arg("lr0") = 1e-3, py::arg("warmup_epochs") = 20.0,
     py::arg("total_epochs") = 800.0);
  m.def("train_toy", [](std::uint64_t seed, std::size_t epochs, std::optional<double> lr) {
    ToyTaskSpec task;
    task.seed = seed;
    task.epochs = epochs;
    if (lr) task.hp.lr0 = *lr;
    py::gil_scoped_release release;
    const auto res = train_toy(task);
    py::gil_scoped_acquire acquire;
    py::list curve;
    for (const auto& e : res.curve) curve.append(py::make_tuple(e.epoch, e.loss, e.lr));
    return curve;
  }, py::arg("seed") = 0, py::arg("epochs") = 40, py::arg("lr") = py::none(),
     "Trains the tiny model on the synthetic task; returns (epoch, probe_bce, lr) rows.");

  m.def("gradcheck", [](std::size_t seeds) {
    py::list out;
    for (const auto& r : run_gradcheck_suite(seeds)) {
      out.append(py::dict(py::arg("name") = r.name, py::arg("max_rel_error") = r.max_rel_error,
                          py::arg("tolerance") = r.tolerance, py::arg("passed") = r.passed()));
    }
    return out;
  }, py::arg("seeds") = 20);
}
