#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ltcil/error.hpp"
#include "ltcil/matrix.hpp"

namespace ltcil {

enum class Activation : std::uint8_t { Identity = 0, ReLU = 1 };

/// Fully connected layer. The weight is stored out_dim x in_dim so that
/// adding output units appends rows.
struct DenseLayer {
  DenseMatrix weight;
  std::vector<double> bias;
  Activation activation = Activation::Identity;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }

  bool operator==(const DenseLayer&) const = default;
};

/// Gradient of every model parameter, concatenated layer by layer
/// (weights row-major, then bias).
struct FlatGradient {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double norm() const noexcept { return l2_norm(values); }
  bool all_finite() const noexcept {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const FlatGradient&) const = default;
};

class MlpModel;
void sgd_step(MlpModel& model, const FlatGradient& grad, double lr);
void set_parameters(MlpModel& model, std::span<const double> values);
MlpModel expand_head(const MlpModel& model, std::size_t new_class_count, std::uint64_t seed);

/// Dense feed-forward classifier. Hidden layers use ReLU, the last layer
/// emits raw logits.
class MlpModel {
 public:
  explicit MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  /// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static MlpModel make(std::size_t input_dim, std::span<const std::size_t> hidden_dims,
                       std::size_t output_dim, std::uint64_t seed) {
    if (input_dim == 0 || output_dim == 0) throw InvalidInput("MlpModel: zero-width input or output");
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    std::size_t fan_in = input_dim;
    auto add = [&](std::size_t out, Activation act) {
      DenseLayer layer{DenseMatrix(out, fan_in), std::vector<double>(out, 0.0), act};
      init_uniform(layer.weight.values(), fan_in, rng);
      layers.push_back(std::move(layer));
      fan_in = out;
    };
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw InvalidInput("MlpModel: zero-width hidden layer");
      add(h, Activation::ReLU);
    }
    add(output_dim, Activation::Identity);
    return MlpModel(std::move(layers));
  }

  std::size_t input_dim() const noexcept { return layers_.front().in_dim(); }
  std::size_t output_dim() const noexcept { return layers_.back().out_dim(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  std::vector<double> parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
  }

  bool operator==(const MlpModel&) const = default;

  static void init_uniform(std::span<double> values, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : values) v = dist(rng);
  }

 private:
  void validate() const {
    if (layers_.empty()) throw InvalidInput("MlpModel: no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.in_dim() == 0 || l.out_dim() == 0) throw InvalidInput("MlpModel: zero-width layer");
      if (l.bias.size() != l.out_dim()) throw InvalidInput("MlpModel: bias length mismatch");
      if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
        throw InvalidInput("MlpModel: layer " + std::to_string(i) + " does not chain");
      }
      if (!l.weight.all_finite()) throw InvalidInput("MlpModel: non-finite weight");
    }
    if (layers_.back().activation != Activation::Identity) {
      throw InvalidInput("MlpModel: final layer must emit raw logits");
    }
  }

  std::vector<DenseLayer> layers_;

  friend void sgd_step(MlpModel&, const FlatGradient&, double);
  friend void set_parameters(MlpModel&, std::span<const double>);
  friend MlpModel expand_head(const MlpModel&, std::size_t, std::uint64_t);
};

/// Per-layer activations of one forward pass; activations[0] is the input
/// and activations.back() the logits.
struct ForwardTrace {
  std::vector<DenseMatrix> activations;
  const DenseMatrix& logits() const noexcept { return activations.back(); }
};

namespace detail {

inline DenseMatrix dense_apply(const DenseLayer& layer, const DenseMatrix& in) {
  DenseMatrix out(in.rows(), layer.out_dim());
  const std::size_t k_dim = layer.in_dim();
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const double* x = in.row(i).data();
    double* y = out.row(i).data();
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double* w = layer.weight.row(o).data();
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < k_dim; ++k) acc += x[k] * w[k];
      y[o] = (layer.activation == Activation::ReLU && acc < 0.0) ? 0.0 : acc;
    }
  }
  return out;
}

}  // namespace detail

inline ForwardTrace forward_trace(const MlpModel& model, const DenseMatrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw InvalidInput("forward: input width " + std::to_string(inputs.cols()) +
                       " != model input_dim " + std::to_string(model.input_dim()));
  }
  ForwardTrace trace;
  trace.activations.reserve(model.layers().size() + 1);
  trace.activations.push_back(inputs);
  for (const auto& layer : model.layers()) {
    trace.activations.push_back(detail::dense_apply(layer, trace.activations.back()));
  }
  return trace;
}

inline DenseMatrix forward(const MlpModel& model, const DenseMatrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw InvalidInput("forward: input width " + std::to_string(inputs.cols()) +
                       " != model input_dim " + std::to_string(model.input_dim()));
  }
  DenseMatrix a = detail::dense_apply(model.layers().front(), inputs);
  for (std::size_t l = 1; l < model.layers().size(); ++l) a = detail::dense_apply(model.layers()[l], a);
  return a;
}

/// Parameter gradient of the scalar whose logit gradient is `dlogits`.
inline FlatGradient backward(const MlpModel& model, const ForwardTrace& trace,
                             const DenseMatrix& dlogits) {
  const auto& layers = model.layers();
  if (trace.activations.size() != layers.size() + 1) {
    throw InvalidInput("backward: trace does not belong to this model");
  }
  const DenseMatrix& logits = trace.logits();
  if (dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols()) {
    throw InvalidInput("backward: dlogits shape mismatch");
  }

  std::vector<std::size_t> offsets(layers.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offsets[l] = total;
    total += layers[l].parameter_count();
  }
  FlatGradient grad{std::vector<double>(total, 0.0)};

  DenseMatrix delta = dlogits;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const DenseMatrix& a = trace.activations[l];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    double* gw = grad.values.data() + offsets[l];
    double* gb = gw + layer.weight.size();

    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const double* d = delta.row(i).data();
      const double* x = a.row(i).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double di = d[o];
        double* gw_row = gw + o * in;
        for (std::size_t k = 0; k < in; ++k) gw_row[k] += di * x[k];
        gb[o] += di;
      }
    }
    if (l == 0) break;

    DenseMatrix prev(delta.rows(), in);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const double* d = delta.row(i).data();
      double* p = prev.row(i).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double di = d[o];
        const double* w = layer.weight.row(o).data();
        for (std::size_t k = 0; k < in; ++k) p[k] += di * w[k];
      }
      // layer l-1 is ReLU: its output is zero exactly where it was clipped
      if (layers[l - 1].activation == Activation::ReLU) {
        const double* act = a.row(i).data();
        for (std::size_t k = 0; k < in; ++k) {
          if (act[k] <= 0.0) p[k] = 0.0;
        }
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

inline FlatGradient backward(const MlpModel& model, const DenseMatrix& inputs,
                             const DenseMatrix& dlogits) {
  return backward(model, forward_trace(model, inputs), dlogits);
}

/// theta <- theta - lr * g, in canonical order.
inline void sgd_step(MlpModel& model, const FlatGradient& grad, double lr) {
  if (grad.size() != model.parameter_count()) {
    throw InvalidInput("sgd_step: gradient length " + std::to_string(grad.size()) +
                       " != parameter count " + std::to_string(model.parameter_count()));
  }
  if (!(lr >= 0.0)) throw InvalidInput("sgd_step: negative learning rate");
  const double* g = grad.values.data();
  for (auto& layer : model.layers_) {
    for (double& w : layer.weight.values()) w -= lr * *g++;
    for (double& b : layer.bias) b -= lr * *g++;
  }
}

inline void set_parameters(MlpModel& model, std::span<const double> values) {
  if (values.size() != model.parameter_count()) throw InvalidInput("set_parameters: length mismatch");
  const double* v = values.data();
  for (auto& layer : model.layers_) {
    for (double& w : layer.weight.values()) w = *v++;
    for (double& b : layer.bias) b = *v++;
  }
}

/// Widens the output layer to `new_class_count` units. Existing rows are kept
/// bit-exactly; new weight rows are seeded U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// and new biases start at zero.
inline MlpModel expand_head(const MlpModel& model, std::size_t new_class_count, std::uint64_t seed) {
  if (new_class_count <= model.output_dim()) {
    throw InvalidInput("expand_head: requested " + std::to_string(new_class_count) +
                       " classes, model already has " + std::to_string(model.output_dim()));
  }
  MlpModel out = model;
  DenseLayer& head = out.layers_.back();
  const std::size_t fan_in = head.in_dim();
  const std::size_t old_rows = head.out_dim();
  std::vector<double> w = head.weight.values();
  w.resize(new_class_count * fan_in, 0.0);
  Rng rng(seed);
  MlpModel::init_uniform(std::span<double>(w).subspan(old_rows * fan_in), fan_in, rng);
  head.weight = DenseMatrix(new_class_count, fan_in, std::move(w));
  head.bias.resize(new_class_count, 0.0);
  return out;
}

/// For each flat parameter index of `model`, its index after the head is
/// widened to `new_class_count`.
inline std::vector<std::size_t> head_expansion_index_map(const MlpModel& model,
                                                         std::size_t new_class_count) {
  std::vector<std::size_t> map;
  map.reserve(model.parameter_count());
  std::size_t idx = 0;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    for (std::size_t j = 0; j < layers[l].parameter_count(); ++j) map.push_back(idx++);
  }
  const auto& head = layers.back();
  const std::size_t base = idx;
  for (std::size_t j = 0; j < head.weight.size(); ++j) map.push_back(base + j);
  const std::size_t bias_base = base + new_class_count * head.in_dim();
  for (std::size_t j = 0; j < head.bias.size(); ++j) map.push_back(bias_base + j);
  return map;
}

// Snapshot format: "LTCILMLP", u64 layer count, per layer u64 (in, out,
// activation), then every parameter as a little-endian IEEE-754 double in
// canonical order.
namespace detail {

inline constexpr std::array<char, 8> kModelMagic{'L', 'T', 'C', 'I', 'L', 'M', 'L', 'P'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw IoError("model snapshot: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) { write_u64(os, std::bit_cast<std::uint64_t>(d)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace detail

inline void save_model(std::ostream& os, const MlpModel& model) {
  os.write(detail::kModelMagic.data(), detail::kModelMagic.size());
  detail::write_u64(os, model.layers().size());
  for (const auto& l : model.layers()) {
    detail::write_u64(os, l.in_dim());
    detail::write_u64(os, l.out_dim());
    detail::write_u64(os, static_cast<std::uint64_t>(l.activation));
  }
  for (double v : model.parameters()) detail::write_f64(os, v);
  if (!os) throw IoError("model snapshot: write failed");
}

inline MlpModel load_model(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != detail::kModelMagic) {
    throw IoError("model snapshot: bad magic");
  }
  const std::uint64_t n_layers = detail::read_u64(is);
  if (n_layers == 0 || n_layers > 1024) throw IoError("model snapshot: implausible layer count");
  std::vector<DenseLayer> layers;
  for (std::uint64_t l = 0; l < n_layers; ++l) {
    const std::uint64_t in = detail::read_u64(is);
    const std::uint64_t out = detail::read_u64(is);
    const std::uint64_t act = detail::read_u64(is);
    if (act > 1 || in == 0 || out == 0 || in > (1u << 24) || out > (1u << 24)) {
      throw IoError("model snapshot: corrupt layer header");
    }
    layers.push_back({DenseMatrix(out, in), std::vector<double>(out), static_cast<Activation>(act)});
  }
  for (auto& l : layers) {
    for (double& w : l.weight.values()) w = detail::read_f64(is);
    for (double& b : l.bias) b = detail::read_f64(is);
  }
  try {
    return MlpModel(std::move(layers));
  } catch (const InvalidInput& e) {
    throw IoError(std::string("model snapshot: ") + e.what());
  }
}

inline void save_model_file(const std::string& path, const MlpModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save_model(os, model);
}

inline MlpModel load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return load_model(is);
}

}  // namespace ltcil
