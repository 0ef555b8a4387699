#ifndef MATS_DIFFNET_HPP_
#define MATS_DIFFNET_HPP_

// Dense MLP with exact reverse-mode gradients with respect to parameters and
// inputs. Parameters are a single flat vector; see ParamLayout for the order.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mats::nn {

enum class OutputActivation { identity, unit_interval };

inline const char* to_string(OutputActivation a) {
  return a == OutputActivation::identity ? "identity" : "unit_interval";
}

inline OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "identity") return OutputActivation::identity;
  if (s == "unit_interval") return OutputActivation::unit_interval;
  throw std::invalid_argument("unknown output activation: " + s);
}

// Hidden layers are always relu.
struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  OutputActivation output_activation = OutputActivation::identity;

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims;
    dims.reserve(hidden_dims.size() + 2);
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(output_dim);
    return dims;
  }

  std::size_t num_layers() const { return hidden_dims.size() + 1; }

  std::size_t param_count() const {
    auto dims = layer_dims();
    std::size_t d = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) d += (dims[l] + 1) * dims[l + 1];
    return d;
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("MlpSpec: dims must be >= 1");
    for (auto h : hidden_dims)
      if (h == 0) throw std::invalid_argument("MlpSpec: hidden dims must be >= 1");
  }

  bool operator==(const MlpSpec&) const = default;
};

struct ParamVector {
  Eigen::VectorXd values;
  Eigen::Index size() const { return values.size(); }
  bool operator==(const ParamVector& o) const {
    return values.size() == o.values.size() && (values.array() == o.values.array()).all();
  }
};

struct Gradient {
  Eigen::VectorXd values;
  Eigen::Index size() const { return values.size(); }
};

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Layout version 1. Layers run input -> output; layer l stores its
// fan_out x fan_in weight matrix row-major, then its fan_out biases.
class ParamLayout {
 public:
  static constexpr int kVersion = 1;

  explicit ParamLayout(const MlpSpec& spec) : dims_(spec.layer_dims()) {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weight_offsets_.push_back(off);
      off += dims_[l] * dims_[l + 1];
      bias_offsets_.push_back(off);
      off += dims_[l + 1];
    }
    total_ = off;
  }

  std::size_t num_layers() const { return weight_offsets_.size(); }
  std::size_t fan_in(std::size_t l) const { return dims_[l]; }
  std::size_t fan_out(std::size_t l) const { return dims_[l + 1]; }
  std::size_t weight_offset(std::size_t l) const { return weight_offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return bias_offsets_[l]; }
  std::size_t size() const { return total_; }

  Eigen::Map<const RowMajorMatrix> weights(const Eigen::VectorXd& p, std::size_t l) const {
    return {p.data() + weight_offsets_[l], Eigen::Index(fan_out(l)), Eigen::Index(fan_in(l))};
  }
  Eigen::Map<RowMajorMatrix> weights(Eigen::VectorXd& p, std::size_t l) const {
    return {p.data() + weight_offsets_[l], Eigen::Index(fan_out(l)), Eigen::Index(fan_in(l))};
  }
  Eigen::Map<const Eigen::VectorXd> biases(const Eigen::VectorXd& p, std::size_t l) const {
    return {p.data() + bias_offsets_[l], Eigen::Index(fan_out(l))};
  }
  Eigen::Map<Eigen::VectorXd> biases(Eigen::VectorXd& p, std::size_t l) const {
    return {p.data() + bias_offsets_[l], Eigen::Index(fan_out(l))};
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
  std::size_t total_ = 0;
};

namespace detail {

inline void check_params(const MlpSpec& spec, const ParamVector& params) {
  if (std::size_t(params.size()) != spec.param_count())
    throw std::invalid_argument("parameter vector length " + std::to_string(params.size()) +
                                " does not match spec (" + std::to_string(spec.param_count()) + ")");
}

inline void check_inputs(const MlpSpec& spec, Eigen::Index rows) {
  if (std::size_t(rows) != spec.input_dim)
    throw std::invalid_argument("input dimension mismatch: got " + std::to_string(rows) + ", expected " +
                                std::to_string(spec.input_dim));
}

}  // namespace detail

// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamLayout layout(spec);
  ParamVector p{Eigen::VectorXd::Zero(Eigen::Index(layout.size()))};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(double(layout.fan_in(l)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = layout.weights(p.values, l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  }
  return p;
}

// Activations of every layer for a batch (one sample per column).
// activations[0] is the input, activations.back() the network output.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;
  std::vector<Eigen::MatrixXd> preactivations;
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

inline ForwardTrace forward_trace(const MlpSpec& spec, const ParamVector& params, const Eigen::MatrixXd& inputs) {
  detail::check_params(spec, params);
  detail::check_inputs(spec, inputs.rows());
  ParamLayout layout(spec);
  ForwardTrace t;
  t.activations.reserve(layout.num_layers() + 1);
  t.preactivations.reserve(layout.num_layers());
  t.activations.push_back(inputs);
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    Eigen::MatrixXd z = layout.weights(params.values, l) * t.activations.back();
    z.colwise() += layout.biases(params.values, l);
    const bool last = l + 1 == layout.num_layers();
    Eigen::MatrixXd a;
    if (!last) {
      a = z.cwiseMax(0.0);
    } else if (spec.output_activation == OutputActivation::unit_interval) {
      a = (z.array().tanh() + 1.0) * 0.5;
    } else {
      a = z;
    }
    t.preactivations.push_back(std::move(z));
    t.activations.push_back(std::move(a));
  }
  return t;
}

inline Eigen::MatrixXd forward_batch(const MlpSpec& spec, const ParamVector& params, const Eigen::MatrixXd& inputs) {
  return forward_trace(spec, params, inputs).output();
}

inline Eigen::VectorXd forward(const MlpSpec& spec, const ParamVector& params, const Eigen::VectorXd& input) {
  return forward_trace(spec, params, input).output().col(0);
}

struct BackwardResult {
  Eigen::VectorXd param_grad;  // summed over the batch
  Eigen::MatrixXd input_grad;  // one column per sample
};

namespace detail {

// dL/dz at the output layer given dL/dy.
inline Eigen::MatrixXd output_delta(const MlpSpec& spec, const ForwardTrace& t, const Eigen::MatrixXd& upstream) {
  if (spec.output_activation == OutputActivation::unit_interval) {
    Eigen::ArrayXXd th = t.preactivations.back().array().tanh();
    return (upstream.array() * (1.0 - th.square()) * 0.5).matrix();
  }
  return upstream;
}

}  // namespace detail

// Vector-Jacobian product: upstream holds dL/d(output) per sample.
inline BackwardResult backward(const MlpSpec& spec, const ParamVector& params, const ForwardTrace& t,
                               const Eigen::MatrixXd& upstream) {
  ParamLayout layout(spec);
  if (std::size_t(upstream.rows()) != spec.output_dim || upstream.cols() != t.output().cols())
    throw std::invalid_argument("backward: upstream shape mismatch");
  BackwardResult r;
  r.param_grad = Eigen::VectorXd::Zero(Eigen::Index(layout.size()));
  Eigen::MatrixXd delta = detail::output_delta(spec, t, upstream);
  for (std::size_t l = layout.num_layers(); l-- > 0;) {
    layout.weights(r.param_grad, l).noalias() = delta * t.activations[l].transpose();
    layout.biases(r.param_grad, l) = delta.rowwise().sum();
    Eigen::MatrixXd prev = layout.weights(params.values, l).transpose() * delta;
    if (l > 0) {
      delta = (prev.array() * (t.preactivations[l - 1].array() > 0.0).cast<double>()).matrix();
    } else {
      r.input_grad = std::move(prev);
    }
  }
  return r;
}

// Per-sample parameter gradients of a scalar network; column i is
// grad_theta f(inputs.col(i)).
inline Eigen::MatrixXd per_sample_grad_params(const MlpSpec& spec, const ParamVector& params,
                                              const Eigen::MatrixXd& inputs) {
  if (spec.output_dim != 1) throw std::invalid_argument("per-sample gradients need a scalar-output network");
  ParamLayout layout(spec);
  ForwardTrace t = forward_trace(spec, params, inputs);
  const Eigen::Index n = inputs.cols();
  Eigen::MatrixXd grads(Eigen::Index(layout.size()), n);
  Eigen::MatrixXd delta = detail::output_delta(spec, t, Eigen::MatrixXd::Ones(1, n));
  for (std::size_t l = layout.num_layers(); l-- > 0;) {
    const Eigen::Index fo = Eigen::Index(layout.fan_out(l));
    const Eigen::Index fi = Eigen::Index(layout.fan_in(l));
    const auto& a = t.activations[l];
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Map<RowMajorMatrix> gw(grads.col(i).data() + layout.weight_offset(l), fo, fi);
      gw.noalias() = delta.col(i) * a.col(i).transpose();
      grads.col(i).segment(Eigen::Index(layout.bias_offset(l)), fo) = delta.col(i);
    }
    if (l > 0) {
      Eigen::MatrixXd prev = layout.weights(params.values, l).transpose() * delta;
      delta = (prev.array() * (t.preactivations[l - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
  return grads;
}

inline Gradient grad_params(const MlpSpec& spec, const ParamVector& params, const Eigen::VectorXd& input) {
  if (spec.output_dim != 1) throw std::invalid_argument("grad_params: network output is not scalar");
  detail::check_inputs(spec, input.size());
  return Gradient{per_sample_grad_params(spec, params, input).col(0)};
}

inline Eigen::VectorXd grad_input(const MlpSpec& spec, const ParamVector& params, const Eigen::VectorXd& input) {
  if (spec.output_dim != 1) throw std::invalid_argument("grad_input: network output is not scalar");
  ForwardTrace t = forward_trace(spec, params, input);
  return backward(spec, params, t, Eigen::MatrixXd::Ones(1, 1)).input_grad.col(0);
}

inline constexpr double kMixedStep = 1e-4;

// Directional derivative of grad_params along `direction` in the action block
// of the input, by central differences with step h. Inputs are
// concat(state_part, action_part).
inline Gradient mixed_grad_params_wrt_action(const MlpSpec& spec, const ParamVector& params,
                                             const Eigen::VectorXd& state_part, const Eigen::VectorXd& action_part,
                                             const Eigen::VectorXd& direction, double h = kMixedStep) {
  if (direction.size() != action_part.size())
    throw std::invalid_argument("mixed_grad_params_wrt_action: direction length != action dim");
  detail::check_inputs(spec, state_part.size() + action_part.size());
  if (!direction.allFinite() || !state_part.allFinite() || !action_part.allFinite())
    throw std::domain_error("mixed_grad_params_wrt_action: non-finite input");
  Eigen::MatrixXd x(state_part.size() + action_part.size(), 2);
  x.col(0) << state_part, action_part + h * direction;
  x.col(1) << state_part, action_part - h * direction;
  Eigen::MatrixXd g = per_sample_grad_params(spec, params, x);
  Gradient out{(g.col(0) - g.col(1)) / (2.0 * h)};
  if (!out.values.allFinite()) throw std::domain_error("mixed_grad_params_wrt_action: non-finite result");
  return out;
}

// --- parameter files ---------------------------------------------------------
//
// One JSON header line terminated by '\n', then param_count little-endian
// IEEE-754 binary64 values in layout order.

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = char((bits >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error("unexpected end of binary data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline nlohmann::json spec_to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dims", spec.hidden_dims},
          {"output_dim", spec.output_dim},
          {"hidden_activation", "relu"},
          {"output_activation", to_string(spec.output_activation)}};
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  if (j.contains("hidden_activation") && j.at("hidden_activation") != "relu")
    throw std::invalid_argument("unsupported hidden activation");
  s.output_activation = output_activation_from_string(j.at("output_activation").get<std::string>());
  s.validate();
  return s;
}

inline void write_params(std::ostream& os, const MlpSpec& spec, const ParamVector& params) {
  detail::check_params(spec, params);
  nlohmann::json header = spec_to_json(spec);
  header["format"] = "mats-mlp-params";
  header["layout_version"] = ParamLayout::kVersion;
  header["param_count"] = spec.param_count();
  os << header.dump() << '\n';
  for (Eigen::Index i = 0; i < params.values.size(); ++i) detail::write_f64_le(os, params.values[i]);
}

struct LoadedParams {
  MlpSpec spec;
  ParamVector params;
};

inline LoadedParams read_params(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("parameter file: missing header");
  auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "mats-mlp-params") throw std::runtime_error("parameter file: bad format tag");
  if (header.at("layout_version").get<int>() != ParamLayout::kVersion)
    throw std::runtime_error("parameter file: unsupported layout version");
  LoadedParams out{spec_from_json(header), {}};
  const auto d = header.at("param_count").get<std::size_t>();
  if (d != out.spec.param_count()) throw std::runtime_error("parameter file: param_count disagrees with dims");
  out.params.values.resize(Eigen::Index(d));
  for (std::size_t i = 0; i < d; ++i) out.params.values[Eigen::Index(i)] = detail::read_f64_le(is);
  return out;
}

inline void save_params(const std::string& path, const MlpSpec& spec, const ParamVector& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_params(os, spec, params);
}

inline LoadedParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_params(is);
}

}  // namespace mats::nn

#endif  // MATS_DIFFNET_HPP_
