#include "msth/mlp.hpp"

#include <cmath>
#include <sstream>

#include "msth/simd/kernels.hpp"
#include "msth/simd/reference.hpp"

namespace msth {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::exp: return "exp";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

void MlpSpec::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1 || hidden_layers < 0) {
    std::ostringstream os;
    os << "invalid MLP spec: input_dim=" << input_dim << " hidden_dim=" << hidden_dim
       << " hidden_layers=" << hidden_layers << " output_dim=" << output_dim;
    throw ConfigError(os.str());
  }
  if (activation != Activation::relu) throw ConfigError("hidden activation must be relu");
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l)
    n += std::size_t(layer_input(l)) * layer_output(l) + layer_output(l);
  return n;
}

std::size_t MlpSpec::weight_offset(int layer) const {
  std::size_t n = 0;
  for (int l = 0; l < layer; ++l)
    n += std::size_t(layer_input(l)) * layer_output(l) + layer_output(l);
  return n;
}

std::size_t MlpSpec::bias_offset(int layer) const {
  return weight_offset(layer) + std::size_t(layer_input(layer)) * layer_output(layer);
}

namespace {

template <class Real>
void linear_forward(const Real* x, const Real* wt, const Real* b, Real* y, std::size_t n,
                    std::size_t in, std::size_t out) {
  if constexpr (std::is_same_v<Real, float>)
    simd::active_kernels().linear_forward(x, wt, b, y, n, in, out);
  else
    simd::ref::linear_forward(x, wt, b, y, n, in, out);
}

template <class Real>
void linear_backward_params(const Real* x, const Real* dy, Real* dwt, Real* db, std::size_t n,
                            std::size_t in, std::size_t out) {
  if constexpr (std::is_same_v<Real, float>)
    simd::active_kernels().linear_backward_params(x, dy, dwt, db, n, in, out);
  else
    simd::ref::linear_backward_params(x, dy, dwt, db, n, in, out);
}

template <class Real>
void relu_forward(Real* y, std::size_t n) {
  if constexpr (std::is_same_v<Real, float>)
    simd::active_kernels().relu_forward(y, n);
  else
    simd::ref::relu_forward(y, n);
}

template <class Real>
void relu_backward(const Real* y, Real* dy, std::size_t n) {
  if constexpr (std::is_same_v<Real, float>)
    simd::active_kernels().relu_backward(y, dy, n);
  else
    simd::ref::relu_backward(y, dy, n);
}

template <class Real>
void apply_output_activation(Activation a, std::vector<Real>& y) {
  switch (a) {
    case Activation::none: break;
    case Activation::relu: relu_forward(y.data(), y.size()); break;
    case Activation::sigmoid:
      for (auto& v : y) v = Real(1) / (Real(1) + std::exp(-v));
      break;
    case Activation::exp:
      for (auto& v : y) v = std::exp(v);
      break;
    case Activation::softplus:
      for (auto& v : y) v = v > Real(20) ? v : std::log1p(std::exp(v));
      break;
  }
}

// Multiply `g` in place by the activation derivative, expressed through the
// post-activation values `y`.
template <class Real>
void apply_output_derivative(Activation a, const std::vector<Real>& y, std::vector<Real>& g) {
  switch (a) {
    case Activation::none: break;
    case Activation::relu: relu_backward(y.data(), g.data(), g.size()); break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (Real(1) - y[i]);
      break;
    case Activation::exp:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i];
      break;
    case Activation::softplus:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= -std::expm1(-y[i]);
      break;
  }
}

}  // namespace

template <class Real>
Mlp<Real>::Mlp(MlpSpec spec) : spec_(spec) {
  spec_.validate();
}

template <class Real>
ParamBuffer<Real> Mlp<Real>::make_params(const std::string& name) const {
  return ParamBuffer<Real>(name, spec_.param_count());
}

template <class Real>
void Mlp<Real>::init_params(ParamBuffer<Real>& params, Rng& rng) const {
  check_params(params);
  for (int l = 0; l < spec_.num_layers(); ++l) {
    const int in = spec_.layer_input(l), out = spec_.layer_output(l);
    const double bound = std::sqrt(6.0 / in);
    Real* w = params.values.data() + spec_.weight_offset(l);
    for (int i = 0; i < in * out; ++i) w[i] = static_cast<Real>(rng.uniform(-bound, bound));
    Real* b = params.values.data() + spec_.bias_offset(l);
    for (int o = 0; o < out; ++o) b[o] = Real(0);
  }
}

template <class Real>
Real& Mlp<Real>::weight(ParamBuffer<Real>& params, int layer, int out, int in) const {
  return params.values[spec_.weight_offset(layer) + std::size_t(in) * spec_.layer_output(layer) +
                       out];
}

template <class Real>
Real& Mlp<Real>::bias(ParamBuffer<Real>& params, int layer, int out) const {
  return params.values[spec_.bias_offset(layer) + out];
}

template <class Real>
void Mlp<Real>::check_params(const ParamBuffer<Real>& params) const {
  if (params.size() != spec_.param_count()) {
    std::ostringstream os;
    os << "MLP parameter buffer '" << params.name << "' has " << params.size()
       << " entries, expected " << spec_.param_count();
    throw ConfigError(os.str());
  }
}

template <class Real>
void Mlp<Real>::forward(const ParamBuffer<Real>& params, std::span<const Real> input,
                        std::size_t rows, std::vector<Real>& output, MlpCache<Real>& cache) const {
  check_params(params);
  if (input.size() != rows * std::size_t(spec_.input_dim)) {
    std::ostringstream os;
    os << "MLP input has " << input.size() << " values for " << rows
       << " rows; expected input_dim=" << spec_.input_dim << " (" << rows * spec_.input_dim
       << " values)";
    throw ConfigError(os.str());
  }
  cache.owner = this;
  cache.rows = rows;
  cache.input.assign(input.begin(), input.end());
  cache.layers.resize(spec_.num_layers());

  const Real* x = cache.input.data();
  for (int l = 0; l < spec_.num_layers(); ++l) {
    const int in = spec_.layer_input(l), out = spec_.layer_output(l);
    auto& y = cache.layers[l];
    y.resize(rows * out);
    linear_forward<Real>(x, params.values.data() + spec_.weight_offset(l),
                         params.values.data() + spec_.bias_offset(l), y.data(), rows, in, out);
    if (l < spec_.hidden_layers)
      relu_forward<Real>(y.data(), y.size());
    else
      apply_output_activation(spec_.output_activation, y);
    x = y.data();
  }
  output = cache.layers.back();
}

template <class Real>
void Mlp<Real>::backward(ParamBuffer<Real>& params, const MlpCache<Real>& cache,
                         std::span<const Real> d_output, std::vector<Real>* d_input) const {
  check_params(params);
  if (cache.owner != this || cache.layers.size() != std::size_t(spec_.num_layers()) ||
      cache.input.size() != cache.rows * spec_.input_dim)
    throw ConfigError("MLP backward called with a cache from a different network");
  const std::size_t rows = cache.rows;
  if (d_output.size() != rows * std::size_t(spec_.output_dim)) {
    std::ostringstream os;
    os << "MLP d_output has " << d_output.size() << " values, expected "
       << rows * spec_.output_dim;
    throw ConfigError(os.str());
  }

  std::vector<Real> g(d_output.begin(), d_output.end());
  apply_output_derivative(spec_.output_activation, cache.layers.back(), g);

  std::vector<Real> wmat, dx;
  for (int l = spec_.num_layers() - 1; l >= 0; --l) {
    const int in = spec_.layer_input(l), out = spec_.layer_output(l);
    const Real* x = l == 0 ? cache.input.data() : cache.layers[l - 1].data();
    linear_backward_params<Real>(x, g.data(), params.grads.data() + spec_.weight_offset(l),
                                 params.grads.data() + spec_.bias_offset(l), rows, in, out);
    if (l == 0 && !d_input) break;

    // dx = g * W, with W = wt^T laid out [out x in].
    const Real* wt = params.values.data() + spec_.weight_offset(l);
    wmat.resize(std::size_t(in) * out);
    for (int k = 0; k < in; ++k)
      for (int o = 0; o < out; ++o) wmat[std::size_t(o) * in + k] = wt[std::size_t(k) * out + o];
    dx.resize(rows * in);
    linear_forward<Real>(g.data(), wmat.data(), nullptr, dx.data(), rows, out, in);
    if (l > 0) relu_backward<Real>(cache.layers[l - 1].data(), dx.data(), dx.size());
    g.swap(dx);
  }
  if (d_input) *d_input = std::move(g);
}

template class Mlp<float>;
template class Mlp<double>;

}  // namespace msth
