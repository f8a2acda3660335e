#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msth/common.hpp"
#include "msth/param_buffer.hpp"

namespace msth {

enum class Activation { none, relu, sigmoid, exp, softplus };

std::string to_string(Activation a);

struct MlpSpec {
  int input_dim = 1;
  int hidden_dim = 64;
  int hidden_layers = 1;
  int output_dim = 1;
  Activation activation = Activation::relu;
  Activation output_activation = Activation::none;

  void validate() const;
  int num_layers() const { return hidden_layers + 1; }
  int layer_input(int layer) const { return layer == 0 ? input_dim : hidden_dim; }
  int layer_output(int layer) const { return layer == hidden_layers ? output_dim : hidden_dim; }
  std::size_t param_count() const;
  /// Offset of layer `l`'s weight block ([in x out], input-major) in the buffer.
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
};

/// Activation record from one forward call.
template <class Real>
struct MlpCache {
  const void* owner = nullptr;
  std::size_t rows = 0;
  std::vector<Real> input;
  /// Post-activation output of every layer; the last entry is the MLP output.
  std::vector<std::vector<Real>> layers;
};

template <class Real>
class Mlp {
 public:
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  ParamBuffer<Real> make_params(const std::string& name) const;
  /// Kaiming-uniform weights, zero biases.
  void init_params(ParamBuffer<Real>& params, Rng& rng) const;

  /// W[out][in] of layer `layer` in the usual y = W x + b orientation.
  Real& weight(ParamBuffer<Real>& params, int layer, int out, int in) const;
  Real& bias(ParamBuffer<Real>& params, int layer, int out) const;

  /// `input` holds `rows` rows of spec.input_dim values; `output` is resized
  /// to rows * spec.output_dim.
  void forward(const ParamBuffer<Real>& params, std::span<const Real> input, std::size_t rows,
               std::vector<Real>& output, MlpCache<Real>& cache) const;

  /// Adds parameter gradients into params.grads; writes d_input if non-null.
  void backward(ParamBuffer<Real>& params, const MlpCache<Real>& cache,
                std::span<const Real> d_output, std::vector<Real>* d_input) const;

 private:
  void check_params(const ParamBuffer<Real>& params) const;

  MlpSpec spec_;
};

extern template class Mlp<float>;
extern template class Mlp<double>;

}  // namespace msth
