#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vip/exec.hpp"
#include "vip/tensor.hpp"

namespace vip::nn {

inline constexpr const char* kModelVersion = "vip-model/1";

enum class LayerKind { dense, gru };
enum class Activation { identity, tanh, relu, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  Activation activation = Activation::identity;  ///< dense layers only

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act) {
    return {LayerKind::dense, in, out, act};
  }
  static LayerSpec gru(std::size_t in, std::size_t hidden) {
    return {LayerKind::gru, in, hidden, Activation::identity};
  }
  bool operator==(const LayerSpec&) const = default;
};

const char* to_string(LayerKind kind);
const char* to_string(Activation act);
LayerKind parse_layer_kind(const std::string& s);
Activation parse_activation(const std::string& s);

/// Weight tensors per layer, in this order:
///   dense: W [out, in], b [out]
///   gru:   W [3H, in], U [3H, H], b [3H]; gate rows are update, reset, candidate.
using LayerWeights = std::vector<Tensor>;
using Gradients = std::vector<LayerWeights>;

struct NetworkModel {
  std::vector<LayerSpec> layers;
  std::vector<LayerWeights> weights;
  std::string version = kModelVersion;
  std::map<std::string, std::string> meta;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  bool recurrent() const;
  std::size_t parameter_count() const;

  /// Throws ShapeError when layer chaining or weight shapes are inconsistent.
  void validate() const;
};

/// Expected weight shapes for one layer.
std::vector<std::vector<std::size_t>> weight_shapes(const LayerSpec& spec);

/// Dense weights uniform in +-sqrt(6 / (fan_in + fan_out)); recurrent matrices
/// uniform in +-1/sqrt(hidden); biases zero. The scheme is recorded in meta.
NetworkModel make_network(std::vector<LayerSpec> layers, std::uint64_t seed);

Gradients zeros_like(const NetworkModel& model);

/// Per-layer recurrent state; empty vectors for dense layers.
using Hidden = std::vector<std::vector<double>>;
Hidden zero_hidden(const NetworkModel& model);

/// Single time step. Recurrent state is threaded through `hidden`.
std::vector<double> forward(const NetworkModel& model, std::span<const double> input,
                            Hidden& hidden);

/// Runs a [T, in] sequence from zero state and returns the final output.
std::vector<double> forward_sequence(const NetworkModel& model, const Tensor& sequence);

/// One supervised example: a [T, in] sequence and the target for its final
/// step. Non-recurrent models use T = 1.
struct Example {
  Tensor input;
  std::vector<double> target;
};

enum class LossKind { mse, bce };
const char* to_string(LossKind kind);

/// Raised when a loss or gradient becomes non-finite.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-layer activations recorded by a forward pass, consumed by backward.
struct LayerCache {
  Tensor out;  ///< [T, out]
  Tensor pre;  ///< dense: pre-activation [T, out]
  Tensor z, r, n, rh, h_prev;  ///< gru gates and inputs, each [T, H]
};

struct Tape {
  Tensor input;  ///< [T, in]
  std::vector<LayerCache> layers;

  std::span<const double> last_output() const;
  /// Pre-activation of the final step when the last layer is dense.
  std::span<const double> last_pre_activation() const;
};

Tape forward_tape(const NetworkModel& model, const Tensor& sequence);

/// Backpropagates d(objective)/d(final output) through the tape, adding
/// weight gradients into `grads`. With `wrt_pre_activation` the seed is taken
/// as d(objective)/d(final pre-activation) of a dense output layer. When
/// `d_input` is non-null it receives the gradient with respect to the [T, in]
/// input sequence.
void backward_tape(const NetworkModel& model, const Tape& tape, std::span<const double> d_output,
                   Gradients& grads, Tensor* d_input = nullptr,
                   bool wrt_pre_activation = false);

/// Loss of one example and d(loss)/d(final output); for bce with a sigmoid
/// output layer the gradient is taken with respect to the pre-activation
/// (returned flag set) for numerical stability.
struct ExampleLoss {
  double loss = 0.0;
  std::vector<double> d_output;
  bool wrt_pre_activation = false;
};
ExampleLoss example_loss(const NetworkModel& model, const Tape& tape,
                         std::span<const double> target, LossKind kind);

struct BatchGradients {
  double loss = 0.0;  ///< batch mean
  Gradients grads;    ///< gradient of the batch mean
};

/// Batch-mean loss and gradients. Each example's gradient is formed in its own
/// buffer and the buffers are summed in index order, so the serial and
/// parallel paths agree bit for bit.
BatchGradients backward(const NetworkModel& model, std::span<const Example> batch, LossKind kind,
                        Exec exec = Exec::serial);

/// Batch-mean loss without gradients.
double batch_loss(const NetworkModel& model, std::span<const Example> batch, LossKind kind,
                  Exec exec = Exec::serial);

double sigmoid(double x);

}  // namespace vip::nn
