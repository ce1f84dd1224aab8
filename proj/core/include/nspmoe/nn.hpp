#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nspmoe::nn {

// Dense MLP: tanh on hidden layers, identity on the output layer.
struct MlpSpec {
  std::vector<int> layer_widths;  // input, hidden..., output

  void validate() const;  // throws ShapeError
  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  std::size_t param_count() const;
  std::uint64_t hash() const;

  bool operator==(const MlpSpec&) const = default;
};

// Location of one affine layer inside a flat parameter vector. Weights are
// row-major [out][in], followed by the bias [out].
struct LayerSlice {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  int in = 0;
  int out = 0;
};

std::vector<LayerSlice> layer_index(const MlpSpec& spec);

// Named contiguous range of a larger parameter vector (for diagnostics).
struct NamedSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Glorot-uniform weights, zero biases.
std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed);
void init_params_into(const MlpSpec& spec, std::uint64_t seed, std::span<double> out);

struct ForwardCache {
  std::uint64_t spec_hash = 0;
  // activations[0] is the input, activations[L] the output; hidden entries
  // hold post-tanh values.
  std::vector<std::vector<double>> activations;
};

std::vector<double> forward(const MlpSpec& spec, std::span<const double> params,
                            std::span<const double> input, ForwardCache* cache = nullptr);

struct Gradients {
  std::vector<double> params;
  std::vector<double> input;
};

// Gradient of dot(output_grad, output) w.r.t. params and input.
Gradients backward(const MlpSpec& spec, std::span<const double> params, const ForwardCache& cache,
                   std::span<const double> output_grad);

// Accumulating variant: adds the parameter gradient into `param_grad` and
// (optionally) writes the input gradient.
void backward_accumulate(const MlpSpec& spec, std::span<const double> params,
                         const ForwardCache& cache, std::span<const double> output_grad,
                         std::span<double> param_grad, std::vector<double>* input_grad = nullptr);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(std::size_t n, double lr);
};

// Bias-corrected Adam. Throws NumericError naming the offending slice (from
// `names` when given) if any gradient is non-finite; parameters are left
// untouched in that case.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const NamedSlice> names = {});

// Scales grads in place so their L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_global_norm(std::span<double> grads, double max_norm);

// Checkpoint document (little-endian):
//   "NNPV" | u32 format_version | u64 spec_hash | u64 param_count |
//   u32 width_count | u32 widths[width_count] | f64 params[param_count]
inline constexpr std::uint32_t kParamFormatVersion = 1;

std::string serialize_params(const MlpSpec& spec, std::span<const double> params);

struct ParamDocument {
  MlpSpec spec;
  std::vector<double> params;
};

// Throws FormatError on truncation, bad magic/version, or hash mismatch.
ParamDocument deserialize_params(std::string_view bytes);
// Additionally requires the document's spec hash to equal `expected.hash()`.
std::vector<double> deserialize_params(std::string_view bytes, const MlpSpec& expected);

}  // namespace nspmoe::nn
