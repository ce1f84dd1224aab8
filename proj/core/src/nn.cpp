#include "nspmoe/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "nspmoe/errors.hpp"
#include "nspmoe/rng.hpp"

namespace nspmoe::nn {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw ShapeError("MlpSpec: need at least input and output widths");
  for (int w : layer_widths) {
    if (w <= 0) throw ShapeError("MlpSpec: widths must be positive");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
    n += static_cast<std::size_t>(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
  }
  return n;
}

std::uint64_t MlpSpec::hash() const {
  std::ostringstream os;
  os << "mlp/tanh-hidden/identity-out/f64:";
  for (int w : layer_widths) os << w << ',';
  return fnv1a64(os.str());
}

std::vector<LayerSlice> layer_index(const MlpSpec& spec) {
  std::vector<LayerSlice> idx;
  std::size_t off = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    LayerSlice s;
    s.in = spec.layer_widths[l];
    s.out = spec.layer_widths[l + 1];
    s.weight_offset = off;
    s.bias_offset = off + static_cast<std::size_t>(s.in) * s.out;
    off = s.bias_offset + s.out;
    idx.push_back(s);
  }
  return idx;
}

void init_params_into(const MlpSpec& spec, std::uint64_t seed, std::span<double> out) {
  spec.validate();
  if (out.size() != spec.param_count()) throw ShapeError("init_params: output size mismatch");
  Rng rng(derive_seed(seed, stream::kInit, spec.hash()));
  for (const auto& s : layer_index(spec)) {
    const double bound = std::sqrt(6.0 / (s.in + s.out));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i) {
      out[s.weight_offset + i] = uniform(rng, -bound, bound);
    }
    for (int i = 0; i < s.out; ++i) out[s.bias_offset + i] = 0.0;
  }
}

std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed) {
  std::vector<double> p(spec.param_count());
  init_params_into(spec, seed, p);
  return p;
}

std::vector<double> forward(const MlpSpec& spec, std::span<const double> params,
                            std::span<const double> input, ForwardCache* cache) {
  if (static_cast<int>(input.size()) != spec.input_dim()) {
    throw ShapeError("forward: input length " + std::to_string(input.size()) + " != " +
                     std::to_string(spec.input_dim()));
  }
  if (params.size() != spec.param_count()) throw ShapeError("forward: parameter count mismatch");

  const int n_layers = spec.num_layers();
  if (cache) {
    cache->spec_hash = spec.hash();
    cache->activations.resize(n_layers + 1);
    cache->activations[0].assign(input.begin(), input.end());
  }
  std::vector<double> cur(input.begin(), input.end());
  std::vector<double> next;
  std::size_t off = 0;
  for (int l = 0; l < n_layers; ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const double* w = params.data() + off;
    const double* b = w + static_cast<std::size_t>(in) * out;
    next.assign(out, 0.0);
    for (int o = 0; o < out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * in;
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += row[i] * cur[i];
      next[o] = (l + 1 < n_layers) ? std::tanh(acc) : acc;
    }
    off += static_cast<std::size_t>(in) * out + out;
    cur.swap(next);
    if (cache) cache->activations[l + 1] = cur;
  }
  return cur;
}

void backward_accumulate(const MlpSpec& spec, std::span<const double> params,
                         const ForwardCache& cache, std::span<const double> output_grad,
                         std::span<double> param_grad, std::vector<double>* input_grad) {
  const int n_layers = spec.num_layers();
  if (cache.spec_hash != spec.hash() || static_cast<int>(cache.activations.size()) != n_layers + 1) {
    throw StateError("backward: cache does not come from a forward pass of this network");
  }
  if (static_cast<int>(output_grad.size()) != spec.output_dim()) {
    throw ShapeError("backward: output_grad length mismatch");
  }
  if (param_grad.size() != spec.param_count() || params.size() != spec.param_count()) {
    throw ShapeError("backward: parameter count mismatch");
  }
  const auto idx = layer_index(spec);
  // delta holds d/d(pre-activation) of the current layer.
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  std::vector<double> prev;
  for (int l = n_layers - 1; l >= 0; --l) {
    const auto& s = idx[l];
    const auto& a_in = cache.activations[l];
    const double* w = params.data() + s.weight_offset;
    double* gw = param_grad.data() + s.weight_offset;
    double* gb = param_grad.data() + s.bias_offset;
    for (int o = 0; o < s.out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* grow = gw + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) grow[i] += d * a_in[i];
    }
    if (l == 0 && !input_grad) break;
    prev.assign(s.in, 0.0);
    for (int o = 0; o < s.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) prev[i] += d * row[i];
    }
    if (l > 0) {
      for (int i = 0; i < s.in; ++i) prev[i] *= 1.0 - a_in[i] * a_in[i];
    }
    delta.swap(prev);
  }
  if (input_grad) *input_grad = delta;
}

Gradients backward(const MlpSpec& spec, std::span<const double> params, const ForwardCache& cache,
                   std::span<const double> output_grad) {
  Gradients g;
  g.params.assign(spec.param_count(), 0.0);
  backward_accumulate(spec, params, cache, output_grad, g.params, &g.input);
  return g;
}

AdamState AdamState::zeros(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const NamedSlice> names) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state sizes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads[i])) continue;
    std::string where = "index " + std::to_string(i);
    for (const auto& s : names) {
      if (i >= s.offset && i < s.offset + s.length) {
        where = s.name + "[" + std::to_string(i - s.offset) + "]";
        break;
      }
    }
    throw NumericError("adam_step: non-finite gradient at " + where);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

namespace {

constexpr char kMagic[4] = {'N', 'N', 'P', 'V'};

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > b_.size()) {
      throw FormatError("parameter document truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > b_.size()) throw FormatError("parameter document truncated");
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const MlpSpec& spec, std::span<const double> params) {
  spec.validate();
  if (params.size() != spec.param_count()) throw ShapeError("serialize_params: size mismatch");
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kParamFormatVersion);
  put_u64(out, spec.hash());
  put_u64(out, params.size());
  put_u32(out, static_cast<std::uint32_t>(spec.layer_widths.size()));
  for (int w : spec.layer_widths) put_u32(out, static_cast<std::uint32_t>(w));
  for (double p : params) put_u64(out, std::bit_cast<std::uint64_t>(p));
  return out;
}

ParamDocument deserialize_params(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw FormatError("parameter document: bad magic");
  const auto version = static_cast<std::uint32_t>(r.get(4));
  if (version != kParamFormatVersion) {
    throw FormatError("parameter document: unsupported format_version " + std::to_string(version));
  }
  const std::uint64_t hash = r.get(8);
  const std::uint64_t count = r.get(8);
  const auto n_widths = static_cast<std::uint32_t>(r.get(4));
  if (n_widths < 2 || n_widths > 1024) throw FormatError("parameter document: bad width count");
  ParamDocument doc;
  for (std::uint32_t i = 0; i < n_widths; ++i) doc.spec.layer_widths.push_back(static_cast<int>(r.get(4)));
  try {
    doc.spec.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("parameter document: ") + e.what());
  }
  if (doc.spec.hash() != hash) throw FormatError("parameter document: spec_hash does not match widths");
  if (doc.spec.param_count() != count) throw FormatError("parameter document: param_count does not match widths");
  if (r.remaining() != count * 8) {
    throw FormatError("parameter document: expected " + std::to_string(count * 8) +
                      " payload bytes, found " + std::to_string(r.remaining()));
  }
  doc.params.resize(count);
  for (auto& p : doc.params) p = std::bit_cast<double>(r.get(8));
  return doc;
}

std::vector<double> deserialize_params(std::string_view bytes, const MlpSpec& expected) {
  auto doc = deserialize_params(bytes);
  if (doc.spec.hash() != expected.hash()) {
    std::ostringstream os;
    os << "parameter document: spec_hash 0x" << std::hex << doc.spec.hash()
       << " does not match expected 0x" << expected.hash();
    throw FormatError(os.str());
  }
  return std::move(doc.params);
}

}  // namespace nspmoe::nn
