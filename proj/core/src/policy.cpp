#include "nspmoe/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nspmoe/config_io.hpp"
#include "nspmoe/errors.hpp"

namespace nspmoe::policy {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

nn::MlpSpec make_spec(int in, const std::vector<int>& hidden, int out) {
  nn::MlpSpec s;
  s.layer_widths.push_back(in);
  s.layer_widths.insert(s.layer_widths.end(), hidden.begin(), hidden.end());
  s.layer_widths.push_back(out);
  s.validate();
  return s;
}

// Shrinks the output layer's weights so a fresh head starts close to its
// bias: near-uniform selection, u near 0, gate near 0.5.
void scale_output_layer(const nn::MlpSpec& spec, std::span<double> params, double factor) {
  const auto last = nn::layer_index(spec).back();
  const auto n = static_cast<std::size_t>(last.in) * static_cast<std::size_t>(last.out);
  for (auto& w : params.subspan(last.weight_offset, n)) w *= factor;
}

std::vector<int> hidden_of(const nn::MlpSpec& s) {
  return {s.layer_widths.begin() + 1, s.layer_widths.end() - 1};
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double selection_log_prob(std::span<const double> logits, Mask mask) {
  double lp = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    lp += mask_bit(mask, static_cast<int>(i)) ? log_sigmoid(logits[i]) : log_sigmoid(-logits[i]);
  }
  return lp;
}

double selection_entropy(std::span<const double> logits) {
  double h = 0.0;
  for (double l : logits) {
    const double s = sigmoid(l);
    h -= s * log_sigmoid(l) + (1.0 - s) * log_sigmoid(-l);
  }
  return h;
}

double clamp_log_std(double raw) { return std::clamp(raw, kLogStdMin, kLogStdMax); }
double clamp_u(double u) { return std::clamp(u, -kUClamp, kUClamp); }
double squash_power(double u, double p_max) { return p_max * sigmoid(u); }

double squash_log_jacobian(double u, double p_max) {
  return std::log(p_max) + log_sigmoid(u) + log_sigmoid(-u);
}

double gaussian_log_prob(double u, double mean, double log_std) {
  const double z = (u - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * kLog2Pi;
}

double gaussian_entropy(double log_std) { return log_std + 0.5 * (kLog2Pi + 1.0); }

double squashed_power_density(double p, double mean, double log_std, double p_max) {
  if (!(p > 0.0 && p < p_max)) return 0.0;
  const double x = p / p_max;
  const double u = std::log(x) - std::log1p(-x);
  return std::exp(gaussian_log_prob(u, mean, log_std) - squash_log_jacobian(u, p_max));
}

std::vector<GateRow> gate_softmax(std::span<const double> logits) {
  std::vector<GateRow> rows(logits.size() / 2);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const double a = logits[2 * n];
    const double b = logits[2 * n + 1];
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx);
    const double eb = std::exp(b - mx);
    rows[n] = {ea / (ea + eb), eb / (ea + eb)};
  }
  return rows;
}

MoePolicy::MoePolicy(const ScenarioConfig& config, PolicyArch arch, std::uint64_t seed)
    : num_agents_(config.num_agents),
      num_images_(config.images_per_agent),
      p_max_(config.p_max_w),
      scenario_hash_(nspmoe::scenario_hash(config)),
      arch_(std::move(arch)) {
  config.validate();
  const int obs = config.obs_dim();
  const int global = config.global_dim();
  sel_spec_ = make_spec(obs, arch_.expert_hidden, num_images_);
  pow_spec_ = make_spec(obs, arch_.expert_hidden, 2);
  gate_spec_ = make_spec(global, arch_.gate_hidden, 2 * num_agents_);
  critic_spec_ = make_spec(global, arch_.critic_hidden, num_agents_);

  const std::size_t per_agent = sel_spec_.param_count() + pow_spec_.param_count();
  gate_offset_ = per_agent * num_agents_;
  critic_offset_ = gate_offset_ + gate_spec_.param_count();
  params_.assign(critic_offset_ + critic_spec_.param_count(), 0.0);

  auto span_at = [&](std::size_t off, std::size_t len) { return std::span<double>(params_).subspan(off, len); };
  for (int n = 0; n < num_agents_; ++n) {
    const auto un = static_cast<std::uint64_t>(n);
    nn::init_params_into(sel_spec_, derive_seed(seed, 2 * un, 0), span_at(selection_offset(n), sel_spec_.param_count()));
    nn::init_params_into(pow_spec_, derive_seed(seed, 2 * un + 1, 0), span_at(power_offset(n), pow_spec_.param_count()));
    scale_output_layer(sel_spec_, span_at(selection_offset(n), sel_spec_.param_count()), kHeadInitScale);
    scale_output_layer(pow_spec_, span_at(power_offset(n), pow_spec_.param_count()), kHeadInitScale);
    slices_.push_back({"agent" + std::to_string(n) + "/selection", selection_offset(n), sel_spec_.param_count()});
    slices_.push_back({"agent" + std::to_string(n) + "/power", power_offset(n), pow_spec_.param_count()});
  }
  nn::init_params_into(gate_spec_, derive_seed(seed, 0x6761, 0), span_at(gate_offset_, gate_spec_.param_count()));
  scale_output_layer(gate_spec_, span_at(gate_offset_, gate_spec_.param_count()), kHeadInitScale);
  nn::init_params_into(critic_spec_, derive_seed(seed, 0x6372, 0), span_at(critic_offset_, critic_spec_.param_count()));
  slices_.push_back({"gate", gate_offset_, gate_spec_.param_count()});
  slices_.push_back({"critic", critic_offset_, critic_spec_.param_count()});
}

std::size_t MoePolicy::selection_offset(int agent) const {
  return static_cast<std::size_t>(agent) * (sel_spec_.param_count() + pow_spec_.param_count());
}

std::size_t MoePolicy::power_offset(int agent) const {
  return selection_offset(agent) + sel_spec_.param_count();
}

std::span<const double> MoePolicy::selection_params(int agent) const {
  check_agent(agent);
  return std::span<const double>(params_).subspan(selection_offset(agent), sel_spec_.param_count());
}
std::span<const double> MoePolicy::power_params(int agent) const {
  check_agent(agent);
  return std::span<const double>(params_).subspan(power_offset(agent), pow_spec_.param_count());
}
std::span<const double> MoePolicy::gate_params() const {
  return std::span<const double>(params_).subspan(gate_offset_, gate_spec_.param_count());
}
std::span<const double> MoePolicy::critic_params() const {
  return std::span<const double>(params_).subspan(critic_offset_, critic_spec_.param_count());
}

void MoePolicy::check_agent(int agent) const {
  if (agent < 0 || agent >= num_agents_) throw ShapeError("agent index out of range");
}

void MoePolicy::check_finite(std::span<const double> v, const char* what) const {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite ") + what + " output");
  }
}

std::vector<double> MoePolicy::selection_logits(int agent, const AgentObservation& obs) const {
  auto out = nn::forward(sel_spec_, selection_params(agent), obs.features);
  check_finite(out, "selection expert");
  return out;
}

std::array<double, 2> MoePolicy::power_head(int agent, const AgentObservation& obs) const {
  auto out = nn::forward(pow_spec_, power_params(agent), obs.features);
  check_finite(out, "power expert");
  return {out[0], clamp_log_std(out[1])};
}

ActionRecord MoePolicy::act(int agent, const AgentObservation& obs, Rng& rng, bool deterministic) const {
  const auto logits = selection_logits(agent, obs);
  const auto [mean, log_std] = power_head(agent, obs);

  ActionRecord rec;
  for (int i = 0; i < num_images_; ++i) {
    const bool bit = deterministic ? logits[i] >= 0.0 : uniform01(rng) < sigmoid(logits[i]);
    if (bit) rec.mask |= Mask{1} << i;
  }
  const double u_raw = deterministic ? mean : mean + std::exp(log_std) * standard_normal(rng);
  rec.u = clamp_u(u_raw);
  rec.power_w = squash_power(rec.u, p_max_);
  rec.log_prob_sel = selection_log_prob(logits, rec.mask);
  rec.log_prob_pow = gaussian_log_prob(rec.u, mean, log_std) - squash_log_jacobian(rec.u, p_max_);
  rec.entropy_sel = selection_entropy(logits);
  rec.entropy_pow = gaussian_entropy(log_std);
  return rec;
}

ExpertEval MoePolicy::log_prob_and_entropy(int agent, const AgentObservation& obs,
                                           const ActionRecord& action) const {
  if (!(action.power_w > 0.0 && action.power_w < p_max_)) {
    throw DomainError("log_prob_and_entropy: power outside (0, p_max)");
  }
  const auto logits = selection_logits(agent, obs);
  const auto [mean, log_std] = power_head(agent, obs);
  ExpertEval e;
  e.log_prob_sel = selection_log_prob(logits, action.mask);
  e.log_prob_pow = gaussian_log_prob(action.u, mean, log_std) - squash_log_jacobian(action.u, p_max_);
  e.entropy_sel = selection_entropy(logits);
  e.entropy_pow = gaussian_entropy(log_std);
  return e;
}

std::vector<GateRow> MoePolicy::gate_weights(std::span<const double> global_state) const {
  const auto logits = nn::forward(gate_spec_, gate_params(), global_state);
  check_finite(logits, "gate");
  return gate_softmax(logits);
}

std::vector<double> MoePolicy::value(std::span<const double> global_state) const {
  auto v = nn::forward(critic_spec_, critic_params(), global_state);
  check_finite(v, "critic");
  return v;
}

namespace {

constexpr char kBundleMagic[4] = {'M', 'O', 'E', 'P'};
constexpr std::uint32_t kBundleVersion = 1;

void put_le(std::string& s, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view b, std::size_t& pos, int n) {
  if (pos + static_cast<std::size_t>(n) > b.size()) throw FormatError("policy bundle truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(n);
  return v;
}

}  // namespace

std::string MoePolicy::serialize() const {
  std::string out(kBundleMagic, 4);
  put_le(out, kBundleVersion, 4);
  put_le(out, scenario_hash_, 8);
  put_le(out, static_cast<std::uint64_t>(2 * num_agents_ + 2), 4);
  auto add = [&](const nn::MlpSpec& spec, std::span<const double> p) {
    const std::string doc = nn::serialize_params(spec, p);
    put_le(out, doc.size(), 8);
    out += doc;
  };
  for (int n = 0; n < num_agents_; ++n) {
    add(sel_spec_, selection_params(n));
    add(pow_spec_, power_params(n));
  }
  add(gate_spec_, gate_params());
  add(critic_spec_, critic_params());
  return out;
}

MoePolicy MoePolicy::deserialize(std::string_view bytes, const ScenarioConfig& expected) {
  std::size_t pos = 0;
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kBundleMagic, 4)) {
    throw FormatError("policy bundle: bad magic");
  }
  pos = 4;
  const auto version = get_le(bytes, pos, 4);
  if (version != kBundleVersion) throw FormatError("policy bundle: unsupported version " + std::to_string(version));
  const auto hash = get_le(bytes, pos, 8);
  if (hash != nspmoe::scenario_hash(expected)) {
    throw FormatError("policy bundle: scenario hash mismatch (checkpoint was trained on a different scenario)");
  }
  const auto count = get_le(bytes, pos, 4);
  if (count != static_cast<std::uint64_t>(2 * expected.num_agents + 2)) {
    throw FormatError("policy bundle: network count does not match agent count");
  }
  std::vector<nn::ParamDocument> docs;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le(bytes, pos, 8);
    if (pos + len > bytes.size()) throw FormatError("policy bundle truncated");
    docs.push_back(nn::deserialize_params(bytes.substr(pos, len)));
    pos += len;
  }
  if (pos != bytes.size()) throw FormatError("policy bundle: trailing bytes");

  PolicyArch arch;
  arch.expert_hidden = hidden_of(docs[0].spec);
  arch.gate_hidden = hidden_of(docs[count - 2].spec);
  arch.critic_hidden = hidden_of(docs[count - 1].spec);
  MoePolicy p(expected, arch, 0);
  auto place = [&](const nn::ParamDocument& d, const nn::MlpSpec& spec, std::size_t off) {
    if (!(d.spec == spec)) throw FormatError("policy bundle: sub-network shape mismatch");
    std::copy(d.params.begin(), d.params.end(), p.params_.begin() + static_cast<std::ptrdiff_t>(off));
  };
  for (int n = 0; n < p.num_agents_; ++n) {
    place(docs[2 * n], p.sel_spec_, p.selection_offset(n));
    place(docs[2 * n + 1], p.pow_spec_, p.power_offset(n));
  }
  place(docs[count - 2], p.gate_spec_, p.gate_offset_);
  place(docs[count - 1], p.critic_spec_, p.critic_offset_);
  return p;
}

}  // namespace nspmoe::policy
