#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "nspmoe/errors.hpp"
#include "nspmoe/nn.hpp"
#include "nspmoe/rng.hpp"

using namespace nspmoe;
using nspmoe::testing::numeric_gradient;
using nspmoe::testing::relative_error;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -scale, scale);
  return v;
}

// Independent scalar evaluator: no shared code with nn::forward.
std::vector<double> scalar_forward(const std::vector<int>& w, const std::vector<double>& p,
                                   std::vector<double> x) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const int in = w[l], out = w[l + 1];
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double s = p[off + static_cast<std::size_t>(in) * out + o];
      for (int i = 0; i < in; ++i) s += p[off + static_cast<std::size_t>(o) * in + i] * x[i];
      y[o] = (l + 2 < w.size()) ? std::tanh(s) : s;
    }
    off += static_cast<std::size_t>(in) * out + out;
    x = y;
  }
  return x;
}

}  // namespace

TEST(MlpSpec, Validation) {
  EXPECT_THROW(nn::MlpSpec{{4}}.validate(), ShapeError);
  EXPECT_THROW((nn::MlpSpec{{4, 0, 2}}.validate()), ShapeError);
  EXPECT_NO_THROW((nn::MlpSpec{{4, 8, 3}}.validate()));
  EXPECT_EQ((nn::MlpSpec{{4, 8, 3}}.param_count()), 4u * 8 + 8 + 8 * 3 + 3);
}

TEST(Init, BiasesZeroWeightsBoundedDeterministic) {
  const nn::MlpSpec spec{{13, 64, 64, 9}};
  const auto a = nn::init_params(spec, 5);
  const auto b = nn::init_params(spec, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, nn::init_params(spec, 6));
  for (const auto& s : nn::layer_index(spec)) {
    const double bound = std::sqrt(6.0 / (s.in + s.out));
    for (int i = 0; i < s.in * s.out; ++i) EXPECT_LE(std::abs(a[s.weight_offset + i]), bound);
    for (int o = 0; o < s.out; ++o) EXPECT_EQ(a[s.bias_offset + o], 0.0);
  }
}

TEST(Forward, ZeroParamsGiveZeros) {
  const nn::MlpSpec spec{{5, 7, 3}};
  const std::vector<double> p(spec.param_count(), 0.0);
  const std::vector<double> x{1, -2, 3, 4, 5};
  for (double y : nn::forward(spec, p, x)) EXPECT_EQ(y, 0.0);
}

TEST(Forward, OneByOneIdentity) {
  const nn::MlpSpec spec{{1, 1}};
  const std::vector<double> p{1.0, 0.0};
  const std::vector<double> x{-3.25};
  EXPECT_EQ(nn::forward(spec, p, x)[0], -3.25);
}

TEST(Forward, MatchesScalarOracle) {
  Rng rng(1);
  const std::vector<int> widths{6, 9, 5, 4};
  const nn::MlpSpec spec{widths};
  for (int t = 0; t < 50; ++t) {
    const auto p = random_vector(spec.param_count(), rng);
    const auto x = random_vector(6, rng, 2.0);
    const auto got = nn::forward(spec, p, x);
    const auto want = scalar_forward(widths, p, x);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Forward, PureAndShapeChecked) {
  Rng rng(2);
  const nn::MlpSpec spec{{3, 4, 2}};
  const auto p = random_vector(spec.param_count(), rng);
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_EQ(nn::forward(spec, p, x), nn::forward(spec, p, x));
  const std::vector<double> bad{1.0, 2.0};
  EXPECT_THROW(nn::forward(spec, p, bad), ShapeError);
}

TEST(Backward, ZeroOutputGradGivesZero) {
  Rng rng(3);
  const nn::MlpSpec spec{{4, 8, 3}};
  const auto p = random_vector(spec.param_count(), rng);
  const auto x = random_vector(4, rng);
  nn::ForwardCache cache;
  nn::forward(spec, p, x, &cache);
  const std::vector<double> zero(3, 0.0);
  const auto g = nn::backward(spec, p, cache, zero);
  for (double v : g.params) EXPECT_EQ(v, 0.0);
  for (double v : g.input) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(4);
  const nn::MlpSpec spec{{4, 8, 3}};
  for (int t = 0; t < 100; ++t) {
    const auto p = random_vector(spec.param_count(), rng);
    const auto x = random_vector(4, rng);
    const auto og = random_vector(3, rng);
    nn::ForwardCache cache;
    nn::forward(spec, p, x, &cache);
    const auto g = nn::backward(spec, p, cache, og);
    auto f_params = [&](std::span<const double> q) {
      const auto y = nn::forward(spec, q, x);
      double s = 0;
      for (int i = 0; i < 3; ++i) s += og[i] * y[i];
      return s;
    };
    auto f_input = [&](std::span<const double> z) {
      const auto y = nn::forward(spec, p, z);
      double s = 0;
      for (int i = 0; i < 3; ++i) s += og[i] * y[i];
      return s;
    };
    EXPECT_LE(relative_error(g.params, numeric_gradient(f_params, p)), 1e-4);
    EXPECT_LE(relative_error(g.input, numeric_gradient(f_input, x)), 1e-4);
  }
}

TEST(Backward, LinearInOutputGrad) {
  Rng rng(5);
  const nn::MlpSpec spec{{4, 8, 3}};
  const auto p = random_vector(spec.param_count(), rng);
  const auto x = random_vector(4, rng);
  nn::ForwardCache cache;
  nn::forward(spec, p, x, &cache);
  const auto a = random_vector(3, rng), b = random_vector(3, rng);
  std::vector<double> ab(3);
  for (int i = 0; i < 3; ++i) ab[i] = a[i] + b[i];
  const auto ga = nn::backward(spec, p, cache, a), gb = nn::backward(spec, p, cache, b);
  const auto gab = nn::backward(spec, p, cache, ab);
  for (std::size_t i = 0; i < gab.params.size(); ++i) {
    EXPECT_NEAR(gab.params[i], ga.params[i] + gb.params[i], 1e-12);
  }
}

TEST(Backward, MismatchedCacheIsStateError) {
  const nn::MlpSpec a{{4, 8, 3}}, b{{4, 6, 3}};
  const auto pa = nn::init_params(a, 1);
  const std::vector<double> x(4, 0.5);
  nn::ForwardCache cache;
  nn::forward(a, pa, x, &cache);
  const std::vector<double> og(3, 1.0);
  EXPECT_THROW(nn::backward(b, nn::init_params(b, 1), cache, og), StateError);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.0};
  const auto before = p;
  auto st = nn::AdamState::zeros(3, 1e-3);
  const std::vector<double> g(3, 0.0);
  for (int i = 0; i < 5; ++i) nn::adam_step(p, g, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.t, 5);
}

TEST(Adam, FirstStepMovesByLrAgainstSign) {
  std::vector<double> p{0.0, 0.0};
  auto st = nn::AdamState::zeros(2, 0.01);
  const std::vector<double> g{3.0, -0.2};
  nn::adam_step(p, g, st);
  EXPECT_NEAR(p[0], -0.01, 1e-8);
  EXPECT_NEAR(p[1], 0.01, 1e-7);
  for (double v : st.v) EXPECT_GE(v, 0.0);
}

TEST(Adam, MinimizesParabola) {
  std::vector<double> x{1.0};
  auto st = nn::AdamState::zeros(1, 0.1);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> g{2.0 * x[0]};
    nn::adam_step(x, g, st);
  }
  EXPECT_LT(std::abs(x[0]), 0.5);
}

TEST(Adam, NonFiniteGradientNamesSlice) {
  std::vector<double> p(6, 1.0);
  const auto before = p;
  auto st = nn::AdamState::zeros(6, 0.1);
  std::vector<double> g(6, 0.1);
  g[4] = std::nan("");
  const std::vector<nn::NamedSlice> names{{"gate", 0, 3}, {"critic", 3, 3}};
  try {
    nn::adam_step(p, g, st, names);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("critic[1]"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.t, 0);
}

TEST(Adam, InvariantToSegmentation) {
  Rng rng(6);
  auto whole = random_vector(10, rng);
  std::vector<double> left(whole.begin(), whole.begin() + 4), right(whole.begin() + 4, whole.end());
  auto s_whole = nn::AdamState::zeros(10, 0.01);
  auto s_left = nn::AdamState::zeros(4, 0.01), s_right = nn::AdamState::zeros(6, 0.01);
  for (int step = 0; step < 20; ++step) {
    const auto g = random_vector(10, rng);
    nn::adam_step(whole, g, s_whole);
    nn::adam_step(left, std::span<const double>(g).subspan(0, 4), s_left);
    nn::adam_step(right, std::span<const double>(g).subspan(4), s_right);
  }
  for (int i = 0; i < 4; ++i) EXPECT_EQ(whole[i], left[i]);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(whole[4 + i], right[i]);
}

TEST(ClipGlobalNorm, ScalesOnlyWhenAbove) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_EQ(nn::clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0], 3.0);
  EXPECT_EQ(nn::clip_global_norm(g, 0.5), 5.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 0.5, 1e-15);
  EXPECT_NEAR(g[0] / g[1], 0.75, 1e-15);
}

TEST(Serialize, RoundTripBitExact) {
  Rng rng(7);
  const nn::MlpSpec spec{{5, 6, 2}};
  auto p = random_vector(spec.param_count(), rng);
  p[0] = -0.0;
  p[1] = std::numeric_limits<double>::denorm_min();
  const auto bytes = nn::serialize_params(spec, p);
  const auto doc = nn::deserialize_params(bytes);
  EXPECT_EQ(doc.spec, spec);
  ASSERT_EQ(doc.params.size(), p.size());
  EXPECT_EQ(std::memcmp(doc.params.data(), p.data(), p.size() * sizeof(double)), 0);
  EXPECT_EQ(nn::deserialize_params(bytes, spec), doc.params);
}

TEST(Serialize, TruncatedOrCorruptIsFormatError) {
  const nn::MlpSpec spec{{3, 2}};
  const auto bytes = nn::serialize_params(spec, nn::init_params(spec, 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    EXPECT_THROW(nn::deserialize_params(bytes.substr(0, cut)), FormatError) << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(nn::deserialize_params(bad), FormatError);
  EXPECT_THROW(nn::deserialize_params(bytes + "junk"), FormatError);
}

TEST(Serialize, OtherSpecIsFormatErrorCitingHash) {
  const nn::MlpSpec a{{3, 4, 2}}, b{{3, 5, 2}};
  const auto bytes = nn::serialize_params(a, nn::init_params(a, 1));
  try {
    nn::deserialize_params(bytes, b);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("spec_hash"), std::string::npos);
  }
}
