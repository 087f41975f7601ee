#include <gtest/gtest.h>

#include <cmath>

#include "grformer/attention.hpp"
#include "grformer/errors.hpp"
#include "grformer/ops.hpp"
#include "grformer/verification.hpp"

using namespace grf;
using Td = Tensor<double>;
using Mat = std::vector<std::vector<double>>;

namespace {

Td random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Td::from(std::move(shape), std::move(v), true);
}

void perturb(const NamedTensors<double>& params, std::uint64_t seed, double sd) {
  Rng rng(seed);
  for (const auto& [name, t] : params) {
    for (double& v : Td(t).mutable_data()) v += sd * rng.normal();
  }
}

// y = x W + b (+ x) per channel group, written as loops.
Mat ref_grl(const Mat& x, const GrlParams<double>& p) {
  const std::size_t g = p.groups(), c = x[0].size(), cg = c / g;
  Mat y(x.size(), std::vector<double>(c, 0.0));
  for (std::size_t n = 0; n < x.size(); ++n) {
    for (std::size_t gi = 0; gi < g; ++gi) {
      const auto w = p.weights[gi].data();
      const auto b = p.biases[gi].data();
      for (std::size_t o = 0; o < cg; ++o) {
        double acc = b[o] + (p.residual ? x[n][gi * cg + o] : 0.0);
        for (std::size_t i = 0; i < cg; ++i) acc += x[n][gi * cg + i] * w[i * cg + o];
        y[n][gi * cg + o] = acc;
      }
    }
  }
  return y;
}

// Dense-loop grouped self-attention for one window.
Mat ref_grsa(const Mat& x, const GrsaParams<double>& p, const Td& bias) {
  const std::size_t n = x.size(), c = x[0].size(), heads = p.heads, hd = c / heads;
  const Mat q = ref_grl(x, p.q), k = ref_grl(x, p.k), v = ref_grl(x, p.v);
  Mat merged(n, std::vector<double>(c, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    const double lambda = std::exp(p.log_lambda.data()[h]);
    auto norm = [&](const Mat& m, std::size_t i) {
      double s = 0;
      for (std::size_t d = 0; d < hd; ++d) s += m[i][h * hd + d] * m[i][h * hd + d];
      return std::max(std::sqrt(s), 1e-12);
    };
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < hd; ++d) dot += q[i][h * hd + d] * k[j][h * hd + d];
        logits[j] = lambda * dot / (norm(q, i) * norm(k, j)) + bias.at({h, i, j});
        mx = std::max(mx, logits[j]);
      }
      double z = 0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t d = 0; d < hd; ++d) merged[i][h * hd + d] += logits[j] / z * v[j][h * hd + d];
      }
    }
  }
  return ref_grl(merged, p.proj);
}

Mat to_mat(const Td& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  }
  return m;
}

GrsaShape small_shape(std::size_t c, std::size_t heads, WindowSpec win, AttentionVariant v = {}) {
  return GrsaShape{c, heads, 16, win, v};
}

}  // namespace

TEST(Grl, ZeroWeightsIsExactIdentity) {
  GrlParams<double> p = make_grouped_linear<double>(60, 2, true, Rng(1));
  for (auto& w : p.weights) for (double& v : w.mutable_data()) v = 0.0;
  const Td x = random_tensor({7, 60}, 2);
  const Td y = grl_forward(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Grl, IdentityWeightsDoubleEachHalf) {
  GrlParams<double> p = make_grouped_linear<double>(4, 2, true, Rng(1));
  for (auto& w : p.weights) {
    auto d = w.mutable_data();
    for (std::size_t i = 0; i < 2; ++i) for (std::size_t j = 0; j < 2; ++j) d[i * 2 + j] = i == j;
  }
  const Td x = Td::from({1, 4}, {1, -2, 3, 0.5});
  const Td y = grl_forward(x, p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.data()[i], 2 * x.data()[i]);
}

TEST(Grl, ParameterCountForSixtyChannels) {
  const GrlParams<double> p = make_grouped_linear<double>(60, 2, true, Rng(1));
  std::size_t n = 0;
  for (const auto& w : p.weights) n += w.numel();
  for (const auto& b : p.biases) n += b.numel();
  EXPECT_EQ(n, 1860u);
}

TEST(Grl, OddChannelsRejected) {
  const GrlParams<double> p = make_grouped_linear<double>(4, 2, true, Rng(1));
  EXPECT_THROW(grl_forward(Td::zeros({2, 5}), p), DimensionError);
  EXPECT_THROW(validate_grsa_shape(small_shape(7, 1, {4, 4})), DimensionError);
  EXPECT_THROW(validate_grsa_shape(small_shape(8, 3, {4, 4})), DimensionError);
}

TEST(Grl, MatchesLoopReference) {
  GrlParams<double> p = make_grouped_linear<double>(6, 2, true, Rng(3));
  NamedTensors<double> named{{"w1", p.weights[0]}, {"w2", p.weights[1]},
                             {"b1", p.biases[0]}, {"b2", p.biases[1]}};
  perturb(named, 4, 0.5);
  const Td x = random_tensor({5, 6}, 5);
  const Mat ref = ref_grl(to_mat(x), p);
  const Td y = grl_forward(x, p);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y.at({i, j}), ref[i][j], 1e-14);
  }
}

TEST(OffsetTable, SizesAndDiagonal) {
  const OffsetTable t = relative_offset_table({8, 32});
  EXPECT_EQ(t.dx.size(), 945u);
  EXPECT_EQ(WindowSpec({8, 32}).offset_count(), 945u);
  const std::size_t n = 256;
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(t.gather_index[i * n + i], t.gather_index[0]);
  EXPECT_EQ(t.dx[t.gather_index[0]], 0);
  EXPECT_EQ(t.dy[t.gather_index[0]], 0);

  const OffsetTable one = relative_offset_table({1, 1});
  EXPECT_EQ(one.dx, std::vector<int>{0});
  EXPECT_EQ(one.dy, std::vector<int>{0});
  EXPECT_EQ(one.gather_index, std::vector<std::size_t>{0});
}

TEST(OffsetTable, GatherAddressesCoordinateDifference) {
  const WindowSpec win{3, 5};
  const OffsetTable t = relative_offset_table(win);
  const std::size_t n = win.tokens();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t row = t.gather_index[i * n + j];
      EXPECT_EQ(t.dy[row], static_cast<int>(i / win.w) - static_cast<int>(j / win.w));
      EXPECT_EQ(t.dx[row], static_cast<int>(i % win.w) - static_cast<int>(j % win.w));
    }
  }
}

TEST(EsRpb, ClosedFormValues) {
  EXPECT_NEAR(exp_space_offset(1.0, 2.0), 0.86466, 1e-5);
  for (const double a : {0.1, 1.0, 5.0}) {
    EXPECT_EQ(exp_space_offset(a, 0.0), 0.0);
    for (int d = 1; d < 10; ++d) EXPECT_EQ(exp_space_offset(a, -d), -exp_space_offset(a, d));
  }
}

TEST(EsRpb, FeaturesAreOddInTheOffset) {
  const WindowSpec win{4, 6};
  GrsaParams<double> p = init_grsa<double>(small_shape(8, 2, win), Rng(7));
  auto& es = std::get<EsRpbParams<double>>(p.bias);
  Td(es.alpha).mutable_data()[0] = 0.7;
  Td(es.beta).mutable_data()[0] = 1.3;
  const Td f = es_rpb_features(win, es);
  const OffsetTable t = relative_offset_table(win);
  const std::size_t rows = t.dx.size();
  ASSERT_EQ(f.shape(), (Shape{rows, 2}));
  for (std::size_t r = 0; r < rows; ++r) {
    // Row-major (dy, dx) enumeration puts (-dy, -dx) at the mirrored index.
    const std::size_t m = rows - 1 - r;
    ASSERT_EQ(t.dx[m], -t.dx[r]);
    ASSERT_EQ(t.dy[m], -t.dy[r]);
    EXPECT_EQ(f.at({m, 0}), -f.at({r, 0}));
    EXPECT_EQ(f.at({m, 1}), -f.at({r, 1}));
    EXPECT_NEAR(f.at({r, 0}), exp_space_offset(0.7, t.dx[r]), 1e-15);
    EXPECT_NEAR(f.at({r, 1}), exp_space_offset(1.3, t.dy[r]), 1e-15);
  }
}

TEST(EsRpb, BiasShapeAndMlpParameterCount) {
  const WindowSpec win{8, 32};
  const GrsaParams<double> p = init_grsa<double>(GrsaShape{60, 3, 128, win, {}}, Rng(8));
  const auto& es = std::get<EsRpbParams<double>>(p.bias);
  EXPECT_EQ(es.mlp_w1.numel() + es.mlp_w2.numel(), 2u * 128 + 128u * 3);
  EXPECT_EQ(es_rpb_table(win, es).shape(), (Shape{945, 3}));
  EXPECT_EQ(es_rpb_bias(win, es).shape(), (Shape{3, 256, 256}));

  const GrsaParams<double> one = init_grsa<double>(GrsaShape{60, 1, 128, win, {}}, Rng(8));
  const auto& es1 = std::get<EsRpbParams<double>>(one.bias);
  EXPECT_EQ(es1.mlp_w1.numel() + es1.mlp_w2.numel(), 384u);
}

TEST(EsRpb, GradientReachesAlphaAndBeta) {
  const WindowSpec win{3, 4};
  GrsaParams<double> p = init_grsa<double>(small_shape(4, 2, win), Rng(9));
  auto& es = std::get<EsRpbParams<double>>(p.bias);
  perturb({{"w1", es.mlp_w1}, {"w2", es.mlp_w2}}, 10, 0.5);
  const OracleReport r = finite_diff_gradcheck(
      "es-rpb alpha", [&] { return weighted_sum(es_rpb_bias(win, es), Rng(11)); }, {es.alpha, es.beta});
  EXPECT_TRUE(r.pass) << format_report(r);
  backward(weighted_sum(es_rpb_bias(win, es), Rng(11)));
  ASSERT_TRUE(es.alpha.has_grad());
  EXPECT_NE(es.alpha.grad()[0], 0.0);
  EXPECT_NE(es.beta.grad()[0], 0.0);
}

TEST(RpbTable, GatherMatchesTable) {
  const WindowSpec win{2, 3};
  const GrsaParams<double> p = init_grsa<double>(small_shape(4, 2, win, {true, true, false}), Rng(12));
  const auto& tab = std::get<RpbTableParams<double>>(p.bias);
  const Td bias = rpb_table_bias(win, tab);
  const OffsetTable t = relative_offset_table(win);
  const std::size_t n = win.tokens();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(bias.at({h, i, j}), tab.table.at({t.gather_index[i * n + j], h}));
      }
    }
  }
  EXPECT_THROW(rpb_table_bias(WindowSpec{3, 3}, tab), DimensionError);
}

TEST(Grsa, MatchesDenseLoopReference) {
  for (const std::size_t heads : {1u, 2u}) {
    const WindowSpec win{2, 4};
    GrsaParams<double> p = init_grsa<double>(small_shape(4, heads, win), Rng(13 + heads));
    perturb(named_parameters(p), 14, 0.4);
    const Td bias = position_bias(win, p.bias);
    const Td x = random_tensor({8, 4}, 15);
    const Td y = grsa_forward(x, p, bias);
    const Mat ref = ref_grsa(to_mat(x), p, bias);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at({i, j}), ref[i][j], 1e-10) << heads;
    }
  }
}

TEST(Grsa, UngroupedVariantMatchesReference) {
  const WindowSpec win{2, 2};
  GrsaParams<double> p = init_grsa<double>(small_shape(6, 3, win, {false, false, false}), Rng(16));
  perturb(named_parameters(p), 17, 0.4);
  EXPECT_EQ(p.q.groups(), 1u);
  const Td bias = position_bias(win, p.bias);
  const Td x = random_tensor({4, 6}, 18);
  const Td y = grsa_forward(x, p, bias);
  const Mat ref = ref_grsa(to_mat(x), p, bias);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y.at({i, j}), ref[i][j], 1e-10);
  }
}

TEST(Grsa, SingleTokenIsProjectedValue) {
  const WindowSpec win{1, 1};
  GrsaParams<double> p = init_grsa<double>(small_shape(4, 2, win), Rng(19));
  perturb(named_parameters(p), 20, 0.4);
  const Td x = random_tensor({1, 4}, 21);
  const Td y = grsa_forward(x, p, position_bias(win, p.bias));
  const Td expect = grl_forward(grl_forward(x, p.v), p.proj);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.data()[j], expect.data()[j], 1e-14);
}

TEST(Grsa, VanishingScaleGivesUniformAttention) {
  const WindowSpec win{2, 3};
  GrsaParams<double> p = init_grsa<double>(small_shape(4, 2, win), Rng(22));
  perturb(named_parameters(p), 23, 0.4);
  for (double& v : p.log_lambda.mutable_data()) v = -60.0;
  const Td x = random_tensor({6, 4}, 24);
  const Td y = grsa_forward(x, p, Td::zeros({2, 6, 6}));
  // Every row attends uniformly, so every token gets proj(mean of V).
  const Td v = grl_forward(x, p.v);
  std::vector<double> mean_v(4, 0.0);
  for (std::size_t i = 0; i < 6; ++i) for (std::size_t j = 0; j < 4; ++j) mean_v[j] += v.at({i, j}) / 6.0;
  const Td expect = grl_forward(Td::from({1, 4}, mean_v), p.proj);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at({i, j}), expect.data()[j], 1e-12);
  }
}

TEST(Grsa, BatchedWindowsMatchSingleWindows) {
  const WindowSpec win{2, 2};
  GrsaParams<double> p = init_grsa<double>(small_shape(4, 2, win), Rng(25));
  perturb(named_parameters(p), 26, 0.4);
  const Td bias = position_bias(win, p.bias);
  const Td xb = random_tensor({3, 4, 4}, 27);
  const Td yb = grsa_forward(xb, p, bias);
  for (std::size_t w = 0; w < 3; ++w) {
    const Td y = grsa_forward(narrow(xb, 0, w, 1), p, bias);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(yb.data()[w * 16 + i], y.data()[i], 1e-14);
  }
  EXPECT_THROW(grsa_forward(random_tensor({5, 4}, 28), p, bias), DimensionError);
}

TEST(Grsa, InitializationDefaults) {
  const GrsaParams<double> p = init_grsa<double>(GrsaShape{}, Rng(29));
  for (double v : p.log_lambda.data()) EXPECT_NEAR(std::exp(v), 10.0, 1e-12);
  const auto& es = std::get<EsRpbParams<double>>(p.bias);
  EXPECT_EQ(es.alpha.item(), 1.0);
  EXPECT_EQ(es.beta.item(), 1.0);
  EXPECT_FALSE(p.proj.residual);
  EXPECT_TRUE(p.q.residual);
  for (const auto& w : p.q.weights) for (double v : w.data()) EXPECT_LE(std::abs(v), 0.04);
}

TEST(Windows, RoundTripAlignedIsBitExact) {
  const Td x = random_tensor({60, 64, 64}, 30);
  const WindowSpec win{8, 32};
  const Td w = window_partition(x, win);
  EXPECT_EQ(w.shape(), (Shape{16, 256, 60}));
  const Td back = window_reverse(w, win, 64, 64);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(back.data()[i], x.data()[i]);
}

TEST(Windows, ShiftedRoundTripIsBitExact) {
  const Td x = random_tensor({3, 16, 64}, 31);
  const WindowSpec win{8, 32};
  const WindowShift shift{4, 16};
  const Td back = window_reverse(window_partition(x, win, shift), win, 16, 64, shift);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(back.data()[i], x.data()[i]);
}

TEST(Windows, UnalignedInputPadsAndCrops) {
  const Td x = random_tensor({2, 5, 7}, 32);
  const WindowSpec win{4, 4};
  const Td w = window_partition(x, win, {2, 2});
  EXPECT_EQ(w.shape(), (Shape{4, 16, 2}));
  const Td back = window_reverse(w, win, 5, 7, {2, 2});
  ASSERT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(back.data()[i], x.data()[i]);
}

TEST(Windows, SingleWindowIsTranspose) {
  const Td x = random_tensor({3, 2, 4}, 33);
  const Td w = window_partition(x, WindowSpec{2, 4});
  ASSERT_EQ(w.shape(), (Shape{1, 8, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(w.at({0, t, c}), x.at({c, t / 4, t % 4}));
  }
}

TEST(Windows, ShiftStartsGridAtOffset) {
  const Td x = random_tensor({1, 4, 4}, 34);
  const Td w = window_partition(x, WindowSpec{2, 2}, {1, 1});
  // First window's top-left token is pixel (1, 1).
  EXPECT_EQ(w.at({0, 0, 0}), x.at({0, 1, 1}));
}

TEST(Windows, ReflectIndex) {
  EXPECT_EQ(reflect_index(-1, 4), 1u);
  EXPECT_EQ(reflect_index(4, 4), 2u);
  EXPECT_EQ(reflect_index(5, 4), 1u);
  EXPECT_EQ(reflect_index(7, 1), 0u);
}
