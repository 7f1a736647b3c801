#include "regtr/error.hpp"
#include "regtr/gradsuite.hpp"
#include "regtr/tensor.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <set>
#include <string>

namespace regtr::ad {
namespace {

template <typename T>
Tensor<T> random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, bool grad = false) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(r * c);
  for (T& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from(r, c, std::move(v), grad);
}

template <typename T>
class MatmulOracle : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(MatmulOracle, Precisions);

TYPED_TEST(MatmulOracle, MatchesTripleLoop) {
  using T = TypeParam;
  std::mt19937_64 rng(1);
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-13;
  for (const auto [n, k, m] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {17, 9, 13}, {64, 48, 33}}) {
    const auto a = random_tensor<T>(rng, n, k), b = random_tensor<T>(rng, k, m), bt = random_tensor<T>(rng, m, k);
    const auto c = matmul(a, b);
    const auto d = matmul_nt(a, bt);
    ASSERT_EQ(c.rows(), n);
    ASSERT_EQ(c.cols(), m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0, t = 0;
        for (std::size_t p = 0; p < k; ++p) {
          s += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
          t += static_cast<double>(a.at(i, p)) * static_cast<double>(bt.at(j, p));
        }
        EXPECT_NEAR(c.at(i, j), s, tol * (1 + std::abs(s)));
        EXPECT_NEAR(d.at(i, j), t, tol * (1 + std::abs(t)));
      }
    }
  }
}

TEST(Tensor, ShapeErrorsNameTheOp) {
  const auto a = Tensor<double>::zeros(2, 3), b = Tensor<double>::zeros(2, 3);
  try {
    matmul(a, b);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, Tensor<double>::zeros(3, 2)), InvalidArgument);
  EXPECT_THROW(slice_cols(a, 2, 4), InvalidArgument);
  EXPECT_THROW(Tensor<double>::from(2, 2, {1, 2, 3}), InvalidArgument);
  EXPECT_THROW(a.backward(), InvalidArgument);
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackwardCalls) {
  const auto x = Tensor<double>::from(1, 2, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  sum(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, SharedSubgraphGradients) {
  // y = s * s with s = x0 + x1 reused: dy/dx = 2s.
  const auto x = Tensor<double>::from(1, 2, {0.5, 1.5}, true);
  const auto s = sum(x);
  const auto y = mul(s, s);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  // A second backward through the same graph recomputes interior gradients
  // from scratch and only accumulates on the leaf.
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Tensor, DetachStopsGradient) {
  const auto x = Tensor<double>::from(1, 1, {3.0}, true);
  sum(mul(x, x.detach())).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Tensor, NoGradInputsProduceNoGraph) {
  const auto a = Tensor<double>::full(2, 2, 1.0);
  const auto b = exp(a);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Tensor, SoftmaxIsShiftInvariantAndRowsSumToOne) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor<double>(rng, 5, 7);
  const auto s = softmax_rows(a);
  const auto t = softmax_rows(add_scalar(a, 123.0));
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      row += s.at(i, j);
      EXPECT_NEAR(s.at(i, j), t.at(i, j), 1e-12);
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
  const auto big = softmax_rows(Tensor<double>::from(1, 2, {1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(big.at(0, 0), 0.5);
}

TEST(Tensor, LayerNormIsShiftAndScaleInvariant) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>(rng, 4, 8);
  const auto g = Tensor<double>::full(1, 8, 1.0), b = Tensor<double>::zeros(1, 8);
  const auto y = layer_norm(x, g, b);
  const auto z = layer_norm(add_scalar(x, 5.0), g, b);
  // Scaling is exact only with eps = 0.
  const auto w = layer_norm(scale(x, 3.0), g, b, 0.0);
  const auto w0 = layer_norm(x, g, b, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += y.at(i, j) / 8;
    for (std::size_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean) / 8;
    EXPECT_NEAR(mean, 0, 1e-12);
    EXPECT_NEAR(var, 1, 1e-4);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_NEAR(y.at(i, j), z.at(i, j), 1e-12);
      EXPECT_NEAR(w.at(i, j), w0.at(i, j), 1e-12);
    }
  }
}

TEST(Tensor, GroupOpsPickFirstMaxAndMean) {
  const auto a = Tensor<double>::from(4, 1, {1.0, 3.0, 3.0, -2.0}, true);
  const std::vector<std::vector<std::size_t>> groups = {{0, 1, 2}, {3}};
  const auto mx = group_max(a, groups);
  EXPECT_DOUBLE_EQ(mx.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(mx.at(1, 0), -2.0);
  sum(mx).backward();
  EXPECT_DOUBLE_EQ(a.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(a.grad()[2], 0.0);
  const auto mn = group_mean(a, groups);
  EXPECT_DOUBLE_EQ(mn.at(0, 0), 7.0 / 3);
  EXPECT_THROW(group_max(a, {{}}), InvalidArgument);
}

TEST(Tensor, MaskedLogSumExpIgnoresMaskedEntries) {
  const auto a = Tensor<double>::from(1, 3, {0.0, 1000.0, 0.0});
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  EXPECT_NEAR(masked_logsumexp_rows(a, std::span<const std::uint8_t>(mask)).item(), std::log(2.0), 1e-12);
  const std::vector<std::uint8_t> none = {0, 0, 0};
  EXPECT_THROW(masked_logsumexp_rows(a, std::span<const std::uint8_t>(none)), InvalidArgument);
}

TEST(Tensor, DebugChecksCatchNonFinite) {
  set_debug_checks(true);
  const auto a = Tensor<double>::from(1, 1, {-1.0});
  EXPECT_THROW(log(a), NumericalError);
  set_debug_checks(false);
  EXPECT_TRUE(std::isnan(sqrt(a).item()));
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-2);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // detach hides half of d(x*x)/dx, so the check must fail.
  const auto x = Tensor<double>::from(1, 3, {0.3, -0.7, 1.1});
  const auto report = grad_check([&] { return sum(mul(x, x.detach())); }, {{"x", x}});
  EXPECT_FALSE(report.passed(1e-4));
  EXPECT_NEAR(report.max_rel_error(), 0.5, 1e-6);
}

TEST(GradSuiteCoverage, ContainsEveryOpAndComposite) {
  const auto cases = run_grad_suite();
  std::set<std::string> names;
  for (const auto& c : cases) names.insert(c.name);
  for (const char* n : {"matmul", "matmul_nt", "transpose", "add", "sub", "mul", "scale", "add_scalar", "scale_rows",
                        "relu", "sigmoid", "exp", "log", "abs", "sqrt", "softplus", "clamp", "concat_cols",
                        "concat_rows", "slice_cols", "slice_rows", "gather_rows", "sum", "mean", "sum_cols",
                        "softmax_rows", "masked_logsumexp_rows", "layer_norm", "l2_normalize_rows", "group_max",
                        "group_mean", "attention", "cross_encoder_layer", "backbone", "decode_regress",
                        "decode_weighted", "decode_overlap", "overlap_loss", "correspondence_loss", "infonce_loss",
                        "total_loss"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
}

TEST(GradSuiteCoverage, EveryCasePassesForSeveralSeeds) {
  for (const std::uint64_t seed : {1ull, 7ull, 2024ull}) {
    GradSuiteOptions o;
    o.seed = seed;
    for (const auto& c : run_grad_suite(o)) {
      EXPECT_LT(c.report.max_rel_error(), 1e-4) << c.name << " seed " << seed;
    }
  }
}

}  // namespace
}  // namespace regtr::ad
