#include "gradcheck.hpp"
#include "op_catalog.hpp"
#include "oracles.hpp"

#include <pointfix/archive.hpp>
#include <pointfix/ops.hpp>
#include <pointfix/optim.hpp>
#include <pointfix/param_set.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace pointfix;
using pointfix::testing::random_tensor;
using Td = Tensor<double>;

namespace {

std::vector<double> vals(const Td& t) { return t.vec(); }

ParamSet<double> one_param(const std::string& n, Shape s, std::vector<double> v) {
  ParamSet<double> p;
  p.add(n, Td::parameter(std::move(s), std::move(v)));
  return p;
}

}  // namespace

TEST(Grad, SumOfSquares) {
  const auto p = one_param("p", {2}, {1, 2});
  const auto g = grad(sum(square(p.at("p"))), p);
  EXPECT_EQ(vals(g.at("p")), (std::vector<double>{2, 4}));
}

TEST(Grad, ConstantLossGivesZeros) {
  const auto p = one_param("p", {2}, {1, 2});
  const Td c = Td::scalar(3.0);
  EXPECT_EQ(vals(grad(c, p).at("p")), (std::vector<double>{0, 0}));
  // depends on another leaf only
  const Td q = Td::parameter({1}, {2.0});
  EXPECT_EQ(vals(grad(sum(q), p).at("p")), (std::vector<double>{0, 0}));
}

TEST(Grad, RandomFiveParameterFunctionMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Td x = random_tensor(rng, {5}, -1, 1);
    const Td w = random_tensor(rng, {5, 3}, -1, 1, false);
    auto f = [w](const std::vector<Td>& a) {
      const Td h = sigmoid(matmul(reshape(a[0], {1, 5}), w));
      return add(sum(softplus(h)), mean(mul(a[0], square(a[0]))));
    };
    const auto r = pointfix::testing::check_gradients(f, {x}, 11 + trial);
    EXPECT_LT(r.first, 1e-4) << "trial " << trial;
  }
}

TEST(Grad, RequiresScalarLoss) {
  const Td x = Td::parameter({2}, {1, 2});
  EXPECT_THROW(grad(x, std::vector<Td>{x}), std::invalid_argument);
}

TEST(Grad, GradModeGuardDisablesRecording) {
  const Td x = Td::parameter({2}, {1, 2});
  {
    GradModeGuard off(false);
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Grad, SecondOrderOfCube) {
  const Td x = Td::parameter({1}, {2.0});
  const Td g = grad(sum(mul(x, square(x))), {x}, true)[0];  // 3x^2
  const Td h = grad(sum(g), {x})[0];                         // 6x
  EXPECT_DOUBLE_EQ(g[0], 12.0);
  EXPECT_DOUBLE_EQ(h[0], 12.0);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto cases = pointfix::testing::op_catalog();
  const auto& c = cases.at(GetParam());
  const auto r = pointfix::testing::check_gradients(c.loss, c.inputs, 5 + GetParam());
  EXPECT_LT(r.first, 1e-6) << c.name;
  EXPECT_LT(r.second, 1e-5) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Range<std::size_t>(0, pointfix::testing::op_catalog().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return pointfix::testing::op_catalog().at(info.param).name;
                         });

TEST(SgdStep, ZeroLearningRateIsIdentity) {
  const auto p = one_param("p", {3}, {0.1, -2.5, 7});
  const auto g = one_param("p", {3}, {1, 2, 3});
  EXPECT_TRUE(sgd_step(p, g, 0.0).identical(p));
}

TEST(SgdStep, Arithmetic) {
  const auto p = one_param("p", {1}, {1});
  const auto g = one_param("p", {1}, {2});
  EXPECT_EQ(vals(sgd_step(p, g, 0.5).at("p")), std::vector<double>{0});
}

TEST(SgdStep, TwoStepsEqualOneDoubleStep) {
  const auto p = one_param("p", {3}, {0.5, 1.0, -1.0});
  const auto g = one_param("p", {3}, {0.25, -0.5, 1.0});
  const auto twice = sgd_step(sgd_step(p, g, 0.25), g, 0.25);
  const auto once = sgd_step(p, g, 0.5);
  EXPECT_EQ(vals(twice.at("p")), vals(once.at("p")));
}

TEST(SgdStep, RejectsIncongruentSetsAndNegativeRate) {
  const auto p = one_param("p", {2}, {1, 2});
  EXPECT_THROW(sgd_step(p, one_param("q", {2}, {1, 2}), 0.1), std::invalid_argument);
  EXPECT_THROW(sgd_step(p, p, -0.1), std::invalid_argument);
}

TEST(SgdStep, DifferentiableThroughTheStep) {
  // p' = p - lr * 2p  =>  d sum(p'^2)/dp = 2 p' (1 - 2 lr)
  const auto p = one_param("p", {2}, {1, -3});
  const auto g = grad(sum(square(p.at("p"))), p, true);
  const auto next = sgd_step(p, g, 0.1);
  const auto outer = grad(sum(square(next.at("p"))), p);
  EXPECT_NEAR(outer.at("p")[0], 2 * 0.8 * 0.8 * 1, 1e-12);
  EXPECT_NEAR(outer.at("p")[1], 2 * 0.8 * 0.8 * -3, 1e-12);
}

TEST(Warp, ZeroDisparityIsIdentity) {
  std::mt19937_64 rng(1);
  const Td img = random_tensor(rng, {4, 5, 3}, 0, 1, false);
  const auto r = bilinear_warp_1d(img, Td::zeros({4, 5}));
  EXPECT_EQ(vals(r.image), vals(img));
  for (double v : r.in_view.values()) EXPECT_EQ(v, 1.0);
}

TEST(Warp, IntegerShift) {
  std::mt19937_64 rng(2);
  const std::size_t h = 3, w = 6, c = 2;
  const Td img = random_tensor(rng, {h, w, c}, 0, 1, false);
  const auto r = bilinear_warp_1d(img, Td::full({h, w}, 1.0));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 1; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        EXPECT_EQ(r.image[(y * w + x) * c + ch], img[(y * w + x - 1) * c + ch]);
  EXPECT_EQ(r.in_view[0], 0.0);
  EXPECT_EQ(r.in_view[1], 1.0);
}

TEST(Warp, FractionalDisparityMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> sz(4, 12);
    const std::size_t h = sz(rng), w = sz(rng), c = 1 + trial % 3;
    const Td img = random_tensor(rng, {h, w, c}, 0, 1, false);
    const Td d = random_tensor(rng, {h, w}, -1.0, double(w) / 2, false);
    const auto r = bilinear_warp_1d(img, d);
    const auto ref = oracle::warp(img.vec(), d.vec(), h, w, c);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(r.image[i], ref[i], 1e-12);
  }
}

TEST(Warp, RejectsMismatchedShapes) {
  EXPECT_THROW(bilinear_warp_1d(Td::zeros({3, 4, 1}), Td::zeros({4, 3})), std::invalid_argument);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(4);
  for (std::size_t k : {1, 3, 5})
    for (std::size_t stride : {1, 2}) {
      const std::size_t h = 7, w = 6, cin = 2, cout = 3;
      const Td x = random_tensor(rng, {h, w, cin}, -1, 1, false);
      const Td wt = random_tensor(rng, {k, k, cin, cout}, -1, 1, false);
      std::size_t oh = 0, ow = 0;
      const auto ref = oracle::conv2d(x.vec(), wt.vec(), h, w, cin, k, cout, stride, oh, ow);
      const Td y = conv2d(x, wt, stride);
      ASSERT_EQ(y.shape(), (Shape{oh, ow, cout}));
      for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12) << k << " " << stride;
    }
}

TEST(Correlation, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  const Td l = random_tensor(rng, {5, 9, 4}, -1, 1, false), r = random_tensor(rng, {5, 9, 4}, -1, 1, false);
  const auto ref = oracle::correlation(l.vec(), r.vec(), 5, 9, 4, 3);
  const Td c = correlation(l, r, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(c[i], ref[i], 1e-12);
}

TEST(Matmul, SmallProduct) {
  const Td a = Td::constant({2, 2}, {1, 2, 3, 4}), b = Td::constant({2, 1}, {5, 6});
  EXPECT_EQ(vals(matmul(a, b)), (std::vector<double>{17, 39}));
  EXPECT_EQ(vals(matmul_nt(a, a)), (std::vector<double>{5, 11, 11, 25}));
  EXPECT_EQ(vals(matmul_tn(a, a)), (std::vector<double>{10, 14, 14, 20}));
}

TEST(Broadcast, NumpyRules) {
  EXPECT_EQ(broadcast_shape({2, 1, 3}, {4, 1}), (Shape{2, 4, 3}));
  EXPECT_THROW(broadcast_shape({2, 3}, {4}), std::invalid_argument);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
  const Td x = Td::full({2, 3, 1}, 4.5);
  const Td y = resize_bilinear(x, 5, 7);
  ASSERT_EQ(y.shape(), (Shape{5, 7, 1}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 4.5);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  const auto p = one_param("p", {2}, {1, -1});
  const auto g = one_param("p", {2}, {0.3, -5});
  Optimizer<double> opt(OptimizerKind::adam, 0.01);
  const auto next = opt.step(p, g);
  EXPECT_NEAR(next.at("p")[0], 1 - 0.01, 1e-7);
  EXPECT_NEAR(next.at("p")[1], -1 + 0.01, 1e-7);
  EXPECT_EQ(opt.step_counts().at("p"), 1u);
}

TEST(Optimizer, SgdMatchesSgdStep) {
  const auto p = one_param("p", {2}, {1, -1});
  const auto g = one_param("p", {2}, {0.3, -5});
  Optimizer<double> opt(OptimizerKind::sgd, 0.1);
  EXPECT_EQ(vals(opt.step(p, g).at("p")), vals(sgd_step(p, g, 0.1).at("p")));
}

TEST(Optimizer, EntriesWithoutGradientsAreKeptAndStateRestores) {
  ParamSet<double> p;
  p.add("a", Td::parameter({1}, {1}));
  p.add("b", Td::parameter({1}, {2}));
  Optimizer<double> opt(OptimizerKind::adam, 0.1);
  const auto g = subset(one_param("a", {1}, {0.5}), {"a"});
  const auto next = opt.step(p, g);
  EXPECT_EQ(next.at("b")[0], 2.0);
  EXPECT_NE(next.at("a")[0], 1.0);

  Optimizer<double> copy(OptimizerKind::adam, 0.1);
  copy.restore(opt.state_params(ParamRole::base), opt.step_counts());
  EXPECT_EQ(vals(opt.step(next, g).at("a")), vals(copy.step(next, g).at("a")));
}

TEST(ParamSetOps, SubsetMergedAddParams) {
  ParamSet<double> p;
  p.add("a", Td::parameter({1}, {1}));
  p.add("b", Td::parameter({2}, {2, 3}));
  const auto s = subset(p, {"b"});
  EXPECT_EQ(s.size(), 1u);
  const auto m = merged(p, one_param("b", {2}, {7, 8}));
  EXPECT_EQ(vals(m.at("b")), (std::vector<double>{7, 8}));
  EXPECT_EQ(vals(m.at("a")), std::vector<double>{1});
  EXPECT_EQ(vals(add_params(p, p).at("b")), (std::vector<double>{4, 6}));
  EXPECT_THROW(add_params(p, s), std::invalid_argument);
  EXPECT_THROW(p.add("a", Td::zeros({1})), std::invalid_argument);
  EXPECT_THROW(merged(p, one_param("b", {3}, {1, 2, 3})), std::invalid_argument);
}

TEST(Archive, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  ParamSet<float> a(ParamRole::base), b(ParamRole::pointfix_head);
  a.add("w", random_tensor(rng, {2, 3}).cast<float>());
  b.add("h", random_tensor(rng, {4}).cast<float>());
  const auto path = (std::filesystem::temp_directory_path() / "pointfix_archive_test.pfx").string();
  save_archive<float>(path, {&a, &b}, {{"iteration", 5}});
  const Archive ar = load_archive(path);
  EXPECT_EQ(ar.meta.at("iteration"), 5);
  EXPECT_TRUE(ar.params<float>(ParamRole::base).identical(a));
  EXPECT_TRUE(ar.params<float>(ParamRole::pointfix_head).identical(b));
  EXPECT_FALSE(ar.has_role(ParamRole::pointfix_context));
  std::filesystem::remove(path);
  EXPECT_THROW(load_archive(path), std::runtime_error);
}
