#include <doctest.h>

#include "lungddpm/errors.hpp"
#include "lungddpm/forward.hpp"
#include "lungddpm/predictor.hpp"
#include "test_util.hpp"

using namespace lungddpm;
using namespace lungddpm::testing;

namespace {
const auto kCosine = make_schedule(ScheduleKind::cosine, 1000);
}

TEST_CASE("analytic predictor closed forms") {
  const auto x = random_volume({4, 4, 4}, 1, -3.0, 3.0);
  const SemanticLayout c(x.dims());

  AnalyticGaussianPredictor standard(0.0, 1.0, kCosine);
  for (int t : {1, 200, 999, 1000}) {
    const auto eps = standard.predict(x, t, c);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(eps[i] == doctest::Approx(kCosine.sigma(t) * x[i]).epsilon(1e-13));
  }

  AnalyticGaussianPredictor g(0.3, 0.25, kCosine);
  const auto e0 = g.predict(x, 0, c);
  for (double v : e0.values()) CHECK(v == 0.0);

  const int t = 321;
  const auto e = g.predict(x, t, c);
  const double ab = kCosine.alpha_bar(t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double want = std::sqrt(1 - ab) * (x[i] - std::sqrt(ab) * 0.3) / (ab * 0.25 + 1 - ab);
    CHECK(e[i] == doctest::Approx(want).epsilon(1e-13));
  }
  CHECK_THROWS_AS(AnalyticGaussianPredictor(0.0, 0.0, kCosine), ArgumentError);
}

TEST_CASE("eval_count increments once per predict") {
  AnalyticGaussianPredictor p(0.0, 1.0, kCosine);
  const VoxelVolume x({2, 2, 2});
  const SemanticLayout c(x.dims());
  CHECK(p.eval_count() == 0);
  for (int k = 0; k < 7; ++k) (void)p.predict(x, 10, c);
  CHECK(p.eval_count() == 7);
  p.reset_eval_count();
  CHECK(p.eval_count() == 0);
}

TEST_CASE("predict validates inputs") {
  AnalyticGaussianPredictor p(0.0, 1.0, kCosine);
  const VoxelVolume x({2, 2, 2});
  CHECK_THROWS_AS(p.predict(x, 10, SemanticLayout({2, 2, 3})), ArgumentError);
  CHECK_THROWS_AS(p.predict(x, -1, SemanticLayout(x.dims())), ArgumentError);
  CHECK_THROWS_AS(p.predict(x, 1001, SemanticLayout(x.dims())), ArgumentError);
  CHECK(p.eval_count() == 0);
}

TEST_CASE("to_data_prediction inverts the forward process") {
  const auto x0 = random_volume({3, 4, 5}, 2);
  const auto eps = random_volume(x0.dims(), 3, -2.0, 2.0);
  for (int t : {1, 100, 600, 990}) {
    const auto xt = q_sample(x0, t, eps, kCosine).x;
    const auto rec = to_data_prediction(eps, xt, t, kCosine);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(rec[i] == doctest::Approx(x0[i]).epsilon(1e-9));

    const auto zero_eps = to_data_prediction(VoxelVolume(x0.dims()), xt, t, kCosine);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(zero_eps[i] == doctest::Approx(xt[i] / kCosine.sqrt_alpha_bar(t)));

    // Solve x_t = a x0 + s eps for x0 with a and s taken from alpha_bar only.
    const double ab = kCosine.alpha_bar(t);
    for (std::size_t i = 0; i < x0.size(); ++i)
      CHECK(rec[i] == doctest::Approx((xt[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(to_data_prediction(VoxelVolume({1, 1, 1}), VoxelVolume({1, 1, 2}), 5, kCosine), ArgumentError);
}
