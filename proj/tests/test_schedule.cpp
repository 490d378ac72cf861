#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lungddpm/errors.hpp"
#include "lungddpm/schedule.hpp"

using namespace lungddpm;

namespace {

// Closed form written out independently of the library.
double cosine_oracle(int t, int T) {
  const double s = 0.008;
  auto f = [&](double u) {
    const double c = std::cos((u / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0);
}

}  // namespace

TEST_CASE("cosine schedule matches the closed form away from the clipped tail") {
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(500) == doctest::Approx(cosine_oracle(500, 1000)).epsilon(1e-12));
  for (int t : {1, 10, 250, 750, 900}) CHECK(s.alpha_bar(t) == doctest::Approx(cosine_oracle(t, 1000)).epsilon(1e-10));
}

TEST_CASE("schedule invariants hold for both kinds") {
  for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear}) {
    for (int T : {2, 50, 1000}) {
      CAPTURE(T);
      const auto s = make_schedule(kind, T);
      for (int t = 1; t <= T; ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) <= kMaxBeta);
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.lambda(t) < s.lambda(t - 1));
        CHECK(s.alpha_bar(t) > 0.0);
      }
      for (int t = 0; t <= T; ++t) {
        const double a = s.sqrt_alpha_bar(t), sg = s.sigma(t);
        CHECK(a * a + sg * sg == doctest::Approx(1.0).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("coefficients_at boundary values") {
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  const auto c0 = s.coefficients_at(0);
  CHECK(c0.alpha_bar == 1.0);
  CHECK(c0.sigma == 0.0);
  CHECK(c0.lambda == kLambdaMax);
  CHECK(std::isfinite(c0.lambda));

  const auto cT = s.coefficients_at(1000);
  CHECK(cT.alpha_bar < 1e-4);
  CHECK(cT.sigma > 0.9999);

  for (int t : {1, 7, 333, 999}) {
    const auto c = s.coefficients_at(t);
    CHECK(c.lambda == doctest::Approx(0.5 * std::log(c.alpha_bar / (1.0 - c.alpha_bar))).epsilon(1e-12));
  }
}

TEST_CASE("invalid arguments are rejected") {
  CHECK_THROWS_AS(make_schedule(ScheduleKind::cosine, 1), ArgumentError);
  CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 0), ArgumentError);
  const auto s = make_schedule(ScheduleKind::cosine, 10);
  CHECK_THROWS_AS(s.coefficients_at(-1), ArgumentError);
  CHECK_THROWS_AS(s.coefficients_at(11), ArgumentError);
  CHECK_THROWS_AS(s.beta(0), ArgumentError);
  CHECK_THROWS_AS(schedule_kind_from_string("sigmoid"), ArgumentError);
}

TEST_CASE("schedules are deterministic") {
  const auto a = make_schedule(ScheduleKind::cosine, 1000);
  const auto b = make_schedule(ScheduleKind::cosine, 1000);
  CHECK(a.betas() == b.betas());
  CHECK(a.alpha_bars() == b.alpha_bars());
  CHECK(a.lambdas() == b.lambdas());
}

TEST_CASE("drift and diffusion follow the finite-difference definitions") {
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  const double T = 1000.0;
  for (int t : {100, 500, 800}) {
    const double f = (std::log(s.sqrt_alpha_bar(t + 1)) - std::log(s.sqrt_alpha_bar(t - 1))) / (2.0 / T);
    CHECK(s.drift(t) == doctest::Approx(f).epsilon(1e-9));
    const double ds2 = (std::pow(s.sigma(t + 1), 2) - std::pow(s.sigma(t - 1), 2)) / (2.0 / T);
    CHECK(s.diffusion_sq(t) == doctest::Approx(ds2 - 2.0 * f * std::pow(s.sigma(t), 2)).epsilon(1e-9));
    CHECK(s.diffusion_sq(t) > 0.0);
  }
}

TEST_CASE("schedule kind names round-trip") {
  for (auto k : {ScheduleKind::cosine, ScheduleKind::linear}) CHECK(schedule_kind_from_string(to_string(k)) == k);
}
