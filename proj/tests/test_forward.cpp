#include <doctest.h>

#include "lungddpm/errors.hpp"
#include "lungddpm/forward.hpp"
#include "test_util.hpp"

using namespace lungddpm;
using namespace lungddpm::testing;

namespace {
const auto kCosine = make_schedule(ScheduleKind::cosine, 1000);
}

TEST_CASE("q_sample closed-form cases") {
  const auto x0 = random_volume({4, 4, 4}, 1);
  const VoxelVolume zero(x0.dims());
  const auto a = q_sample(x0, 300, zero, kCosine);
  CHECK(a.t == 300);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(a.x[i] == kCosine.sqrt_alpha_bar(300) * x0[i]);

  const auto eps = random_volume(x0.dims(), 2);
  CHECK(bit_identical(q_sample(x0, 0, eps, kCosine).x, x0));
  CHECK_THROWS_AS(q_sample(x0, 10, VoxelVolume({4, 4, 5}), kCosine), ArgumentError);
  CHECK_THROWS_AS(q_sample(x0, 1001, eps, kCosine), ArgumentError);
}

TEST_CASE("q_sample Monte Carlo moments") {
  const VoxelVolume x0({1, 1, 2}, {}, 0.6);
  Rng rng(5);
  for (int t : {50, 500, 950}) {
    std::vector<double> draws;
    for (int k = 0; k < 10000; ++k) draws.push_back(q_sample(x0, t, standard_normal(x0.dims(), {}, rng), kCosine).x[0]);
    const auto m = moments(draws);
    const double ab = kCosine.alpha_bar(t), var = 1.0 - ab;
    CHECK(std::abs(m.mean - std::sqrt(ab) * 0.6) < 4.0 * std::sqrt(var / m.n));
    // Var of the sample variance for Gaussian data is 2 var^2 / (n - 1).
    CHECK(std::abs(m.var - var) < 4.0 * var * std::sqrt(2.0 / (m.n - 1)));
  }
}

TEST_CASE("q_sample is linear in (x0, eps)") {
  const auto x0 = random_volume({3, 3, 3}, 3);
  const auto eps = random_volume(x0.dims(), 4);
  const double a = -1.7;
  VoxelVolume ax = x0, ae = eps;
  for (auto& v : ax.values()) v *= a;
  for (auto& v : ae.values()) v *= a;
  const auto lhs = q_sample(ax, 400, ae, kCosine).x;
  const auto rhs = q_sample(x0, 400, eps, kCosine).x;
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(a * rhs[i]).epsilon(1e-14));
}

TEST_CASE("invert_reference") {
  const auto x = random_volume({8, 8, 8}, 6);
  const auto eps = random_volume(x.dims(), 7);
  CHECK(bit_identical(invert_reference(x, 0, eps, kCosine).x, x));
  CHECK(bit_identical(invert_reference(x, 420, eps, kCosine).x, q_sample(x, 420, eps, kCosine).x));

  Rng rng(8);
  const auto big = random_volume({25, 20, 20}, 9);
  const auto out = invert_reference(big, 1000, standard_normal(big.dims(), {}, rng), kCosine);
  const auto m = moments(out.x.values());
  CHECK(std::abs(m.var - 1.0) < 0.02);
}

TEST_CASE("masked_mix") {
  const auto bgx = random_volume({4, 5, 6}, 10);
  const NoisyState bg{bgx, 700};
  const auto n = random_volume(bgx.dims(), 11);

  SUBCASE("empty mask") {
    const auto out = masked_mix(bg, n, SemanticLayout(bgx.dims(), {}, Label::lung));
    CHECK(bit_identical(out.x, bgx));
    CHECK(out.t == 700);
  }
  SUBCASE("full mask") {
    CHECK(bit_identical(masked_mix(bg, n, SemanticLayout(bgx.dims(), {}, Label::nodule)).x, n));
  }
  SUBCASE("checkerboard matches a brute-force select, and mixing twice changes nothing") {
    SemanticLayout m(bgx.dims());
    for (int z = 0; z < 4; ++z)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) m.set(z, y, x, (z + y + x) % 2 ? Label::nodule : Label::lung);
    const auto out = masked_mix(bg, n, m);
    for (int z = 0; z < 4; ++z)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
          CHECK(same_bits(out.x.at(z, y, x), (z + y + x) % 2 ? n.at(z, y, x) : bgx.at(z, y, x)));
    CHECK(bit_identical(masked_mix(out, n, m).x, out.x));
  }
  SUBCASE("dims mismatch") {
    CHECK_THROWS_AS(masked_mix(bg, VoxelVolume({4, 5, 5}), SemanticLayout(bgx.dims())), ArgumentError);
    CHECK_THROWS_AS(masked_mix(bg, n, SemanticLayout({4, 5, 5})), ArgumentError);
  }
}

TEST_CASE("standard_normal is seeded") {
  Rng a(1), b(1);
  CHECK(bit_identical(standard_normal({3, 3, 3}, {}, a), standard_normal({3, 3, 3}, {}, b)));
}
