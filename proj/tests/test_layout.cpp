#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "lungddpm/errors.hpp"
#include "lungddpm/layout.hpp"
#include "test_util.hpp"

using namespace lungddpm;
using namespace lungddpm::testing;

TEST_CASE("config validation") {
  CHECK_NOTHROW(LayoutConfig{}.validate());
  LayoutConfig c;
  c.class_probs = {0.2, 0.6, 0.3};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.diameter_bounds[2].hi = 60.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.diameter_bounds[1] = {5.0, 16.0};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.axis_ratio_range = {0.9, 0.5};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("spec sampling") {
  const LayoutConfig cfg;
  Rng rng(1);
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const auto s = sample_nodule_spec(cfg, rng);
    const int c = static_cast<int>(s.nodule_class);
    ++counts[c];
    const auto& b = cfg.diameter_bounds[c];
    CHECK((s.diameter_mm >= b.lo && s.diameter_mm <= b.hi));
    CHECK(s.diameter_mm == doctest::Approx(2.0 * *std::max_element(s.semi_axes_mm.begin(), s.semi_axes_mm.end())));
    for (double a : s.semi_axes_mm) CHECK(a >= 0.6 * s.diameter_mm / 2.0 - 1e-12);
    for (double r : s.rotation) CHECK((r >= 0.0 && r < 2.0 * std::numbers::pi));
  }
  // Pearson chi-square against (0.19, 0.62, 0.19); 2 dof critical value at 0.01 is 9.21.
  double chi2 = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double expected = cfg.class_probs[c] * n;
    chi2 += (counts[c] - expected) * (counts[c] - expected) / expected;
    CHECK(std::abs(counts[c] / double(n) - cfg.class_probs[c]) < 0.015);
  }
  CHECK(chi2 < 9.21);
}

TEST_CASE("fixed axis ratio gives spheres") {
  LayoutConfig cfg;
  cfg.axis_ratio_range = {1.0, 1.0};
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const auto s = sample_nodule_spec(cfg, rng);
    CHECK(s.semi_axes_mm[0] == s.semi_axes_mm[1]);
    CHECK(s.semi_axes_mm[1] == s.semi_axes_mm[2]);
  }
}

TEST_CASE("unrotated sphere is invariant under the 48 cube symmetries") {
  const Dims d{21, 21, 21};
  EllipsoidSpec s;
  s.center = {10, 10, 10};
  s.semi_axes_mm = {6.3, 6.3, 6.3};
  const auto idx = rasterize_ellipsoid(s, d, {});
  REQUIRE(!idx.empty());
  std::vector<char> mask(d.count(), 0);
  for (auto i : idx) mask[i] = 1;

  std::array<int, 3> perm{0, 1, 2};
  int checked = 0;
  do {
    for (int flips = 0; flips < 8; ++flips) {
      bool same = true;
      for (int z = 0; z < 21 && same; ++z)
        for (int y = 0; y < 21 && same; ++y)
          for (int x = 0; x < 21 && same; ++x) {
            const std::array<int, 3> p{z - 10, y - 10, x - 10};
            std::array<int, 3> q{};
            for (int a = 0; a < 3; ++a) q[a] = ((flips >> a) & 1 ? -1 : 1) * p[perm[a]];
            same = mask[d.index(z, y, x)] == mask[d.index(q[0] + 10, q[1] + 10, q[2] + 10)];
          }
      CHECK(same);
      ++checked;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(checked == 48);
}

TEST_CASE("rasterized volume approaches the analytic ellipsoid volume") {
  const Dims d{40, 40, 40};
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    EllipsoidSpec s;
    s.center = {20, 20, 20};
    std::uniform_real_distribution<double> axis(4.0, 9.0), angle(0.0, 2.0 * std::numbers::pi);
    s.semi_axes_mm = {axis(rng), axis(rng), axis(rng)};
    s.rotation = {angle(rng), angle(rng), angle(rng)};
    const Spacing sp{1.0, 0.8, 1.2};
    const double analytic =
        4.0 / 3.0 * std::numbers::pi * s.semi_axes_mm[0] * s.semi_axes_mm[1] * s.semi_axes_mm[2] / (1.0 * 0.8 * 1.2);
    const auto n = rasterize_ellipsoid(s, d, sp).size();
    CHECK(std::abs(n - analytic) < 0.15 * analytic);
  }
}

TEST_CASE("placement") {
  const Dims d{32, 32, 32};
  const SemanticLayout full(d, {}, Label::lung);
  LayoutConfig cfg;
  cfg.axis_ratio_range = {1.0, 1.0};

  SUBCASE("full lung always places, count near the analytic volume for diameters >= 8 voxels") {
    Rng rng(4);
    for (double diam : {8.0, 10.0, 14.0}) {
      EllipsoidSpec s;
      s.diameter_mm = diam;
      s.semi_axes_mm = {diam / 2, diam / 2, diam / 2};
      const auto p = place_nodule(s, full, {}, rng, cfg);
      const double analytic = 4.0 / 3.0 * std::numbers::pi * std::pow(diam / 2, 3);
      CHECK(p.voxels == p.layout.count(Label::nodule));
      CHECK(std::abs(p.voxels - analytic) < 0.15 * analytic);
    }
  }
  SUBCASE("empty lung") {
    Rng rng(5);
    EllipsoidSpec s;
    CHECK_THROWS_AS(place_nodule(s, SemanticLayout(d), {}, rng, cfg), PlacementError);
  }
  SUBCASE("too large for the volume") {
    Rng rng(5);
    EllipsoidSpec s;
    s.semi_axes_mm = {20, 20, 20};
    CHECK_THROWS_AS(place_nodule(s, full, {}, rng, cfg), PlacementError);
  }
  SUBCASE("deterministic for a seed") {
    EllipsoidSpec s;
    s.semi_axes_mm = {3, 2, 2.5};
    s.rotation = {0.3, 1.1, 2.0};
    Rng a(6), b(6);
    CHECK(place_nodule(s, full, {}, a, cfg).layout == place_nodule(s, full, {}, b, cfg).layout);
  }
  SUBCASE("phantom placements keep >= 90% of the nodule on lung") {
    const auto [v, lung] = make_phantom(7, {48, 48, 48});
    Rng rng(8);
    const LayoutConfig defaults;
    int placed = 0;
    for (int k = 0; k < 60; ++k) {
      const auto s = sample_nodule_spec(defaults, rng);
      try {
        const auto p = place_nodule(s, lung, v.spacing(), rng, defaults);
        ++placed;
        std::size_t nod = 0, on_lung = 0;
        for (std::size_t i = 0; i < lung.size(); ++i) {
          if (!p.layout.is_nodule(i)) {
            CHECK(p.layout[i] == lung[i]);
            continue;
          }
          ++nod;
          on_lung += lung[i] == Label::lung;
        }
        CHECK(nod == p.voxels);
        CHECK(on_lung >= 0.9 * nod);
        CHECK(lung[d.index(0, 0, 0)] == Label::background);
      } catch (const PlacementError&) {
        // large nodules may not fit in a desk-scale phantom lung
      }
    }
    CHECK(placed > 30);
  }
}

TEST_CASE("healthy crop") {
  const auto [v, lung] = make_phantom(9, {32, 32, 32});
  const Dims size{12, 12, 12};

  SUBCASE("no existing nodules: overlap bound holds") {
    Rng rng(10);
    for (int k = 0; k < 50; ++k) {
      const auto r = pick_healthy_crop(lung, lung, size, rng);
      CHECK(r.fits(lung.dims()));
      const auto c = crop(lung, r);
      CHECK(c.count(Label::lung) >= 0.05 * size.count());
    }
  }
  SUBCASE("returned crops are nodule-free by brute force") {
    LayoutConfig cfg;
    Rng rng(11);
    auto with_nodules = lung;
    for (int k = 0; k < 3; ++k) {
      EllipsoidSpec s;
      s.semi_axes_mm = {2.5, 2.5, 2.5};
      with_nodules = place_nodule(s, with_nodules, {}, rng, cfg).layout;
    }
    REQUIRE(with_nodules.count(Label::nodule) > 0);
    for (int k = 0; k < 100; ++k) {
      const auto r = pick_healthy_crop(with_nodules, with_nodules, {8, 8, 8}, rng);
      int found = 0;
      for (int z = 0; z < 32; ++z)
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            if (r.contains(z, y, x) && with_nodules.at(z, y, x) == Label::nodule) ++found;
      CHECK(found == 0);
    }
  }
  SUBCASE("nodules over every lung voxel exhaust the search") {
    SemanticLayout all_nodule = lung;
    for (std::size_t i = 0; i < lung.size(); ++i)
      if (lung[i] == Label::lung) all_nodule.set(i, Label::nodule);
    Rng rng(12);
    CHECK_THROWS_AS(pick_healthy_crop(lung, all_nodule, size, rng), SearchExhaustedError);
  }
  SUBCASE("bad sizes") {
    Rng rng(13);
    CHECK_THROWS_AS(pick_healthy_crop(lung, lung, {33, 1, 1}, rng), ArgumentError);
    CHECK_THROWS_AS(pick_healthy_crop(lung, SemanticLayout({8, 8, 8}), {4, 4, 4}, rng), ArgumentError);
  }
}

TEST_CASE("paint_nodule") {
  VoxelVolume v({4, 4, 4}, {}, -0.9);
  SemanticLayout l(v.dims(), {}, Label::lung);
  l.set(1, 2, 3, Label::nodule);
  Rng rng(1);
  paint_nodule(v, l, 0.4, 0.0, rng);
  CHECK(v.at(1, 2, 3) == 0.4);
  CHECK(v.at(0, 0, 0) == -0.9);
}

TEST_CASE("spec log") {
  EllipsoidSpec s;
  s.nodule_class = NoduleClass::large;
  s.center = {1, 2, 3};
  s.semi_axes_mm = {10, 8, 7};
  s.diameter_mm = 20;
  const auto j = nlohmann::json::parse(spec_to_json_line(s));
  CHECK(j["class"] == "large");
  CHECK(j["diameter_mm"] == 20.0);
  CHECK(j["center"][2] == 3);
  CHECK(j["semi_axes_mm"].size() == 3);
  CHECK(j["rotation"].size() == 3);

  TempDir dir("specs");
  const std::vector<EllipsoidSpec> specs{s, s};
  write_spec_log(specs, dir / "n.jsonl");
  std::ifstream in(dir / "n.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) lines += !line.empty();
  CHECK(lines == 2);
  CHECK(nodule_class_from_string("small") == NoduleClass::small);
  CHECK_THROWS_AS(nodule_class_from_string("huge"), ArgumentError);
}
