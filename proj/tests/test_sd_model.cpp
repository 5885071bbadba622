// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "beeplan/errors.hpp"
#include "beeplan/sd_model.hpp"

using namespace beeplan;

namespace {

SdParams base_params() {
  SdParams p;
  p.L_tokens = 128;
  p.D = 13312; // bytes per token state
  p.S = 10e6;  // 10 MB/s
  p.t_rtt_ms = 30.0;
  p.t_comp_ms = 3.0;
  p.m = 1.5;
  p.c_ms = 2.0;
  p.n = 3;
  p.N_tree = 64;
  p.a = 4.0;
  p.B = 32;
  return p;
}

SdParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SdParams p;
  p.L_tokens = 16 + unit(rng) * 256;
  p.D = 256 + unit(rng) * 40000;
  p.S = 1e5 + unit(rng) * 1e8;
  p.t_rtt_ms = unit(rng) * 100.0;
  p.t_comp_ms = 0.5 + unit(rng) * 10.0;
  p.m = 1.0 + unit(rng) * 2.0;
  p.c_ms = unit(rng) * 8.0;
  p.n = 1 + static_cast<int>(unit(rng) * 4.0);
  p.N_tree = 2.0 + unit(rng) * 96.0;
  p.a = 1.0 + unit(rng) * (p.N_tree - 1.0); // a <= N_tree
  p.B = 1 << static_cast<int>(unit(rng) * 6.0);
  return p;
}

// Independent root-finder for t_spec(S) == t_auto(S).
double bisect_break_even(const SdParams& p) {
  auto gap = [&](double s) { return t_auto_at(p, s) - t_spec_at(p, s); };
  double lo = 1.0, hi = 1.0;
  while (gap(lo) > 0.0) lo /= 4.0;
  while (gap(hi) < 0.0) {
    hi *= 4.0;
    if (hi > 1e300) return INFINITY;
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (gap(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace

TEST_CASE("t_auto: unit example and bandwidth structure") {
  SdParams p;
  p.L_tokens = 1;
  p.n = 1;
  p.B = 1;
  p.t_comp_ms = 1.0;
  p.t_rtt_ms = 1.0;
  p.D = 1000;
  p.S = 1e6; // D/S = 1 ms
  CHECK(t_auto(p) == doctest::Approx(3.0));

  // doubling S halves only the transfer term
  double full = t_auto(p);
  double faster = t_auto_at(p, 2e6);
  CHECK(full - faster == doctest::Approx(0.5));
}

TEST_CASE("t_spec: degenerate speculation equals autoregression") {
  SdParams p = base_params();
  p.N_tree = 1.0;
  p.a = 1.0;
  p.m = 1.0;
  p.c_ms = 0.0;
  CHECK(t_spec(p) == doctest::Approx(t_auto(p)));
}

TEST_CASE("t_spec: doubling acceptance halves the pass count") {
  SdParams p = base_params();
  double once = t_spec(p);
  p.a *= 2.0;
  // halving passes scales the whole expression except for per-pass content
  double twice = t_spec(p);
  CHECK(twice == doctest::Approx(once / 2.0));
}

TEST_CASE("t_auto/t_spec equal hand-expanded arithmetic") {
  SdParams p = base_params();
  double n = 3.0, B = 32.0;
  double expected_auto =
      128.0 * (n * 3.0 + n * B * 13312.0 / 10e6 * 1000.0 + n * 30.0);
  CHECK(t_auto(p) == doctest::Approx(expected_auto).epsilon(1e-12));
  double expected_spec =
      128.0 / 4.0 * (2.0 + n * 1.5 * 3.0 + n * B * 64.0 * 13312.0 / 10e6 * 1000.0 + n * 30.0);
  CHECK(t_spec(p) == doctest::Approx(expected_spec).epsilon(1e-12));
}

TEST_CASE("break_even_bandwidth: case analysis") {
  SdParams p = base_params();

  SUBCASE("N_tree == a with positive denominator: always helps") {
    p.N_tree = p.a = 4.0;
    BreakEven be = break_even_bandwidth(p);
    CHECK(be.kind == BreakEvenKind::AlwaysHelps);
  }
  SUBCASE("no savings, pure payload inflation: never helps") {
    p.a = 1.0;
    p.m = 1.0;
    p.c_ms = 0.0;
    p.N_tree = 8.0;
    BreakEven be = break_even_bandwidth(p);
    CHECK(be.kind == BreakEvenKind::NeverHelps);
  }
  SUBCASE("finite break-even matches the closed form") {
    BreakEven be = break_even_bandwidth(p);
    REQUIRE(be.kind == BreakEvenKind::Finite);
    double denom = (4.0 - 1.0) * 30.0 + (4.0 - 1.5) * 3.0 - 2.0 / 3.0;
    double expected = 32.0 * (64.0 - 4.0) * 13312.0 * 1000.0 / denom;
    CHECK(be.s_star == doctest::Approx(expected));
  }
}

TEST_CASE("finite break-even matches the bisection oracle within 0.1%") {
  std::mt19937_64 rng(4242);
  int finite = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    SdParams p = random_params(rng);
    BreakEven be = break_even_bandwidth(p);
    if (be.kind != BreakEvenKind::Finite) continue;
    double oracle = bisect_break_even(p);
    REQUIRE(std::isfinite(oracle));
    CHECK(std::abs(oracle - be.s_star) <= 1e-3 * be.s_star);
    ++finite;
  }
  CHECK(finite > 500);
}

TEST_CASE("sign(t_auto - t_spec) flips exactly at S*") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    SdParams p = random_params(rng);
    BreakEven be = break_even_bandwidth(p);
    if (be.kind != BreakEvenKind::Finite) continue;
    for (double factor : {0.25, 0.9, 1.1, 4.0}) {
      double s = be.s_star * factor;
      double gap = t_auto_at(p, s) - t_spec_at(p, s);
      if (factor > 1.0) CHECK(gap > 0.0);
      if (factor < 1.0) CHECK(gap < 0.0);
    }
  }
}

TEST_CASE("t_spec monotone: decreasing in a, increasing in N_tree") {
  SdParams p = base_params();
  double base = t_spec(p);
  SdParams more_accepted = p;
  more_accepted.a = 5.0;
  CHECK(t_spec(more_accepted) < base);
  SdParams bigger_tree = p;
  bigger_tree.N_tree = 96.0;
  CHECK(t_spec(bigger_tree) > base);
}

TEST_CASE("decide_sd: huge bandwidth keeps the unpruned level") {
  SdParams p = base_params();
  std::vector<PruneLevel> levels = {{64.0, 4.0}, {25.6, 3.84}};
  SdDecision decision = decide_sd(p, 1e13, levels);
  REQUIRE(decision.enabled);
  CHECK(decision.level_index == 0);
}

TEST_CASE("decide_sd: below every break-even falls back to autoregressive") {
  SdParams p = base_params();
  std::vector<PruneLevel> levels = {{64.0, 4.0}, {25.6, 3.84}};
  SdDecision decision = decide_sd(p, 10.0, levels); // 10 bytes/s
  CHECK_FALSE(decision.enabled);
  CHECK(decision.level_index == -1);
}

TEST_CASE("decide_sd: the 60%-pruned level qualifies where unpruned does not") {
  SdParams p = base_params();
  PruneLevel unpruned{64.0, 4.0};
  PruneLevel pruned{0.4 * 64.0, 0.96 * 4.0};
  SdParams pruned_params = p;
  pruned_params.N_tree = pruned.n_tree;
  pruned_params.a = pruned.a;
  BreakEven full = break_even_bandwidth(p);
  BreakEven cut = break_even_bandwidth(pruned_params);
  REQUIRE(full.kind == BreakEvenKind::Finite);
  REQUIRE(cut.kind == BreakEvenKind::Finite);
  REQUIRE(cut.s_star < full.s_star);

  double s = 0.5 * (cut.s_star + full.s_star);
  SdDecision decision = decide_sd(p, s, {unpruned, pruned});
  REQUIRE(decision.enabled);
  CHECK(decision.level_index == 1);
  CHECK(decision.level.n_tree == pruned.n_tree);
}

TEST_CASE("decide_sd never enables a level that is not strictly faster") {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    SdParams p = random_params(rng);
    std::vector<PruneLevel> levels = {{p.N_tree, p.a}};
    double shrink = 0.3 + 0.5 * unit(rng);
    levels.push_back({p.N_tree * shrink, p.a * (0.9 + 0.1 * unit(rng))});
    double s = 1e3 * std::pow(10.0, unit(rng) * 7.0);
    SdDecision decision = decide_sd(p, s, levels);
    if (decision.enabled) {
      SdParams chosen = p;
      chosen.N_tree = decision.level.n_tree;
      chosen.a = decision.level.a;
      CHECK(t_spec_at(chosen, s) < t_auto_at(p, s));
    }
  }
}

TEST_CASE("decide_sd validates level ordering") {
  SdParams p = base_params();
  std::vector<PruneLevel> wrong = {{10.0, 2.0}, {64.0, 4.0}};
  CHECK_THROWS_AS(decide_sd(p, 1e6, wrong), ValidationError);
}

TEST_CASE("params JSON round-trips with MB units") {
  SdParams p = base_params();
  SdParams reloaded = sd_params_from_json(sd_params_to_json(p));
  CHECK(reloaded.D == doctest::Approx(p.D));
  CHECK(reloaded.S == doctest::Approx(p.S));
  CHECK(reloaded.N_tree == p.N_tree);
  CHECK(reloaded.n == p.n);
  CHECK(reloaded.B == p.B);
}
