#include <cmath>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "ssmvis/error.hpp"
#include "ssmvis/ssm.hpp"

using namespace ssmvis;
using namespace ssmvis::ssm;
using ssmvis::testing::check_gradients;
using ssmvis::testing::max_abs_diff;
using ssmvis::testing::random_tensor;

namespace {

TimeInvariantSSM scalar_model(double a_bar, double b_bar, double c, double d) {
  return {1, 1, {a_bar}, {b_bar}, {c}, {d}};
}

TimeInvariantSSM random_model(Rng& rng, std::size_t d_inner, std::size_t d_state) {
  TimeInvariantSSM m{d_inner, d_state, {}, {}, {}, {}};
  for (std::size_t i = 0; i < d_inner * d_state; ++i) {
    m.A_bar.push_back(rng.uniform(-0.95, 0.95));
    m.B_bar.push_back(rng.normal());
    m.C.push_back(rng.normal());
  }
  for (std::size_t c = 0; c < d_inner; ++c) m.D.push_back(rng.normal());
  return m;
}

struct ScanSetup {
  SSMParams params;
  SelectiveProjections proj;
  Tensor x;
};

ScanSetup random_scan(Rng& rng, std::size_t L, std::size_t d_inner, std::size_t d_state) {
  ScanSetup s{SSMParams::initial(d_inner, d_state, false), SelectiveProjections::initial(d_inner, d_state, rng, false),
              random_tensor({L, d_inner}, rng)};
  for (auto& a : s.params.A.mutable_data()) a *= rng.uniform(0.5, 1.5);
  for (auto& d : s.params.D.mutable_data()) d = rng.normal();
  for (auto& w : s.proj.W_delta.mutable_data()) w = rng.normal(0.0, 0.5);
  return s;
}

}  // namespace

TEST_CASE("discretize examples") {
  const std::vector<double> a{-1.0}, b{1.0}, dt{std::log(2.0)};
  CHECK(discretize(a, b, dt, 1).A_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
  const std::vector<double> b2{2.0}, half{0.5};
  CHECK(discretize(a, b2, half, 1).B_bar[0] == 1.0);
  const std::vector<double> tiny{1e-12};
  const auto limit = discretize(a, b2, tiny, 1);
  CHECK(limit.A_bar[0] == doctest::Approx(1.0).epsilon(1e-11));
  CHECK(limit.B_bar[0] == doctest::Approx(0.0).epsilon(1e-11));
  const std::vector<double> zero{0.0};
  CHECK_THROWS_AS(discretize(a, b, zero, 1), NumericError);
  const std::vector<double> positive_a{0.5};
  CHECK_THROWS_AS(discretize(positive_a, b, half, 1), NumericError);
}

TEST_CASE("discretize keeps A_bar inside the unit interval") {
  Rng rng{2};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::vector<double> a{-rng.uniform(1e-6, 50.0)}, b{rng.normal()}, dt{rng.uniform(1e-6, 10.0)};
    const double abar = discretize(a, b, dt, 1).A_bar[0];
    CHECK(abar < 1.0);
    CHECK(abar >= 0.0);
  }
}

TEST_CASE("ssm_recurrence examples") {
  const auto x = Tensor::from({4, 1}, {1, -2, 3, 0.5});
  const auto memoryless = ssm_recurrence(scalar_model(0, 1, 1, 0), x);
  CHECK(std::vector<double>(memoryless.data().begin(), memoryless.data().end()) ==
        std::vector<double>(x.data().begin(), x.data().end()));
  const auto acc = ssm_recurrence(scalar_model(1, 1, 1, 0), x);
  CHECK(std::vector<double>(acc.data().begin(), acc.data().end()) == std::vector<double>{1, -1, 2, 2.5});
  CHECK_THROWS_AS((void)ssm_recurrence(scalar_model(1, 1, 1, 0), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("s4_kernel examples") {
  const auto k = s4_kernel(scalar_model(0.5, 1, 1, 0), 3);
  CHECK(std::vector<double>(k.data().begin(), k.data().end()) == std::vector<double>{1, 0.5, 0.25});
  TimeInvariantSSM one_tap{1, 2, {0, 0}, {2, 3}, {0.5, -1}, {0}};
  const auto k2 = s4_kernel(one_tap, 4);
  CHECK(std::vector<double>(k2.data().begin(), k2.data().end()) == std::vector<double>{-2, 0, 0, 0});
  CHECK_THROWS_AS((void)s4_kernel(one_tap, 0), ShapeError);
}

TEST_CASE("conv_apply examples") {
  const std::vector<double> k{1, 0.5, 0.25};
  CHECK(conv_apply(k, std::vector<double>{1, 0, 0}, 0) == std::vector<double>{1, 0.5, 0.25});
  CHECK(conv_apply(k, std::vector<double>{1, 1, 1}, 0) == std::vector<double>{1, 1.5, 1.75});
  const std::vector<double> x{0.3, -2, 5};
  const auto with_d = conv_apply(k, x, 1.0);
  const auto without = conv_apply(k, x, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(with_d[i] - without[i] == doctest::Approx(x[i]).epsilon(1e-15));
  CHECK_THROWS_AS(conv_apply(k, std::vector<double>{1, 2}, 0), ShapeError);
}

TEST_CASE("kernel/recurrence duality on random models") {
  Rng rng{17};
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t d_inner = 1 + rng.below(3), d_state = 1 + rng.below(8), L = 1 + rng.below(128);
    const auto model = random_model(rng, d_inner, d_state);
    const auto x = random_tensor({L, d_inner}, rng);
    const auto y_rec = ssm_recurrence(model, x);
    const auto y_conv = conv_apply_channels(s4_kernel(model, L), x, model.D);
    CHECK(max_abs_diff(y_rec.data(), y_conv.data()) <= 1e-10);
  }
}

TEST_CASE("selective scan on zero input is zero") {
  Rng rng{1};
  const auto s = random_scan(rng, 9, 3, 4);
  const auto y = selective_scan(s.params, s.proj, Tensor::zeros({9, 3}));
  for (const double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("selective scan with constant steps equals the time-invariant recurrence") {
  Rng rng{23};
  const std::size_t L = 20, d = 3, n = 4;
  auto s = random_scan(rng, L, d, n);
  std::vector<double> b(n), c(n);
  for (auto& v : b) v = rng.normal();
  for (auto& v : c) v = rng.normal();
  const double delta = 0.37;
  std::vector<double> b_steps, c_steps, delta_steps(L, delta);
  for (std::size_t t = 0; t < L; ++t) {
    b_steps.insert(b_steps.end(), b.begin(), b.end());
    c_steps.insert(c_steps.end(), c.begin(), c.end());
  }
  const auto y_sel = scan_with_steps(s.params, s.x.data(), b_steps, c_steps, delta_steps);

  // Same system written out independently: A_bar = exp(delta A), B_bar = delta B.
  TimeInvariantSSM ti{d, n, {}, {}, {}, {s.params.D.data().begin(), s.params.D.data().end()}};
  for (std::size_t ch = 0; ch < d; ++ch) {
    for (std::size_t k = 0; k < n; ++k) {
      ti.A_bar.push_back(std::exp(delta * s.params.A[ch * n + k]));
      ti.B_bar.push_back(delta * b[k]);
      ti.C.push_back(c[k]);
    }
  }
  const auto y_ti = ssm_recurrence(ti, s.x);
  CHECK(max_abs_diff(y_sel, y_ti.data()) <= 1e-10);
}

TEST_CASE("selective scan gradients match finite differences") {
  Rng rng{31};
  auto s = random_scan(rng, 16, 2, 4);
  const auto weights = random_tensor({16, 2}, rng);
  const auto r = check_gradients(
      [&] { return sum(mul(selective_scan(s.params, s.proj, s.x), weights)); },
      {{"A", s.params.A},
       {"D", s.params.D},
       {"W_B", s.proj.W_B},
       {"W_C", s.proj.W_C},
       {"W_delta", s.proj.W_delta},
       {"delta_bias", s.proj.delta_bias},
       {"x", s.x}});
  INFO(r.worst);
  CHECK(r.max_rel_err <= 1e-4);

  // sum(y) exactly as stated, parallel form.
  const auto r2 = check_gradients([&] { return sum(parallel_selective_scan(s.params, s.proj, s.x)); },
                                  {{"A", s.params.A}, {"W_delta", s.proj.W_delta}, {"x", s.x}});
  INFO(r2.worst);
  CHECK(r2.max_rel_err <= 1e-4);
}

TEST_CASE("affine composition is associative on the documented triple") {
  const AffineStep p{0.5, 1}, q{0.2, 3}, r{0.1, 7};
  const auto left = compose(compose(p, q), r);
  const auto right = compose(p, compose(q, r));
  CHECK(left.decay == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(left.drive == doctest::Approx(3.2).epsilon(1e-15));
  CHECK(right.decay == doctest::Approx(left.decay).epsilon(1e-15));
  CHECK(right.drive == doctest::Approx(left.drive).epsilon(1e-15));
}

TEST_CASE("inclusive affine scan equals sequential composition") {
  Rng rng{5};
  for (std::size_t n : {1, 2, 3, 5, 8, 13, 64, 100}) {
    std::vector<AffineStep> steps(n);
    for (auto& s : steps) s = {rng.uniform(-1, 1), rng.normal()};
    std::vector<AffineStep> expect(n);
    AffineStep running{1.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) expect[i] = running = compose(steps[i], running);
    inclusive_affine_scan(steps);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(steps[i].decay == doctest::Approx(expect[i].decay).epsilon(1e-12));
      CHECK(steps[i].drive == doctest::Approx(expect[i].drive).epsilon(1e-12));
    }
  }
}

TEST_CASE("parallel and sequential selective scans agree") {
  Rng rng{41};
  for (std::size_t L : {1, 2, 3, 8, 33}) {
    const auto s = random_scan(rng, L, 3, 4);
    const auto seq = selective_scan(s.params, s.proj, s.x);
    const auto par = parallel_selective_scan(s.params, s.proj, s.x);
    CHECK(max_abs_diff(seq.data(), par.data()) <= 1e-10);
  }
}

TEST_CASE("selective scan stays finite on bounded long inputs") {
  Rng rng{77};
  auto s = random_scan(rng, 512, 4, 8);
  for (auto& v : s.x.mutable_data()) v = rng.uniform(-1.0, 1.0);
  const auto y = selective_scan(s.params, s.proj, s.x);
  for (const double v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("selective scan is causal") {
  Rng rng{13};
  const std::size_t L = 12, d = 2;
  auto s = random_scan(rng, L, d, 3);
  const auto base = selective_scan(s.params, s.proj, s.x);
  for (std::size_t t = 0; t < L; ++t) {
    auto perturbed = s.x.clone();
    perturbed.mutable_data()[t * d] += 0.5;
    const auto y = selective_scan(s.params, s.proj, perturbed);
    for (std::size_t u = 0; u < t; ++u) {
      for (std::size_t c = 0; c < d; ++c) CHECK(y[u * d + c] == base[u * d + c]);
    }
    CHECK(y[t * d] != base[t * d]);
  }
}

TEST_CASE("selective scan rejects bad shapes and non-negative A") {
  Rng rng{3};
  auto s = random_scan(rng, 4, 2, 3);
  CHECK_THROWS_AS((void)selective_scan(s.params, s.proj, Tensor::zeros({4, 3})), ShapeError);
  s.params.A.mutable_data()[0] = 0.0;
  CHECK_THROWS_AS((void)selective_scan(s.params, s.proj, s.x), NumericError);
}

TEST_CASE("transfer cost examples") {
  CHECK(transfer_cost(TransferMode::naive, 4, 2, 1).words_moved == 40);
  CHECK(transfer_cost(TransferMode::fused, 4, 2, 1).words_moved == 38);
  CHECK(transfer_cost(TransferMode::naive, 1, 1, 1).words_moved == 6);
  CHECK(transfer_cost(TransferMode::fused, 1, 1, 1).words_moved == 7);
  CHECK(transfer_cost(TransferMode::fused, 4, 2, 3).words_moved == 3 * 38);
  CHECK_THROWS_AS((void)parse_transfer_mode("tiled"), ShapeError);
  CHECK_THROWS_AS((void)transfer_cost(TransferMode::naive, 0, 1, 1), ShapeError);
}

TEST_CASE("transfer cost closed forms and ordering") {
  for (std::uint64_t n = 1; n <= 64; ++n) {
    for (std::uint64_t L = 1; L <= 256; ++L) {
      const auto naive = transfer_cost(TransferMode::naive, L, n, 1);
      const auto fused = transfer_cost(TransferMode::fused, L, n, 1);
      REQUIRE(naive.words_moved == L * (4 * n + 2));
      REQUIRE(fused.words_moved == n + L * (3 * n + 3));
      for (const auto& r : {naive, fused}) {
        REQUIRE(r.words_moved ==
                r.breakdown.state_traffic + r.breakdown.parameter_traffic + r.breakdown.io_traffic);
      }
      if (n >= 2 && L >= 4) REQUIRE(fused.words_moved < naive.words_moved);
      // With a single state the fused schedule pays one extra word for staging A.
      if (n == 1) REQUIRE(fused.words_moved == naive.words_moved + 1);
    }
  }
}
