#include <cmath>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "ssmvis/error.hpp"
#include "ssmvis/tensor.hpp"

using namespace ssmvis;
using ssmvis::testing::check_gradients;
using ssmvis::testing::random_tensor;

namespace {
std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace

TEST_CASE("elementwise examples") {
  const auto a = Tensor::from({2}, {1, 2});
  const auto b = Tensor::from({2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});
  CHECK(softplus(Tensor::from({1}, {0.0})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(silu(Tensor::from({1}, {0.0})).item() == 0.0);
  CHECK(values(sub(b, a)) == std::vector<double>{2, 2});
  CHECK(values(mul(a, b)) == std::vector<double>{3, 8});
  CHECK(exp(Tensor::from({1}, {1.0})).item() == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
}

TEST_CASE("broadcast shape mismatch names both shapes") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({2});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("non-finite forward output is an error") {
  CHECK_THROWS_AS((void)exp(Tensor::from({1}, {1000.0})), NumericError);
  CHECK_THROWS_AS((void)mul(Tensor::from({1}, {1e200}), Tensor::from({1}, {1e200})), NumericError);
}

TEST_CASE("broadcast add/mul equals explicit tiling exactly") {
  Rng rng{11};
  const auto a = random_tensor({4, 3, 5}, rng);
  const auto row = random_tensor({5}, rng);
  const auto col = random_tensor({4, 1, 5}, rng);
  for (const auto& b : {row, col}) {
    // Tile b to the full shape by hand.
    std::vector<double> tiled(a.numel());
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t k = 0; k < 5; ++k) {
          tiled[(i * 3 + j) * 5 + k] = b.rank() == 1 ? b[k] : b[i * 5 + k];
        }
      }
    }
    const auto bt = Tensor::from({4, 3, 5}, tiled);
    CHECK(values(add(a, b)) == values(add(a, bt)));
    CHECK(values(mul(a, b)) == values(mul(a, bt)));
    CHECK(values(mul(b, a)) == values(mul(bt, a)));
  }
}

TEST_CASE("matmul examples and errors") {
  const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(eye, m)) == values(m));
  CHECK(matmul(Tensor::from({1, 2}, {1, 0}), Tensor::from({2, 1}, {2, 5})).item() == 2.0);
  CHECK_THROWS_AS((void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng{3};
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const auto w = random_tensor({3, 2}, rng);
  const auto r = check_gradients([&] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}});
  INFO(r.worst);
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("reduce examples") {
  CHECK(sum(Tensor::from({3}, {1, 2, 3})).item() == 6.0);
  CHECK(values(mean(Tensor::from({2, 2}, {1, 3, 5, 7}), 0)) == std::vector<double>{3, 5});
  CHECK(values(sum(Tensor::from({2, 2}, {1, 3, 5, 7}), 1)) == std::vector<double>{4, 12});
  CHECK_THROWS_AS((void)sum(Tensor::zeros({2, 2}), 2), ShapeError);

  auto x = Tensor::zeros({4}, true);
  backward(mean(x));
  for (const double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("softmax cross entropy examples") {
  const std::vector<int> three{0};
  CHECK(softmax_cross_entropy(Tensor::zeros({1, 3}), three).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  const std::vector<int> first{0};
  CHECK(softmax_cross_entropy(Tensor::from({1, 2}, {10, -10}), first).item() ==
        doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS((void)softmax_cross_entropy(Tensor::zeros({1, 3}), bad), ShapeError);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
  Rng rng{5};
  auto logits = random_tensor({4, 3}, rng, 2.0);
  const std::vector<int> labels{0, 2, 1, 2};
  const auto r = check_gradients([&] { return softmax_cross_entropy(logits, labels); }, {{"logits", logits}});
  INFO(r.worst);
  CHECK(r.max_rel_err <= 1e-5);
}

TEST_CASE("backward examples") {
  auto w = Tensor::from({3}, {0.5, -1, 2}, true);
  backward(sum(w));
  CHECK(w.grad() == std::vector<double>{1, 1, 1});

  auto v = Tensor::from({2}, {1, 2}, true);
  backward(sum(mul(v, v)));
  CHECK(v.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward errors") {
  auto w = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(w, w)), ShapeError);
  active_tape().clear();

  const auto loss = sum(mul(w, w));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), std::logic_error);

  Tensor no_tape;
  {
    NoGradGuard guard;
    no_tape = sum(w);
  }
  CHECK_THROWS_AS(backward(no_tape), std::logic_error);
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  Rng rng{21};
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto row = random_tensor({4}, rng);
  auto gain = random_tensor({4}, rng);
  const auto weights = random_tensor({3, 4}, rng);
  std::vector<std::ptrdiff_t> index{11, 0, -1, 5, 5, 2};

  struct Case {
    const char* name;
    std::function<Tensor()> fn;
    ssmvis::testing::NamedTensors params;
  };
  const std::vector<Case> cases{
      {"add-broadcast", [&] { return sum(mul(add(a, row), weights)); }, {{"a", a}, {"row", row}}},
      {"sub", [&] { return sum(mul(sub(a, b), weights)); }, {{"a", a}, {"b", b}}},
      {"mul-broadcast", [&] { return sum(mul(mul(a, row), weights)); }, {{"a", a}, {"row", row}}},
      {"exp", [&] { return sum(mul(exp(scale(a, 0.5)), weights)); }, {{"a", a}}},
      {"silu", [&] { return sum(mul(silu(a), weights)); }, {{"a", a}}},
      {"softplus", [&] { return sum(mul(softplus(a), weights)); }, {{"a", a}}},
      {"transpose", [&] { return sum(mul(transpose(transpose(a)), weights)); }, {{"a", a}}},
      {"reshape", [&] { return sum(mul(reshape(reshape(a, {12}), {3, 4}), weights)); }, {{"a", a}}},
      {"gather", [&] { return sum(mul(gather(a, index, {2, 3}), reshape(gather(weights, index, {6}), {2, 3}))); },
       {{"a", a}}},
      {"mean-axis", [&] { return sum(mul(mean(a, 0), row)); }, {{"a", a}}},
      {"softmax", [&] { return sum(mul(softmax(a), weights)); }, {{"a", a}}},
      {"rms_norm", [&] { return sum(mul(rms_norm(a, gain), weights)); }, {{"a", a}, {"gain", gain}}},
      {"stack", [&] {
         const std::vector<Tensor> parts{a, b};
         return sum(mul(stack(parts), stack(std::vector<Tensor>{weights, weights})));
       },
       {{"a", a}, {"b", b}}},
  };
  for (const auto& c : cases) {
    const auto r = check_gradients(c.fn, c.params);
    INFO(c.name << ": " << r.worst);
    CHECK(r.max_rel_err <= 1e-4);
  }
}

TEST_CASE("backward is deterministic") {
  Rng rng{8};
  auto a = random_tensor({5, 6}, rng, 1.0, true);
  auto b = random_tensor({6, 3}, rng, 1.0, true);
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    backward(sum(softmax(silu(matmul(a, b)))));
    return std::make_pair(a.grad(), b.grad());
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("tape entries are topologically ordered and freed after backward") {
  auto w = Tensor::from({2}, {1, 2}, true);
  active_tape().clear();
  const auto loss = sum(exp(mul(w, w)));
  const auto& entries = active_tape().entries();
  REQUIRE(entries.size() == 3);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    for (const auto& in : entries[k].inputs) {
      bool produced_earlier = false;
      for (std::size_t j = 0; j < k; ++j) produced_earlier |= entries[j].output == in;
      CHECK((produced_earlier || in == w.impl()));
    }
  }
  backward(loss);
  CHECK(active_tape().size() == 0);
}

TEST_CASE("ops on non-grad inputs are not recorded") {
  active_tape().clear();
  (void)matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
  CHECK(active_tape().size() == 0);
}
