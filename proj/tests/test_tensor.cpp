#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fsban/tensor.hpp"
#include "test_helpers.hpp"

using namespace fsban;
using fsban::testing::fd_max_rel_err;
using fsban::testing::random_tensor;
using fsban::testing::random_tensor_off_zero;

TEST_CASE("matmul against identity") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor c = matmul(a, id);
  for (std::size_t i = 0; i < 4; ++i) CHECK(c.at(i) == a.at(i));
}

TEST_CASE("pairwise_sq_dist hand case") {
  Tensor a = Tensor::matrix(1, 2, {0, 0});
  Tensor b = Tensor::matrix(1, 2, {3, 4});
  CHECK(pairwise_sq_dist(a, b).value() == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("relu clamps negatives") {
  Tensor x = Tensor::row({-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 2.0);
}

TEST_CASE("backward of sum is all ones") {
  RngStream rng(11, "t");
  Tensor x = random_tensor({3, 4}, rng);
  Tape tape;
  Tensor tx = tape.watch(x);
  Gradients g = tape.backward(sum(tx));
  for (double v : g.wrt(tx).data()) CHECK(v == 1.0);
}

TEST_CASE("backward of mean of squares") {
  Tensor x = Tensor::row({1, 2, 3});
  Tape tape;
  Tensor tx = tape.watch(x);
  Tensor loss = mean(mul_elementwise(tx, tx));
  Gradients g = tape.backward(loss);
  const Tensor& gx = g.wrt(tx);
  CHECK(gx.at(0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(gx.at(1) == doctest::Approx(4.0 / 3).epsilon(1e-12));
  CHECK(gx.at(2) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("forward evaluation is deterministic") {
  RngStream rng(3, "det");
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c1 = matmul(a, b);
  Tensor c2 = matmul(a, b);
  for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1.at(i) == c2.at(i));
}

TEST_CASE("backward scales linearly with the loss") {
  RngStream rng(5, "lin");
  Tensor x = random_tensor({6}, rng);
  auto grad_of = [&](double factor) {
    Tape tape;
    Tensor tx = tape.watch(x);
    Tensor loss = scale(sum(mul_elementwise(tx, tx)), factor);
    Gradients g = tape.backward(loss);
    return std::vector<double>(g.wrt(tx).data().begin(), g.wrt(tx).data().end());
  };
  const auto g1 = grad_of(1.0);
  const auto g3 = grad_of(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-12));
  }
}

TEST_CASE("gradients match finite differences for every op") {
  RngStream rng(101, "fd");
  const int kTrials = 8;  // each trial covers every op; the acceptance suite runs 100+

  for (int trial = 0; trial < kTrials; ++trial) {
    auto check = [&](const char* name, std::vector<Tensor> inputs,
                     const fsban::testing::LossFn& fn) {
      const double err = fd_max_rel_err(std::move(inputs), fn);
      INFO(name << " trial " << trial);
      CHECK(err < 1e-4);
    };

    check("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
          [](std::span<Tensor> in) { return sum(mul_elementwise(add(in[0], in[1]), in[0])); });
    check("add-scalar", {random_tensor({3, 4}, rng), random_tensor({}, rng)},
          [](std::span<Tensor> in) { return sum(mul_elementwise(add(in[0], in[1]), in[0])); });
    check("sub", {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)},
          [](std::span<Tensor> in) { return sum(mul_elementwise(sub(in[0], in[1]), in[1])); });
    check("mul_elementwise", {random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)},
          [](std::span<Tensor> in) { return mean(mul_elementwise(in[0], in[1])); });
    check("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = matmul(in[0], in[1]);
            return sum(mul_elementwise(c, c));
          });
    check("relu", {random_tensor_off_zero({4, 4}, rng)},
          [](std::span<Tensor> in) { return sum(mul_elementwise(relu(in[0]), in[0])); });
    check("exp", {random_tensor({3, 3}, rng, -1.5, 1.5)},
          [](std::span<Tensor> in) { return mean(fsban::exp(in[0])); });
    check("log", {random_tensor({3, 3}, rng, 0.1, 2.2)},
          [](std::span<Tensor> in) { return mean(mul_elementwise(fsban::log(in[0]), in[0])); });
    check("sum", {random_tensor({7}, rng)},
          [](std::span<Tensor> in) { return sum(mul_elementwise(in[0], in[0])); });
    check("mean", {random_tensor({7}, rng)},
          [](std::span<Tensor> in) { return mean(mul_elementwise(in[0], in[0])); });
    check("scale", {random_tensor({5}, rng)},
          [](std::span<Tensor> in) { return scale(sum(mul_elementwise(in[0], in[0])), -2.5); });
    check("concat-rows", {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = concat(in[0], in[1], 0);
            return sum(mul_elementwise(c, c));
          });
    check("concat-cols", {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = concat(in[0], in[1], 1);
            return sum(mul_elementwise(c, c));
          });
    check("softmax_rows", {random_tensor({3, 5}, rng)},
          [](std::span<Tensor> in) {
            Tensor p = softmax_rows(in[0], 2.5);
            return sum(mul_elementwise(p, in[0]));
          });
    check("pairwise_sq_dist", {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)},
          [](std::span<Tensor> in) { return mean(pairwise_sq_dist(in[0], in[1])); });
    check("cosine_similarity",
          {random_tensor_off_zero({3, 4}, rng, 0.3), random_tensor_off_zero({2, 4}, rng, 0.3)},
          [](std::span<Tensor> in) {
            Tensor c = cosine_similarity(in[0], in[1]);
            return sum(mul_elementwise(c, c));
          });
    check("add_bias", {random_tensor({4, 3}, rng), random_tensor({3}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = add_bias(in[0], in[1]);
            return sum(mul_elementwise(c, c));
          });
    check("mean_pool_rows", {random_tensor({6, 3}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = mean_pool_rows(in[0], 2);
            return sum(mul_elementwise(c, c));
          });
    check("sum_pool_cols", {random_tensor({3, 6}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = sum_pool_cols(in[0], 3);
            return sum(mul_elementwise(c, c));
          });
    check("repeat_rows", {random_tensor({3, 2}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = repeat_rows(in[0], 3);
            return sum(mul_elementwise(c, c));
          });
    check("tile_rows", {random_tensor({3, 2}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = tile_rows(in[0], 3);
            return sum(mul_elementwise(c, c));
          });
    check("reshape", {random_tensor({4, 3}, rng)},
          [](std::span<Tensor> in) {
            Tensor c = reshape(in[0], {2, 6});
            return sum(mul_elementwise(c, c));
          });
  }
}

TEST_CASE("op error paths") {
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(fsban::log(Tensor::row({1.0, 0.0})), std::invalid_argument);
  CHECK_THROWS_AS(fsban::log(Tensor::row({-1.0})), std::invalid_argument);
  CHECK_THROWS_AS(fsban::exp(Tensor::row({1000.0})), std::runtime_error);  // overflow -> non-finite
  CHECK_THROWS_AS(cosine_similarity(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {1, 1})),
                  std::runtime_error);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), std::runtime_error);
  CHECK_THROWS_AS(softmax_rows(a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_rows(a, -1.0), std::invalid_argument);
}

TEST_CASE("tape error paths") {
  RngStream rng(8, "tape");
  Tensor x = random_tensor({3}, rng);

  SUBCASE("non-scalar loss") {
    Tape tape;
    Tensor tx = tape.watch(x);
    Tensor y = mul_elementwise(tx, tx);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
  SUBCASE("detached loss") {
    Tape tape;
    Tensor plain = sum(x);  // x not watched: stays off the tape
    CHECK_THROWS_AS(tape.backward(plain), std::invalid_argument);
  }
  SUBCASE("tape consumed once") {
    Tape tape;
    Tensor tx = tape.watch(x);
    Tensor loss = sum(tx);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
  }
  SUBCASE("cross-tape input rejected") {
    Tensor stale;
    {
      Tape tape;
      stale = tape.watch(x);
    }
    Tape other;
    Tensor ty = other.watch(x);
    CHECK_THROWS_AS(add(stale, ty), std::runtime_error);
    CHECK_NOTHROW(add(stale.detached(), ty));
  }
}

TEST_CASE("teacher-style constants are not recorded") {
  RngStream rng(9, "const");
  Tensor x = random_tensor({2, 2}, rng);
  Tape tape;
  Tensor constant = matmul(x, x);  // computed under an active tape, but untracked
  CHECK_FALSE(constant.on_tape());
  Tensor tx = tape.watch(x);
  Tensor loss = sum(mul_elementwise(tx, constant));
  Gradients g = tape.backward(loss);
  // gradient w.r.t. tx is exactly the constant
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.wrt(tx).at(i) == constant.at(i));
}
