#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fsban/losses.hpp"
#include "test_helpers.hpp"

using namespace fsban;
using fsban::testing::fd_max_rel_err;
using fsban::testing::random_tensor;

namespace {

Tensor random_probs(std::size_t rows, std::size_t cols, RngStream& rng) {
  return softened_softmax(random_tensor({rows, cols}, rng), 1.0);
}

}  // namespace

TEST_CASE("meta temperature is positive and monotone") {
  MetaTemperature t4 = MetaTemperature::from_tau(4.0);
  CHECK(t4.tau() == doctest::Approx(4.0).epsilon(1e-12));
  double prev = 0.0;
  for (double rho = -30.0; rho <= 30.0; rho += 0.5) {
    const double tau = MetaTemperature{rho}.tau();
    CHECK(tau > 0.0);
    CHECK(tau > prev);
    prev = tau;
  }
  CHECK_THROWS_AS(MetaTemperature::from_tau(0.0), std::invalid_argument);
}

TEST_CASE("softened softmax hand values") {
  Tensor z = Tensor::row({0, 0, 0});
  Tensor p = softened_softmax(z, 2.0);
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor p2 = softened_softmax(Tensor::row({1, 2, 3}), 1.0);
  CHECK(p2.at(0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(p2.at(1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(p2.at(2) == doctest::Approx(0.66524).epsilon(1e-4));

  Tensor p3 = softened_softmax(Tensor::row({1, 2, 3}), 1000.0);
  for (double v : p3.data()) CHECK(std::abs(v - 1.0 / 3) < 1e-3);

  CHECK_THROWS_AS(softened_softmax(z, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softened_softmax(z, -2.0), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  RngStream rng(41, "rows");
  for (int trial = 0; trial < 200; ++trial) {
    const double tau = 0.25 + rng.next_double() * 8.0;
    Tensor p = softened_softmax(random_tensor({4, 6}, rng, -30, 30), tau);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax argmax is temperature invariant") {
  RngStream rng(43, "argmax");
  for (int trial = 0; trial < 500; ++trial) {
    Tensor z = random_tensor({1, 7}, rng, -5, 5);
    const double tau = 0.05 + rng.next_double() * 20.0;
    Tensor p = softened_softmax(z, tau);
    std::size_t az = 0, ap = 0;
    for (std::size_t j = 1; j < 7; ++j) {
      if (z.at(0, j) > z.at(0, az)) az = j;
      if (p.at(0, j) > p.at(0, ap)) ap = j;
    }
    CHECK(az == ap);
  }
}

TEST_CASE("cross entropy hand values") {
  Tensor delta = Tensor::matrix(1, 3, {0, 1, 0});
  CHECK(cross_entropy(delta, delta).value() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor uniform5 = Tensor::matrix(1, 5, {0.2, 0.2, 0.2, 0.2, 0.2});
  Tensor t0 = Tensor::matrix(1, 5, {1, 0, 0, 0, 0});
  CHECK(cross_entropy(uniform5, t0).value() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Tensor p = Tensor::matrix(1, 3, {0.5, 0.25, 0.25});
  Tensor t = Tensor::matrix(1, 3, {1, 0, 0});
  CHECK(cross_entropy(p, t).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor two_rows = Tensor::matrix(2, 3, {0.5, 0.25, 0.25, 0.25, 0.5, 0.25});
  Tensor tt = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK(cross_entropy(two_rows, tt).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(p, Tensor::matrix(1, 3, {1, 1, 0})), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(p, Tensor::matrix(2, 3, {1, 0, 0, 1, 0, 0})),
                  std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(Tensor::matrix(1, 3, {0.5, 0.2, 0.2}), t), std::invalid_argument);
}

TEST_CASE("js divergence hand values and properties") {
  Tensor p = Tensor::matrix(1, 2, {1, 0});
  Tensor q = Tensor::matrix(1, 2, {0, 1});
  CHECK(js_divergence(p, p).value() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(js_divergence(p, q).value() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  RngStream rng(47, "js");
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor a = random_probs(2, 5, rng);
    Tensor b = random_probs(2, 5, rng);
    const double ab = js_divergence(a, b).value();
    const double ba = js_divergence(b, a).value();
    CHECK(ab >= 0.0);
    CHECK(ab <= std::log(2.0) + 1e-12);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  }
  CHECK_THROWS_AS(js_divergence(p, Tensor::matrix(1, 2, {0.4, 0.4})), std::invalid_argument);
  CHECK_THROWS_AS(js_divergence(p, Tensor::matrix(1, 3, {0.4, 0.3, 0.3})), std::invalid_argument);
}

TEST_CASE("ban loss composes its parts") {
  RngStream rng(53, "ban");
  LossWeights w;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s = random_probs(3, 5, rng);
    Tensor t = random_probs(3, 5, rng);
    std::vector<int> labels = {0, 3, 2};
    Tensor y = one_hot(labels, 5);
    const double tau = 0.5 + rng.next_double() * 6.0;
    const double expect = w.lambda1 * cross_entropy(s, y).value() +
                          w.lambda2 * tau * tau * js_divergence(s, t).value();
    CHECK(ban_loss(s, t, y, w, tau).value() == doctest::Approx(expect).epsilon(1e-12));
  }

  // perfect student and teacher: both terms vanish
  Tensor onehot = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK(ban_loss(onehot, onehot, onehot, w, 4.0).value() == doctest::Approx(0.0).epsilon(1e-9));

  // lambda2 = 0 reduces exactly to lambda1 * CE
  LossWeights w0 = w;
  w0.lambda2 = 0.0;
  RngStream rng2(54, "ban0");
  Tensor s = random_probs(2, 4, rng2);
  Tensor t = random_probs(2, 4, rng2);
  std::vector<int> labels = {1, 2};
  Tensor y = one_hot(labels, 4);
  CHECK(ban_loss(s, t, y, w0, 4.0).value() ==
        doctest::Approx(w0.lambda1 * cross_entropy(s, y).value()).epsilon(1e-12));

  // the arithmetic of the formula: CE = 1, JS = 0.01, tau = 4 -> 1.128
  CHECK(1.0 * 1.0 + 0.8 * 16.0 * 0.01 == doctest::Approx(1.128).epsilon(1e-12));
}

TEST_CASE("ban loss is monotone in the divergence") {
  RngStream rng(59, "mono");
  LossWeights w;
  Tensor s = random_probs(1, 5, rng);
  std::vector<int> labels = {0};
  Tensor y = one_hot(labels, 5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t1 = random_probs(1, 5, rng);
    Tensor t2 = random_probs(1, 5, rng);
    const double js1 = js_divergence(s, t1).value();
    const double js2 = js_divergence(s, t2).value();
    if (js1 == js2) continue;
    const double l1 = ban_loss(s, t1, y, w, 2.0).value();
    const double l2 = ban_loss(s, t2, y, w, 2.0).value();
    CHECK((js1 < js2) == (l1 < l2));
  }
}

TEST_CASE("mr loss targets the teacher only") {
  RngStream rng(61, "mr");
  LossWeights w;
  Tensor s_logits = random_tensor({2, 4}, rng);
  Tensor t_logits = random_tensor({2, 4}, rng);

  Tape tape;
  Tensor ws = tape.watch(s_logits);
  Tensor wt = tape.watch(t_logits);
  Tensor sp = softened_softmax(ws, 3.0);
  Tensor tp = softened_softmax(wt, 3.0);
  Tensor loss = mr_loss(sp, tp, w, 3.0);
  const double expect = w.lambda2 * 9.0 * js_divergence(sp.detached(), tp.detached()).value();
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));

  Gradients g = tape.backward(loss);
  bool teacher_has_grad = false;
  for (double v : g.wrt(wt).data()) {
    if (v != 0.0) teacher_has_grad = true;
  }
  CHECK(teacher_has_grad);
  for (double v : g.wrt(ws).data()) CHECK(v == 0.0);

  // identical distributions: zero loss, and linear scaling in lambda2
  CHECK(mr_loss(sp.detached(), sp.detached(), w, 3.0).value() ==
        doctest::Approx(0.0).epsilon(1e-12));
  LossWeights w2 = w;
  w2.lambda2 = 2.0 * w.lambda2;
  CHECK(mr_loss(sp.detached(), tp.detached(), w2, 3.0).value() ==
        doctest::Approx(2.0 * expect).epsilon(1e-12));
}

TEST_CASE("distillation at the fixed point has zero gradient") {
  // student == teacher: the JS term's gradient through the student vanishes
  RngStream rng(62, "fix");
  Tensor logits = random_tensor({2, 5}, rng);
  Tape tape;
  Tensor wl = tape.watch(logits);
  Tensor sp = softened_softmax(wl, 2.0);
  Tensor tp = softened_softmax(logits, 2.0);  // identical values, off-tape
  Tensor loss = js_divergence(sp, tp);
  Gradients g = tape.backward(loss);
  for (double v : g.wrt(wl).data()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("mm loss composes its parts") {
  RngStream rng(67, "mm");
  LossWeights w;
  Tensor s = random_probs(3, 5, rng);
  Tensor t = random_probs(3, 5, rng);
  std::vector<int> labels = {4, 0, 1};
  Tensor y = one_hot(labels, 5);
  const double tau = 4.0;
  const double expect = w.lambda1 * cross_entropy(s, y).value() +
                        w.lambda3 * tau * tau * js_divergence(s, t).value();
  CHECK(mm_loss(s, t, y, w, tau).value() == doctest::Approx(expect).epsilon(1e-12));

  LossWeights w0 = w;
  w0.lambda3 = 0.0;
  CHECK(mm_loss(s, t, y, w0, tau).value() ==
        doctest::Approx(w0.lambda1 * cross_entropy(s, y).value()).epsilon(1e-12));

  Tensor onehot = Tensor::matrix(1, 3, {0, 0, 1});
  CHECK(mm_loss(onehot, onehot, onehot, w, tau).value() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
  RngStream rng(71, "fd");
  LossWeights w;
  const int kTrials = 10;  // acceptance runs 100+
  for (int trial = 0; trial < kTrials; ++trial) {
    std::vector<int> labels = {static_cast<int>(rng.next_below(5)),
                               static_cast<int>(rng.next_below(5)),
                               static_cast<int>(rng.next_below(5))};
    Tensor y = one_hot(labels, 5);
    const double tau = 0.5 + rng.next_double() * 5.0;

    auto check = [&](const char* name, std::vector<Tensor> inputs,
                     const fsban::testing::LossFn& fn) {
      INFO(name << " trial " << trial);
      CHECK(fd_max_rel_err(std::move(inputs), fn) < 1e-4);
    };

    check("cross_entropy", {random_tensor({3, 5}, rng)}, [&](std::span<Tensor> in) {
      return cross_entropy(softened_softmax(in[0], tau), y);
    });
    check("js_divergence", {random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)},
          [&](std::span<Tensor> in) {
            return js_divergence(softened_softmax(in[0], tau), softened_softmax(in[1], tau));
          });
    // the non-differentiated side stays fixed across the finite-difference
    // evaluations, captured by value
    const Tensor other = softened_softmax(random_tensor({3, 5}, rng), tau);
    check("ban_loss(student)", {random_tensor({3, 5}, rng)},
          [&, other](std::span<Tensor> in) {
            return ban_loss(softened_softmax(in[0], tau), other, y, w, tau);
          });
    check("mr_loss(teacher)", {random_tensor({3, 5}, rng)},
          [&, other](std::span<Tensor> in) {
            return mr_loss(other, softened_softmax(in[0], tau), w, tau);
          });
    check("mm_loss(student)", {random_tensor({3, 5}, rng)},
          [&, other](std::span<Tensor> in) {
            return mm_loss(softened_softmax(in[0], tau), other, y, w, tau);
          });
  }
}

TEST_CASE("mct meta loss equals evaluation-temperature cross entropy") {
  UniverseConfig ucfg;
  ucfg.seed = 3;
  ucfg.n_domains = 2;
  ucfg.classes_per_domain = 10;
  ucfg.dim = 8;
  Universe u = generate_universe(ucfg);
  ModelConfig mcfg;
  mcfg.input_dim = 8;
  mcfg.hidden_width = 10;
  mcfg.feature_dim = 6;
  RngStream rng(73, "mct");
  ModelParams m = init_model(mcfg, rng);
  RngStream er(8, "ep");
  Episode ep = sample_episode(u, 1, Split::Base, 4, 2, 3, er);

  Tensor logits = head_logits(m, ep);
  Tensor targets = one_hot(ep.query_y, 4);
  const double expect = cross_entropy(softened_softmax(logits, 1.0), targets).value();
  CHECK(mct_meta_loss(m, ep) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("mct meta loss vanishes for a near-perfect student") {
  // zero noise and huge prototype separation make the nearest-centroid
  // prediction essentially one-hot
  UniverseConfig ucfg;
  ucfg.seed = 11;
  ucfg.n_domains = 2;
  ucfg.classes_per_domain = 8;
  ucfg.dim = 6;
  ucfg.noise_min = ucfg.noise_max = 0.0;
  ucfg.warp_min = ucfg.warp_max = 0.0;
  ucfg.proto_scale = 40.0;
  Universe u = generate_universe(ucfg);

  ModelConfig mcfg;
  mcfg.input_dim = 6;
  mcfg.hidden_layers = 0;  // affine encoder keeps classes apart
  mcfg.feature_dim = 6;
  RngStream rng(79, "perfect");
  ModelParams m = init_model(mcfg, rng);
  RngStream er(9, "ep");
  Episode ep = sample_episode(u, 0, Split::Base, 3, 1, 2, er);
  CHECK(mct_meta_loss(m, ep) < 1e-4);
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.lambda1 = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w.lambda1 = 1.0;
  w.lambda3 = -0.1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
