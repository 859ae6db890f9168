#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "kad/distill.hpp"
#include "kad/models.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using kad::AffinityMatrix;
using kad::Mode;
using kad::Network;
using kad::Rng;
using kad::Tensor;
using testutil::random_tensor;

TEST_CASE("affinity_matrix: hand-checked 2-position cases") {
  // c=1, values 3 and 4 both normalize to 1
  Tensor f = Tensor::from({1, 1, 1, 2}, {3.0f, 4.0f});
  AffinityMatrix a = affinity_matrix(f);
  REQUIRE(a.matrix.shape() == kad::Shape{2, 2});
  for (int i = 0; i < 4; ++i)
    CHECK(a.matrix.data()[i] == doctest::Approx(0.5).epsilon(1e-5));

  // orthogonal channel vectors [1,0] and [0,1]
  Tensor g = Tensor::from({1, 2, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  AffinityMatrix b = affinity_matrix(g);
  CHECK(b.matrix.data()[0] == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(b.matrix.data()[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(b.matrix.data()[2] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(b.matrix.data()[3] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("affinity_matrix: symmetry, diagonal and entry bounds") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor f = random_tensor({1, 8, 3, 3}, rng, -1.0f, 1.0f);
    AffinityMatrix a = affinity_matrix(f);
    const int m = 9;
    for (int i = 0; i < m; ++i) {
      CHECK(a.matrix.data()[i * m + i] ==
            doctest::Approx(1.0 / m).epsilon(1e-6));
      for (int j = 0; j < m; ++j) {
        CHECK(std::fabs(a.matrix.data()[i * m + j] -
                        a.matrix.data()[j * m + i]) <= 1e-5f);
        CHECK(std::fabs(a.matrix.data()[i * m + j]) <= 1.0f / m + 1e-6f);
      }
    }
    // matches the straight-line oracle
    auto ref = oracle::affinity(f);
    for (int i = 0; i < m * m; ++i)
      CHECK(a.matrix.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)])
                                      .epsilon(1e-5));
  }
}

TEST_CASE("affinity_matrix: positive scale invariance") {
  Rng rng(11);
  Tensor f = random_tensor({1, 4, 3, 3}, rng, -1.0f, 1.0f);
  Tensor f2 = Tensor::zeros(f.shape());
  for (int64_t i = 0; i < f.numel(); ++i) f2.data()[i] = 1.7f * f.data()[i];
  AffinityMatrix a = affinity_matrix(f);
  AffinityMatrix b = affinity_matrix(f2);
  for (int64_t i = 0; i < a.matrix.numel(); ++i)
    CHECK(std::fabs(a.matrix.data()[i] - b.matrix.data()[i]) <= 1e-5f);
}

TEST_CASE("affinity_matrix: permutation equivariance") {
  Rng rng(13);
  Tensor f = random_tensor({1, 4, 2, 3}, rng, -1.0f, 1.0f);
  const int m = 6, c = 4;
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  // permute spatial positions: position p of g reads position perm[p] of f
  Tensor g = Tensor::zeros(f.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < m; ++p)
      g.data()[ci * m + p] = f.data()[ci * m + perm[static_cast<size_t>(p)]];
  AffinityMatrix af = affinity_matrix(f);
  AffinityMatrix ag = affinity_matrix(g);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      CHECK(ag.matrix.data()[i * m + j] ==
            doctest::Approx(
                af.matrix.data()[perm[static_cast<size_t>(i)] * m +
                                 perm[static_cast<size_t>(j)]])
                .epsilon(1e-6));
}

TEST_CASE("reconstruction_loss: zero features through a zero-bias AE") {
  auto ae = kad::build_translator(4, 3);
  Tensor zero = Tensor::zeros({1, 4, 4, 4});
  CHECK(kad::reconstruction_loss(zero, ae.encoder, ae.decoder, 1e-7f, Mode::Eval)
            .item() == doctest::Approx(0.0));
}

TEST_CASE("reconstruction_loss: matches straight-line recomputation") {
  Rng rng(17);
  auto ae = kad::build_translator(4, 5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor phi = random_tensor({1, 4, 4, 4}, rng, -1.0f, 1.0f);
    const float alpha = 1e-7f;
    const float got =
        kad::reconstruction_loss(phi, ae.encoder, ae.decoder, alpha, Mode::Eval)
            .item();
    Tensor code = kad::forward(ae.encoder, phi, Mode::Eval);
    Tensor recon = kad::forward(ae.decoder, code, Mode::Eval);
    const double expect =
        oracle::mse(phi, recon) + alpha * oracle::mean_abs(code);
    CHECK(got == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("reconstruction_loss: gradients reach the translator parameters") {
  auto ae = kad::build_translator(3, 9);
  kad::set_requires_grad(ae.encoder, true);
  kad::set_requires_grad(ae.decoder, true);
  Rng rng(19);
  Tensor phi = random_tensor({1, 3, 4, 4}, rng, -1.0f, 1.0f);
  // check one conv weight on each side of the bottleneck
  Tensor enc_w = ae.encoder.layers[0].weight;
  Tensor dec_w = ae.decoder.layers[6].weight;
  auto rep = gradcheck::check(
      [&] {
        return kad::reconstruction_loss(phi, ae.encoder, ae.decoder, 0.01f,
                                        Mode::Train);
      },
      {enc_w, dec_w}, 1e-2, 1e-2, 2e-3);
  CHECK_MESSAGE(rep.ok, rep.where, " diff=", rep.worst_abs, " allowed=",
                rep.worst_allowed);
}

TEST_CASE("normalized_feature_distance: zero iff directions coincide") {
  Rng rng(23);
  Tensor u = random_tensor({1, 4, 2, 2}, rng, 0.1f, 1.0f);
  CHECK(kad::normalized_feature_distance(u, u, 2).item() ==
        doctest::Approx(0.0));
  // scaling either side changes nothing (directions equal)
  Tensor u2 = Tensor::zeros(u.shape());
  for (int64_t i = 0; i < u.numel(); ++i) u2.data()[i] = 3.0f * u.data()[i];
  CHECK(kad::normalized_feature_distance(u, u2, 2).item() ==
        doctest::Approx(0.0).epsilon(1e-9));
  Tensor v = random_tensor({1, 4, 2, 2}, rng, 0.1f, 1.0f);
  CHECK(kad::normalized_feature_distance(u, v, 2).item() > 0.0f);
}

TEST_CASE("normalized_feature_distance: orthogonal unit vectors give 2") {
  // two positions, channel vectors [1,0] vs [0,1] at both
  Tensor u = Tensor::from({1, 2, 1, 2}, {1.0f, 1.0f, 0.0f, 0.0f});
  Tensor v = Tensor::from({1, 2, 1, 2}, {0.0f, 0.0f, 1.0f, 1.0f});
  CHECK(kad::normalized_feature_distance(u, v, 2).item() ==
        doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("normalized_feature_distance: matches the oracle, p in {1,2}") {
  Rng rng(29);
  for (int p : {1, 2})
    for (int trial = 0; trial < 10; ++trial) {
      Tensor u = random_tensor({2, 5, 3, 3}, rng, -1.0f, 1.0f);
      Tensor v = random_tensor({2, 5, 3, 3}, rng, -1.0f, 1.0f);
      CHECK(kad::normalized_feature_distance(u, v, p).item() ==
            doctest::Approx(oracle::adaptation(u, v, p)).epsilon(1e-5));
    }
}

TEST_CASE("adaptation_loss: gradient w.r.t. student features") {
  Network adapter = kad::build_adapter("adapter_f", 3, 4, 1, 31);
  kad::set_requires_grad(adapter, true);
  auto ae = kad::build_translator(4, 33);
  Rng rng(37);
  Tensor phi_s = random_tensor({1, 3, 2, 2}, rng, -1.0f, 1.0f, true);
  Tensor phi_t = random_tensor({1, 4, 4, 4}, rng, 0.0f, 1.0f);
  auto rep = gradcheck::check(
      [&] {
        return kad::adaptation_loss(phi_s, phi_t, adapter, ae.encoder, 2, 2,
                                    Mode::Train);
      },
      {phi_s, adapter.layers[0].weight});
  CHECK_MESSAGE(rep.ok, rep.where, " diff=", rep.worst_abs);
}

TEST_CASE("affinity_pair_loss: trivial and hand-computed values") {
  Rng rng(41);
  Tensor u = random_tensor({2, 4, 2, 2}, rng, -1.0f, 1.0f);
  CHECK(kad::affinity_pair_loss(u, u).item() == doctest::Approx(0.0));

  // uniform student (identical positions) vs orthogonal teacher clusters
  Tensor su = Tensor::from({1, 2, 1, 2}, {1.0f, 1.0f, 0.0f, 0.0f});
  Tensor tu = Tensor::from({1, 2, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  CHECK(kad::affinity_pair_loss(su, tu).item() ==
        doctest::Approx(0.125).epsilon(1e-5));

  Tensor bad = random_tensor({2, 4, 3, 3}, rng);
  CHECK_THROWS_AS(kad::affinity_pair_loss(u, bad), kad::ShapeError);
}

TEST_CASE("affinity_pair_loss: matches the oracle on random batches") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({2, 6, 3, 3}, rng, -1.0f, 1.0f);
    Tensor b = random_tensor({2, 6, 3, 3}, rng, -1.0f, 1.0f);
    CHECK(kad::affinity_pair_loss(a, b).item() ==
          doctest::Approx(oracle::affinity_loss(a, b)).epsilon(1e-5));
  }
}

TEST_CASE("affinity_loss: gradient w.r.t. student features") {
  Network adapter = kad::build_adapter("adapter_a", 3, 4, 1, 47);
  kad::set_requires_grad(adapter, true);
  auto ae = kad::build_translator(4, 53);
  Rng rng(59);
  Tensor phi_s = random_tensor({1, 3, 2, 2}, rng, -1.0f, 1.0f, true);
  Tensor phi_t = random_tensor({1, 4, 4, 4}, rng, 0.0f, 1.0f);
  auto rep = gradcheck::check(
      [&] {
        return kad::affinity_loss(phi_s, phi_t, adapter, ae.encoder, Mode::Train);
      },
      {phi_s});
  CHECK_MESSAGE(rep.ok, rep.where, " diff=", rep.worst_abs);
}

TEST_CASE("kd_soft_loss: upsamples the student side when grids differ") {
  Rng rng(61);
  Tensor t = random_tensor({1, 3, 4, 4}, rng, -1.0f, 1.0f);
  Tensor s = random_tensor({1, 3, 2, 2}, rng, -1.0f, 1.0f);
  CHECK(kad::kd_soft_loss(s, t, 2.0f).item() >= 0.0f);
  CHECK(kad::kd_soft_loss(t, t, 8.0f).item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("fitnet_loss: identity projection on equal features is zero") {
  const int c = 3;
  kad::Rng rng(67);
  kad::Layer proj;
  proj.kind = kad::LayerKind::Conv;
  proj.name = "proj";
  proj.spec.in_channels = c;
  proj.spec.out_channels = c;
  proj.weight = Tensor::zeros({c, c, 1, 1});
  for (int i = 0; i < c; ++i) proj.weight.data()[i * c + i] = 1.0f;
  proj.bias = Tensor::zeros({c});
  Tensor phi = random_tensor({1, c, 4, 4}, rng, -1.0f, 1.0f);
  CHECK(kad::fitnet_loss(phi, phi, proj).item() == doctest::Approx(0.0));

  // zero student features and zero bias leave mean(phi_t^2)
  Tensor zeros = Tensor::zeros({1, c, 2, 2});
  double expect = 0.0;
  for (int64_t i = 0; i < phi.numel(); ++i)
    expect += static_cast<double>(phi.data()[i]) * phi.data()[i];
  expect /= static_cast<double>(phi.numel());
  CHECK(kad::fitnet_loss(zeros, phi, proj).item() ==
        doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("fitnet_loss: matches an independent interpolation+projection") {
  Rng rng(71);
  kad::Layer proj;
  proj.kind = kad::LayerKind::Conv;
  proj.name = "proj";
  proj.spec.in_channels = 2;
  proj.spec.out_channels = 3;
  proj.weight = random_tensor({3, 2, 1, 1}, rng);
  proj.bias = random_tensor({3}, rng);
  Tensor phi_s = random_tensor({1, 2, 2, 2}, rng, -1.0f, 1.0f);
  Tensor phi_t = random_tensor({1, 3, 4, 4}, rng, -1.0f, 1.0f);
  const float got = kad::fitnet_loss(phi_s, phi_t, proj).item();

  double acc = 0.0;
  for (int co = 0; co < 3; ++co)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double v = proj.bias.data()[co];
        for (int ci = 0; ci < 2; ++ci)
          v += proj.weight.data()[co * 2 + ci] *
               oracle::bilinear_at(phi_s, 0, ci, 4, 4, y, x, false);
        const double d = v - phi_t.data()[(co * 4 + y) * 4 + x];
        acc += d * d;
      }
  CHECK(got == doctest::Approx(acc / 48.0).epsilon(1e-5));
}

TEST_CASE("fitnet_loss: gradients through upsample and projection") {
  Rng rng(73);
  kad::Layer proj;
  proj.kind = kad::LayerKind::Conv;
  proj.name = "proj";
  proj.spec.in_channels = 2;
  proj.spec.out_channels = 3;
  proj.weight = random_tensor({3, 2, 1, 1}, rng, -1.0f, 1.0f, true);
  proj.bias = random_tensor({3}, rng, -1.0f, 1.0f, true);
  Tensor phi_s = random_tensor({1, 2, 2, 2}, rng, -1.0f, 1.0f, true);
  Tensor phi_t = random_tensor({1, 3, 4, 4}, rng, -1.0f, 1.0f);
  auto rep = gradcheck::check(
      [&] { return kad::fitnet_loss(phi_s, phi_t, proj); },
      {phi_s, proj.weight, proj.bias});
  CHECK_MESSAGE(rep.ok, rep.where, " diff=", rep.worst_abs);
}

TEST_CASE("total_student_loss: weighted sum with the reference weights") {
  kad::DistillWeights w;  // beta 50, gamma 1
  Tensor total = kad::total_student_loss(Tensor::scalar(1.0f),
                                         Tensor::scalar(0.02f),
                                         Tensor::scalar(0.004f), w);
  CHECK(total.item() == doctest::Approx(2.004f).epsilon(1e-6));

  kad::DistillWeights off;
  off.beta = 0.0f;
  off.gamma = 0.0f;
  CHECK(kad::total_student_loss(Tensor::scalar(0.7f), Tensor::scalar(9.0f),
                                Tensor::scalar(9.0f), off)
            .item() == doctest::Approx(0.7f));

  Tensor nan = Tensor::scalar(std::nanf(""));
  CHECK_THROWS_WITH_AS(
      kad::total_student_loss(Tensor::scalar(1.0f), nan, Tensor::scalar(0.0f), w),
      doctest::Contains("adapt"), kad::NumericError);
}

TEST_CASE("total_student_loss: gradient is the weighted component sum") {
  Rng rng(79);
  Tensor x = random_tensor({1, 3, 2, 2}, rng, -1.0f, 1.0f, true);
  kad::DistillWeights w;
  w.beta = 5.0f;
  w.gamma = 0.5f;

  auto grad_of = [&](const std::function<Tensor()>& f) {
    kad::Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    Tensor g = x.grad().clone();
    x.drop_grad();
    return g;
  };

  Tensor g_ce = grad_of([&] { return kad::mean(kad::mul(x, x)); });
  Tensor g_ad = grad_of([&] { return kad::mean(kad::abs(x)); });
  Tensor g_af = grad_of([&] { return kad::sum(kad::mul(x, kad::mul(x, x))); });
  Tensor g_total = grad_of([&] {
    return kad::total_student_loss(kad::mean(kad::mul(x, x)),
                                   kad::mean(kad::abs(x)),
                                   kad::sum(kad::mul(x, kad::mul(x, x))), w);
  });
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(g_total.data()[i] ==
          doctest::Approx(g_ce.data()[i] + w.beta * g_ad.data()[i] +
                          w.gamma * g_af.data()[i])
              .epsilon(1e-4));
}
