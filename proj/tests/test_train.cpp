#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "srnr/error.hpp"
#include "srnr/rng.hpp"
#include "srnr/train.hpp"

using namespace srnr;
using namespace srnr::train;
using nn::Tensor5;

namespace {

std::pair<Volume3D, BrainMask> small_phantom(std::uint64_t seed, Dims d = {24, 24, 20}) {
  PhantomSpec s;
  s.dims = d;
  s.seed = seed;
  auto [v, m] = generate_phantom(s);
  return {normalize(v, m).first, m};
}

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.patch = {12, 12, 10};
  c.batch_size = 2;
  c.epochs = 2;
  c.patches_per_volume = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("L2 loss") {
  const Tensor5<double> p({1, 1, 1, 1, 2}, std::vector<double>{1, 1}), t({1, 1, 1, 1, 2}, std::vector<double>{0, 2});
  const auto [loss, grad] = l2_loss(p, t);
  CHECK(loss == 1.0);
  CHECK(grad == Tensor5<double>({1, 1, 1, 1, 2}, std::vector<double>{1, -1}));
  const auto [z, gz] = l2_loss(p, p);
  CHECK(z == 0.0);
  for (double v : gz.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(l2_loss(p, Tensor5<double>({1, 1, 1, 1, 3})), Error);

  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor5<double> a({1, 1, 3, 3, 3}), b({1, 1, 3, 3, 3});
  for (auto& v : a.data()) v = u(gen);
  for (auto& v : b.data()) v = u(gen);
  const auto g = l2_loss(a, b).second;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto ap = a, am = a;
    ap[i] += 1e-5;
    am[i] -= 1e-5;
    const double fd = (l2_loss(ap, b).first - l2_loss(am, b).first) / 2e-5;
    CHECK(std::abs(fd - g[i]) < 1e-8);
  }
}

TEST_CASE("Adam") {
  TrainConfig cfg;
  std::vector<double> params{0.5, -1.0};
  AdamState st(2);
  for (int t = 0; t < 5; ++t) adam_step(params, std::vector<double>{0.0, 0.0}, st, cfg);
  CHECK(params == std::vector<double>{0.5, -1.0});

  cfg.learning_rate = 0.1;
  std::vector<double> one{0.0};
  AdamState s1(1);
  adam_step(one, std::vector<double>{1.0}, s1, cfg);
  CHECK(one[0] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-15));

  std::vector<double> theta{0.3};
  AdamState s3(1);
  const std::vector<double> grads{1.0, 1.0, 1.0};
  const auto want = oracle::adam_scalar(0.3, grads, 0.1, 0.9, 0.999, 1e-8);
  for (int t = 0; t < 3; ++t) {
    adam_step(theta, std::vector<double>{grads[t]}, s3, cfg);
    CHECK(std::abs(theta[0] - want[t]) < 1e-15);
  }
  CHECK(s3.t == 3);

  std::vector<double> keep{1.0, 2.0};
  AdamState sk(2);
  CHECK_THROWS_AS(adam_step(keep, std::vector<double>{0.0, NAN}, sk, cfg), Error);
  CHECK(keep == std::vector<double>{1.0, 2.0});
  CHECK(sk.t == 0);
}

TEST_CASE("patch sampling") {
  const auto v = oracle::random_volume(1, {20, 20, 20});
  std::vector<PairData> full{{v, v, BrainMask::full(v.dims())}};
  TrainConfig cfg;
  cfg.patch = {8, 8, 8};
  PatchSampler all(full, cfg, 3);
  for (int i = 0; i < 50; ++i) CHECK(all.next().mask_fraction == 1.0);
  CHECK(all.relaxed_count() == 0);

  const auto [hr, mask] = small_phantom(3, {32, 32, 30});
  std::vector<PairData> pairs{{hr, hr, mask}};
  cfg.patch = {12, 12, 10};
  const auto a = sample_patches(pairs, cfg, 9, 1000);
  const auto b = sample_patches(pairs, cfg, 9, 1000);
  REQUIRE(a.size() == 1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].corner == b[i].corner);
    if (!a[i].coverage_relaxed) CHECK(a[i].mask_fraction >= 0.3);
    // Independent recount of the mask coverage.
    std::size_t n = 0;
    for (std::size_t x = 0; x < 12; ++x)
      for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t z = 0; z < 10; ++z)
          n += mask[hr.index(a[i].corner[0] + x, a[i].corner[1] + y, a[i].corner[2] + z)];
    CHECK(static_cast<double>(n) / 1440.0 == doctest::Approx(a[i].mask_fraction));
    CHECK(a[i].input == extract_patch(hr, a[i].corner, cfg.patch));
  }
  const auto c = sample_patches(pairs, cfg, 10, 20);
  bool differs = false;
  for (std::size_t i = 0; i < c.size(); ++i) differs = differs || c[i].corner != a[i].corner;
  CHECK(differs);

  CHECK_THROWS_AS(PatchSampler({}, cfg, 1), Error);
  cfg.patch = {40, 8, 8};
  CHECK_THROWS_AS(PatchSampler(pairs, cfg, 1), Error);
}

TEST_CASE("patch sampling relaxes an unreachable coverage floor") {
  std::vector<std::uint8_t> bits(20 * 20 * 20, 0);
  bits[0] = 1;
  const BrainMask tiny({20, 20, 20}, bits);
  const auto v = oracle::random_volume(2, {20, 20, 20});
  std::vector<PairData> pairs{{v, v, tiny}};
  TrainConfig cfg;
  cfg.patch = {8, 8, 8};
  PatchSampler s(pairs, cfg, 4);
  const auto t = s.next();
  CHECK(t.coverage_relaxed);
  CHECK(s.relaxed_count() == 1);
}

TEST_CASE("zero epochs returns the initialization") {
  const auto [hr, mask] = small_phantom(1);
  auto cfg = tiny_cfg();
  cfg.epochs = 0;
  const nn::NetShape shape{4, 4};
  const auto r = train_model(std::vector<Volume3D>{hr}, std::vector<BrainMask>{mask}, {2, 5}, {0.0, 0.5, 1}, shape, cfg);
  CHECK(r.net == nn::init_params(shape, cfg.seed));
  CHECK(r.curve.empty());
}

TEST_CASE("training is deterministic") {
  const auto a = small_phantom(1), b = small_phantom(2);
  const std::vector<Volume3D> hr{a.first, b.first};
  const std::vector<BrainMask> masks{a.second, b.second};
  const auto cfg = tiny_cfg();
  const auto r1 = train_model(hr, masks, {2, 5}, {0.0, 0.4, 2}, {4, 4}, cfg);
  const auto r2 = train_model(hr, masks, {2, 5}, {0.0, 0.4, 2}, {4, 4}, cfg);
  CHECK(r1.net == r2.net);
  REQUIRE(r1.curve.size() == 2);
  CHECK(r1.curve[0].train_loss == r2.curve[0].train_loss);
  CHECK(std::isfinite(r1.curve[0].val_loss));

  auto c64 = cfg;
  c64.precision = Precision::Float64;
  const auto d1 = train_model(hr, masks, {2, 5}, {0.0, 0.4, 2}, {4, 4}, c64);
  CHECK(d1.net == train_model(hr, masks, {2, 5}, {0.0, 0.4, 2}, {4, 4}, c64).net);

  auto threaded = cfg;
  threaded.threads = 3;
  CHECK(train_model(hr, masks, {2, 5}, {0.0, 0.4, 2}, {4, 4}, threaded).net == r1.net);
}

TEST_CASE("training reduces the loss") {
  const auto [hr, mask] = small_phantom(4, {32, 32, 30});
  TrainConfig cfg;
  cfg.patch = {16, 16, 15};
  cfg.batch_size = 1;
  cfg.patches_per_volume = 20;
  cfg.epochs = 10;  // 200 steps
  cfg.seed = 3;
  const auto r =
      train_model(std::vector<Volume3D>{hr}, std::vector<BrainMask>{mask}, {2, 5}, {0.0, 0.0, 1}, {4, 8}, cfg);
  CHECK(r.steps == 200);
  CHECK(r.curve.back().train_loss < 0.5 * r.initial_loss);
  CHECK(r.curve.back().train_loss < r.curve.front().train_loss);
  CHECK(std::isnan(r.curve.back().val_loss));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.adam_beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_precision("float64") == Precision::Float64);
  CHECK_THROWS_AS(parse_precision("half"), Error);
}

TEST_CASE("Noise2Noise closed-form oracle") {
  const auto z = n2n_closed_form_oracle(1000, 0.0, 3);
  CHECK(z.theta_clean == z.theta_noisy);

  const auto r = n2n_closed_form_oracle(100000, 1.0, 4);
  CHECK(std::abs(r.theta_noisy[0] - r.theta_clean[0]) < 0.015);
  CHECK(r.std_error[0] == doctest::Approx(1.0 / std::sqrt(100000.0)).epsilon(1e-9));

  // Two-parameter design rebuilt here and solved by Gaussian elimination.
  const std::uint64_t seed = 8;
  const std::size_t n = 500, p = 2;
  const auto got = n2n_closed_form_oracle(n, 0.5, seed, p);
  const auto ds = rng::derive(seed, "n2n-design");
  std::vector<std::vector<double>> g(p, std::vector<double>(p, 0.0));
  std::vector<double> rhs(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x[2] = {1.0, 2.0 * rng::uniform(ds, i * p + 1) - 1.0};
    const double y = x[0] * 1.0 + x[1] * -0.5;
    for (std::size_t j = 0; j < p; ++j) {
      rhs[j] += x[j] * y;
      for (std::size_t k = 0; k < p; ++k) g[j][k] += x[j] * x[k];
    }
  }
  const auto want = oracle::solve(g, rhs);
  for (std::size_t j = 0; j < p; ++j) CHECK(std::abs(got.theta_clean[j] - want[j]) < 1e-10);
  CHECK(std::abs(got.theta_clean[1] + 0.5) < 1e-10);

  CHECK_THROWS_AS(n2n_closed_form_oracle(9, 1.0, 1), Error);
  try {
    n2n_closed_form_oracle(10, 1.0, 1, 12);
    FAIL("expected degenerate design");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDesign);
  }
}

TEST_CASE("Noise2Noise oracle shows no systematic bias") {
  const std::size_t n = 20000, p = 3, seeds = 20;
  std::vector<double> mean(p, 0.0), se(p, 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto r = n2n_closed_form_oracle(n, 1.0, 100 + s, p);
    for (std::size_t j = 0; j < p; ++j) {
      mean[j] += (r.theta_noisy[j] - r.theta_clean[j]) / seeds;
      se[j] += r.std_error[j] / seeds;
    }
  }
  for (std::size_t j = 0; j < p; ++j) CHECK(std::abs(mean[j]) < 4.0 * se[j] / std::sqrt(double(seeds)));
}

TEST_CASE("tile plan and blending window") {
  const auto plan = plan_tiles({40, 20, 9}, {16, 16, 16});
  CHECK(plan.starts[0] == std::vector<std::size_t>{0, 8, 16, 24});
  CHECK(plan.starts[1] == std::vector<std::size_t>{0, 4});
  CHECK(plan.starts[2] == std::vector<std::size_t>{0});
  CHECK(plan.tile == Dims{16, 16, 9});

  // Partition of unity: accumulate windows separately and normalize.
  const Dims d{37, 21, 30};
  const auto pl = plan_tiles(d, {12, 10, 14});
  const auto w = tile_window(pl.tile);
  for (double v : w) CHECK(v > 0.0);
  std::vector<double> den(d[0] * d[1] * d[2], 0.0);
  for (auto x0 : pl.starts[0])
    for (auto y0 : pl.starts[1])
      for (auto z0 : pl.starts[2])
        for (std::size_t i = 0; i < pl.tile[0]; ++i)
          for (std::size_t j = 0; j < pl.tile[1]; ++j)
            for (std::size_t k = 0; k < pl.tile[2]; ++k)
              den[((x0 + i) * d[1] + y0 + j) * d[2] + z0 + k] += w[(i * pl.tile[1] + j) * pl.tile[2] + k];
  // Sum over tiles of w / den is 1 wherever den > 0; every voxel is covered.
  std::vector<double> total(den.size(), 0.0);
  for (auto x0 : pl.starts[0])
    for (auto y0 : pl.starts[1])
      for (auto z0 : pl.starts[2])
        for (std::size_t i = 0; i < pl.tile[0]; ++i)
          for (std::size_t j = 0; j < pl.tile[1]; ++j)
            for (std::size_t k = 0; k < pl.tile[2]; ++k) {
              const std::size_t g = ((x0 + i) * d[1] + y0 + j) * d[2] + z0 + k;
              total[g] += w[(i * pl.tile[1] + j) * pl.tile[2] + k] / den[g];
            }
  double worst = 0.0;
  for (double t : total) worst = std::max(worst, std::abs(t - 1.0));
  CHECK(worst < 1e-9);
}

TEST_CASE("tiled inference") {
  const auto [hr, mask] = small_phantom(6, {24, 24, 20});
  const auto up = degrade_input(hr, {2, 5});
  CHECK(predict_volume(nn::build_munet({4, 4}), up, {16, 16, 16}) == up);

  const auto net = nn::init_params({4, 4}, 2);
  // A volume that fits in one patch: tiled and whole-volume passes agree.
  const auto small = crop_axis(crop_axis(up, 0, 12), 1, 12);
  const auto tiled = predict_volume(net, small, {16, 16, 32}, Precision::Float64);
  Tensor5<double> x({1, 1, 12, 12, 20}, std::vector<double>(small.data().begin(), small.data().end()));
  const auto whole = nn::munet_predict(net, x);
  CHECK(testutil::max_abs_err(tiled.data(), whole.data()) < 1e-6);

  const auto big = predict_volume(net, up, {12, 12, 10});
  CHECK(big.dims() == up.dims());
  CHECK(big == predict_volume(net, up, {12, 12, 10}));

  const auto low = downsample_slices(hr, {2, 5}).volume;
  const auto inferred = infer_volume(net, low, {2, 5}, {12, 12, 10});
  CHECK(std::equal(inferred.data().begin(), inferred.data().end(), big.data().begin(), big.data().end()));
  for (int a = 0; a < 3; ++a) CHECK(inferred.spacing()[a] == doctest::Approx(hr.spacing()[a]).epsilon(1e-12));
}
