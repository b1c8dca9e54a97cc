#include "sdedit/gmm.hpp"
#include "sdedit/parallel.hpp"
#include "sdedit/sampler.hpp"
#include "sdedit/t0_search.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sdedit;
using Catch::Approx;

namespace {

const VeSchedule kVe(0.01, 25.0);
const VpSchedule kVp(0.1, 20.0);

std::vector<Eigen::VectorXd> run_many(int n, const std::function<Eigen::VectorXd(std::uint64_t)>& one) {
  std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = one(derive_seed(1234, i)); });
  return out;
}

Eigen::VectorXd mean_of(const std::vector<Eigen::VectorXd>& xs) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(xs.front().size());
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

Eigen::MatrixXd cov_of(const std::vector<Eigen::VectorXd>& xs) {
  const Eigen::VectorXd m = mean_of(xs);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m.size(), m.size());
  for (const auto& x : xs) c += (x - m) * (x - m).transpose();
  return c / static_cast<double>(xs.size() - 1);
}

GmmSpec two_modes(double std) { return equal_weight_gmm({Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(-1.0, 0.0)}, std); }

} // namespace

TEST_CASE("forward perturbation", "[sampler][forward]") {
  const Eigen::VectorXd g = Eigen::Vector3d(0.1, -0.2, 0.3);
  CHECK(forward_perturb(g, kVe, 0.0, 10, 1) == g);
  CHECK(forward_perturb(g, kVp, 0.0, 10, 1) == g);
  CHECK_THROWS_AS(forward_perturb(g, kVe, 1.5, 10, 1), DomainError);

  SECTION("VE at t0 = 1 has per-coordinate std sigma_max") {
    double ss = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ss += std::pow(forward_perturb(Eigen::VectorXd::Zero(1), kVe, 1.0, 1000, derive_seed(5, i))[0], 2);
    CHECK(std::sqrt(ss / n) == Approx(25.0).epsilon(0.01));
  }
  SECTION("VP at t0 = 1 forgets a unit-norm guide") {
    const Eigen::VectorXd unit = Eigen::Vector2d(0.6, 0.8);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
    double ss = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = forward_perturb(unit, kVp, 1.0, 1000, derive_seed(6, i));
      sum += x;
      ss += x.squaredNorm();
    }
    CHECK((sum / n).norm() <= 0.02 * std::sqrt(2.0));
    CHECK(ss / n / 2.0 == Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("reverse step algebra", "[sampler][step]") {
  const Eigen::VectorXd x = Eigen::Vector2d(0.7, -1.1);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd z = Eigen::Vector2d(0.3, 1.9);
  const AnalyticGmmScore score(two_modes(0.4), kVe);

  CHECK(reverse_step_ve(x, 0.5, 0.01, kVe, ZeroScore{}, zero) == x);

  const double eps2 = std::pow(sigma_ve(kVe, 0.5), 2) - std::pow(sigma_ve(kVe, 0.49), 2);
  CHECK(ve_variance_increment(kVe, 0.5, 0.01) == Approx(eps2).epsilon(1e-12));
  const Eigen::VectorXd out = reverse_step_ve(x, 0.5, 0.01, kVe, score, z);
  const double eps2_used = ve_variance_increment(kVe, 0.5, 0.01);
  CHECK((out - x - eps2_used * score.score(x, 0.5) - std::sqrt(eps2_used) * z).cwiseAbs().maxCoeff() < 1e-14);

  const double b = beta_vp(kVp, 0.5) * 0.01;
  CHECK((reverse_step_vp(x, 0.5, 0.01, kVp, ZeroScore{}, zero) - x / std::sqrt(1.0 - b)).norm() < 1e-15);
  const AnalyticGmmScore vscore(two_modes(0.4), kVp);
  const Eigen::VectorXd vout = reverse_step_vp(x, 0.5, 0.01, kVp, vscore, z);
  CHECK((vout - (x + b * vscore.score(x, 0.5)) / std::sqrt(1.0 - b) - std::sqrt(b) * z).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(reverse_step_ve(x, 0.01, 0.02, kVe, score, z), DomainError);
  CHECK_THROWS_AS(reverse_step_vp(x, 1.0, 0.06, kVp, vscore, z), ScheduleError);
}

TEST_CASE("reverse SDE from the prior recovers a single Gaussian", "[sampler][montecarlo]") {
  const Eigen::Vector2d mu(1.0, -2.0);
  const double s = 0.8;
  const GmmSpec g = equal_weight_gmm({mu}, s);
  for (const NoiseSchedule& sched : {NoiseSchedule(kVe), NoiseSchedule(kVp)}) {
    const AnalyticGmmScore score(g, sched);
    const auto xs = run_many(10000, [&](std::uint64_t seed) { return sample_from_prior(score, sched, 2, 500, seed); });
    const Eigen::VectorXd m = mean_of(xs);
    const Eigen::MatrixXd c = cov_of(xs);
    INFO("variant " << to_string(variant_of(sched)) << " mean " << m.transpose() << " cov " << c);
    CHECK(std::abs(m[0] - mu[0]) <= 0.03 * mu.norm());
    CHECK(std::abs(m[1] - mu[1]) <= 0.03 * mu.norm());
    CHECK(c(0, 0) == Approx(s * s).epsilon(0.03));
    CHECK(c(1, 1) == Approx(s * s).epsilon(0.03));
    CHECK(std::abs(c(0, 1)) <= 0.03 * s * s);
  }
}

TEST_CASE("sdedit with t0 = 0 returns the guide", "[sampler]") {
  const Guide guide(Eigen::Vector2d(3.0, 3.0));
  for (int k : {1, 3}) {
    SdeditConfig cfg;
    cfg.t0 = 0.0;
    cfg.repeats = k;
    const auto r = sdedit::sdedit(guide, AnalyticGmmScore(two_modes(0.3), kVe), kVe, cfg);
    CHECK(r.output == guide.data);
    CHECK(r.elapsed_steps == 0);
  }
}

TEST_CASE("sdedit pulls an off-manifold guide onto a mode", "[sampler][montecarlo]") {
  // exact-posterior prediction: 97% within 3 std at std 0.05 (only 91% at std 0.1)
  const GmmSpec g = two_modes(0.05);
  const AnalyticGmmScore score(g, kVe);
  const Guide guide(Eigen::Vector2d(3.0, 3.0));
  SdeditConfig cfg;
  cfg.t0 = 0.5;
  const auto xs = run_many(1000, [&](std::uint64_t seed) {
    SdeditConfig c = cfg;
    c.seed = seed;
    return sdedit::sdedit(guide, score, kVe, c).output;
  });
  int near = 0;
  for (const auto& x : xs) near += (x - g.components[nearest_component(g, x)].mean).norm() <= 3.0 * 0.05;
  INFO("within 3 std: " << near);
  CHECK(near >= 950);
}

TEST_CASE("sdedit from t0 = 1 matches the mixture weights", "[sampler][montecarlo]") {
  GmmSpec g;
  g.components.push_back({0.5, Eigen::Vector2d(1.5, 0.0), 0.3});
  g.components.push_back({0.3, Eigen::Vector2d(-1.5, 0.0), 0.3});
  g.components.push_back({0.2, Eigen::Vector2d(0.0, 1.5), 0.3});
  const AnalyticGmmScore score(g, kVe);
  const Guide guide(Eigen::Vector2d(0.2, -0.4));
  const auto xs = run_many(10000, [&](std::uint64_t seed) {
    SdeditConfig c;
    c.t0 = 1.0;
    c.seed = seed;
    return sdedit::sdedit(guide, score, kVe, c).output;
  });
  std::vector<int> count(3, 0);
  for (const auto& x : xs) ++count[static_cast<std::size_t>(nearest_component(g, x))];
  for (int k = 0; k < 3; ++k) CHECK(std::abs(count[k] / 10000.0 - g.components[k].weight) <= 0.03);
}

TEST_CASE("sdedit at t0 = 1 and prior sampling are indistinguishable", "[sampler][montecarlo]") {
  const GmmSpec g = two_modes(0.3);
  const AnalyticGmmScore score(g, kVe);
  const Guide guide(Eigen::Vector2d(0.5, 0.5));
  const int n = 2000;
  const auto a = run_many(n, [&](std::uint64_t seed) {
    SdeditConfig c;
    c.t0 = 1.0;
    c.n_steps = 300;
    c.seed = seed;
    return sdedit::sdedit(guide, score, kVe, c).output;
  });
  const auto b = run_many(n, [&](std::uint64_t seed) { return sample_from_prior(score, kVe, 2, 300, derive_seed(seed, 99)); });
  const double p = oracle::energy_permutation_p_value(a, b, 100, 3);
  INFO("energy-distance permutation p = " << p);
  CHECK(p > 0.01);
}

TEST_CASE("masked sdedit", "[sampler][mask]") {
  const GmmSpec g = two_modes(0.3);
  const AnalyticGmmScore score(g, kVe);
  const Guide guide(Eigen::Vector2d(0.0, 0.2));
  SdeditConfig cfg;
  cfg.t0 = 0.5;
  cfg.n_steps = 200;
  cfg.seed = 17;

  SECTION("all-ones mask reduces to plain sdedit") {
    for (const NoiseSchedule& s : {NoiseSchedule(kVe), NoiseSchedule(kVp)}) {
      const AnalyticGmmScore sc(g, s);
      CHECK(sdedit_masked(guide, EditMask::ones(2), sc, s, cfg).output == sdedit::sdedit(guide, sc, s, cfg).output);
    }
  }
  SECTION("all-zeros mask leaves only the last-step residual") {
    const double sig_last = sigma_ve(kVe, cfg.t0 / cfg.n_steps);
    int inside = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      SdeditConfig c = cfg;
      c.seed = derive_seed(8, i);
      c.n_steps = 20;
      const double sl = sigma_ve(kVe, c.t0 / c.n_steps);
      const auto r = sdedit_masked(guide, EditMask::zeros(2), score, kVe, c);
      inside += (r.output - guide.data).norm() <= 4.0 * sl * std::sqrt(2.0);
    }
    CHECK(sig_last > 0.0);
    CHECK(inside >= n - 1); // ≥ 99.99%
  }
  SECTION("half mask: preserved coordinate stays, editable one moves to a mode") {
    EditMask m{Eigen::Vector2d(1.0, 0.0)};
    const double sig_last = sigma_ve(kVe, cfg.t0 / cfg.n_steps);
    const double before = (guide.data - g.components[nearest_component(g, guide.data)].mean).norm();
    int closer = 0;
    double worst = 0.0;
    const auto xs = run_many(1000, [&](std::uint64_t seed) {
      SdeditConfig c = cfg;
      c.seed = seed;
      return sdedit_masked(guide, m, score, kVe, c).output;
    });
    for (const auto& x : xs) {
      worst = std::max(worst, std::abs(x[1] - guide.data[1]));
      closer += (x - g.components[nearest_component(g, x)].mean).norm() < before;
    }
    CHECK(worst <= 4.0 * sig_last);
    CHECK(closer >= 900);
  }
  SECTION("hard restore makes preserved coordinates exact, any K, both variants") {
    EditMask m{Eigen::Vector2d(0.0, 1.0)};
    for (const NoiseSchedule& s : {NoiseSchedule(kVe), NoiseSchedule(kVp)}) {
      SdeditConfig c = cfg;
      c.hard_restore = true;
      c.repeats = 3;
      const auto r = sdedit_masked(guide, m, AnalyticGmmScore(g, s), s, c);
      CHECK(r.output[0] == guide.data[0]);
      CHECK(r.output[1] != guide.data[1]);
    }
  }
  SECTION("VP preserved coordinates follow the discrete marginal") {
    EditMask m{Eigen::Vector2d(1.0, 0.0)};
    const AnalyticGmmScore sc(g, kVp);
    const auto r = sdedit_masked(guide, m, sc, kVp, cfg);
    const double a1 = discrete_alpha_table(kVp, cfg.t0, cfg.n_steps)[1];
    CHECK(std::abs(r.output[1] - std::sqrt(a1) * guide.data[1]) <= 5.0 * std::sqrt(1.0 - a1));
  }
  SECTION("mask validation") {
    CHECK_THROWS_AS(sdedit_masked(guide, EditMask::ones(3), score, kVe, cfg), ShapeError);
    CHECK_THROWS_AS(sdedit_masked(guide, EditMask{Eigen::Vector2d(0.5, 1.0)}, score, kVe, cfg), ParameterError);
  }
}

TEST_CASE("masked preservation bound over many runs", "[sampler][mask][montecarlo]") {
  const int d = 8;
  GmmSpec g = equal_weight_gmm({Eigen::VectorXd::Constant(d, 0.5), Eigen::VectorXd::Constant(d, -0.5)}, 0.3);
  const AnalyticGmmScore score(g, kVe);
  const Guide guide(Eigen::VectorXd::LinSpaced(d, -1.0, 1.0));
  EditMask m = EditMask::zeros(d);
  for (int i = 0; i < d; i += 2) m.omega[i] = 1.0;
  SdeditConfig cfg;
  cfg.t0 = 0.45;
  cfg.n_steps = 1000;
  const double bound = 5.0 * sigma_ve(kVe, cfg.t0 / cfg.n_steps);
  const auto xs = run_many(300, [&](std::uint64_t seed) {
    SdeditConfig c = cfg;
    c.seed = seed;
    return sdedit_masked(guide, m, score, kVe, c).output;
  });
  double worst = 0.0;
  for (const auto& x : xs)
    for (int i = 1; i < d; i += 2) worst = std::max(worst, std::abs(x[i] - guide.data[i]));
  CHECK(worst <= bound);
}

TEST_CASE("class-conditional sampling", "[sampler][classifier]") {
  const GmmSpec g = equal_weight_gmm({Eigen::Vector2d(-2.0, 0.0), Eigen::Vector2d(2.0, 0.0)}, 0.5);
  const AnalyticGmmScore score(g, kVe);
  const GmmClassifier clf(g, kVe);

  SECTION("single-component classifier changes nothing") {
    const GmmSpec one = equal_weight_gmm({Eigen::Vector2d(0.5, 0.5)}, 0.5);
    SdeditConfig c;
    c.label = 0;
    c.n_steps = 100;
    c.seed = 2;
    const AnalyticGmmScore sc(one, kVe);
    const Guide guide(Eigen::Vector2d(1.0, 1.0));
    CHECK(sdedit_class_conditional(guide, sc, GmmClassifier(one, kVe), kVe, c).output == sdedit::sdedit(guide, sc, kVe, c).output);
  }
  SECTION("t0 = 1 lands on the requested component") {
    const auto xs = run_many(1000, [&](std::uint64_t seed) {
      SdeditConfig c;
      c.t0 = 1.0;
      c.label = 1;
      c.seed = seed;
      return sdedit_class_conditional(Guide(Eigen::Vector2d::Zero()), score, clf, kVe, c).output;
    });
    int right = 0;
    for (const auto& x : xs) right += x[0] > 0.0;
    CHECK(right >= 950);
  }
  SECTION("guidance beats unguided sdedit from a central guide") {
    int guided = 0, plain = 0;
    const auto pairs = run_many(1000, [&](std::uint64_t seed) {
      SdeditConfig c;
      c.t0 = 0.4;
      c.label = 1;
      c.seed = seed;
      const Guide guide(Eigen::Vector2d::Zero());
      return Eigen::Vector2d(sdedit_class_conditional(guide, score, clf, kVe, c).output[0],
                             sdedit::sdedit(guide, score, kVe, c).output[0])
          .eval();
    });
    for (const auto& p : pairs) {
      guided += p[0] > 0.0;
      plain += p[1] > 0.0;
    }
    INFO("guided " << guided << " unguided " << plain);
    CHECK(guided >= plain + 100);
  }
  SECTION("VP guidance") {
    const AnalyticGmmScore vscore(g, kVp);
    const GmmClassifier vclf(g, kVp);
    const auto xs = run_many(300, [&](std::uint64_t seed) {
      SdeditConfig c;
      c.t0 = 1.0;
      c.label = 0;
      c.seed = seed;
      return sdedit_class_conditional(Guide(Eigen::Vector2d::Zero()), vscore, vclf, kVp, c).output;
    });
    int left = 0;
    for (const auto& x : xs) left += x[0] < 0.0;
    CHECK(left >= 285);
  }
  SECTION("label checks") {
    SdeditConfig c;
    CHECK_THROWS_AS(sdedit_class_conditional(Guide(Eigen::Vector2d::Zero()), score, clf, kVe, c), ParameterError);
    c.label = 2;
    CHECK_THROWS_AS(sdedit_class_conditional(Guide(Eigen::Vector2d::Zero()), score, clf, kVe, c), ParameterError);
  }
}

TEST_CASE("sampler determinism, snapshots and config checks", "[sampler]") {
  const AnalyticGmmScore score(two_modes(0.3), kVe);
  const Guide guide(Eigen::Vector2d(0.4, 0.9));
  SdeditConfig cfg;
  cfg.t0 = 0.6;
  cfg.n_steps = 50;
  cfg.repeats = 2;
  cfg.seed = 77;
  cfg.snapshot_stride = 10;
  const auto a = sdedit::sdedit(guide, score, kVe, cfg);
  const auto b = sdedit::sdedit(guide, score, kVe, cfg);
  CHECK(a.output == b.output);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) CHECK(a.snapshots[i].x == b.snapshots[i].x);
  CHECK(a.shape == guide.shape);
  CHECK(a.seed == 77);
  CHECK(a.elapsed_steps == 100);
  REQUIRE(a.snapshots.size() == 10);
  for (std::size_t i = 1; i < a.snapshots.size(); ++i)
    if (a.snapshots[i].repeat == a.snapshots[i - 1].repeat) CHECK(a.snapshots[i].t < a.snapshots[i - 1].t);
  CHECK(a.snapshots.front().t == Approx(0.6));

  cfg.seed = 78;
  CHECK(sdedit::sdedit(guide, score, kVe, cfg).output != a.output);

  SdeditConfig bad;
  bad.t0 = 1.2;
  CHECK_THROWS_AS(sdedit::sdedit(guide, score, kVe, bad), DomainError);
  bad = {};
  bad.n_steps = 0;
  CHECK_THROWS_AS(sdedit::sdedit(guide, score, kVe, bad), ParameterError);
  bad = {};
  bad.repeats = 0;
  CHECK_THROWS_AS(sdedit::sdedit(guide, score, kVe, bad), ParameterError);
  CHECK_THROWS_AS(sdedit::sdedit(Guide(Eigen::Vector3d::Zero()), score, kVe, SdeditConfig{}), ShapeError);
  CHECK_THROWS_AS(sdedit::sdedit(guide, score, kVp, SdeditConfig{.t0 = 1.0, .n_steps = 5}), ScheduleError);
}

TEST_CASE("t0 binary search", "[sampler][t0]") {
  const auto s0 = T0SearchState::initial();
  CHECK(s0.probe == Approx(0.45));

  auto r = t0_binary_search(s0, Feedback::more_realistic);
  CHECK(r.lo == Approx(0.45));
  CHECK(r.hi == Approx(0.6));
  CHECK(r.probe == Approx(0.525));

  auto f = t0_binary_search(s0, Feedback::more_faithful);
  CHECK(f.lo == Approx(0.3));
  CHECK(f.hi == Approx(0.45));
  CHECK(f.probe == Approx(0.375));

  auto s = s0;
  for (int i = 0; i < 10; ++i) s = t0_binary_search(s, i % 3 ? Feedback::more_faithful : Feedback::more_realistic);
  CHECK(s.width() == Approx(0.3 / 1024.0));
  CHECK(s.soft_cap_reached());
  CHECK(s.history.size() == 10);
  CHECK(s.lo < s.hi);
  CHECK((s.lo <= s.probe && s.probe <= s.hi));

  const auto done = t0_binary_search(r, Feedback::accept);
  CHECK(done.accepted);
  CHECK(done.probe == r.probe);
  CHECK_THROWS_AS(t0_binary_search(done, Feedback::more_faithful), ProtocolError);
  CHECK_THROWS_AS(t0_binary_search(done, Feedback::accept), ProtocolError);

  CHECK(parse_feedback("r") == Feedback::more_realistic);
  CHECK(parse_feedback("more_faithful") == Feedback::more_faithful);
  CHECK_FALSE(parse_feedback("maybe"));
  CHECK_THROWS_AS(T0SearchState::over(0.6, 0.3), ParameterError);
}
