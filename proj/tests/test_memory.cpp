#include "laplace_rl/memory.hpp"

#include <cmath>
#include <random>

#include "doctest.h"
#include "laplace_rl/analysis.hpp"

using namespace laplace_rl;

namespace {

// discrete delta impulse response of readout unit i: response[t-1] = f~_i(t)
Eigen::VectorXd impulse_response(const MemoryEngine& eng, int unit, int t_max) {
  LaplaceState st = LaplaceState::zero(eng);
  Eigen::VectorXd pulse = Eigen::VectorXd::Ones(1);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  step_inplace(st, eng, pulse);  // t = 0
  Eigen::VectorXd out(t_max);
  for (int t = 1; t <= t_max; ++t) {
    step_inplace(st, eng, zero);
    out[t - 1] = read_tilde(st, eng)(0, unit);
  }
  return out;
}

MemoryConfig cfg(double lo, double hi, int n, int k) {
  MemoryConfig c;
  c.taustar_min = lo;
  c.taustar_max = hi;
  c.n_taus = n;
  c.k = k;
  return c;
}

}  // namespace

TEST_CASE("engine construction and rejection") {
  MemoryEngine eng(cfg(1, 1000, 8, 8));
  CHECK(eng.n_taus() == 8);
  CHECK(eng.n_s() == 8 + 16);
  const double r = std::pow(1000.0, 1.0 / 7.0);
  CHECK(eng.taustars()[0] == doctest::Approx(1.0));
  CHECK(eng.taustars()[1] / eng.taustars()[0] == doctest::Approx(r));
  CHECK(eng.taustars()[7] == doctest::Approx(1000.0));

  // s = k / tau* at the matching node
  MemoryEngine e10(cfg(10, 20, 2, 8));
  CHECK(e10.s_grid()[8] == doctest::Approx(0.8));

  for (int j = 0; j < eng.n_s(); ++j) {
    CHECK(eng.decay_diag()[j] > 0.0);
    CHECK(eng.decay_diag()[j] < 1.0);
  }
  // s strictly decreasing along the tau axis
  for (int j = 1; j < eng.n_s(); ++j) CHECK(eng.s_grid()[j] < eng.s_grid()[j - 1]);

  CHECK_THROWS(MemoryEngine(cfg(1, 1, 2, 8)));     // degenerate range
  CHECK_THROWS(MemoryEngine(cfg(-1, 10, 4, 8)));   // taustar_min <= 0
  CHECK_THROWS(MemoryEngine(cfg(1, 10, 1, 8)));    // n_taus < 2
  CHECK_THROWS(MemoryEngine(cfg(1, 10, 4, 7)));    // odd k
  CHECK_THROWS(MemoryEngine(cfg(1, 10, 4, 0)));    // k < 2
}

TEST_CASE("engine build is deterministic") {
  MemoryEngine a(cfg(2, 200, 16, 8)), b(cfg(2, 200, 16, 8));
  CHECK((a.inverse_op() - b.inverse_op()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.decay_diag() - b.decay_diag()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("inverse operator annihilates constants and low-order polynomials") {
  MemoryEngine eng(cfg(2, 200, 16, 8));
  const Eigen::MatrixXd& op = eng.inverse_op();
  const double row_scale = op.cwiseAbs().rowwise().sum().maxCoeff();
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(eng.n_s());
  CHECK((op * ones).cwiseAbs().maxCoeff() <= 1e-9 * row_scale);

  // k = 2: second derivative kills linear functions of s
  MemoryEngine e2(cfg(2, 50, 8, 2));
  Eigen::VectorXd lin = e2.s_grid();
  const double scale2 =
      (e2.inverse_op().cwiseAbs() * lin.cwiseAbs()).maxCoeff();
  CHECK((e2.inverse_op() * lin).cwiseAbs().maxCoeff() <= 1e-9 * scale2);
}

TEST_CASE("inverse operator rejects bad grids") {
  Eigen::VectorXd good = MemoryEngine(cfg(2, 200, 4, 2)).s_grid();
  Eigen::VectorXd bad = good;
  std::swap(bad[1], bad[2]);
  CHECK_THROWS(build_inverse_operator(bad, 2));
  CHECK_THROWS(build_inverse_operator(good, 3));               // odd k
  CHECK_THROWS(build_inverse_operator(good.head(3), 2));       // too short
}

TEST_CASE("inverse of the Laplace image of a delta matches the analytic response") {
  MemoryEngine eng(cfg(2, 200, 16, 8));
  for (int i = 0; i < eng.n_taus(); ++i) {
    const double tau = eng.taustars()[i];
    const double t0 = std::max(1.0, std::round(tau));
    Eigen::VectorXd image = (-eng.s_grid() * t0).array().exp();
    const double got = (eng.inverse_op() * image)(i);
    const double want = impulse_response_analytic(tau, 8, t0);
    CHECK(got == doctest::Approx(want).epsilon(0.05));
  }
}

TEST_CASE("laplace recurrence follows the closed form") {
  MemoryEngine eng(cfg(80, 160, 2, 8));  // node s = 8/80 = 0.1
  CHECK(eng.s_grid()[8] == doctest::Approx(0.1));
  LaplaceState st = LaplaceState::zero(eng);
  step_inplace(st, eng, Eigen::VectorXd::Ones(1));
  for (int t = 0; t < 10; ++t)
    step_inplace(st, eng, Eigen::VectorXd::Zero(1));
  CHECK(st.F(0, 8) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  // zero input keeps the state at zero
  LaplaceState z = LaplaceState::zero(eng);
  for (int t = 0; t < 5; ++t) step_inplace(z, eng, Eigen::VectorXd::Zero(1));
  CHECK(z.F.cwiseAbs().maxCoeff() == 0.0);

  // non-finite input rejected
  Eigen::VectorXd nan_input = Eigen::VectorXd::Constant(1, std::nan(""));
  CHECK_THROWS(step(z, eng, nan_input));
}

TEST_CASE("recurrence and readout are linear in the input history") {
  MemoryEngine eng(cfg(2, 50, 6, 4));
  std::mt19937_64 rng(7);
  auto unif = [&]() { return (rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
  const int T = 40;
  Eigen::VectorXd f1(T), f2(T);
  for (int t = 0; t < T; ++t) {
    f1[t] = unif();
    f2[t] = unif();
  }
  const double a = 1.7, b = -0.6;
  LaplaceState s1 = LaplaceState::zero(eng), s2 = LaplaceState::zero(eng),
               s12 = LaplaceState::zero(eng);
  for (int t = 0; t < T; ++t) {
    step_inplace(s1, eng, Eigen::VectorXd::Constant(1, f1[t]));
    step_inplace(s2, eng, Eigen::VectorXd::Constant(1, f2[t]));
    step_inplace(s12, eng, Eigen::VectorXd::Constant(1, a * f1[t] + b * f2[t]));
  }
  Eigen::MatrixXd lhs = read_tilde(s12, eng);
  Eigen::MatrixXd rhs = a * read_tilde(s1, eng) + b * read_tilde(s2, eng);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * rhs.cwiseAbs().maxCoeff());
}

TEST_CASE("discrete impulse responses peak at tau* and match the oracle") {
  MemoryEngine eng(cfg(2, 200, 16, 8));
  for (int i = 0; i < eng.n_taus(); ++i) {
    const double tau = eng.taustars()[i];
    Eigen::VectorXd resp = impulse_response(eng, i, static_cast<int>(8 * tau) + 30);
    int ipk = 0;
    resp.maxCoeff(&ipk);
    const int t_peak = ipk + 1;
    CHECK(std::abs(t_peak - tau) <= 1.0);
    const double want = impulse_response_analytic(tau, 8, t_peak);
    CHECK(resp[ipk] == doctest::Approx(want).epsilon(0.10));
  }
}

TEST_CASE("zero state reads zero") {
  MemoryEngine eng(cfg(2, 50, 6, 4));
  LaplaceState st = LaplaceState::zero(eng);
  CHECK(read_tilde(st, eng).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("readout value at t = tau* matches the closed form") {
  MemoryEngine eng(cfg(10, 40, 4, 8));
  // unit 0 sits exactly at tau* = 10
  Eigen::VectorXd resp = impulse_response(eng, 0, 60);
  const double want = 1.1166922556047734 / 10.0;
  CHECK(resp[9] == doctest::Approx(want).epsilon(0.10));
  int ipk = 0;
  resp.maxCoeff(&ipk);
  CHECK(std::abs((ipk + 1) - 10.0) <= 1.0);
}

TEST_CASE("analytic impulse response values and limits") {
  CHECK(impulse_response_analytic(10, 8, 10) ==
        doctest::Approx(0.11166922556047731).epsilon(1e-12));
  CHECK(impulse_response_analytic(10, 8, 1e-9) == doctest::Approx(0.0));
  CHECK(impulse_response_analytic(10, 8, 1e9) == doctest::Approx(0.0));
  CHECK_THROWS(impulse_response_analytic(10, 8, 0.0));
  CHECK_THROWS(impulse_response_analytic(10, 8, -1.0));
  CHECK_THROWS(impulse_response_analytic(0.0, 8, 1.0));

  // coefficient of variation of the analytic curve is 1/sqrt(k+1)
  const int k = 8;
  const double tau = 37.0;
  double m0 = 0, m1 = 0, m2 = 0;
  const double dt = 1e-3;
  for (double t = dt; t < 60 * tau; t += dt) {
    const double f = impulse_response_analytic(tau, k, t);
    m0 += f * dt;
    m1 += t * f * dt;
    m2 += t * t * f * dt;
  }
  const double mean = m1 / m0;
  const double sd = std::sqrt(m2 / m0 - mean * mean);
  CHECK(sd / mean == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("analytic width scales linearly with peak time (Weber-Fechner)") {
  const int k = 8;
  MemoryEngine eng(cfg(2, 200, 16, k));
  std::vector<CellStats> cells;
  for (int i = 0; i < eng.n_taus(); ++i) {
    const double tau = eng.taustars()[i];
    const int len = static_cast<int>(6 * tau) + 20;
    Eigen::VectorXd y(len);
    for (int t = 1; t <= len; ++t)
      y[t - 1] = impulse_response_analytic(tau, k, t);
    GaussFit fit = fit_gaussian(y);
    REQUIRE(fit.converged);
    CellStats cs;
    cs.unit = i;
    cs.klass = UnitClass::transient;
    cs.peak = fit.mu + 1.0;
    cs.std_dev = fit.sigma;
    cs.r2 = fit.r2;
    cs.fit_ok = true;
    cells.push_back(cs);
    CHECK(fit.sigma / cs.peak ==
          doctest::Approx(1.0 / std::sqrt(k + 1.0)).epsilon(0.20));
  }
  Regression reg = peak_width_regression(cells);
  CHECK(reg.r2 >= 0.95);
  CHECK(reg.slope == doctest::Approx(1.0 / 3.0).epsilon(0.20));
}

TEST_CASE("temporal rescaling translates the readout pattern") {
  // r = sqrt(2): scale 2 shifts by exactly 2 units
  MemoryEngine eng(cfg(1, 1024, 21, 8));
  auto pattern = [&](int a) {
    LaplaceState st = LaplaceState::zero(eng);
    const int T = 64 * a;
    for (int t = 0; t < T; ++t) {
      double v = 0.0;
      if (t >= 8 * a && t < 8 * a + a) v = 1.0;   // rescaled pulse widths
      if (t >= 24 * a && t < 24 * a + a) v = 1.0;
      step_inplace(st, eng, Eigen::VectorXd::Constant(1, v));
    }
    return read_tilde(st, eng).row(0).transpose().eval();
  };
  Eigen::VectorXd base = pattern(1), scaled = pattern(2);
  const int shift = 2, margin = 2;
  const int n = eng.n_taus() - shift - 2 * margin;
  Eigen::VectorXd x = scaled.segment(shift + margin, n);
  Eigen::VectorXd y = base.segment(margin, n);
  const double corr =
      ((x.array() - x.mean()) * (y.array() - y.mean())).sum() /
      std::sqrt((x.array() - x.mean()).square().sum() *
                (y.array() - y.mean()).square().sum());
  CHECK(corr >= 0.95);
}

TEST_CASE("conv + max pool is shift invariant and scale tolerant") {
  Eigen::VectorXd kernel(3);
  kernel << 0.5, 1.0, -0.25;

  // interior shift leaves the pooled output unchanged
  Eigen::MatrixXd f1 = Eigen::MatrixXd::Zero(1, 16), f2 = Eigen::MatrixXd::Zero(1, 16);
  for (int j = 0; j < 4; ++j) {
    f1(0, 4 + j) = 1.0 + j;
    f2(0, 8 + j) = 1.0 + j;  // shifted by 4
  }
  CHECK(conv_pool_readout(f1, kernel)(0) ==
        doctest::Approx(conv_pool_readout(f2, kernel)(0)).epsilon(1e-12));

  CHECK(conv_pool_readout(Eigen::MatrixXd::Zero(2, 16), kernel).cwiseAbs().maxCoeff() ==
        0.0);

  Eigen::VectorXd long_kernel = Eigen::VectorXd::Ones(16);
  CHECK_THROWS(conv_pool_readout(f1, long_kernel));

  // function-rescaled histories give pooled outputs within 10%
  MemoryEngine eng(cfg(1, 1024, 21, 8));
  auto pooled = [&](int a) {
    LaplaceState st = LaplaceState::zero(eng);
    for (int t = 0; t < 64 * a; ++t) {
      double v = 0.0;
      if (t >= 8 * a && t < 8 * a + a) v = 1.0;
      if (t >= 24 * a && t < 24 * a + a) v = 1.0;
      step_inplace(st, eng, Eigen::VectorXd::Constant(1, v));
    }
    return conv_pool_readout(read_tilde(st, eng), kernel)(0);
  };
  const double p1 = pooled(1), p2 = pooled(2), p4 = pooled(4);
  CHECK(p2 == doctest::Approx(p1).epsilon(0.10));
  CHECK(p4 == doctest::Approx(p1).epsilon(0.10));
}
