#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mkv/analysis.hpp"
#include "mkv/models.hpp"

using namespace mkv;

namespace {

RunConfig small_config(std::size_t particles, std::size_t runs, std::size_t steps, std::uint64_t seed) {
    RunConfig c;
    c.particles = particles;
    c.runs = runs;
    c.seed = seed;
    c.grid = Grid(1.0, steps);
    c.initial = {1.0, 0.5};
    return c;
}

}  // namespace

TEST_CASE("log-log fits of synthetic power laws") {
    const std::vector<double> n{8, 16, 32, 64, 128};
    std::vector<double> mse2, mse1;
    for (double v : n) {
        mse2.push_back(3.0 * std::pow(v, -2.0));
        mse1.push_back(0.2 * std::pow(v, -1.0));
    }
    const auto f2 = fit_rate(n, mse2);
    CHECK(f2.slope == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(f2.rms_rate == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f2.slope_stderr < 1e-12);
    CHECK(f2.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(f2.points == 5);
    CHECK(fit_rate(n, mse1).rms_rate == doctest::Approx(0.5).epsilon(1e-12));

    // scaling the errors leaves the rate unchanged
    std::vector<double> scaled = mse2;
    for (double& v : scaled) v *= 1e-6;
    CHECK(fit_rate(n, scaled).rms_rate == doctest::Approx(1.0).epsilon(1e-10));

    // log-jitter e = {+d, -d, 0, -d, +d} is orthogonal to the centred log n = {-2, -1, 0, 1, 2} log 2,
    // so the OLS slope stays -2 while the residuals are nonzero
    const double d = 0.1;
    const std::vector<double> e{d, -d, 0.0, -d, d};
    std::vector<double> jit(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) jit[i] = mse2[i] * std::exp(e[i]);
    const auto fj = fit_rate(n, jit);
    CHECK(fj.rms_rate == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(fj.slope_stderr > 0.0);

    CHECK_THROWS_AS(fit_rate(std::vector<double>{8, 16, 32}, std::vector<double>{1, 0.5, 0.25}), DomainError);
    CHECK_THROWS_AS(fit_loglog(std::vector<double>{1, 2}, std::vector<double>{1, 0}), DomainError);
    CHECK(std::isnan(fit_loglog(std::vector<double>{1, 2}, std::vector<double>{1, 4}).slope_stderr));
}

TEST_CASE("linear fit standard error matches the textbook formula") {
    const std::vector<double> x{0, 1, 2, 3};
    const std::vector<double> y{1.0, 3.1, 4.9, 7.0};
    const auto f = fit_linear(x, y);
    // sxx = 5, sxy = 9.9, residuals from hand arithmetic
    CHECK(f.slope == doctest::Approx(1.98).epsilon(1e-14));
    CHECK(f.intercept == doctest::Approx(1.03).epsilon(1e-13));
    double ss = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double r = y[i] - (1.03 + 1.98 * x[i]);
        ss += r * r;
    }
    CHECK(f.slope_stderr == doctest::Approx(std::sqrt(ss / 2.0 / 5.0)).epsilon(1e-12));
}

TEST_CASE("strong error against itself is zero") {
    const auto model = make_model("linear", {});
    const auto cfg = small_config(10, 3, 16, 4);
    const auto e = strong_error(*model, cfg, 16, 16);
    REQUIRE(e.rows.size() == 1);
    CHECK(e.rows[0].mse == 0.0);
    CHECK(e.excluded == 0);
    CHECK_FALSE(e.failed);
}

TEST_CASE("rate experiment structure and thread invariance") {
    const auto model = make_model("linear", {});
    auto cfg = small_config(12, 6, 64, 9);
    const std::vector<Scheme> schemes{Scheme::milstein, Scheme::euler};
    const std::vector<std::size_t> res{8, 16, 32, 64};
    const auto a = rate_experiment(*model, cfg, schemes, res, 256);
    cfg.threads = 4;
    const auto b = rate_experiment(*model, cfg, schemes, res, 256);
    REQUIRE(a.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        REQUIRE(a[s].rows.size() == 4);
        CHECK(std::isnan(a[s].running_rate[0]));
        CHECK(std::isfinite(a[s].fit.rms_rate));
        CHECK(a[s].total == 6 * 12);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(a[s].rows[k].mse == b[s].rows[k].mse);
            CHECK(a[s].rows[k].ci_lo <= a[s].rows[k].mse);
            CHECK(a[s].rows[k].ci_hi >= a[s].rows[k].mse);
        }
        CHECK(a[s].rows[0].mse > a[s].rows[3].mse);
    }
    CHECK_THROWS_AS(rate_experiment(*model, cfg, schemes, res, 100), ConfigError);
}

TEST_CASE("rate experiment fails when paths blow up") {
    const auto model = make_model("cubic", {});
    auto cfg = small_config(40, 2, 4, 3);
    cfg.initial = {0.0, 2.0};
    cfg.taming = Taming::off;
    const std::vector<Scheme> schemes{Scheme::euler};
    const std::vector<std::size_t> res{4};
    const auto e = rate_experiment(*model, cfg, schemes, res, 16);
    CHECK(e[0].excluded > 0);
    CHECK(e[0].failed);
    CHECK_FALSE(e[0].failure.empty());
}

TEST_CASE("propagation of chaos without interaction is exact") {
    // c = 0 with sigma and gamma free of the measure and taming off: particles never interact
    const auto model = make_model("linear", {{"c", 0.0}});
    auto cfg = small_config(1, 3, 16, 5);
    cfg.taming = Taming::off;
    const std::vector<std::size_t> sizes{5, 10, 20};
    const auto e = poc_experiment(*model, cfg, sizes, 40, 16);
    REQUIRE(e.rows.size() == 3);
    for (const auto& r : e.rows) CHECK(r.discrepancy == 0.0);

    const auto inter = make_model("linear", {{"c", 1.0}});
    const std::vector<std::size_t> with_ref{10, 40};
    const auto f = poc_experiment(*inter, cfg, with_ref, 40, 16);
    CHECK(f.rows[0].discrepancy > 0.0);
    CHECK(f.rows[1].discrepancy == 0.0);
    CHECK_THROWS_AS(poc_experiment(*inter, cfg, std::vector<std::size_t>{80}, 40, 16), ConfigError);
}

TEST_CASE("Ito verification") {
    const auto model = make_model("linear", {});
    const auto cfg = small_config(10, 40, 32, 7);
    const auto c = ito_verify(*model, ItoFunction::constant(3.0), cfg, 32, 2, false);
    CHECK(c.coarse.direct == 0.0);
    CHECK(c.coarse.formula == 0.0);
    CHECK(c.coarse.difference == 0.0);

    const auto q = ito_verify(*model, ItoFunction::quadratic_mean(), cfg, 32, 1, true);
    CHECK(q.coarse.steps == 32);
    CHECK(q.fine.steps == 64);
    CHECK(q.coarse.runs_used == 40);
    CHECK(std::isfinite(q.coarse.residual));
    CHECK(q.coarse.residual_se > 0.0);

    ItoFunction missing = ItoFunction::square();
    missing.dmu2 = nullptr;
    CHECK_THROWS_AS(missing.require_complete(), ConfigError);
    CHECK_THROWS_AS(ito_verify(*model, ItoFunction::square(), cfg, 32, 11, false), ConfigError);
}

TEST_CASE("Ito control variate is exact for pure symmetric jumps") {
    // no drift, no diffusion, symmetric marks: the compensator vanishes and for F = x^2 the
    // Euler increment dF J + H J^2 / 2 is matched term by term, including steps with several own jumps
    const auto model = make_model("linear", {{"a", 0.0}, {"c", 0.0}, {"s0", 0.0}, {"s1", 0.0}, {"intensity", 20.0}});
    auto cfg = small_config(4, 30, 8, 12);
    cfg.scheme = Scheme::euler;
    cfg.taming = Taming::off;
    const auto q = ito_verify(*model, ItoFunction::square(), cfg, 8, 4, false);
    CHECK(q.coarse.runs_used == 30);
    CHECK(std::abs(q.coarse.residual) < 1e-12);
    CHECK(q.coarse.residual_se < 1e-12);
    CHECK(q.coarse.se > 1e-3);
}

TEST_CASE("p-th power inequality") {
    // y = 0: both sides equal |x|^p since p (p-1) int_0^1 (1-t) t^{p-2} dt = 1
    const std::vector<double> x{1.3, -0.4}, zero{0.0, 0.0};
    const double p = 6.5;
    const auto r0 = pth_power_inequality(x, zero, p);
    const double nx = std::pow(std::hypot(1.3, 0.4), p);
    CHECK(r0.lhs == doctest::Approx(nx).epsilon(1e-12));
    CHECK(r0.rhs == doctest::Approx(nx).epsilon(1e-10));

    const auto same = pth_power_inequality(x, x, p);
    CHECK(same.lhs == doctest::Approx(0.0).scale(1.0));
    CHECK(same.rhs == 0.0);

    // in one dimension the remainder is exact Taylor: lhs = rhs, also across the origin
    for (const auto& [a, b] : std::vector<std::pair<double, double>>{{1.5, 0.5}, {-1.0, 2.0}, {0.3, -0.7}}) {
        const std::vector<double> xa{a}, yb{b};
        const auto r = pth_power_inequality(xa, yb, 5.0);
        const double want = std::pow(std::abs(a), 5.0) - std::pow(std::abs(b), 5.0) -
                            5.0 * std::pow(std::abs(b), 3.0) * b * (a - b);
        CHECK(r.lhs == doctest::Approx(want).epsilon(1e-12));
        CHECK(r.rhs == doctest::Approx(want).epsilon(1e-9));
    }

    // orthogonal displacement: Hessian is strictly below p (p-1) |.|^{p-2} there
    const std::vector<double> y1{1.0, 0.0}, x1{1.0, 1.0};
    const auto r1 = pth_power_inequality(x1, y1, 8.0);
    CHECK(r1.lhs < r1.rhs);

    CHECK_THROWS_AS(pth_power_inequality(x, zero, 4.0), DomainError);
    const auto rep = pth_power_inequality_check(5000, 11);
    CHECK(rep.samples == 5000);
    CHECK(rep.violations == 0);
    CHECK(rep.max_violation <= 1e-10);
}

TEST_CASE("measure Taylor fuzz and noise coupling") {
    for (std::size_t atoms : {2, 5, 50}) {
        const auto t = measure_taylor_fuzz(atoms, 2, 100, 4, 3);
        CHECK(t.configurations == 100);
        CHECK(t.max_residual < 1e-10);
    }
    const auto nc = noise_coupling_check(4000, 2);
    CHECK(nc.increment_mismatches == 0);
    CHECK(nc.compared_increments > 0);
    CHECK(nc.diagonal_max_error == 0.0);
    CHECK(nc.passed());
}
