#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mkv/core.hpp"
#include "mkv/measure.hpp"

using namespace mkv;

namespace {

// min over all permutations of the index-coupling cost
double brute_force_w2(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<std::size_t> perm(y.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - y[perm[j]]) * (x[j] - y[perm[j]]);
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("w2 to the Dirac mass at 0") {
    const std::vector<double> zeros{0.0, 0.0};
    CHECK(w2_to_dirac0(EmpiricalMeasure(zeros, 1)) == 0.0);
    const std::vector<double> a{3.0, -4.0};
    CHECK(w2_to_dirac0(EmpiricalMeasure(a, 1)) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
    const std::vector<double> origin{0.0, 0.0};
    CHECK(w2_to_dirac0(EmpiricalMeasure(a, 1)) == doctest::Approx(w2_1d_exact(EmpiricalMeasure(a, 1), EmpiricalMeasure(origin, 1))));
    const std::vector<double> planar{3.0, 4.0, 0.0, 0.0};
    CHECK(w2_to_dirac0(EmpiricalMeasure(planar, 2)) == doctest::Approx(std::sqrt(12.5)));
}

TEST_CASE("exact 1D W2") {
    const std::vector<double> mu{0.0, 2.0}, nu{1.0, 3.0}, nu_rev{3.0, 1.0};
    CHECK(w2_1d_exact(EmpiricalMeasure(mu, 1), EmpiricalMeasure(nu, 1)) == doctest::Approx(1.0));
    CHECK(w2_1d_exact(EmpiricalMeasure(mu, 1), EmpiricalMeasure(nu_rev, 1)) == doctest::Approx(1.0));
    CHECK(w2_1d_exact(EmpiricalMeasure(mu, 1), EmpiricalMeasure(mu, 1)) == 0.0);
    const std::vector<double> z{0.0}, c{-2.5};
    CHECK(w2_1d_exact(EmpiricalMeasure(z, 1), EmpiricalMeasure(c, 1)) == doctest::Approx(2.5));
    const std::vector<double> two_d{0.0, 0.0};
    CHECK_THROWS_AS(w2_1d_exact(EmpiricalMeasure(two_d, 2), EmpiricalMeasure(two_d, 2)), DomainError);
}

TEST_CASE("exact 1D W2 against exhaustive couplings") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 6;
        std::vector<double> x(n), y(n);
        for (auto& e : x) e = 3.0 * rng.normal();
        for (auto& e : y) e = 3.0 * rng.normal();
        CHECK(w2_1d_exact(EmpiricalMeasure(x, 1), EmpiricalMeasure(y, 1)) ==
              doctest::Approx(brute_force_w2(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("index bound dominates the exact distance") {
    const std::vector<double> mu{0.0, 2.0}, nu{3.0, 1.0};
    CHECK(w2_index_bound(EmpiricalMeasure(mu, 1), EmpiricalMeasure(nu, 1)) == doctest::Approx(std::sqrt(5.0)));
    CHECK(w2_index_bound(EmpiricalMeasure(mu, 1), EmpiricalMeasure(mu, 1)) == 0.0);
    Rng rng(23);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + trial % 9;
        std::vector<double> x(n), y(n);
        for (auto& e : x) e = rng.normal();
        for (auto& e : y) e = rng.normal() + 0.5;
        const EmpiricalMeasure a(x, 1), b(y, 1);
        CHECK(w2_index_bound(a, b) >= w2_1d_exact(a, b) - 1e-14);
    }
    const std::vector<double> one{1.0}, two{1.0, 2.0};
    CHECK_THROWS_AS(w2_index_bound(EmpiricalMeasure(one, 1), EmpiricalMeasure(two, 1)), DomainError);
}

TEST_CASE("shifted measures") {
    const std::vector<double> atoms{1.0, -2.0, 0.5, 3.0, -1.0, 2.0};  // N = 3, d = 2
    const EmpiricalMeasure base(atoms, 2);
    const std::vector<double> zero{0.0, 0.0};
    const auto same = shifted(base, 1, zero);
    CHECK(same.mean()[0] == base.mean()[0]);
    CHECK(same.mean()[1] == base.mean()[1]);
    CHECK(same.second_moment() == doctest::Approx(base.second_moment()).epsilon(1e-15));

    const std::vector<double> v{0.3, -1.2};
    const auto s = shifted(base, 2, v);
    CHECK(s.is_shifted());
    CHECK(s.atom(2)[0] == doctest::Approx(-0.7));
    CHECK(s.atom(2)[1] == doctest::Approx(0.8));
    CHECK(s.atom(0)[0] == 1.0);
    CHECK(s.mean()[0] == doctest::Approx(base.mean()[0] + 0.1));
    CHECK(s.mean()[1] == doctest::Approx(base.mean()[1] - 0.4));
    CHECK(w2_index_bound(base, s) == doctest::Approx(std::hypot(0.3, 1.2) / std::sqrt(3.0)));

    // w2^2 identity against the brute-force second moment of the moved atoms
    const double moved = (-0.7) * (-0.7) + 0.8 * 0.8;
    const double orig = 1.0 + 4.0;
    CHECK(s.second_moment() == doctest::Approx(base.second_moment() + (moved - orig) / 3.0).epsilon(1e-14));
    double direct = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        for (double e : s.atom(j)) direct += e * e;
    }
    CHECK(std::pow(w2_to_dirac0(s), 2) == doctest::Approx(direct / 3.0).epsilon(1e-14));

    EmpiricalMeasure target;
    shift_into(base, 0, v, target);
    CHECK(target.atom(0)[0] == doctest::Approx(1.3));
    CHECK_THROWS_AS(shifted(base, 3, v), DomainError);
}

TEST_CASE("Gauss-Legendre on [0, 1]") {
    for (std::size_t q = 1; q <= 16; ++q) {
        const auto rule = gauss_legendre(q);
        double w = 0.0;
        for (double e : rule.weights) w += e;
        CHECK(w == doctest::Approx(1.0).epsilon(1e-14));
        // exact for degree 2q - 1: int_0^1 t^k dt = 1 / (k + 1)
        const int k = static_cast<int>(2 * q - 1);
        double s = 0.0;
        for (std::size_t i = 0; i < q; ++i) s += rule.weights[i] * std::pow(rule.nodes[i], k);
        CHECK(s == doctest::Approx(1.0 / (k + 1)).epsilon(1e-13));
    }
    CHECK_THROWS_AS(gauss_legendre(0), DomainError);
}

TEST_CASE("measure Taylor identity") {
    const MeasureFunction linear = [](std::span<const double> z, const EmpiricalMeasure& mu) {
        return z[0] * mu.mean()[0];
    };
    const LionsDerivative dlinear = [](std::span<const double> z, const EmpiricalMeasure&, std::span<const double>,
                                       std::span<double> out) { out[0] = z[0]; };
    const MeasureFunction square = [](std::span<const double>, const EmpiricalMeasure& mu) {
        return mu.mean()[0] * mu.mean()[0];
    };
    const LionsDerivative dsquare = [](std::span<const double>, const EmpiricalMeasure& mu, std::span<const double>,
                                       std::span<double> out) { out[0] = 2.0 * mu.mean()[0]; };

    const std::vector<double> z{1.7};
    const std::vector<double> x{0.3, -1.1}, y{2.0, 0.4};
    CHECK(measure_taylor_check(linear, dlinear, z, x, y, 1, 2).residual < 1e-12);

    const auto sq = measure_taylor_check(square, dsquare, z, x, y, 1, 4);
    // closed forms: mean(X) = -0.4, mean(Y) = 1.2
    CHECK(sq.lhs == doctest::Approx(0.16 - 1.44).epsilon(1e-14));
    CHECK(sq.rhs == doctest::Approx(-1.28).epsilon(1e-14));
    CHECK(sq.residual < 1e-10);

    const auto same = measure_taylor_check(square, dsquare, z, x, x, 1, 4);
    CHECK(same.lhs == 0.0);
    CHECK(same.rhs == 0.0);

    const std::vector<double> three{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(measure_taylor_check(square, dsquare, z, x, three, 1, 4), DomainError);
}

TEST_CASE("Taylor residual shrinks with the quadrature order") {
    const MeasureFunction f = [](std::span<const double>, const EmpiricalMeasure& mu) {
        return std::exp(mu.mean()[0]);
    };
    const LionsDerivative df = [](std::span<const double>, const EmpiricalMeasure& mu, std::span<const double>,
                                  std::span<double> out) { out[0] = std::exp(mu.mean()[0]); };
    const std::vector<double> z{0.0};
    const std::vector<double> x{2.0, 3.5, -1.0}, y{-2.0, 0.5, 1.0};
    double prev = INFINITY;
    for (std::size_t q = 1; q <= 6; ++q) {
        const double r = measure_taylor_check(f, df, z, x, y, 1, q).residual;
        CHECK(r <= prev);
        prev = r;
    }
    CHECK(prev < 1e-10);
}
