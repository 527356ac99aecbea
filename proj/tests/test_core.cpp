#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "mkv/core.hpp"
#include "mkv/models.hpp"

using namespace mkv;

namespace {

// Linear model whose drift_dx is wrong by a constant, or whose drift is NaN.
class FaultyModel final : public Model {
  public:
    enum class Fault { wrong_dx, nan_drift };

    FaultyModel(Fault f) : Model(1, 1, MarkMeasure::symmetric_pair(2.0), 0.0, 6.0), inner_(MeanFieldOUJump::Params{}), fault_(f) {}

    std::string_view name() const override { return "faulty"; }
    void drift(Point x, const EmpiricalMeasure& mu, Out out) const override {
        inner_.drift(x, mu, out);
        if (fault_ == Fault::nan_drift) out[0] = std::nan("");
    }
    void diffusion(Point x, const EmpiricalMeasure& mu, Out out) const override { inner_.diffusion(x, mu, out); }
    void jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override { inner_.jump(x, mu, z, out); }
    void drift_dx(Point x, const EmpiricalMeasure& mu, Out out) const override {
        inner_.drift_dx(x, mu, out);
        if (fault_ == Fault::wrong_dx) out[0] += 0.1;
    }
    void diffusion_dx(Point x, const EmpiricalMeasure& mu, Out out) const override { inner_.diffusion_dx(x, mu, out); }
    void jump_dx(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override { inner_.jump_dx(x, mu, z, out); }
    void drift_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override { inner_.drift_dmu(x, mu, y, out); }
    void diffusion_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override {
        inner_.diffusion_dmu(x, mu, y, out);
    }
    void jump_dmu(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const override {
        inner_.jump_dmu(x, mu, y, z, out);
    }

  private:
    MeanFieldOUJump inner_;
    Fault fault_;
};

std::vector<ProbePoint> probes(std::size_t count, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ProbePoint> out(count);
    for (auto& p : out) {
        p.x.resize(d);
        p.atoms.resize(6 * d);
        for (double& e : p.x) e = 2.0 * rng.normal();
        for (double& e : p.atoms) e = 2.0 * rng.normal();
    }
    return out;
}

}  // namespace

TEST_CASE("kappa is the grid floor") {
    CHECK(kappa(Grid(1.0, 4), 0.3) == 0.25);
    CHECK(kappa(Grid(1.0, 4), 0.25) == 0.25);
    CHECK(kappa(Grid(2.0, 8), 1.999) == 1.75);
    CHECK(kappa(Grid(1.0, 4), 0.0) == 0.0);
    CHECK(kappa(Grid(1.0, 4), 1.0) == 1.0);
    CHECK(kappa_index(Grid(1.0, 4), 0.3) == 1);
    CHECK_THROWS_AS(kappa(Grid(1.0, 4), -0.1), DomainError);
    CHECK_THROWS_AS(kappa(Grid(1.0, 4), 1.1), DomainError);
}

TEST_CASE("kappa is idempotent and grid points are exact") {
    const Grid g(3.0, 7);
    CHECK(g.point(0) == 0.0);
    CHECK(g.point(7) == 3.0);
    for (std::size_t k = 1; k <= 7; ++k) CHECK(g.point(k) > g.point(k - 1));
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double t = 3.0 * rng.uniform();
        const double k = kappa(g, t);
        CHECK(kappa(g, k) == k);
        CHECK(k <= t);
        CHECK(t - k < g.step_size() + 1e-15);
    }
    CHECK_THROWS_AS(Grid(0.0, 4), DomainError);
    CHECK_THROWS_AS(Grid(1.0, 0), DomainError);
}

TEST_CASE("mark measure") {
    const auto m = MarkMeasure::symmetric_pair(3.0);
    REQUIRE(m.size() == 2);
    CHECK(m.total_intensity() == 3.0);
    CHECK(m.atom(0)[0] == 1.0);
    CHECK(m.atom(1)[0] == -1.0);
    CHECK(m.probability(0) == 0.5);
    CHECK(m.integrate([](Point z) { return z[0] * z[0]; }) == 3.0);
    CHECK(MarkMeasure::symmetric_pair(0.0).size() == 0);
    CHECK_THROWS(MarkMeasure(1, {1.0}, {-1.0}));
}

TEST_CASE("seeds are pure and label-separated") {
    CHECK(stream_seed(1, 2, 3, Stream::brownian) == stream_seed(1, 2, 3, Stream::brownian));
    std::set<std::uint64_t> seen;
    for (std::uint64_t run = 0; run < 4; ++run) {
        for (std::uint64_t p = 0; p < 4; ++p) {
            for (auto s : {Stream::initial, Stream::brownian, Stream::jumps, Stream::bridge}) {
                seen.insert(stream_seed(9, run, p, s));
            }
        }
    }
    CHECK(seen.size() == 64);
    CHECK(stream_seed(9, 0, 0, Stream::bridge, 1) != stream_seed(9, 0, 0, Stream::bridge, 2));
}

TEST_CASE("rng moments") {
    Rng rng(42);
    const int n = 200000;
    double su = 0.0, sn = 0.0, sn2 = 0.0, se = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
        se += rng.exponential();
    }
    // 5 standard errors of each mean
    CHECK(std::abs(su / n - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
    CHECK(std::abs(sn / n) < 5.0 / std::sqrt(n));
    CHECK(std::abs(sn2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(se / n - 1.0) < 5.0 / std::sqrt(n));
}

TEST_CASE("initial states do not depend on N") {
    const InitialLaw law{1.0, 0.5};
    const auto a = sample_initial_state(law, 7, 3, 5, 2);
    const auto b = sample_initial_state(law, 7, 3, 10, 2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    const auto c = sample_initial_state(law, 7, 4, 5, 2);
    CHECK(a[0] != c[0]);
    const auto point = sample_initial_state({2.5, 0.0}, 1, 0, 3, 1);
    for (double v : point) CHECK(v == 2.5);
}

TEST_CASE("run config validation") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    c.particles = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_scheme("euler") == Scheme::euler);
    CHECK(to_string(Scheme::milstein) == "milstein");
    CHECK_THROWS_AS(parse_scheme("rk4"), ConfigError);
    CHECK(parse_taming("off") == Taming::off);
}

TEST_CASE("parallel_for visits each index once and rethrows") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) throw DomainError("boom");
                                 }),
                    DomainError);
}

TEST_CASE("validate_model on built-ins") {
    const auto lin = make_model("linear", {});
    const auto lp = probes(20, 1, 3);
    const auto rl = validate_model(*lin, lp);
    CHECK(rl.passed());
    CHECK(rl.max_discrepancy() < 1e-8);

    const auto lin2 = make_model("linear", {{"dim", 2}, {"s2", 0.3}, {"g2", -0.2}});
    CHECK(validate_model(*lin2, probes(20, 2, 4)).passed());

    const auto cubic = make_model("cubic", {{"rho", 0.5}});
    const auto rc = validate_model(*cubic, lp, 1e-6, 1e-5);
    CHECK(rc.passed());
    CHECK(rc.max_discrepancy() < 1e-6);
}

TEST_CASE("validate_model flags faults") {
    const auto pts = probes(5, 1, 11);
    const auto wrong = validate_model(FaultyModel(FaultyModel::Fault::wrong_dx), pts);
    CHECK_FALSE(wrong.passed());
    bool flagged = false;
    for (const auto& e : wrong.entries) flagged = flagged || e.flagged;
    CHECK(flagged);

    const auto nan = validate_model(FaultyModel(FaultyModel::Fault::nan_drift), pts);
    CHECK(nan.fatal);
    CHECK_FALSE(nan.passed());
}
