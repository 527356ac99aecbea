#include "mkv/taming.hpp"

#include <cmath>
#include <limits>

#include "mkv/measure.hpp"

namespace mkv {

namespace {

double int_power(double r, double q) {
    const int k = static_cast<int>(q);
    if (static_cast<double>(k) != q || k > 64) return std::pow(r, q);
    double out = 1.0, b = r;
    for (int e = k; e > 0; e >>= 1) {
        if (e & 1) out *= b;
        b *= b;
    }
    return out;
}

// y^{1/q} for y >= 1
double root(double y, double q) {
    if (q == 2.0) return std::sqrt(y);
    if (q == 3.0) return std::cbrt(y);
    if (q == 4.0) return std::sqrt(std::sqrt(y));
    if (q == 6.0) return std::sqrt(std::cbrt(y));
    return std::pow(y, 1.0 / q);
}

// 1 / (1 + r^q)^{1/q} for r >= 0, evaluated without overflow for large r.
double tame_factor(double r, double q) {
    if (!(r > 0.0)) return 1.0;
    if (q == 1.0) return 1.0 / (1.0 + r);
    if (r <= 1.0) {
        const double rq = int_power(r, q);
        if (rq < 0x1.0p-54) return 1.0;
        if (rq < 1e-5) {
            // (1 + e)^{-1/q} to third order; the remainder e^4 is below rounding
            const double a = 1.0 / q;
            return 1.0 - a * rq * (1.0 - 0.5 * (a + 1.0) * rq * (1.0 - (a + 2.0) / 3.0 * rq));
        }
        return 1.0 / root(1.0 + rq, q);
    }
    const double inv = int_power(1.0 / r, q);
    return 1.0 / (r * root(1.0 + inv, q));
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

thread_local std::vector<double> scratch_a;
thread_local std::vector<double> scratch_b;

std::span<double> buffer(std::vector<double>& v, std::size_t len) {
    if (v.size() < len) v.resize(len);
    return {v.data(), len};
}

}  // namespace

double tame(double f, double scale, double alpha, double n, double q) {
    if (!(scale > 0.0)) throw DomainError("tame: scale must be positive");
    if (!(n >= 1.0)) throw DomainError("tame: n must be >= 1");
    if (f == 0.0) return 0.0;
    const double r = std::abs(f) * std::pow(n, -alpha) / scale;
    return f * tame_factor(r, q);
}

namespace {

// tame_scalar_family with n^{-alpha} already evaluated
double tame_family_scaled(std::span<double> values, double scale, double n_pow, double q) {
    const double factor = tame_factor(norm(values) * n_pow / scale, q);
    if (factor != 1.0) {
        for (auto& v : values) v *= factor;
    }
    return factor;
}

void tame_entries(Out out, double scale, double n_pow, double q) {
    for (auto& v : out) {
        if (v == 0.0) continue;
        v *= tame_factor(std::abs(v) * n_pow / scale, q);
    }
}

}  // namespace

double tame_scalar_family(std::span<double> values, double scale, double alpha, double n, double q) {
    if (!(scale > 0.0)) throw DomainError("tame: scale must be positive");
    if (!(n >= 1.0)) throw DomainError("tame: n must be >= 1");
    return tame_family_scaled(values, scale, std::pow(n, -alpha), q);
}

//---------------------------------------------------------------------------//
// TamedModel
//---------------------------------------------------------------------------//

TamedModel::TamedModel(const Model& base, std::size_t n, Taming mode)
    : base_(&base), n_(n), mode_(mode), nd_(static_cast<double>(n)) {
    if (n == 0) throw DomainError("taming needs n >= 1");
    exp_.jump = 1.0 / (4.0 * base.moment_order());
    pow_drift_ = std::pow(nd_, -exp_.drift);
    pow_diffusion_ = std::pow(nd_, -exp_.diffusion);
    pow_products_ = std::pow(nd_, -exp_.products);
    pow_jump_ = std::pow(nd_, -exp_.jump);
}

double TamedModel::measure_scale(Point x, const EmpiricalMeasure& mu) const {
    return 1.0 + norm(x) + w2_to_dirac0(mu);
}

double TamedModel::state_scale(Point x) const { return 1.0 + norm(x); }

double TamedModel::drift(Point x, const EmpiricalMeasure& mu, Out out) const {
    base_->drift(x, mu, out);
    if (mode_ == Taming::off) return 1.0;
    return tame_family_scaled(out, measure_scale(x, mu), pow_drift_, 1.0 / exp_.drift);
}

void TamedModel::diffusion(Point x, const EmpiricalMeasure& mu, Out out) const {
    base_->diffusion(x, mu, out);
    if (mode_ == Taming::off) return;
    tame_family_scaled(out, state_scale(x), pow_diffusion_, 1.0 / exp_.diffusion);
}

void TamedModel::jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const {
    base_->jump(x, mu, z, out);
    if (mode_ == Taming::off) return;
    tame_family_scaled(out, state_scale(x), pow_jump_, 1.0 / exp_.jump);
}

void TamedModel::jump_compensator(Point x, const EmpiricalMeasure& mu, Out out) const {
    if (mode_ == Taming::off) {
        base_->jump_compensator(x, mu, out);
        return;
    }
    const auto& marks = base_->marks();
    std::fill(out.begin(), out.end(), 0.0);
    auto g = buffer(scratch_b, out.size());
    for (std::size_t j = 0; j < marks.size(); ++j) {
        jump(x, mu, marks.atom(j), g);
        for (std::size_t u = 0; u < out.size(); ++u) out[u] += marks.weight(j) * g[u];
    }
}

void TamedModel::raw_diffusion_dx_products(Point x, const EmpiricalMeasure& mu, Out out) const {
    const std::size_t d = base_->state_dim();
    const std::size_t m = base_->noise_dim();
    auto sig = buffer(scratch_a, d * m);
    auto der = buffer(scratch_b, d * m * d);
    base_->diffusion(x, mu, sig);
    base_->diffusion_dx(x, mu, der);
    for (std::size_t u = 0; u < d; ++u)
        for (std::size_t l = 0; l < m; ++l)
            for (std::size_t l1 = 0; l1 < m; ++l1) {
                double s = 0.0;
                for (std::size_t v = 0; v < d; ++v) s += der[(u * m + l) * d + v] * sig[v * m + l1];
                out[(u * m + l) * m + l1] = s;
            }
}

void TamedModel::raw_diffusion_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Out out) const {
    const std::size_t d = base_->state_dim();
    const std::size_t m = base_->noise_dim();
    auto sig = buffer(scratch_a, d * m);
    auto der = buffer(scratch_b, d * m * d);
    base_->diffusion(y, mu, sig);
    base_->diffusion_dmu(x, mu, y, der);
    for (std::size_t u = 0; u < d; ++u)
        for (std::size_t l = 0; l < m; ++l)
            for (std::size_t l1 = 0; l1 < m; ++l1) {
                double s = 0.0;
                for (std::size_t v = 0; v < d; ++v) s += der[(u * m + l) * d + v] * sig[v * m + l1];
                out[(u * m + l) * m + l1] = s;
            }
}

void TamedModel::raw_jump_dx_products(Point x, const EmpiricalMeasure& mu, Point z, Out out) const {
    const std::size_t d = base_->state_dim();
    const std::size_t m = base_->noise_dim();
    auto sig = buffer(scratch_a, d * m);
    auto der = buffer(scratch_b, d * d);
    base_->diffusion(x, mu, sig);
    base_->jump_dx(x, mu, z, der);
    for (std::size_t u = 0; u < d; ++u)
        for (std::size_t l1 = 0; l1 < m; ++l1) {
            double s = 0.0;
            for (std::size_t v = 0; v < d; ++v) s += der[u * d + v] * sig[v * m + l1];
            out[u * m + l1] = s;
        }
}

void TamedModel::raw_jump_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const {
    const std::size_t d = base_->state_dim();
    const std::size_t m = base_->noise_dim();
    auto sig = buffer(scratch_a, d * m);
    auto der = buffer(scratch_b, d * d);
    base_->diffusion(y, mu, sig);
    base_->jump_dmu(x, mu, y, z, der);
    for (std::size_t u = 0; u < d; ++u)
        for (std::size_t l1 = 0; l1 < m; ++l1) {
            double s = 0.0;
            for (std::size_t v = 0; v < d; ++v) s += der[u * d + v] * sig[v * m + l1];
            out[u * m + l1] = s;
        }
}


void TamedModel::diffusion_dx_products(Point x, const EmpiricalMeasure& mu, Out out) const {
    raw_diffusion_dx_products(x, mu, out);
    if (mode_ == Taming::on) tame_entries(out, measure_scale(x, mu), pow_products_, 1.0 / exp_.products);
}

void TamedModel::diffusion_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Out out) const {
    raw_diffusion_dmu_products(x, mu, y, out);
    if (mode_ == Taming::on) tame_entries(out, measure_scale(x, mu), pow_products_, 1.0 / exp_.products);
}

void TamedModel::jump_dx_products(Point x, const EmpiricalMeasure& mu, Point z, Out out) const {
    raw_jump_dx_products(x, mu, z, out);
    if (mode_ == Taming::on) tame_entries(out, measure_scale(x, mu), pow_products_, 1.0 / exp_.products);
}

void TamedModel::jump_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const {
    raw_jump_dmu_products(x, mu, y, z, out);
    if (mode_ == Taming::on) tame_entries(out, measure_scale(x, mu), pow_products_, 1.0 / exp_.products);
}

TamedModel make_tamed(const Model& model, std::size_t n, Taming mode) { return TamedModel(model, n, mode); }

//---------------------------------------------------------------------------//
// Probes
//---------------------------------------------------------------------------//

namespace {

struct Sample {
    std::vector<double> x;
    std::vector<double> atoms;
};

// x with |x| = radius in a uniformly random direction; atoms uniform in the
// cube of half-width radius.
Sample draw_sample(Rng& rng, std::size_t d, std::size_t atoms, double radius) {
    Sample s;
    s.x.resize(d);
    double nrm = 0.0;
    for (auto& v : s.x) {
        v = rng.normal();
        nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (auto& v : s.x) v *= radius / (nrm > 0.0 ? nrm : 1.0);
    s.atoms.resize(atoms * d);
    for (auto& v : s.atoms) v = radius * (2.0 * rng.uniform() - 1.0);
    return s;
}

double ols_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

struct Tracker {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> where;
    void add(double v, const std::vector<double>& x) {
        if (v > best) {
            best = v;
            where = x;
        }
    }
};

double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return s;
}

}  // namespace

ProbeReport probe_assumptions(const Model& model, const ProbeSpec& spec) {
    if (spec.samples == 0 || spec.atoms == 0 || spec.shells < 2 || spec.resolutions.empty()) {
        throw DomainError("probe_assumptions: needs samples, atoms, resolutions and at least two shells");
    }
    ProbeReport report;
    const std::size_t d = model.state_dim();
    const std::size_t m = model.noise_dim();
    const auto& marks = model.marks();
    const double p = model.moment_order();
    Rng rng(stream_seed(spec.seed, 0, 0, Stream::initial));

    std::vector<double> b(d), b2(d), sig(d * m), sig2(d * m), g(d), g2(d);
    auto finite = [&](double v) {
        if (!std::isfinite(v)) {
            ++report.nonfinite;
            return false;
        }
        return true;
    };
    std::vector<double> radii(spec.shells);
    for (std::size_t s = 0; s < spec.shells; ++s) {
        radii[s] = std::pow(spec.radius, static_cast<double>(s) / static_cast<double>(spec.shells - 1));
    }

    // growth coercivity: 2 x.b + |sigma|^2 + int |gamma|^2 nu <= C (1 + |x|^2 + W2^2)
    {
        Tracker all;
        std::vector<double> lx, ly;
        for (double r : radii) {
            Tracker shell;
            for (std::size_t k = 0; k < spec.samples; ++k) {
                const auto s = draw_sample(rng, d, spec.atoms, r);
                const EmpiricalMeasure mu(s.atoms, d);
                model.drift(s.x, mu, b);
                model.diffusion(s.x, mu, sig);
                double e = 0.0;
                for (std::size_t u = 0; u < d; ++u) e += 2.0 * s.x[u] * b[u];
                e += sq_norm(sig);
                for (std::size_t j = 0; j < marks.size(); ++j) {
                    model.jump(s.x, mu, marks.atom(j), g);
                    e += marks.weight(j) * sq_norm(g);
                }
                const double ratio = e / (1.0 + sq_norm(s.x) + mu.second_moment());
                if (!finite(ratio)) continue;
                shell.add(ratio, s.x);
                all.add(ratio, s.x);
            }
            lx.push_back(std::log(r));
            ly.push_back(std::log1p(std::max(shell.best, 0.0)));
        }
        report.rows.push_back({"growth_coercivity", 0, all.best, all.where});
        if (ols_slope(lx, ly) > 0.5) report.flagged.push_back("growth_coercivity");
    }

    // monotonicity: 2 (x-x').(b-b') + a|sigma-sigma'|^2 + a int|gamma-gamma'|^2 nu <= C (|x-x'|^2 + W2^2)
    {
        Tracker all;
        std::vector<double> lx, ly;
        const double alpha = spec.monotone_alpha;
        for (double r : radii) {
            Tracker shell;
            for (std::size_t k = 0; k < spec.samples; ++k) {
                const auto s = draw_sample(rng, d, spec.atoms, r);
                auto s2 = s;
                const double delta = r * std::pow(10.0, -3.0 * rng.uniform());
                for (auto& v : s2.x) v += delta * (2.0 * rng.uniform() - 1.0);
                for (auto& v : s2.atoms) v += delta * (2.0 * rng.uniform() - 1.0);
                const EmpiricalMeasure mu(s.atoms, d);
                const EmpiricalMeasure mu2(s2.atoms, d);
                model.drift(s.x, mu, b);
                model.drift(s2.x, mu2, b2);
                model.diffusion(s.x, mu, sig);
                model.diffusion(s2.x, mu2, sig2);
                double e = 0.0, dx2 = 0.0;
                for (std::size_t u = 0; u < d; ++u) {
                    e += 2.0 * (s.x[u] - s2.x[u]) * (b[u] - b2[u]);
                    dx2 += (s.x[u] - s2.x[u]) * (s.x[u] - s2.x[u]);
                }
                for (std::size_t c = 0; c < d * m; ++c) e += alpha * (sig[c] - sig2[c]) * (sig[c] - sig2[c]);
                for (std::size_t j = 0; j < marks.size(); ++j) {
                    model.jump(s.x, mu, marks.atom(j), g);
                    model.jump(s2.x, mu2, marks.atom(j), g2);
                    for (std::size_t u = 0; u < d; ++u) e += alpha * marks.weight(j) * (g[u] - g2[u]) * (g[u] - g2[u]);
                }
                const double w = d == 1 ? w2_1d_exact(mu, mu2) : w2_index_bound(mu, mu2);
                const double denom = dx2 + w * w;
                if (!(denom > 0.0)) continue;
                const double ratio = e / denom;
                if (!finite(ratio)) continue;
                shell.add(ratio, s.x);
                all.add(ratio, s.x);
            }
            lx.push_back(std::log(r));
            ly.push_back(std::log1p(std::max(shell.best, 0.0)));
        }
        report.rows.push_back({"monotonicity", 0, all.best, all.where});
        if (ols_slope(lx, ly) > 0.5) report.flagged.push_back("monotonicity");
    }

    // p-bar coercivity with tamed coefficients, across n
    {
        const auto rule = gauss_legendre(16);
        std::vector<double> ln, ly;
        for (std::size_t n : spec.resolutions) {
            const TamedModel tm(model, n, Taming::on);
            Tracker best;
            for (double r : radii) {
                for (std::size_t k = 0; k < spec.samples; ++k) {
                    const auto s = draw_sample(rng, d, spec.atoms, r);
                    const EmpiricalMeasure mu(s.atoms, d);
                    tm.drift(s.x, mu, b);
                    tm.diffusion(s.x, mu, sig);
                    const double nx = std::sqrt(sq_norm(s.x));
                    const double xp2 = std::pow(nx, p - 2.0);
                    double e = 0.0;
                    for (std::size_t u = 0; u < d; ++u) e += 2.0 * xp2 * s.x[u] * b[u];
                    e += (p - 1.0) * xp2 * sq_norm(sig);
                    for (std::size_t j = 0; j < marks.size(); ++j) {
                        tm.jump(s.x, mu, marks.atom(j), g);
                        double integral = 0.0;
                        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                            const double th = rule.nodes[q];
                            double yy = 0.0;
                            for (std::size_t u = 0; u < d; ++u) yy += (s.x[u] + th * g[u]) * (s.x[u] + th * g[u]);
                            integral += rule.weights[q] * (1.0 - th) * std::pow(std::sqrt(yy), p - 2.0);
                        }
                        e += 2.0 * (p - 1.0) * marks.weight(j) * sq_norm(g) * integral;
                    }
                    const double ratio = e / (1.0 + std::pow(nx, p) + std::pow(mu.second_moment(), 0.5 * p));
                    if (!finite(ratio)) continue;
                    best.add(ratio, s.x);
                }
            }
            report.rows.push_back({"tamed_coercivity", n, best.best, best.where});
            ln.push_back(std::log(static_cast<double>(n)));
            ly.push_back(std::log1p(std::max(best.best, 0.0)));
        }
        if (spec.resolutions.size() >= 2 && ols_slope(ln, ly) > 0.1) report.flagged.push_back("tamed_coercivity");
    }

    // taming gaps: pointwise taming gaps scaled by n^{1 + 2/(eps + 2)} on moderate states
    {
        const double r_max = std::min(spec.radius, 5.0);
        const double scale_exp = 1.0 + 2.0 / (spec.epsilon + 2.0);
        std::vector<double> ln, ly;
        for (std::size_t n : spec.resolutions) {
            const TamedModel tm(model, n, Taming::on);
            Tracker best;
            for (std::size_t k = 0; k < spec.samples; ++k) {
                const auto s = draw_sample(rng, d, spec.atoms, r_max * rng.uniform());
                const EmpiricalMeasure mu(s.atoms, d);
                model.drift(s.x, mu, b);
                tm.drift(s.x, mu, b2);
                model.diffusion(s.x, mu, sig);
                tm.diffusion(s.x, mu, sig2);
                double gap = 0.0;
                for (std::size_t u = 0; u < d; ++u) gap += (b[u] - b2[u]) * (b[u] - b2[u]);
                for (std::size_t c = 0; c < d * m; ++c) gap += (sig[c] - sig2[c]) * (sig[c] - sig2[c]);
                for (std::size_t j = 0; j < marks.size(); ++j) {
                    model.jump(s.x, mu, marks.atom(j), g);
                    tm.jump(s.x, mu, marks.atom(j), g2);
                    for (std::size_t u = 0; u < d; ++u) gap += marks.weight(j) * (g[u] - g2[u]) * (g[u] - g2[u]);
                }
                const double scaled = gap * std::pow(static_cast<double>(n), scale_exp);
                if (!finite(scaled)) continue;
                best.add(scaled, s.x);
            }
            report.rows.push_back({"taming_gap", n, best.best, best.where});
            ln.push_back(std::log(static_cast<double>(n)));
            ly.push_back(std::log1p(std::max(best.best, 0.0)));
        }
        if (spec.resolutions.size() >= 2 && ols_slope(ln, ly) > 0.1) report.flagged.push_back("taming_gap");
    }
    return report;
}


//---------------------------------------------------------------------------//
// Min-bound fuzzing
//---------------------------------------------------------------------------//

bool TamingBoundReport::passed() const {
    for (const auto& f : families) {
        if (f.violations > 0) return false;
    }
    return !families.empty();
}

TamingBoundReport check_taming_bounds(const Model& model, std::size_t n, std::size_t samples, std::uint64_t seed,
                                      double rel_slack) {
    if (samples == 0) throw DomainError("check_taming_bounds: no samples requested");
    const std::size_t d = model.state_dim();
    const std::size_t m = model.noise_dim();
    const auto& marks = model.marks();
    const double p = model.moment_order();
    const double nd = static_cast<double>(n);
    const TamedModel tm(model, n, Taming::on);
    const auto& ex = tm.exponents();
    constexpr std::size_t atoms = 4;

    TamingBoundReport report;
    report.n = n;
    for (const char* name : {"drift", "diffusion", "dx_products", "dmu_products", "jump_moment"}) {
        report.families.push_back({name});
    }
    auto record = [&](std::size_t fam, double value, double bound) {
        auto& f = report.families[fam];
        ++f.checked;
        const double excess = bound > 0.0 ? (value - bound) / bound : (value > 0.0 ? 1.0 : 0.0);
        if (!(value <= bound * (1.0 + rel_slack))) {
            ++f.violations;
            f.max_excess = std::max(f.max_excess, std::isfinite(excess) ? excess : 1.0);
        }
    };

    Rng rng(stream_seed(seed, n, 0, Stream::initial));
    std::vector<double> raw(d * m * m), tam(d * m * m), g(d), gr(d);
    for (std::size_t k = 0; k < samples; ++k) {
        const double radius = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
        const auto s = draw_sample(rng, d, atoms, radius);
        const EmpiricalMeasure mu(s.atoms, d);
        const double scale = tm.measure_scale(s.x, mu);
        const auto y = mu.atom(static_cast<std::size_t>(rng.uniform() * atoms) % atoms);

        model.drift(s.x, mu, {raw.data(), d});
        tm.drift(s.x, mu, {tam.data(), d});
        record(0, std::sqrt(sq_norm({tam.data(), d})),
               std::min(std::pow(nd, ex.drift) * scale, std::sqrt(sq_norm({raw.data(), d}))));

        model.diffusion(s.x, mu, {raw.data(), d * m});
        tm.diffusion(s.x, mu, {tam.data(), d * m});
        record(1, std::sqrt(sq_norm({tam.data(), d * m})),
               std::min(std::pow(nd, ex.diffusion) * scale, std::sqrt(sq_norm({raw.data(), d * m}))));

        const double cap = std::pow(nd, ex.products) * scale;
        auto entries = [&](std::size_t fam, std::size_t len) {
            for (std::size_t e = 0; e < len; ++e) record(fam, std::abs(tam[e]), std::min(cap, std::abs(raw[e])));
        };
        tm.raw_diffusion_dx_products(s.x, mu, {raw.data(), d * m * m});
        tm.diffusion_dx_products(s.x, mu, {tam.data(), d * m * m});
        entries(2, d * m * m);
        tm.raw_diffusion_dmu_products(s.x, mu, y, {raw.data(), d * m * m});
        tm.diffusion_dmu_products(s.x, mu, y, {tam.data(), d * m * m});
        entries(3, d * m * m);

        double tamed_sum = 0.0, raw_sum = 0.0;
        for (std::size_t j = 0; j < marks.size(); ++j) {
            const auto z = marks.atom(j);
            tm.raw_jump_dx_products(s.x, mu, z, {raw.data(), d * m});
            tm.jump_dx_products(s.x, mu, z, {tam.data(), d * m});
            entries(2, d * m);
            tm.raw_jump_dmu_products(s.x, mu, y, z, {raw.data(), d * m});
            tm.jump_dmu_products(s.x, mu, y, z, {tam.data(), d * m});
            entries(3, d * m);

            model.jump(s.x, mu, z, gr);
            tm.jump(s.x, mu, z, g);
            tamed_sum += marks.weight(j) * std::pow(std::sqrt(sq_norm(g)), p);
            raw_sum += marks.weight(j) * std::pow(std::sqrt(sq_norm(gr)), p);
        }
        if (marks.size() > 0) {
            record(4, tamed_sum,
                   std::min(std::pow(nd, 0.25) * std::pow(scale, p) * marks.total_intensity(), raw_sum));
        }
    }
    return report;
}

}  // namespace mkv
