#include "mkv/core.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace mkv {

Grid::Grid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("grid horizon must be positive and finite");
    if (steps == 0) throw DomainError("grid step count must be positive");
}

double Grid::point(std::size_t k) const {
    if (k > steps_) throw DomainError("grid point index out of range");
    if (k == steps_) return horizon_;
    return horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
}

std::size_t kappa_index(const Grid& grid, double t) {
    if (!(t >= 0.0 && t <= grid.horizon())) throw DomainError("kappa: t outside [0, T]");
    auto k = static_cast<std::size_t>(std::floor(t * static_cast<double>(grid.steps()) / grid.horizon()));
    k = std::min(k, grid.steps());
    // correct floating-point floor errors against the exact grid points
    while (k > 0 && grid.point(k) > t) --k;
    while (k < grid.steps() && grid.point(k + 1) <= t) ++k;
    return k;
}

double kappa(const Grid& grid, double t) { return grid.point(kappa_index(grid, t)); }

MarkMeasure::MarkMeasure(std::size_t mark_dim, std::vector<double> atoms, std::vector<double> weights)
    : mark_dim_(mark_dim), atoms_(std::move(atoms)), weights_(std::move(weights)) {
    if (mark_dim == 0) throw DomainError("mark dimension must be positive");
    if (atoms_.size() != weights_.size() * mark_dim) throw DomainError("mark atoms/weights size mismatch");
    for (double w : weights_) {
        if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("mark weights must be positive and finite");
    }
    total_ = std::accumulate(weights_.begin(), weights_.end(), 0.0);
}

MarkMeasure MarkMeasure::symmetric_pair(double intensity) {
    if (intensity < 0.0) throw DomainError("jump intensity must be non-negative");
    if (intensity == 0.0) return MarkMeasure(1, {}, {});
    return MarkMeasure(1, {1.0, -1.0}, {0.5 * intensity, 0.5 * intensity});
}

Model::Model(std::size_t state_dim, std::size_t noise_dim, MarkMeasure marks, double growth_exponent,
             double moment_order)
    : state_dim_(state_dim),
      noise_dim_(noise_dim),
      marks_(std::move(marks)),
      growth_exponent_(growth_exponent),
      moment_order_(moment_order) {
    if (state_dim == 0 || noise_dim == 0) throw DomainError("model dimensions must be positive");
    if (!(moment_order > 4.0)) throw DomainError("moment order p-bar must exceed 4");
    if (growth_exponent < 0.0) throw DomainError("growth exponent must be non-negative");
}

void Model::jump_compensator(Point x, const EmpiricalMeasure& mu, Out out) const {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> g(state_dim_);
    for (std::size_t j = 0; j < marks_.size(); ++j) {
        jump(x, mu, marks_.atom(j), g);
        for (std::size_t u = 0; u < state_dim_; ++u) out[u] += marks_.weight(j) * g[u];
    }
}

std::string_view to_string(Scheme s) { return s == Scheme::euler ? "euler" : "milstein"; }
std::string_view to_string(Taming t) { return t == Taming::on ? "on" : "off"; }

Scheme parse_scheme(std::string_view s) {
    if (s == "euler") return Scheme::euler;
    if (s == "milstein") return Scheme::milstein;
    throw ConfigError("unknown scheme '" + std::string(s) + "' (expected euler|milstein)");
}

Taming parse_taming(std::string_view s) {
    if (s == "on") return Taming::on;
    if (s == "off") return Taming::off;
    throw ConfigError("unknown taming mode '" + std::string(s) + "' (expected on|off)");
}

void RunConfig::validate() const {
    if (particles == 0) throw ConfigError("particles must be >= 1");
    if (runs == 0) throw ConfigError("runs must be >= 1");
    if (substeps == 0) throw ConfigError("substeps must be >= 1");
    if (!(initial.stddev >= 0.0)) throw ConfigError("initial.stddev must be >= 0");
}

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t run, std::uint64_t particle, Stream label,
                          std::uint64_t extra) {
    std::uint64_t h = mix64(base + 0x9e3779b97f4a7c15ULL);
    for (std::uint64_t word : {run, particle, static_cast<std::uint64_t>(label), extra}) {
        h = mix64(h ^ (word + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    }
    return h;
}

std::vector<double> sample_initial_state(const InitialLaw& law, std::uint64_t seed, std::size_t run,
                                         std::size_t particles, std::size_t dim) {
    std::vector<double> x(particles * dim);
    for (std::size_t i = 0; i < particles; ++i) {
        Rng rng(stream_seed(seed, run, i, Stream::initial));
        for (std::size_t u = 0; u < dim; ++u) x[i * dim + u] = law.mean + law.stddev * rng.normal();
    }
    return x;
}

//---------------------------------------------------------------------------//
// validate_model
//---------------------------------------------------------------------------//

bool ValidationReport::passed() const {
    if (fatal) return false;
    return std::none_of(entries.begin(), entries.end(), [](const ValidationEntry& e) { return e.flagged; });
}

double ValidationReport::max_discrepancy() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_discrepancy);
    return m;
}

namespace {

using Eval = std::function<void(Point, const EmpiricalMeasure&, Out)>;

struct Tracker {
    ValidationReport& report;
    std::size_t index;

    void add(double analytic, double reference) {
        auto& e = report.entries[index];
        if (!std::isfinite(analytic) || !std::isfinite(reference)) {
            report.fatal = true;
            report.fatal_detail = "non-finite value in " + e.quantity;
            return;
        }
        const double rel = std::abs(analytic - reference) / std::max(1.0, std::abs(analytic));
        e.max_discrepancy = std::max(e.max_discrepancy, rel);
        e.flagged = e.max_discrepancy > report.tolerance;
    }
};

// Central differences of `f` (output length `len`) in the state variable.
// Result layout: [component][direction].
std::vector<double> fd_state(const Eval& f, Point x, const EmpiricalMeasure& mu, std::size_t len, double h) {
    const std::size_t d = x.size();
    std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
    std::vector<double> fp(len), fm(len), out(len * d);
    for (std::size_t v = 0; v < d; ++v) {
        xp[v] += h;
        xm[v] -= h;
        f(xp, mu, fp);
        f(xm, mu, fm);
        for (std::size_t c = 0; c < len; ++c) out[c * d + v] = (fp[c] - fm[c]) / (2.0 * h);
        xp[v] = x[v];
        xm[v] = x[v];
    }
    return out;
}

// N times the central difference of `f` when atom j of mu moves; approximates
// the Lions derivative at y = x^j. Layout: [component][direction].
std::vector<double> fd_measure(const Eval& f, Point x, const EmpiricalMeasure& mu, std::size_t j, std::size_t len,
                               double h) {
    const std::size_t d = mu.dim();
    std::vector<double> shift(d, 0.0), fp(len), fm(len), out(len * d);
    const double n = static_cast<double>(mu.size());
    for (std::size_t v = 0; v < d; ++v) {
        shift[v] = h;
        const auto plus = shifted(mu, j, shift);
        shift[v] = -h;
        const auto minus = shifted(mu, j, shift);
        shift[v] = 0.0;
        f(x, plus, fp);
        f(x, minus, fm);
        for (std::size_t c = 0; c < len; ++c) out[c * d + v] = n * (fp[c] - fm[c]) / (2.0 * h);
    }
    return out;
}

void check_values(Tracker t, std::span<const double> analytic, std::span<const double> reference) {
    for (std::size_t i = 0; i < analytic.size(); ++i) t.add(analytic[i], reference[i]);
}

}  // namespace

ValidationReport validate_model(const Model& model, std::span<const ProbePoint> probes, double tolerance,
                                double perturbation) {
    ValidationReport report;
    report.tolerance = tolerance;
    for (const char* q : {"drift_dx", "diffusion_dx", "jump_dx", "drift_dmu", "diffusion_dmu", "jump_dmu",
                          "jump_compensator"}) {
        report.entries.push_back({q, 0.0, false});
    }
    const std::size_t d = model.state_dim();
    const std::size_t m = model.noise_dim();
    const auto& marks = model.marks();
    const double h = perturbation;

    const Eval drift = [&](Point x, const EmpiricalMeasure& mu, Out o) { model.drift(x, mu, o); };
    const Eval diffusion = [&](Point x, const EmpiricalMeasure& mu, Out o) { model.diffusion(x, mu, o); };

    for (const auto& probe : probes) {
        if (probe.x.size() != d) throw DomainError("validate_model: probe point has wrong dimension");
        const EmpiricalMeasure mu(probe.atoms, d);
        const Point x = probe.x;

        std::vector<double> analytic(d * m * d);
        std::vector<double> values(d * m);

        // non-finite coefficient values are fatal
        model.drift(x, mu, std::span(values).first(d));
        model.diffusion(x, mu, values);
        for (double v : values) {
            if (!std::isfinite(v)) {
                report.fatal = true;
                report.fatal_detail = "non-finite coefficient value at probe point";
            }
        }

        model.drift_dx(x, mu, std::span(analytic).first(d * d));
        check_values({report, 0}, std::span(analytic).first(d * d), fd_state(drift, x, mu, d, h));

        model.diffusion_dx(x, mu, analytic);
        check_values({report, 1}, analytic, fd_state(diffusion, x, mu, d * m, h));

        for (std::size_t a = 0; a < marks.size(); ++a) {
            const auto z = marks.atom(a);
            const Eval jump = [&](Point xx, const EmpiricalMeasure& mm, Out o) { model.jump(xx, mm, z, o); };
            model.jump_dx(x, mu, z, std::span(analytic).first(d * d));
            check_values({report, 2}, std::span(analytic).first(d * d), fd_state(jump, x, mu, d, h));
        }

        for (std::size_t j = 0; j < mu.size(); ++j) {
            const auto y = mu.atom(j);
            model.drift_dmu(x, mu, y, std::span(analytic).first(d * d));
            check_values({report, 3}, std::span(analytic).first(d * d), fd_measure(drift, x, mu, j, d, h));

            model.diffusion_dmu(x, mu, y, analytic);
            check_values({report, 4}, analytic, fd_measure(diffusion, x, mu, j, d * m, h));

            for (std::size_t a = 0; a < marks.size(); ++a) {
                const auto z = marks.atom(a);
                const Eval jump = [&](Point xx, const EmpiricalMeasure& mm, Out o) { model.jump(xx, mm, z, o); };
                model.jump_dmu(x, mu, y, z, std::span(analytic).first(d * d));
                check_values({report, 5}, std::span(analytic).first(d * d), fd_measure(jump, x, mu, j, d, h));
            }
        }

        std::vector<double> comp(d), direct(d, 0.0), g(d);
        model.jump_compensator(x, mu, comp);
        for (std::size_t a = 0; a < marks.size(); ++a) {
            model.jump(x, mu, marks.atom(a), g);
            for (std::size_t u = 0; u < d; ++u) direct[u] += marks.weight(a) * g[u];
        }
        check_values({report, 6}, comp, direct);
    }
    return report;
}

}  // namespace mkv
