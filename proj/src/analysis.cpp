#include "mkv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include "mkv/noise.hpp"
#include "mkv/schemes.hpp"

namespace mkv {

namespace {

constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

// mean and standard error of the mean; se is 0 for a single value
MeanSe mean_se(const std::vector<double>& v) {
    MeanSe out;
    if (v.empty()) return {nan_value, nan_value};
    double s = 0.0;
    for (double e : v) s += e;
    out.mean = s / static_cast<double>(v.size());
    if (v.size() < 2) return out;
    double q = 0.0;
    for (double e : v) q += (e - out.mean) * (e - out.mean);
    out.se = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return out;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t u = 0; u < a.size(); ++u) s += (a[u] - b[u]) * (a[u] - b[u]);
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t u = 0; u < a.size(); ++u) s += a[u] * b[u];
    return s;
}

RateFit nan_fit() {
    RateFit f;
    f.slope = f.slope_stderr = f.intercept = f.rms_rate = f.rms_rate_stderr = nan_value;
    return f;
}

}  // namespace

//---------------------------------------------------------------------------//
// Regression
//---------------------------------------------------------------------------//

LinearFit fit_linear(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw DomainError("fit: x and y sizes differ");
    if (xs.size() < 2) throw DomainError("fit: need at least two points");
    const double k = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw DomainError("fit: x values are all equal");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (xs.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double r = ys[i] - f.intercept - f.slope * xs[i];
            rss += r * r;
        }
        f.slope_stderr = std::sqrt(rss / (k - 2.0) / sxx);
    } else {
        f.slope_stderr = nan_value;
    }
    return f;
}

RateFit fit_loglog(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw DomainError("fit: x and y sizes differ");
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0)) throw DomainError("fit: abscissae must be positive");
        if (!(ys[i] > 0.0)) throw DomainError("fit: values must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const auto lin = fit_linear(lx, ly);
    RateFit f;
    f.slope = lin.slope;
    f.slope_stderr = lin.slope_stderr;
    f.intercept = lin.intercept;
    f.rms_rate = -0.5 * lin.slope;
    f.rms_rate_stderr = 0.5 * lin.slope_stderr;
    f.points = xs.size();
    return f;
}

RateFit fit_rate(std::span<const double> resolutions, std::span<const double> mse) {
    if (resolutions.size() < 4) throw DomainError("fit_rate: need at least four resolutions");
    return fit_loglog(resolutions, mse);
}

//---------------------------------------------------------------------------//
// Strong error
//---------------------------------------------------------------------------//

std::vector<RateExperiment> rate_experiment(const Model& model, const RunConfig& config,
                                            std::span<const Scheme> schemes,
                                            std::span<const std::size_t> resolutions, std::size_t n_ref) {
    config.validate();
    if (schemes.empty()) throw ConfigError("rate experiment: no scheme selected");
    if (resolutions.empty()) throw ConfigError("rate experiment: no resolutions");
    for (std::size_t n : resolutions) {
        if (n == 0 || n > n_ref || n_ref % n != 0) {
            throw ConfigError("rate experiment: reference resolution " + std::to_string(n_ref) +
                              " is not a multiple of " + std::to_string(n));
        }
    }
    const std::size_t S = schemes.size(), K = resolutions.size(), N = config.particles, R = config.runs;
    const std::size_t d = model.state_dim();

    struct RunSlot {
        std::vector<double> sumsq;        // S x K
        std::vector<std::size_t> count;   // S
        std::vector<std::size_t> excluded;  // S
    };
    std::vector<RunSlot> slots(R);

    parallel_for(R, config.threads, [&](std::size_t r) {
        auto& slot = slots[r];
        slot.sumsq.assign(S * K, 0.0);
        slot.count.assign(S, 0);
        slot.excluded.assign(S, 0);
        const auto real = NoiseRealization::sample(config, model.marks(), model.noise_dim(), n_ref, r);
        const auto x0 = sample_initial_state(config.initial, config.seed, r, N, d);
        for (std::size_t s = 0; s < S; ++s) {
            RunConfig cfg = config;
            cfg.scheme = schemes[s];
            const auto ref = simulate(model, cfg, n_ref, real, x0);
            std::vector<Trajectory> coarse;
            coarse.reserve(K);
            std::vector<std::uint8_t> bad(ref.blown_up);
            for (std::size_t k = 0; k < K; ++k) {
                coarse.push_back(resolutions[k] == n_ref ? ref : simulate(model, cfg, resolutions[k], real, x0));
                for (std::size_t i = 0; i < N; ++i) bad[i] |= coarse.back().blown_up[i];
            }
            for (std::size_t i = 0; i < N; ++i) {
                if (bad[i]) {
                    ++slot.excluded[s];
                    continue;
                }
                ++slot.count[s];
                const auto xr = std::span<const double>(ref.final_state).subspan(i * d, d);
                for (std::size_t k = 0; k < K; ++k) {
                    slot.sumsq[s * K + k] += sq_dist(xr, std::span<const double>(coarse[k].final_state).subspan(i * d, d));
                }
            }
        }
    });

    std::vector<RateExperiment> out(S);
    for (std::size_t s = 0; s < S; ++s) {
        auto& ex = out[s];
        ex.model = std::string(model.name());
        ex.scheme = schemes[s];
        ex.n_ref = n_ref;
        ex.particles = N;
        ex.runs = R;
        ex.total = N * R;
        std::size_t count = 0;
        for (const auto& slot : slots) {
            ex.excluded += slot.excluded[s];
            count += slot.count[s];
        }
        std::vector<double> ns, mses;
        for (std::size_t k = 0; k < K; ++k) {
            double sum = 0.0;
            std::vector<double> per_run;
            for (const auto& slot : slots) {
                sum += slot.sumsq[s * K + k];
                if (slot.count[s] > 0) per_run.push_back(slot.sumsq[s * K + k] / static_cast<double>(slot.count[s]));
            }
            MseEstimate row;
            row.n = resolutions[k];
            row.mse = count > 0 ? sum / static_cast<double>(count) : nan_value;
            row.se = mean_se(per_run).se;
            row.ci_lo = row.mse - z95 * row.se;
            row.ci_hi = row.mse + z95 * row.se;
            ex.rows.push_back(row);
            ns.push_back(static_cast<double>(row.n));
            mses.push_back(row.mse);
        }
        const bool positive = std::all_of(mses.begin(), mses.end(), [](double v) { return v > 0.0; });
        ex.running_rate.assign(K, nan_value);
        for (std::size_t k = 1; k < K && positive; ++k) {
            ex.running_rate[k] = fit_loglog(std::span(ns).first(k + 1), std::span(mses).first(k + 1)).rms_rate;
        }
        ex.fit = (positive && K >= 4) ? fit_rate(ns, mses) : nan_fit();
        if (static_cast<double>(ex.excluded) > 0.01 * static_cast<double>(ex.total)) {
            ex.failed = true;
            ex.failure = std::to_string(ex.excluded) + " of " + std::to_string(ex.total) +
                         " paths blew up (more than 1%)";
        }
    }
    return out;
}

RateExperiment strong_error(const Model& model, const RunConfig& config, std::size_t n, std::size_t n_ref) {
    const Scheme s[] = {config.scheme};
    const std::size_t r[] = {n};
    return rate_experiment(model, config, s, r, n_ref).front();
}

//---------------------------------------------------------------------------//
// Propagation of chaos
//---------------------------------------------------------------------------//

PocExperiment poc_experiment(const Model& model, const RunConfig& config, std::span<const std::size_t> sizes,
                             std::size_t reference, std::size_t n) {
    config.validate();
    if (sizes.empty()) throw ConfigError("poc experiment: no system sizes");
    if (n == 0) throw ConfigError("poc experiment: step count must be positive");
    for (std::size_t N : sizes) {
        if (N == 0 || N > reference) {
            throw ConfigError("poc experiment: system size " + std::to_string(N) + " exceeds the reference " +
                              std::to_string(reference));
        }
    }
    const std::size_t K = sizes.size(), R = config.runs, d = model.state_dim();

    struct RunSlot {
        std::vector<double> sumsq;
        std::vector<std::size_t> count;
        std::size_t excluded = 0;
        std::size_t total = 0;
    };
    std::vector<RunSlot> slots(R);

    parallel_for(R, config.threads, [&](std::size_t r) {
        auto& slot = slots[r];
        slot.sumsq.assign(K, 0.0);
        slot.count.assign(K, 0);
        RunConfig cref = config;
        cref.particles = reference;
        const auto real_ref = NoiseRealization::sample(cref, model.marks(), model.noise_dim(), n, r);
        const auto x0_ref = sample_initial_state(config.initial, config.seed, r, reference, d);
        const auto tr_ref = simulate(model, cref, n, real_ref, x0_ref);
        for (std::size_t k = 0; k < K; ++k) {
            RunConfig c = config;
            c.particles = sizes[k];
            const auto real = NoiseRealization::sample(c, model.marks(), model.noise_dim(), n, r);
            const auto x0 = sample_initial_state(config.initial, config.seed, r, sizes[k], d);
            const auto tr = simulate(model, c, n, real, x0);
            for (std::size_t i = 0; i < sizes[k]; ++i) {
                ++slot.total;
                if (tr.blown_up[i] || tr_ref.blown_up[i]) {
                    ++slot.excluded;
                    continue;
                }
                ++slot.count[k];
                slot.sumsq[k] += sq_dist(std::span<const double>(tr.final_state).subspan(i * d, d),
                                         std::span<const double>(tr_ref.final_state).subspan(i * d, d));
            }
        }
    });

    PocExperiment ex;
    ex.model = std::string(model.name());
    ex.reference = reference;
    ex.steps = n;
    for (const auto& slot : slots) {
        ex.excluded += slot.excluded;
        ex.total += slot.total;
    }
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> per_run;
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& slot : slots) {
            sum += slot.sumsq[k];
            count += slot.count[k];
            if (slot.count[k] > 0) per_run.push_back(slot.sumsq[k] / static_cast<double>(slot.count[k]));
        }
        PocRow row;
        row.particles = sizes[k];
        row.discrepancy = count > 0 ? sum / static_cast<double>(count) : nan_value;
        row.se = mean_se(per_run).se;
        row.ci_lo = row.discrepancy - z95 * row.se;
        row.ci_hi = row.discrepancy + z95 * row.se;
        ex.rows.push_back(row);
        if (sizes[k] < reference) {
            xs.push_back(static_cast<double>(sizes[k]));
            ys.push_back(row.discrepancy);
        }
    }
    auto sorted = ex.rows;
    std::sort(sorted.begin(), sorted.end(), [](const PocRow& a, const PocRow& b) { return a.particles < b.particles; });
    ex.decreasing = true;
    for (std::size_t k = 1; k < sorted.size(); ++k) {
        if (!(sorted[k].discrepancy < sorted[k - 1].discrepancy)) ex.decreasing = false;
    }
    ex.endpoints_separated = sorted.size() >= 2 && sorted.front().ci_lo > sorted.back().ci_hi;
    const bool positive = std::all_of(ys.begin(), ys.end(), [](double v) { return v > 0.0; });
    ex.fit = (positive && xs.size() >= 2) ? fit_loglog(xs, ys) : nan_fit();
    if (static_cast<double>(ex.excluded) > 0.01 * static_cast<double>(ex.total)) {
        ex.failed = true;
        ex.failure = std::to_string(ex.excluded) + " of " + std::to_string(ex.total) +
                     " paths blew up (more than 1%)";
    }
    return ex;
}

//---------------------------------------------------------------------------//
// Ito formula
//---------------------------------------------------------------------------//

void ItoFunction::require_complete() const {
    if (!value) throw ConfigError("Ito function: missing value");
    if (!dx) throw ConfigError("Ito function: missing derivative dx");
    if (!dxx) throw ConfigError("Ito function: missing derivative dxx");
    if (!dmu) throw ConfigError("Ito function: missing derivative dmu");
    if (!dx_dmu) throw ConfigError("Ito function: missing derivative dx_dmu");
    if (!dy_dmu) throw ConfigError("Ito function: missing derivative dy_dmu");
    if (!dmu2) throw ConfigError("Ito function: missing derivative dmu2");
}

ItoFunction ItoFunction::quadratic_mean() {
    ItoFunction f;
    f.value = [](Point x, const EmpiricalMeasure& mu) { return dot(x, x) + dot(mu.mean(), mu.mean()); };
    f.dx = [](Point x, const EmpiricalMeasure&, Out out) {
        for (std::size_t u = 0; u < x.size(); ++u) out[u] = 2.0 * x[u];
    };
    f.dxx = [](Point x, const EmpiricalMeasure&, Out out) {
        const std::size_t d = x.size();
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) out[a * d + b] = a == b ? 2.0 : 0.0;
    };
    f.dmu = [](Point, const EmpiricalMeasure& mu, Point, Out out) {
        const auto m = mu.mean();
        for (std::size_t u = 0; u < m.size(); ++u) out[u] = 2.0 * m[u];
    };
    f.dx_dmu = [](Point, const EmpiricalMeasure&, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    f.dy_dmu = [](Point, const EmpiricalMeasure&, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    f.dmu2 = [](Point x, const EmpiricalMeasure&, Point, Point, Out out) {
        const std::size_t d = x.size();
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) out[a * d + b] = a == b ? 2.0 : 0.0;
    };
    return f;
}

ItoFunction ItoFunction::constant(double c) {
    ItoFunction f;
    auto zero2 = [](Point, const EmpiricalMeasure&, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    auto zero3 = [](Point, const EmpiricalMeasure&, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    f.value = [c](Point, const EmpiricalMeasure&) { return c; };
    f.dx = zero2;
    f.dxx = zero2;
    f.dmu = zero3;
    f.dx_dmu = zero3;
    f.dy_dmu = zero3;
    f.dmu2 = [](Point, const EmpiricalMeasure&, Point, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    return f;
}

ItoFunction ItoFunction::square() {
    ItoFunction f = quadratic_mean();
    f.value = [](Point x, const EmpiricalMeasure&) { return dot(x, x); };
    f.dmu = [](Point, const EmpiricalMeasure&, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    f.dmu2 = [](Point, const EmpiricalMeasure&, Point, Point, Out out) { std::fill(out.begin(), out.end(), 0.0); };
    return f;
}

bool ItoVerification::within_three_se() const { return std::abs(coarse.difference) < 3.0 * coarse.se; }

bool ItoVerification::halves() const {
    return std::abs(coarse.residual) > 3.0 * coarse.residual_se &&
           std::abs(halving_gap) < 3.0 * halving_gap_se;
}

namespace {

struct ItoRunValues {
    double direct = 0.0;
    double formula = 0.0;
    double martingale = 0.0;
    bool blown = false;
};

// One run at resolution n: per-particle-averaged values over the tagged set.
ItoRunValues ito_run(const Model& model, const ItoFunction& f, const RunConfig& config, std::size_t n,
                     const NoiseRealization& real, std::span<const double> x0, std::size_t tagged) {
    const std::size_t N = config.particles, d = model.state_dim(), m = model.noise_dim();
    const auto& marks = model.marks();
    const std::size_t M = marks.size();
    const double inv_n = 1.0 / static_cast<double>(N);

    const TamedModel tm(model, n, config.taming);
    const ResolutionView view(real, n);
    const SchemeToggles toggles = SchemeToggles::for_scheme(config.scheme);
    Stepper stepper(tm, N, config.substeps, toggles);

    std::vector<double> x(x0.begin(), x0.end()), next(N * d);
    std::vector<std::uint8_t> blown(N, 0);
    std::vector<double> b(N * d), sig(N * d * m), S(N * d * d), g(N * M * d);
    std::vector<double> dF(d), H(d * d), A(d * d), gk(N * d), B(d * d), C(d * d), R(N * M), tmp(d), moved(d);
    std::vector<EmpiricalMeasure> shifted_mu(N * M);
    std::vector<double> jsum(d), corr(d), sig_e(d * m), dxg(d * m), acc(d), jpred(d);
    std::vector<const JumpEvent*> own_events;
    std::vector<double> direct(tagged), formula(tagged, 0.0), mart(tagged, 0.0);

    auto trace = [&](const double* P, const double* Q) {
        double s = 0.0;
        for (std::size_t e = 0; e < d * d; ++e) s += P[e] * Q[e];
        return s;
    };

    {
        const EmpiricalMeasure mu0(x, d);
        for (std::size_t i = 0; i < tagged; ++i) direct[i] = -f.value(std::span<const double>(x).subspan(i * d, d), mu0);
    }

    for (std::size_t k = 0; k < n; ++k) {
        const StepNoise sn = view.step(k);
        const double h = sn.h;
        const EmpiricalMeasure mu(x, d);
        auto xi = [&](std::size_t i) { return std::span<const double>(x).subspan(i * d, d); };

        // untamed coefficients at the left end point
        for (std::size_t i = 0; i < N; ++i) {
            model.drift(xi(i), mu, {b.data() + i * d, d});
            model.diffusion(xi(i), mu, {sig.data() + i * d * m, d * m});
            const double* s = sig.data() + i * d * m;
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    double v = 0.0;
                    for (std::size_t l = 0; l < m; ++l) v += s[a * m + l] * s[c * m + l];
                    S[(i * d + a) * d + c] = v;
                }
            for (std::size_t j = 0; j < M; ++j) {
                model.jump(xi(i), mu, marks.atom(j), {g.data() + (i * M + j) * d, d});
                shift_into(mu, i, {g.data() + (i * M + j) * d, d}, shifted_mu[i * M + j]);
            }
        }

        stepper.advance(x, sn, next, blown);
        const auto bh = stepper.drift_values();
        const auto sh = stepper.diffusion_values();
        const auto gh = stepper.jump_values();
        const auto ch = stepper.compensator_values();

        for (std::size_t i = 0; i < tagged; ++i) {
            const auto x_i = xi(i);
            const double Fi = f.value(x_i, mu);
            f.dx(x_i, mu, dF);
            f.dxx(x_i, mu, H);
            f.dx_dmu(x_i, mu, x_i, A);

            double G = dot(dF, {b.data() + i * d, d});
            G += 0.5 * trace(H.data(), S.data() + i * d * d);
            G += inv_n * trace(A.data(), S.data() + i * d * d);
            for (std::size_t j = 0; j < M; ++j) G -= marks.weight(j) * dot(dF, {g.data() + (i * M + j) * d, d});

            double cv = 0.0;
            for (std::size_t kk = 0; kk < N; ++kk) {
                const auto x_k = xi(kk);
                double* gkk = gk.data() + kk * d;
                f.dmu(x_i, mu, x_k, {gkk, d});
                f.dy_dmu(x_i, mu, x_k, B);
                f.dmu2(x_i, mu, x_k, x_k, C);
                const std::span<const double> gks(gkk, d);
                G += inv_n * dot(gks, {b.data() + kk * d, d});
                G += 0.5 * inv_n * trace(B.data(), S.data() + kk * d * d);
                G += 0.5 * inv_n * inv_n * trace(C.data(), S.data() + kk * d * d);
                for (std::size_t u = 0; u < d; ++u) tmp[u] = next[kk * d + u] - x_k[u] - bh[kk * d + u] * h;
                cv += inv_n * dot(gks, tmp);
                for (std::size_t j = 0; j < M; ++j) {
                    const std::span<const double> gam(g.data() + (kk * M + j) * d, d);
                    const double lam = marks.weight(j);
                    G -= inv_n * lam * dot(gks, gam);
                    for (std::size_t u = 0; u < d; ++u) moved[u] = x_i[u] + (kk == i ? gam[u] : 0.0);
                    const double jumpdiff = f.value(moved, shifted_mu[kk * M + j]) - Fi;
                    G += lam * jumpdiff;
                    double rem = jumpdiff - inv_n * dot(gks, gam);
                    if (kk == i) rem -= dot(dF, gam);
                    R[kk * M + j] = rem;
                    cv -= h * lam * rem;
                }
            }
            for (const auto& ev : sn.events) cv += R[ev.particle * M + ev.mark];

            // first-order increment of the tagged particle minus its conditional mean
            for (std::size_t u = 0; u < d; ++u) tmp[u] = next[i * d + u] - x_i[u] - bh[i * d + u] * h;
            cv += dot(dF, tmp);
            // second-order Brownian term and its cross term with the jump part
            const auto dw = sn.dw(i);
            const double* s = sh.data() + i * d * m;
            std::vector<double> sdw(d, 0.0), jp(d, 0.0);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t l = 0; l < m; ++l) sdw[a] += s[a * m + l] * dw[l];
            std::size_t own_count = 0;
            for (const auto& ev : sn.events) {
                if (ev.particle != i) continue;
                ++own_count;
                for (std::size_t u = 0; u < d; ++u) jp[u] += gh[(i * M + ev.mark) * d + u];
            }
            for (std::size_t u = 0; u < d; ++u) jp[u] -= h * ch[i * d + u];
            // own jumps against the Brownian corrections they meet inside the step:
            // sigma-hat changes after each jump and the gamma-hat_1 displacement
            if (own_count > 0) {
                const auto off = sn.offsets_at_events(i);
                std::fill(jsum.begin(), jsum.end(), 0.0);
                std::fill(corr.begin(), corr.end(), 0.0);
                for (std::size_t e = 0; e < sn.events.size(); ++e) {
                    const auto& ev = sn.events[e];
                    if (ev.particle != i) continue;
                    const std::span<const double> gam(gh.data() + (i * M + ev.mark) * d, d);
                    for (std::size_t u = 0; u < d; ++u) {
                        jsum[u] += gam[u];
                        moved[u] = x_i[u] + gam[u];
                    }
                    if (toggles.sigma_corrections) {
                        const auto mu_e = shifted(mu, i, gam);
                        tm.diffusion(moved, mu_e, sig_e);
                        for (std::size_t a = 0; a < d; ++a)
                            for (std::size_t l = 0; l < m; ++l)
                                corr[a] += (sig_e[a * m + l] - s[a * m + l]) * (dw[l] - off[e * m + l]);
                    }
                    if (toggles.gamma_corrections) {
                        tm.jump_dx_products(x_i, mu, marks.atom(ev.mark), dxg);
                        for (std::size_t a = 0; a < d; ++a)
                            for (std::size_t l = 0; l < m; ++l) corr[a] += dxg[a * m + l] * off[e * m + l];
                    }
                }
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t c = 0; c < d; ++c) cv += H[a * d + c] * jsum[a] * corr[c];
            }
            // products of distinct own jumps in one step: sum_{e<e'} J_e H J_e' as the integral of the
            // accumulated earlier jump acc against the compensated own jump measure. The predictable
            // jump size is taken at the displaced state when the scheme moves it there, else at x_i.
            if (own_count > 1) {
                own_events.clear();
                for (const auto& ev : sn.events)
                    if (ev.particle == i) own_events.push_back(&ev);
                std::sort(own_events.begin(), own_events.end(),
                          [](const JumpEvent* a, const JumpEvent* c) { return a->time < c->time; });
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t e = 0; e < own_events.size(); ++e) {
                    const auto* ev = own_events[e];
                    const double disp = toggles.gamma_corrections ? 1.0 : 0.0;
                    for (std::size_t u = 0; u < d; ++u) {
                        moved[u] = x_i[u] + disp * acc[u];
                        jpred[u] = disp * acc[u];
                    }
                    const auto mu_e = shifted(mu, i, jpred);
                    if (e > 0) {
                        tm.jump(moved, mu_e, marks.atom(ev->mark), jpred);
                        for (std::size_t a = 0; a < d; ++a)
                            for (std::size_t c = 0; c < d; ++c) cv += H[a * d + c] * acc[a] * jpred[c];
                        for (std::size_t u = 0; u < d; ++u) acc[u] += jpred[u];
                    } else {
                        for (std::size_t u = 0; u < d; ++u) acc[u] = gh[(i * M + ev->mark) * d + u];
                    }
                    // compensator over [tau_e, next own event or t1)
                    const double until = e + 1 < own_events.size() ? own_events[e + 1]->time : sn.t1;
                    for (std::size_t u = 0; u < d; ++u) {
                        moved[u] = x_i[u] + disp * acc[u];
                        jpred[u] = disp * acc[u];
                    }
                    tm.jump_compensator(moved, shifted(mu, i, jpred), jpred);
                    for (std::size_t a = 0; a < d; ++a)
                        for (std::size_t c = 0; c < d; ++c) cv -= H[a * d + c] * acc[a] * jpred[c] * (until - ev->time);
                }
            }
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    double ss = 0.0;
                    for (std::size_t l = 0; l < m; ++l) ss += s[a * m + l] * s[c * m + l];
                    cv += 0.5 * H[a * d + c] * (sdw[a] * sdw[c] - h * ss);
                    cv += H[a * d + c] * sdw[a] * jp[c];
                }

            formula[i] += h * G;
            mart[i] += cv;
        }
        x.swap(next);
    }

    ItoRunValues out;
    for (auto fl : blown) out.blown = out.blown || fl;
    const EmpiricalMeasure muT(x, d);
    for (std::size_t i = 0; i < tagged; ++i) {
        direct[i] += f.value(std::span<const double>(x).subspan(i * d, d), muT);
        out.direct += direct[i];
        out.formula += formula[i];
        out.martingale += mart[i];
    }
    const double t = static_cast<double>(tagged);
    out.direct /= t;
    out.formula /= t;
    out.martingale /= t;
    return out;
}

ItoEstimate summarize(std::size_t n, const std::vector<ItoRunValues>& runs) {
    ItoEstimate e;
    e.steps = n;
    std::vector<double> dir, form, diff, res;
    for (const auto& r : runs) {
        if (r.blown) continue;
        dir.push_back(r.direct);
        form.push_back(r.formula);
        diff.push_back(r.direct - r.formula);
        res.push_back(r.direct - r.formula - r.martingale);
    }
    e.runs_used = diff.size();
    e.direct = mean_se(dir).mean;
    e.formula = mean_se(form).mean;
    const auto md = mean_se(diff);
    e.difference = md.mean;
    e.se = md.se;
    const auto mr = mean_se(res);
    e.residual = mr.mean;
    e.residual_se = mr.se;
    return e;
}

}  // namespace

ItoVerification ito_verify(const Model& model, const ItoFunction& f, const RunConfig& config, std::size_t n,
                           std::size_t tagged, bool check_halving) {
    f.require_complete();
    config.validate();
    if (n == 0) throw ConfigError("ito verification: step count must be positive");
    if (tagged == 0 || tagged > config.particles) throw ConfigError("ito verification: tagged count out of range");
    const std::size_t R = config.runs, N = config.particles, d = model.state_dim();
    const std::size_t n_max = check_halving ? 2 * n : n;

    std::vector<ItoRunValues> coarse(R), fine(R);
    parallel_for(R, config.threads, [&](std::size_t r) {
        const auto real = NoiseRealization::sample(config, model.marks(), model.noise_dim(), n_max, r);
        const auto x0 = sample_initial_state(config.initial, config.seed, r, N, d);
        coarse[r] = ito_run(model, f, config, n, real, x0, tagged);
        if (check_halving) fine[r] = ito_run(model, f, config, 2 * n, real, x0, tagged);
    });

    ItoVerification v;
    if (check_halving) {
        for (std::size_t r = 0; r < R; ++r) {
            if (coarse[r].blown || fine[r].blown) coarse[r].blown = fine[r].blown = true;
        }
    }
    for (const auto& r : coarse) v.excluded_runs += r.blown ? 1 : 0;
    v.coarse = summarize(n, coarse);
    if (check_halving) {
        v.fine = summarize(2 * n, fine);
        std::vector<double> gap;
        for (std::size_t r = 0; r < R; ++r) {
            if (coarse[r].blown) continue;
            const double rc = coarse[r].direct - coarse[r].formula - coarse[r].martingale;
            const double rf = fine[r].direct - fine[r].formula - fine[r].martingale;
            gap.push_back(rc - 2.0 * rf);
        }
        const auto g = mean_se(gap);
        v.halving_gap = g.mean;
        v.halving_gap_se = g.se;
    } else {
        v.halving_gap = v.halving_gap_se = nan_value;
    }
    return v;
}

//---------------------------------------------------------------------------//
// p-th power remainder inequality
//---------------------------------------------------------------------------//

namespace {

struct SegmentIntegrand {
    double yy, yv, vv, p;
};

double segment_integrand(double t, void* params) {
    const auto* s = static_cast<const SegmentIntegrand*>(params);
    const double sq = std::max(0.0, s->yy + 2.0 * t * s->yv + t * t * s->vv);
    return (1.0 - t) * std::pow(sq, 0.5 * (s->p - 2.0));
}

void silence_gsl() {
    static std::once_flag once;
    std::call_once(once, [] { gsl_set_error_handler_off(); });
}

}  // namespace

PowerCheck pth_power_inequality(std::span<const double> x, std::span<const double> y, double p) {
    if (!(p > 4.0)) throw DomainError("p-th power inequality needs p > 4");
    if (x.size() != y.size() || x.empty()) throw DomainError("p-th power inequality: x and y must share a dimension");
    silence_gsl();
    const std::size_t d = x.size();
    std::vector<double> v(d);
    for (std::size_t u = 0; u < d; ++u) v[u] = x[u] - y[u];
    const double xx = dot(x, x), yy = dot(y, y), vv = dot(v, v), yv = dot(y, v);
    const double nx = std::sqrt(xx), ny = std::sqrt(yy);

    PowerCheck c;
    c.lhs = std::pow(nx, p) - std::pow(ny, p) - p * std::pow(ny, p - 2.0) * yv;
    if (vv > 0.0) {
        SegmentIntegrand params{yy, yv, vv, p};
        gsl_function fn{&segment_integrand, &params};
        gsl_integration_workspace* ws = gsl_integration_workspace_alloc(256);
        // |y + t v|^{p-2} is convex in t, so its maximum on [0, 1] sits at an endpoint
        const double scale = std::pow(std::max(nx, ny), p - 2.0);
        const double abs_tol = 1e-14 * scale;
        auto piece = [&](double a, double b) {
            if (!(b > a)) return 0.0;
            double result = 0.0, err = 0.0;
            // epsrel below 50 eps is rejected outright by QAGS
            const int status = gsl_integration_qags(&fn, a, b, abs_tol, 1e-12, 256, ws, &result, &err);
            if (status != GSL_SUCCESS && !(err <= std::max(1e-10 * std::abs(result), 1e2 * abs_tol))) {
                gsl_integration_workspace_free(ws);
                throw std::runtime_error(std::string("p-th power quadrature failed: ") + gsl_strerror(status));
            }
            return result;
        };
        const double tmin = std::clamp(-yv / vv, 0.0, 1.0);
        const double integral = piece(0.0, tmin) + piece(tmin, 1.0);
        gsl_integration_workspace_free(ws);
        c.rhs = p * (p - 1.0) * vv * integral;
    }
    c.violation = (c.lhs - c.rhs) / (1.0 + std::pow(nx, p) + std::pow(ny, p));
    return c;
}

PowerFuzzReport pth_power_inequality_check(std::size_t samples, std::uint64_t seed, double slack) {
    PowerFuzzReport rep;
    Rng rng(stream_seed(seed, 0, 0, Stream::initial, 7));
    std::vector<double> x, y;
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t d = 1 + s % 3;
        const double p = 12.0 - 8.0 * rng.uniform();  // (4, 12]
        x.resize(d);
        y.resize(d);
        for (auto& e : x) e = -2.0 + 4.0 * rng.uniform();
        for (auto& e : y) e = -2.0 + 4.0 * rng.uniform();
        if (s % 50 == 0) std::fill(y.begin(), y.end(), 0.0);
        if (s % 50 == 1) y = x;
        const auto c = pth_power_inequality(x, y, p);
        ++rep.samples;
        rep.max_violation = std::max(rep.max_violation, c.violation);
        if (c.violation > slack) ++rep.violations;
    }
    return rep;
}

//---------------------------------------------------------------------------//
// Measure Taylor identity and noise coupling
//---------------------------------------------------------------------------//

TaylorFuzzReport measure_taylor_fuzz(std::size_t atoms, std::size_t dim, std::size_t configurations,
                                     std::size_t quadrature_order, std::uint64_t seed) {
    if (atoms == 0 || dim == 0) throw DomainError("measure_taylor_fuzz: need atoms and dim >= 1");
    const MeasureFunction f = [](std::span<const double> z, const EmpiricalMeasure& mu) {
        const auto m = mu.mean();
        return dot(z, m) + dot(m, m);
    };
    const LionsDerivative df = [](std::span<const double> z, const EmpiricalMeasure& mu, std::span<const double>,
                                  std::span<double> out) {
        const auto m = mu.mean();
        for (std::size_t u = 0; u < out.size(); ++u) out[u] = z[u] + 2.0 * m[u];
    };
    TaylorFuzzReport report;
    std::vector<double> z(dim), x(atoms * dim), y(atoms * dim);
    for (std::size_t c = 0; c < configurations; ++c) {
        Rng rng(stream_seed(seed, c, atoms, Stream::initial, dim));
        for (double& e : z) e = rng.normal();
        for (double& e : x) e = rng.normal();
        for (double& e : y) e = rng.normal();
        const auto check = measure_taylor_check(f, df, z, x, y, dim, quadrature_order);
        report.max_residual = std::max(report.max_residual, check.residual);
        ++report.configurations;
    }
    return report;
}

bool NoiseCouplingReport::passed() const {
    if (increment_mismatches != 0 || compared_increments == 0) return false;
    for (const auto& c : covariance) {
        if (!c.within(3.0)) return false;
    }
    // the symmetric split is exact up to one rounding of dw_a dw_b
    return diagonal_checked > 0 && diagonal_max_error == 0.0 && symmetry_max_error < 1e-14;
}

NoiseCouplingReport noise_coupling_check(std::size_t samples, std::uint64_t seed) {
    if (samples < 2) throw DomainError("noise_coupling_check: need at least two samples");
    constexpr std::size_t fine = 16;
    constexpr std::size_t m = 2;
    NoiseCouplingReport report;
    report.h = 0.01;

    RunConfig cfg;
    cfg.particles = (samples + fine - 1) / fine;
    cfg.runs = 1;
    cfg.seed = seed;
    cfg.grid = Grid(report.h * static_cast<double>(fine), fine);
    const auto real = NoiseRealization::sample(cfg, MarkMeasure{}, m, fine, 0);
    const std::size_t np = cfg.particles;

    for (std::size_t n = 1; n <= fine; n *= 2) {
        const ResolutionView view(real, n);
        const std::size_t ratio = fine / n;
        for (std::size_t k = 0; k < n; ++k) {
            const StepNoise sn = view.step(k);
            for (std::size_t i = 0; i < np; ++i) {
                for (std::size_t l = 0; l < m; ++l) {
                    double s = 0.0;
                    for (std::size_t q = 0; q < ratio; ++q) s += real.fine_dw(k * ratio + q, i, l);
                    ++report.compared_increments;
                    if (sn.dw(i)[l] != s) ++report.increment_mismatches;
                }
            }
        }
    }

    // (dw, J) of component 0 over single fine steps
    std::vector<double> ww, wj, jj, cross;
    ww.reserve(samples);
    wj.reserve(samples);
    jj.reserve(samples);
    cross.reserve(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t step = s % fine;
        const std::size_t i = s / fine;
        const double w = real.fine_dw(step, i, 0);
        const double j = real.fine_j(step, i, 0);
        ww.push_back(w * w);
        wj.push_back(w * j);
        jj.push_back(j * j);
        cross.push_back(w * real.fine_dw(step, i, 1));
    }
    report.samples = samples;
    const double h = report.h;
    auto add = [&](std::string name, const std::vector<double>& v, double target) {
        const auto ms = mean_se(v);
        report.covariance.push_back({std::move(name), ms.mean, target, ms.se});
    };
    add("E[dw^2]", ww, h);
    add("E[dw J]", wj, h * h / 2.0);
    add("E[J^2]", jj, h * h * h / 3.0);
    add("E[dw^1 dw^2]", cross, 0.0);

    // self iterated integrals on the whole horizon, Riemann-Ito over the fine steps
    const ResolutionView one(real, 1);
    const StepNoise sn = one.step(0);
    const std::size_t tested = std::min<std::size_t>(np, 1000);
    for (std::size_t i = 0; i < tested; ++i) {
        const auto d = sn.dw(i);
        for (std::size_t l = 0; l < m; ++l) {
            const double exact = 0.5 * (d[l] * d[l] - sn.h);
            report.diagonal_max_error = std::max(report.diagonal_max_error, std::abs(sn.iterated(i, l, i, l, fine) - exact));
        }
        const double sym = sn.iterated(i, 0, i, 1, fine) + sn.iterated(i, 1, i, 0, fine);
        report.symmetry_max_error = std::max(report.symmetry_max_error, std::abs(sym - d[0] * d[1]));
        ++report.diagonal_checked;
    }
    return report;
}

}  // namespace mkv
