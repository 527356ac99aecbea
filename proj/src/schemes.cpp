#include "mkv/schemes.hpp"

#include <cmath>

namespace mkv {

std::size_t Trajectory::blown_up_count() const {
    std::size_t c = 0;
    for (auto f : blown_up) c += f ? 1 : 0;
    return c;
}

Stepper::Stepper(const TamedModel& model, std::size_t particles, std::size_t substeps, SchemeToggles toggles)
    : tm_(&model),
      n_(particles),
      d_(model.base().state_dim()),
      m_(model.base().noise_dim()),
      substeps_(substeps),
      toggles_(toggles) {
    if (particles == 0) throw DomainError("stepper needs at least one particle");
    const std::size_t marks = model.base().marks().size();
    drift_.resize(n_ * d_);
    sigma_.resize(n_ * d_ * m_);
    gamma_.resize(n_ * marks * d_);
    comp_.resize(n_ * d_);
    lambda_dw_.resize(n_ * d_);
    gamma_jump_.resize(n_ * d_);
}

StepDiagnostics Stepper::advance(std::span<const double> x, const StepNoise& noise, std::span<double> next,
                                 std::span<std::uint8_t> blown_up) {
    const std::size_t d = d_, m = m_, N = n_;
    if (x.size() != N * d || next.size() != N * d || blown_up.size() != N) {
        throw DomainError("stepper: state buffers have the wrong size");
    }
    const Model& base = tm_->base();
    const auto& marks = base.marks();
    const std::size_t nm = marks.size();
    const double h = noise.h;
    const double t1 = noise.t1;
    const double inv_n = 1.0 / static_cast<double>(N);
    const bool sigma_mu = base.diffusion_depends_on_measure();
    const bool gamma_mu = base.jump_depends_on_measure();
    const EmpiricalMeasure mu(x, d);

    auto xi = [&](std::size_t i) { return x.subspan(i * d, d); };
    auto gamma_at = [&](std::size_t i, std::size_t j) {
        return std::span<const double>(gamma_.data() + (i * nm + j) * d, d);
    };

    StepDiagnostics diag;
    diag.jumps = noise.events.size();
    std::size_t tamed_count = 0, live = 0;

    // coefficients at the left end point
    for (std::size_t i = 0; i < N; ++i) {
        const double factor = tm_->drift(xi(i), mu, {drift_.data() + i * d, d});
        if (!blown_up[i]) {
            ++live;
            if (factor < 0.99) ++tamed_count;
        }
        tm_->diffusion(xi(i), mu, {sigma_.data() + i * d * m, d * m});
        for (std::size_t j = 0; j < nm; ++j) tm_->jump(xi(i), mu, marks.atom(j), {gamma_.data() + (i * nm + j) * d, d});
        for (std::size_t u = 0; u < d; ++u) {
            double s = 0.0;
            for (std::size_t j = 0; j < nm; ++j) s += marks.weight(j) * gamma_[(i * nm + j) * d + u];
            comp_[i * d + u] = s;
        }
    }

    // per-event displaced atom and shifted measure
    const std::size_t ne = noise.events.size();
    if (shifted_mu_.size() < ne) shifted_mu_.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        const auto& ev = noise.events[e];
        shift_into(mu, ev.particle, gamma_at(ev.particle, ev.mark), shifted_mu_[e]);
    }
    const auto& shifted_mu = shifted_mu_;
    // own events of each particle in CSR form, in time order
    own_start_.assign(N + 1, 0);
    for (const auto& ev : noise.events) ++own_start_[ev.particle + 1];
    for (std::size_t i = 0; i < N; ++i) own_start_[i + 1] += own_start_[i];
    own_list_.resize(ne);
    fill_.assign(own_start_.begin(), own_start_.end() - 1);
    for (std::size_t e = 0; e < ne; ++e) own_list_[fill_[noise.events[e].particle]++] = e;
    auto own = [&](std::size_t i) {
        return std::span<const std::size_t>(own_list_.data() + own_start_[i], own_start_[i + 1] - own_start_[i]);
    };

    prod_.resize(d * m * m);
    prod2_.resize(d * m * m);
    vec_.resize(d * m);
    moved_.resize(d);
    coef_.resize(d * m);
    acc_.resize(d);
    auto& prod = prod_;
    auto& prod2 = prod2_;
    auto& vec = vec_;
    auto& moved = moved_;
    auto& coef = coef_;
    auto& acc = acc_;

    for (std::size_t i = 0; i < N; ++i) {
        double* ld = lambda_dw_.data() + i * d;
        double* gj = gamma_jump_.data() + i * d;
        const auto dwi = noise.dw(i);
        const double* sig = sigma_.data() + i * d * m;

        // Euler part
        for (std::size_t u = 0; u < d; ++u) {
            double s = 0.0;
            for (std::size_t l = 0; l < m; ++l) s += sig[u * m + l] * dwi[l];
            ld[u] = s;
        }
        for (std::size_t u = 0; u < d; ++u) {
            double s = 0.0;
            for (std::size_t e : own(i)) s += gamma_at(i, noise.events[e].mark)[u];
            gj[u] = s - h * comp_[i * d + u];
        }

        // events whose coefficient differences can be non-zero for particle i
        auto relevant = [&](std::size_t e, bool measure_dep) {
            return noise.events[e].particle == i || measure_dep;
        };
        auto displaced_state = [&](std::size_t e) {
            const auto& ev = noise.events[e];
            const auto xv = xi(i);
            for (std::size_t u = 0; u < d; ++u) moved[u] = xv[u];
            if (ev.particle == i) {
                const auto v = gamma_at(i, ev.mark);
                for (std::size_t u = 0; u < d; ++u) moved[u] += v[u];
            }
            return std::span<const double>(moved);
        };

        if (toggles_.sigma_corrections) {
            // sigma-hat_1, self part
            tm_->diffusion_dx_products(xi(i), mu, prod);
            for (std::size_t u = 0; u < d; ++u) {
                double s = 0.0;
                for (std::size_t l = 0; l < m; ++l)
                    for (std::size_t l1 = 0; l1 < m; ++l1) {
                        const double p = prod[(u * m + l) * m + l1];
                        if (p != 0.0) s += p * noise.iterated(i, l1, i, l, substeps_);
                    }
                ld[u] += s;
            }
            // sigma-hat_1, cross-particle part
            if (sigma_mu || check_cross_) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t k = 0; k < N; ++k) {
                    tm_->diffusion_dmu_products(xi(i), mu, xi(k), prod2);
                    for (std::size_t u = 0; u < d; ++u)
                        for (std::size_t l = 0; l < m; ++l)
                            for (std::size_t l1 = 0; l1 < m; ++l1) {
                                const double p = prod2[(u * m + l) * m + l1];
                                if (p != 0.0) acc[u] += p * noise.iterated(k, l1, i, l, substeps_);
                            }
                }
                for (std::size_t u = 0; u < d; ++u) {
                    if (sigma_mu) {
                        ld[u] += inv_n * acc[u];
                    } else {
                        max_cross_ = std::max(max_cross_, std::abs(acc[u]));
                    }
                }
            }
            // sigma-hat_2: piecewise-constant integrand after each event
            if (ne > 0 && (sigma_mu || !own(i).empty())) {
                const auto off = noise.offsets_at_events(i);
                for (std::size_t e = 0; e < ne; ++e) {
                    if (!relevant(e, sigma_mu)) continue;
                    tm_->diffusion(displaced_state(e), shifted_mu[e], coef);
                    for (std::size_t u = 0; u < d; ++u) {
                        double s = 0.0;
                        for (std::size_t l = 0; l < m; ++l) {
                            s += (coef[u * m + l] - sig[u * m + l]) * (dwi[l] - off[e * m + l]);
                        }
                        ld[u] += s;
                    }
                }
            }
        }

        if (toggles_.gamma_corrections && nm > 0) {
            const auto ji = noise.j(i);
            // jump part: gamma-hat_1 and gamma-hat_2 at each own jump
            if (!own(i).empty()) {
                const auto off = noise.offsets_at_events(i);
                for (std::size_t e : own(i)) {
                    const auto& ev = noise.events[e];
                    const auto z = marks.atom(ev.mark);
                    tm_->jump_dx_products(xi(i), mu, z, vec);
                    for (std::size_t u = 0; u < d; ++u) {
                        double s = 0.0;
                        for (std::size_t l1 = 0; l1 < m; ++l1) s += vec[u * m + l1] * off[e * m + l1];
                        gj[u] += s;
                    }
                    if (gamma_mu || check_cross_) {
                        std::fill(acc.begin(), acc.end(), 0.0);
                        for (std::size_t k = 0; k < N; ++k) {
                            tm_->jump_dmu_products(xi(i), mu, xi(k), z, vec);
                            const auto offk = noise.offsets_at_events(k);
                            for (std::size_t u = 0; u < d; ++u)
                                for (std::size_t l1 = 0; l1 < m; ++l1) acc[u] += vec[u * m + l1] * offk[e * m + l1];
                        }
                        for (std::size_t u = 0; u < d; ++u) {
                            if (gamma_mu) {
                                gj[u] += inv_n * acc[u];
                            } else {
                                max_cross_ = std::max(max_cross_, std::abs(acc[u]));
                            }
                        }
                    }
                    for (std::size_t e2 = 0; e2 < e; ++e2) {
                        if (!relevant(e2, gamma_mu)) continue;
                        tm_->jump(displaced_state(e2), shifted_mu[e2], z, coef);
                        const auto g0 = gamma_at(i, ev.mark);
                        for (std::size_t u = 0; u < d; ++u) gj[u] += coef[u] - g0[u];
                    }
                }
            }
            // compensator of gamma-hat_1: exact time integrals J
            for (std::size_t jm = 0; jm < nm; ++jm) {
                const auto z = marks.atom(jm);
                const double lam = marks.weight(jm);
                tm_->jump_dx_products(xi(i), mu, z, vec);
                for (std::size_t u = 0; u < d; ++u) {
                    double s = 0.0;
                    for (std::size_t l1 = 0; l1 < m; ++l1) s += vec[u * m + l1] * ji[l1];
                    gj[u] -= lam * s;
                }
                if (gamma_mu || check_cross_) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::size_t k = 0; k < N; ++k) {
                        tm_->jump_dmu_products(xi(i), mu, xi(k), z, vec);
                        const auto jk = noise.j(k);
                        for (std::size_t u = 0; u < d; ++u)
                            for (std::size_t l1 = 0; l1 < m; ++l1) acc[u] += vec[u * m + l1] * jk[l1];
                    }
                    for (std::size_t u = 0; u < d; ++u) {
                        if (gamma_mu) {
                            gj[u] -= lam * inv_n * acc[u];
                        } else {
                            max_cross_ = std::max(max_cross_, std::abs(acc[u]));
                        }
                    }
                }
            }
            // compensator of gamma-hat_2: integrand constant after each event
            for (std::size_t e = 0; e < ne; ++e) {
                if (!relevant(e, gamma_mu)) continue;
                const double len = t1 - noise.events[e].time;
                const auto xs = displaced_state(e);
                for (std::size_t jm = 0; jm < nm; ++jm) {
                    tm_->jump(xs, shifted_mu[e], marks.atom(jm), coef);
                    const auto g0 = gamma_at(i, jm);
                    for (std::size_t u = 0; u < d; ++u) gj[u] -= len * marks.weight(jm) * (coef[u] - g0[u]);
                }
            }
        }
    }

    // update
    for (std::size_t i = 0; i < N; ++i) {
        const auto xv = xi(i);
        double* out = next.data() + i * d;
        if (blown_up[i]) {
            for (std::size_t u = 0; u < d; ++u) out[u] = xv[u];
            continue;
        }
        bool bad = false;
        double nrm = 0.0;
        for (std::size_t u = 0; u < d; ++u) {
            out[u] = xv[u] + drift_[i * d + u] * h + lambda_dw_[i * d + u] + gamma_jump_[i * d + u];
            if (!std::isfinite(out[u])) bad = true;
            nrm += out[u] * out[u];
        }
        nrm = std::sqrt(nrm);
        if (bad || nrm > blow_up_threshold) {
            blown_up[i] = 1;
            for (std::size_t u = 0; u < d; ++u) out[u] = xv[u];
            continue;
        }
        diag.max_abs = std::max(diag.max_abs, nrm);
    }
    diag.taming_fraction = live > 0 ? static_cast<double>(tamed_count) / static_cast<double>(live) : 0.0;
    return diag;
}

StepDiagnostics euler_step(const TamedModel& model, std::span<const double> x, const StepNoise& noise,
                           std::span<double> next, std::span<std::uint8_t> blown_up) {
    Stepper st(model, blown_up.size(), 1, SchemeToggles{false, false});
    return st.advance(x, noise, next, blown_up);
}

StepDiagnostics milstein_step(const TamedModel& model, std::span<const double> x, const StepNoise& noise,
                              std::span<double> next, std::span<std::uint8_t> blown_up, std::size_t substeps) {
    Stepper st(model, blown_up.size(), substeps, SchemeToggles{true, true});
    return st.advance(x, noise, next, blown_up);
}

Trajectory simulate(const Model& model, const RunConfig& config, std::size_t n, const NoiseRealization& realization,
                    std::span<const double> initial, bool store_path) {
    const std::size_t N = config.particles;
    const std::size_t d = model.state_dim();
    if (realization.particles() != N) throw ConfigError("simulate: realization particle count differs from config");
    if (realization.noise_dim() != model.noise_dim()) throw ConfigError("simulate: realization noise dimension differs from model");
    if (initial.size() != N * d) throw ConfigError("simulate: initial state has the wrong size");

    const TamedModel tm(model, n, config.taming);
    const ResolutionView view(realization, n);
    Stepper stepper(tm, N, config.substeps, SchemeToggles::for_scheme(config.scheme));

    Trajectory tr;
    tr.particles = N;
    tr.dim = d;
    tr.blown_up.assign(N, 0);
    tr.times.resize(n + 1);
    const auto& fine = realization.fine_grid();
    const std::size_t ratio = realization.fine_steps() / n;
    for (std::size_t k = 0; k <= n; ++k) tr.times[k] = fine.point(k * ratio);

    std::vector<double> x(initial.begin(), initial.end()), next(N * d);
    if (store_path) {
        tr.path.reserve((n + 1) * N * d);
        tr.path.insert(tr.path.end(), x.begin(), x.end());
    }
    tr.diagnostics.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const StepNoise sn = view.step(k);
        tr.diagnostics.push_back(stepper.advance(x, sn, next, tr.blown_up));
        x.swap(next);
        if (store_path) tr.path.insert(tr.path.end(), x.begin(), x.end());
    }
    tr.final_state = std::move(x);
    return tr;
}

}  // namespace mkv
