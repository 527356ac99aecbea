#include "mkv/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mkv {

namespace {

constexpr char dump_magic[8] = {'M', 'K', 'V', 'N', 'O', 'I', 'S', 'E'};
constexpr std::uint32_t dump_version = 1;

std::vector<JumpEvent> particle_jumps(const MarkMeasure& marks, double horizon, std::uint64_t seed,
                                      std::uint64_t run, std::size_t particle, std::uint64_t sid,
                                      std::uint64_t attempt) {
    std::vector<JumpEvent> out;
    const double lambda = marks.total_intensity();
    if (lambda <= 0.0 || marks.size() == 0) return out;
    Rng rng(stream_seed(seed, run, sid, Stream::jumps, attempt));
    double t = 0.0;
    for (;;) {
        t += rng.exponential() / lambda;
        if (t > horizon) break;
        double u = rng.uniform() * lambda;
        std::size_t mark = 0;
        while (mark + 1 < marks.size() && u >= marks.weight(mark)) {
            u -= marks.weight(mark);
            ++mark;
        }
        out.push_back({t, particle, mark, out.size(), 0});
    }
    return out;
}

// Fine interval (a, b] holding tau: a jump on a grid point belongs to the
// interval it closes.
std::size_t fine_interval(const Grid& fine, double tau) {
    std::size_t k = kappa_index(fine, tau);
    if (k == fine.steps() || (k > 0 && fine.point(k) == tau)) --k;
    return k;
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("noise dump: truncated file");
    return v;
}

template <class T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
    write_pod<std::uint64_t>(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
std::vector<T> read_vec(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    std::vector<T> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw std::runtime_error("noise dump: truncated file");
    return v;
}

}  // namespace

void bridge_conditional(double u, double w1, double j1, double z1, double z2, double& wu, double& ju) {
    const double v = 1.0 - u;
    const double uv = u * v;
    const double k00 = u * (3.0 * u - 2.0);
    const double k01 = 6.0 * uv;
    const double k10 = -u * uv;
    const double k11 = u * u * (3.0 - 2.0 * u);
    const double s00 = uv * (1.0 - 3.0 * uv);
    const double l00 = std::sqrt(std::max(0.0, s00));
    const double l10 = l00 > 0.0 ? uv * uv * (1.0 - 2.0 * u) / (2.0 * l00) : 0.0;
    const double l11 = s00 > 0.0 ? std::sqrt(uv * uv * uv / (12.0 * (1.0 - 3.0 * uv))) : 0.0;
    wu = k00 * w1 + k01 * j1 + l00 * z1;
    ju = k10 * w1 + k11 * j1 + l10 * z1 + l11 * z2;
}

NoiseRealization NoiseRealization::sample(const RunConfig& config, const MarkMeasure& marks, std::size_t noise_dim,
                                           std::size_t n_max, std::size_t run_index) {
    std::vector<std::uint64_t> ids(config.particles);
    std::iota(ids.begin(), ids.end(), std::uint64_t{0});
    return sample(config, marks, noise_dim, n_max, run_index, std::move(ids));
}

NoiseRealization NoiseRealization::sample(const RunConfig& config, const MarkMeasure& marks, std::size_t noise_dim,
                                           std::size_t n_max, std::size_t run_index,
                                           std::vector<std::uint64_t> stream_ids) {
    config.validate();
    if (noise_dim == 0) throw DomainError("noise dimension must be positive");
    if (stream_ids.size() != config.particles) throw DomainError("one stream id per particle required");

    NoiseRealization r;
    r.fine_ = Grid(config.grid.horizon(), n_max);
    r.particles_ = config.particles;
    r.noise_dim_ = noise_dim;
    r.seed_ = config.seed;
    r.run_ = run_index;
    r.stream_ids_ = std::move(stream_ids);

    const std::size_t n = r.particles_;
    const std::size_t m = noise_dim;
    r.dw_.resize(n_max * n * m);
    r.j_.resize(n_max * n * m);
    const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(stream_seed(r.seed_, r.run_, r.stream_ids_[i], Stream::brownian));
        for (std::size_t s = 0; s < n_max; ++s) {
            const double h = r.fine_.point(s + 1) - r.fine_.point(s);
            const double sh = std::sqrt(h);
            for (std::size_t l = 0; l < m; ++l) {
                const double z1 = rng.normal();
                const double z2 = rng.normal();
                const std::size_t idx = (s * n + i) * m + l;
                r.dw_[idx] = sh * z1;
                r.j_[idx] = h * sh * (0.5 * z1 + 0.5 * inv_sqrt3 * z2);
            }
        }
    }

    // Per-particle clocks; a particle whose jump time collides with another
    // jump is re-drawn with the next attempt counter.
    std::vector<std::uint64_t> attempt(n, 0);
    std::vector<std::vector<JumpEvent>> own(n);
    for (std::size_t i = 0; i < n; ++i) {
        own[i] = particle_jumps(marks, r.fine_.horizon(), r.seed_, r.run_, i, r.stream_ids_[i], 0);
    }
    for (;;) {
        r.events_.clear();
        for (const auto& v : own) r.events_.insert(r.events_.end(), v.begin(), v.end());
        std::sort(r.events_.begin(), r.events_.end(), [](const JumpEvent& a, const JumpEvent& b) {
            return a.time != b.time ? a.time < b.time : a.particle < b.particle;
        });
        std::size_t clash = n;
        for (std::size_t e = 0; e < r.events_.size(); ++e) {
            if (r.events_[e].time <= 0.0) clash = r.events_[e].particle;
            if (e + 1 < r.events_.size() && r.events_[e].time == r.events_[e + 1].time) {
                clash = std::max(r.events_[e].particle, r.events_[e + 1].particle);
            }
            if (clash != n) break;
        }
        if (clash == n) break;
        ++attempt[clash];
        own[clash] = particle_jumps(marks, r.fine_.horizon(), r.seed_, r.run_, clash, r.stream_ids_[clash],
                                    attempt[clash]);
    }

    r.step_offsets_.assign(n_max + 1, 0);
    for (auto& e : r.events_) {
        e.fine_step = fine_interval(r.fine_, e.time);
        ++r.step_offsets_[e.fine_step + 1];
    }
    std::partial_sum(r.step_offsets_.begin(), r.step_offsets_.end(), r.step_offsets_.begin());
    return r;
}

std::span<const JumpEvent> NoiseRealization::events_in(std::size_t first_step, std::size_t last_step) const {
    if (first_step > last_step || last_step > fine_.steps()) throw DomainError("events_in: bad step range");
    const std::size_t lo = step_offsets_[first_step];
    const std::size_t hi = step_offsets_[last_step];
    return {events_.data() + lo, hi - lo};
}

std::vector<BridgeNode> NoiseRealization::bridge_nodes(std::size_t particle, std::size_t step) const {
    if (particle >= particles_ || step >= fine_.steps()) throw DomainError("bridge_nodes: index out of range");
    const std::size_t m = noise_dim_;
    std::vector<BridgeNode> nodes(2);
    nodes[0].time = fine_.point(step);
    nodes[0].w.assign(m, 0.0);
    nodes[0].jc.assign(m, 0.0);
    nodes[1].time = fine_.point(step + 1);
    nodes[1].w.resize(m);
    nodes[1].jc.resize(m);
    for (std::size_t l = 0; l < m; ++l) {
        nodes[1].w[l] = fine_dw(step, particle, l);
        nodes[1].jc[l] = fine_j(step, particle, l);
    }

    const std::size_t lo = step_offsets_[step];
    const std::size_t hi = step_offsets_[step + 1];
    if (lo == hi) return nodes;

    std::vector<std::size_t> order;
    for (std::size_t e = lo; e < hi; ++e) {
        if (events_[e].particle == particle) order.push_back(e);
    }
    for (std::size_t e = lo; e < hi; ++e) {
        if (events_[e].particle != particle) order.push_back(e);
    }

    for (std::size_t e : order) {
        const JumpEvent& ev = events_[e];
        // first node at or after the jump time
        auto right = std::lower_bound(nodes.begin() + 1, nodes.end(), ev.time,
                                      [](const BridgeNode& nd, double t) { return nd.time < t; });
        const std::size_t r_idx = static_cast<std::size_t>(right - nodes.begin());
        const BridgeNode& l_node = nodes[r_idx - 1];
        const BridgeNode& r_node = nodes[r_idx];

        BridgeNode fresh;
        fresh.time = ev.time;
        fresh.event = e;
        fresh.w.resize(m);
        fresh.jc.resize(m);
        const double len = r_node.time - l_node.time;
        const double u = (ev.time - l_node.time) / len;
        if (!(u < 1.0)) {
            fresh.w = r_node.w;
            fresh.jc = r_node.jc;
        } else {
            const std::uint64_t key = stream_seed(stream_ids_[ev.particle], ev.ordinal, 0, Stream::bridge);
            Rng rng(stream_seed(seed_, run_, stream_ids_[particle], Stream::bridge, key));
            const double sl = std::sqrt(len);
            for (std::size_t l = 0; l < m; ++l) {
                const double dw = r_node.w[l] - l_node.w[l];
                const double jj = r_node.jc[l] - l_node.jc[l] - l_node.w[l] * len;
                const double z1 = rng.normal();
                const double z2 = rng.normal();
                double wu = 0.0, ju = 0.0;
                bridge_conditional(u, dw / sl, jj / (len * sl), z1, z2, wu, ju);
                fresh.w[l] = l_node.w[l] + sl * wu;
                fresh.jc[l] = l_node.jc[l] + l_node.w[l] * (ev.time - l_node.time) + len * sl * ju;
            }
        }
        nodes.insert(nodes.begin() + static_cast<std::ptrdiff_t>(r_idx), std::move(fresh));
    }
    return nodes;
}

std::vector<SubInterval> NoiseRealization::sub_intervals(std::size_t particle) const {
    std::vector<SubInterval> out;
    const std::size_t m = noise_dim_;
    for (std::size_t s = 0; s < fine_.steps(); ++s) {
        const auto nodes = bridge_nodes(particle, s);
        for (std::size_t q = 0; q + 1 < nodes.size(); ++q) {
            const auto& a = nodes[q];
            const auto& b = nodes[q + 1];
            if (!(b.time > a.time)) continue;
            SubInterval piece;
            piece.a = a.time;
            piece.b = b.time;
            piece.dw.resize(m);
            piece.j.resize(m);
            for (std::size_t l = 0; l < m; ++l) {
                piece.dw[l] = b.w[l] - a.w[l];
                piece.j[l] = b.jc[l] - a.jc[l] - a.w[l] * (b.time - a.time);
            }
            out.push_back(std::move(piece));
        }
    }
    return out;
}

NoiseRealization NoiseRealization::permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != particles_) throw DomainError("permuted: permutation has wrong length");
    std::vector<std::size_t> inverse(particles_, particles_);
    for (std::size_t i = 0; i < particles_; ++i) {
        if (perm[i] >= particles_ || inverse[perm[i]] != particles_) throw DomainError("permuted: not a permutation");
        inverse[perm[i]] = i;
    }
    NoiseRealization r = *this;
    const std::size_t m = noise_dim_;
    for (std::size_t s = 0; s < fine_.steps(); ++s) {
        for (std::size_t i = 0; i < particles_; ++i) {
            for (std::size_t l = 0; l < m; ++l) {
                r.dw_[(s * particles_ + i) * m + l] = dw_[(s * particles_ + perm[i]) * m + l];
                r.j_[(s * particles_ + i) * m + l] = j_[(s * particles_ + perm[i]) * m + l];
            }
        }
    }
    for (std::size_t i = 0; i < particles_; ++i) r.stream_ids_[i] = stream_ids_[perm[i]];
    for (auto& e : r.events_) e.particle = inverse[e.particle];
    // times are distinct, so the order of events is unchanged
    return r;
}

void NoiseRealization::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("noise dump: cannot open " + path);
    os.write(dump_magic, sizeof(dump_magic));
    write_pod(os, dump_version);
    write_pod(os, fine_.horizon());
    write_pod<std::uint64_t>(os, fine_.steps());
    write_pod<std::uint64_t>(os, particles_);
    write_pod<std::uint64_t>(os, noise_dim_);
    write_pod(os, seed_);
    write_pod(os, run_);
    write_vec(os, stream_ids_);
    write_vec(os, dw_);
    write_vec(os, j_);
    write_pod<std::uint64_t>(os, events_.size());
    for (const auto& e : events_) {
        write_pod(os, e.time);
        write_pod<std::uint64_t>(os, e.particle);
        write_pod<std::uint64_t>(os, e.mark);
        write_pod<std::uint64_t>(os, e.ordinal);
        write_pod<std::uint64_t>(os, e.fine_step);
    }
    write_vec(os, step_offsets_);
    if (!os) throw std::runtime_error("noise dump: write failed");
}

NoiseRealization NoiseRealization::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("noise dump: cannot open " + path);
    char magic[sizeof(dump_magic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, dump_magic, sizeof(magic)) != 0) throw std::runtime_error("noise dump: bad magic");
    if (read_pod<std::uint32_t>(is) != dump_version) throw std::runtime_error("noise dump: unsupported version");
    NoiseRealization r;
    const double horizon = read_pod<double>(is);
    const auto steps = read_pod<std::uint64_t>(is);
    r.fine_ = Grid(horizon, steps);
    r.particles_ = read_pod<std::uint64_t>(is);
    r.noise_dim_ = read_pod<std::uint64_t>(is);
    r.seed_ = read_pod<std::uint64_t>(is);
    r.run_ = read_pod<std::uint64_t>(is);
    r.stream_ids_ = read_vec<std::uint64_t>(is);
    r.dw_ = read_vec<double>(is);
    r.j_ = read_vec<double>(is);
    r.events_.resize(read_pod<std::uint64_t>(is));
    for (auto& e : r.events_) {
        e.time = read_pod<double>(is);
        e.particle = read_pod<std::uint64_t>(is);
        e.mark = read_pod<std::uint64_t>(is);
        e.ordinal = read_pod<std::uint64_t>(is);
        e.fine_step = read_pod<std::uint64_t>(is);
    }
    r.step_offsets_ = read_vec<std::size_t>(is);
    return r;
}

//---------------------------------------------------------------------------//
// Coarse views
//---------------------------------------------------------------------------//

ResolutionView::ResolutionView(const NoiseRealization& real, std::size_t n)
    : real_(&real), n_(n), ratio_(0), grid_(real.fine_grid().horizon(), n == 0 ? 1 : n) {
    if (n == 0 || real.fine_steps() % n != 0) {
        throw DomainError("coarsen: resolution " + std::to_string(n) + " does not divide n_max " +
                          std::to_string(real.fine_steps()));
    }
    ratio_ = real.fine_steps() / n;
}

StepNoise ResolutionView::step(std::size_t k) const {
    if (k >= n_) throw DomainError("step index out of range");
    const auto& real = *real_;
    const auto& fine = real.fine_grid();
    const std::size_t n = real.particles();
    const std::size_t m = real.noise_dim();

    StepNoise sn;
    sn.index = k;
    sn.first_fine = k * ratio_;
    sn.fine_count = ratio_;
    sn.t0 = fine.point(sn.first_fine);
    sn.t1 = fine.point(sn.first_fine + ratio_);
    sn.h = sn.t1 - sn.t0;
    sn.events = real.events_in(sn.first_fine, sn.first_fine + ratio_);
    sn.real_ = real_;
    sn.n_ = n;
    sn.m_ = m;

    sn.prefix_.assign((ratio_ + 1) * n * m, 0.0);
    sn.j_.assign(n * m, 0.0);
    for (std::size_t q = 0; q < ratio_; ++q) {
        const std::size_t s = sn.first_fine + q;
        const double hq = fine.point(s + 1) - fine.point(s);
        const double* cur = sn.prefix_.data() + q * n * m;
        double* next = sn.prefix_.data() + (q + 1) * n * m;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = 0; l < m; ++l) {
                const std::size_t c = i * m + l;
                next[c] = cur[c] + real.fine_dw(s, i, l);
                sn.j_[c] += real.fine_j(s, i, l) + cur[c] * hq;
            }
        }
    }
    sn.dw_.assign(sn.prefix_.end() - static_cast<std::ptrdiff_t>(n * m), sn.prefix_.end());
    sn.offsets_.resize(n);
    sn.have_offsets_.assign(n, 0);
    return sn;
}

std::span<const double> StepNoise::offsets_at_events(std::size_t particle) const {
    if (particle >= n_) throw DomainError("offsets_at_events: particle out of range");
    if (!have_offsets_[particle]) {
        auto& out = offsets_[particle];
        out.assign(events.size() * m_, 0.0);
        if (!events.empty()) {
            const std::size_t base = static_cast<std::size_t>(events.data() - real_->events().data());
            std::size_t last_step = BridgeNode::no_event;
            for (std::size_t e = 0; e < events.size(); ++e) {
                const std::size_t s = events[e].fine_step;
                if (s == last_step) continue;
                last_step = s;
                const auto nodes = real_->bridge_nodes(particle, s);
                const auto pre = prefix(s - first_fine, particle);
                for (const auto& nd : nodes) {
                    if (nd.event == BridgeNode::no_event) continue;
                    const std::size_t local = nd.event - base;
                    for (std::size_t l = 0; l < m_; ++l) out[local * m_ + l] = pre[l] + nd.w[l];
                }
            }
        }
        have_offsets_[particle] = 1;
    }
    return offsets_[particle];
}

double StepNoise::iterated(std::size_t k, std::size_t l1, std::size_t i, std::size_t l, std::size_t substeps) const {
    if (k >= n_ || i >= n_ || l1 >= m_ || l >= m_) throw DomainError("iterated: index out of range");
    if (k == i && l1 == l) {
        const double d = dw(i)[l];
        return 0.5 * (d * d - h);
    }
    if (substeps == 0) throw DomainError("iterated integrals need at least one substep");
    const std::size_t mm = std::min(substeps, fine_count);
    if (fine_count % mm != 0) {
        throw DomainError("substep count " + std::to_string(substeps) + " does not divide the " +
                          std::to_string(fine_count) + " fine steps of a coarse step");
    }
    const std::size_t stride = fine_count / mm;
    auto riemann = [&](std::size_t pk, std::size_t a, std::size_t pi, std::size_t b) {
        double s = 0.0;
        for (std::size_t r = 0; r < mm; ++r) {
            const double left = prefix(r * stride, pk)[a];
            s += left * (prefix((r + 1) * stride, pi)[b] - prefix(r * stride, pi)[b]);
        }
        return s;
    };
    if (k != i) return riemann(k, l1, i, l);
    // self, off-diagonal: symmetrized so that I(a,b) + I(b,a) = dw^a dw^b
    const std::size_t lo = std::min(l1, l);
    const std::size_t hi = std::max(l1, l);
    const double p = dw(i)[lo] * dw(i)[hi];
    const double canon = 0.5 * p + 0.5 * (riemann(i, lo, i, hi) - riemann(i, hi, i, lo));
    return l1 == lo ? canon : p - canon;
}

}  // namespace mkv
