#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mkv/core.hpp"

namespace mkv {

struct JumpEvent {
    double time = 0.0;
    std::size_t particle = 0;
    std::size_t mark = 0;       // atom index in the MarkMeasure
    std::size_t ordinal = 0;    // index among the owning particle's jumps
    std::size_t fine_step = 0;  // fine interval (a, b] containing time
};

/// One piece of the jump-adapted partition for one particle.
struct SubInterval {
    double a = 0.0;
    double b = 0.0;
    std::vector<double> dw;  // m
    std::vector<double> j;   // m, int_a^b (w_s - w_a) ds
};

/// Brownian state at a node of the refined fine step: w_t - w_a and
/// int_a^t (w_s - w_a) ds, with a the left end of the fine step.
struct BridgeNode {
    static constexpr std::size_t no_event = static_cast<std::size_t>(-1);

    double time = 0.0;
    std::vector<double> w;
    std::vector<double> jc;
    std::size_t event = no_event;  // index into events() for jump-time nodes
};

/// All driving noise of one Monte Carlo run of the N-particle system.
///
/// The Brownian paths are stored as (dw, J) pairs on the fine grid with n_max
/// steps. Values at jump times are not stored; they are produced on demand by
/// exact Gaussian conditioning of (w, int w) inside the fine step, with draws
/// keyed by the jump so repeated queries return identical values. A particle's
/// values at its own jump times are inserted before anyone else's and so do not
/// depend on N.
class NoiseRealization {
  public:
    static NoiseRealization sample(const RunConfig& config, const MarkMeasure& marks, std::size_t noise_dim,
                                   std::size_t n_max, std::size_t run_index);

    /// Same as sample() but particle i draws from substream stream_ids[i].
    static NoiseRealization sample(const RunConfig& config, const MarkMeasure& marks, std::size_t noise_dim,
                                   std::size_t n_max, std::size_t run_index, std::vector<std::uint64_t> stream_ids);

    std::size_t particles() const { return particles_; }
    std::size_t noise_dim() const { return noise_dim_; }
    std::size_t fine_steps() const { return fine_.steps(); }
    const Grid& fine_grid() const { return fine_; }
    std::uint64_t stream_id(std::size_t particle) const { return stream_ids_[particle]; }

    double fine_dw(std::size_t step, std::size_t particle, std::size_t l) const {
        return dw_[(step * particles_ + particle) * noise_dim_ + l];
    }
    double fine_j(std::size_t step, std::size_t particle, std::size_t l) const {
        return j_[(step * particles_ + particle) * noise_dim_ + l];
    }

    /// All jump events sorted by time.
    const std::vector<JumpEvent>& events() const { return events_; }
    /// Events whose fine step lies in [first, last).
    std::span<const JumpEvent> events_in(std::size_t first_step, std::size_t last_step) const;

    /// Nodes of fine step `step` for `particle`: both ends plus every jump time in
    /// the step, sorted by time.
    std::vector<BridgeNode> bridge_nodes(std::size_t particle, std::size_t step) const;

    /// Jump-adapted partition of [0, T] for `particle` (union of fine grid
    /// points and every jump time in the system).
    std::vector<SubInterval> sub_intervals(std::size_t particle) const;

    /// Realization in which particle i carries the noise of particle perm[i].
    NoiseRealization permuted(std::span<const std::size_t> perm) const;

    /// Versioned binary dump, for debugging.
    void save(const std::string& path) const;
    static NoiseRealization load(const std::string& path);

  private:
    NoiseRealization() : fine_(1.0, 1) {}

    Grid fine_;
    std::size_t particles_ = 0;
    std::size_t noise_dim_ = 0;
    std::uint64_t seed_ = 0;
    std::uint64_t run_ = 0;
    std::vector<std::uint64_t> stream_ids_;
    std::vector<double> dw_;  // n_max x N x m
    std::vector<double> j_;
    std::vector<JumpEvent> events_;
    std::vector<std::size_t> step_offsets_;  // n_max + 1 offsets into events_
};

/// Conditional draw of (w_u, int_0^u w) for a standard Brownian motion on
/// [0, 1] given (w_1, int_0^1 w) = (w1, j1), with u in (0, 1) and a pair of
/// independent standard normals (z1, z2).
void bridge_conditional(double u, double w1, double j1, double z1, double z2, double& wu, double& ju);

/// Noise of one step of a resolution-n view.
class StepNoise {
  public:
    std::size_t index = 0;
    double t0 = 0.0;
    double t1 = 0.0;
    double h = 0.0;
    std::size_t first_fine = 0;
    std::size_t fine_count = 0;  // fine steps per coarse step
    std::span<const JumpEvent> events;

    /// Increment over the step, N x m.
    std::span<const double> dw(std::size_t particle) const { return {dw_.data() + particle * m_, m_}; }
    /// int_{t0}^{t1} (w_s - w_{t0}) ds, N x m.
    std::span<const double> j(std::size_t particle) const { return {j_.data() + particle * m_, m_}; }
    /// w at fine point t0 + q h_f minus w_{t0}, q in [0, fine_count].
    std::span<const double> prefix(std::size_t q, std::size_t particle) const {
        return {prefix_.data() + (q * n_ + particle) * m_, m_};
    }

    /// w^particle at each event time minus w^particle_{t0}; events x m.
    std::span<const double> offsets_at_events(std::size_t particle) const;

    /// Iterated integral int_{t0}^{t1} int_{t0}^{s} dw^{k,l1}_r dw^{i,l}_s for the
    /// self pair (k = i) or the cross pair (k != i). Diagonal self terms use the
    /// exact identity; the rest a Riemann-Ito sum over `substeps` substeps.
    double iterated(std::size_t k, std::size_t l1, std::size_t i, std::size_t l, std::size_t substeps) const;

  private:
    friend class ResolutionView;
    const NoiseRealization* real_ = nullptr;
    std::size_t n_ = 0;
    std::size_t m_ = 0;
    std::vector<double> dw_;
    std::vector<double> j_;
    std::vector<double> prefix_;
    mutable std::vector<std::vector<double>> offsets_;
    mutable std::vector<std::uint8_t> have_offsets_;
};

/// Resolution-n view of a realization whose n_max is a multiple of n.
class ResolutionView {
  public:
    ResolutionView(const NoiseRealization& real, std::size_t n);

    std::size_t steps() const { return n_; }
    const Grid& grid() const { return grid_; }
    const NoiseRealization& realization() const { return *real_; }

    /// Assembles the data of coarse step k; increments are sequential sums of
    /// the fine increments.
    StepNoise step(std::size_t k) const;

  private:
    const NoiseRealization* real_;
    std::size_t n_;
    std::size_t ratio_;
    Grid grid_;
};

}  // namespace mkv
