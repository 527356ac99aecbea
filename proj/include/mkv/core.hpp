#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "mkv/errors.hpp"
#include "mkv/measure.hpp"

namespace mkv {

using Point = std::span<const double>;
using Out = std::span<double>;

//---------------------------------------------------------------------------//
// Time grid
//---------------------------------------------------------------------------//

/// Uniform partition 0 = t_0 < ... < t_n = T.
class Grid {
  public:
    Grid(double horizon, std::size_t steps);

    double horizon() const { return horizon_; }
    std::size_t steps() const { return steps_; }
    double step_size() const { return horizon_ / static_cast<double>(steps_); }

    /// t_k = kT/n, with t_n returned as T exactly.
    double point(std::size_t k) const;

  private:
    double horizon_;
    std::size_t steps_;
};

/// Largest grid point <= t. Grid points map to themselves; kappa(T) = T.
double kappa(const Grid& grid, double t);

/// Index k of kappa(t) = t_k.
std::size_t kappa_index(const Grid& grid, double t);

//---------------------------------------------------------------------------//
// Marks
//---------------------------------------------------------------------------//

/// Finite discrete Levy measure nu = sum_j lambda_j delta_{z_j} on R^{d_z}.
class MarkMeasure {
  public:
    MarkMeasure() = default;
    MarkMeasure(std::size_t mark_dim, std::vector<double> atoms, std::vector<double> weights);

    /// Atoms {+1, -1} with weight intensity/2 each; empty when intensity is 0.
    static MarkMeasure symmetric_pair(double intensity);

    std::size_t size() const { return weights_.size(); }
    std::size_t mark_dim() const { return mark_dim_; }
    std::span<const double> atom(std::size_t j) const { return {atoms_.data() + j * mark_dim_, mark_dim_}; }
    double weight(std::size_t j) const { return weights_[j]; }
    double total_intensity() const { return total_; }
    double probability(std::size_t j) const { return weights_[j] / total_; }

    /// sum_j lambda_j g(z_j)
    template <class G>
    double integrate(G&& g) const {
        double s = 0.0;
        for (std::size_t j = 0; j < size(); ++j) s += weights_[j] * g(atom(j));
        return s;
    }

  private:
    std::size_t mark_dim_ = 1;
    std::vector<double> atoms_;
    std::vector<double> weights_;
    double total_ = 0.0;
};

//---------------------------------------------------------------------------//
// Model interface
//---------------------------------------------------------------------------//

/// Coefficients of a McKean-Vlasov SDE with jumps together with their state
/// derivatives and Lions derivatives.
///
/// Shapes (row-major):
///   drift            d          drift_dx        d x d     [u][v]
///   diffusion        d x m      diffusion_dx    d x m x d [u][l][v]
///   jump             d          jump_dx         d x d     [u][v]
///   drift_dmu(y)     d x d      diffusion_dmu   d x m x d
///   jump_dmu(y, z)   d x d
/// where the trailing index is the direction of differentiation.
class Model {
  public:
    virtual ~Model() = default;

    virtual std::string_view name() const = 0;

    std::size_t state_dim() const { return state_dim_; }
    std::size_t noise_dim() const { return noise_dim_; }
    const MarkMeasure& marks() const { return marks_; }
    /// Polynomial Lipschitz exponent eta of the state variable.
    double growth_exponent() const { return growth_exponent_; }
    /// Moment order p-bar (> 4) used for taming the jump coefficient.
    double moment_order() const { return moment_order_; }

    /// False when sigma (resp. gamma) does not depend on mu at all, which lets
    /// steppers skip the O(N^2) cross-particle sums.
    virtual bool diffusion_depends_on_measure() const { return true; }
    virtual bool jump_depends_on_measure() const { return true; }

    virtual void drift(Point x, const EmpiricalMeasure& mu, Out out) const = 0;
    virtual void diffusion(Point x, const EmpiricalMeasure& mu, Out out) const = 0;
    virtual void jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const = 0;
    /// int_Z gamma(x, mu, z) nu(dz); defaults to the atom sum.
    virtual void jump_compensator(Point x, const EmpiricalMeasure& mu, Out out) const;

    virtual void drift_dx(Point x, const EmpiricalMeasure& mu, Out out) const = 0;
    virtual void diffusion_dx(Point x, const EmpiricalMeasure& mu, Out out) const = 0;
    virtual void jump_dx(Point x, const EmpiricalMeasure& mu, Point z, Out out) const = 0;

    virtual void drift_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const = 0;
    virtual void diffusion_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const = 0;
    virtual void jump_dmu(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const = 0;

  protected:
    Model(std::size_t state_dim, std::size_t noise_dim, MarkMeasure marks, double growth_exponent,
          double moment_order);

  private:
    std::size_t state_dim_;
    std::size_t noise_dim_;
    MarkMeasure marks_;
    double growth_exponent_;
    double moment_order_;
};

//---------------------------------------------------------------------------//
// Run configuration and seeding
//---------------------------------------------------------------------------//

enum class Scheme { euler, milstein };
enum class Taming { on, off };

std::string_view to_string(Scheme s);
std::string_view to_string(Taming t);
Scheme parse_scheme(std::string_view s);
Taming parse_taming(std::string_view s);

/// Initial law: every component of every particle i.i.d. N(mean, stddev^2).
struct InitialLaw {
    double mean = 0.0;
    double stddev = 0.0;
};

struct RunConfig {
    std::size_t particles = 1;
    std::size_t runs = 1;
    std::uint64_t seed = 0;
    Grid grid{1.0, 1};
    std::size_t threads = 1;
    Scheme scheme = Scheme::milstein;
    Taming taming = Taming::on;
    /// Riemann-Ito substeps for Levy areas and cross-particle integrals.
    std::size_t substeps = 32;
    InitialLaw initial;

    void validate() const;
};

/// Labels of the independent random streams owned by each (run, particle).
enum class Stream : std::uint64_t { initial = 1, brownian = 2, jumps = 3, bridge = 4 };

/// Seed of the substream (base, run, particle, label, extra). A pure function
/// of its arguments, so per-particle randomness does not depend on N or on
/// scheduling.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t run, std::uint64_t particle, Stream label,
                          std::uint64_t extra = 0);

/// SplitMix64 generator with Ziggurat normal and exponential variates.
class Rng {
  public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double normal() { return normal_(*this); }
    /// Exponential with unit rate.
    double exponential() { return exponential_(*this); }

  private:
    std::uint64_t state_;
    boost::random::normal_distribution<double> normal_{0.0, 1.0};
    boost::random::exponential_distribution<double> exponential_{1.0};
};

/// Initial positions (N x d, row-major) drawn from the per-particle initial stream.
std::vector<double> sample_initial_state(const InitialLaw& law, std::uint64_t seed, std::size_t run,
                                         std::size_t particles, std::size_t dim);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome is independent of scheduling.
template <class F>
void parallel_for(std::size_t count, std::size_t threads, F&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

//---------------------------------------------------------------------------//
// Model validation
//---------------------------------------------------------------------------//

struct ProbePoint {
    std::vector<double> x;      // d
    std::vector<double> atoms;  // N x d
};

struct ValidationEntry {
    std::string quantity;
    double max_discrepancy = 0.0;
    bool flagged = false;
};

struct ValidationReport {
    std::vector<ValidationEntry> entries;
    bool fatal = false;          // non-finite coefficient value seen
    std::string fatal_detail;
    double tolerance = 1e-6;

    bool passed() const;
    double max_discrepancy() const;
};

/// Compares every analytic state/Lions derivative of `model` with second-order
/// central differences (perturbation h) at the probe points, and the jump
/// compensator with the direct atom sum. Relative discrepancies are
/// |analytic - fd| / max(1, |analytic|).
ValidationReport validate_model(const Model& model, std::span<const ProbePoint> probes, double tolerance = 1e-6,
                                 double perturbation = 1e-5);

}  // namespace mkv
