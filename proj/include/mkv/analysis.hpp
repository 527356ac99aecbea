#pragma once

#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mkv/core.hpp"
#include "mkv/models.hpp"

namespace mkv {

/// Two-sided 95% normal quantile used for every reported interval.
inline constexpr double z95 = 1.959963984540054;

//---------------------------------------------------------------------------//
// Regression
//---------------------------------------------------------------------------//

struct RateFit {
    double slope = 0.0;         // d log(y) / d log(x)
    double slope_stderr = 0.0;  // NaN with two points
    double intercept = 0.0;
    double rms_rate = 0.0;      // -slope / 2
    double rms_rate_stderr = 0.0;
    std::size_t points = 0;
};

/// Least squares of log y on log x with at least two points, all y > 0.
RateFit fit_loglog(std::span<const double> xs, std::span<const double> ys);

/// fit_loglog of MSE against n with at least four resolutions.
RateFit fit_rate(std::span<const double> resolutions, std::span<const double> mse);

/// Ordinary least squares slope of y on x with its standard error.
struct LinearFit {
    double slope = 0.0;
    double slope_stderr = 0.0;
    double intercept = 0.0;
};
LinearFit fit_linear(std::span<const double> xs, std::span<const double> ys);

//---------------------------------------------------------------------------//
// Strong error and rate
//---------------------------------------------------------------------------//

struct MseEstimate {
    std::size_t n = 0;
    double mse = 0.0;
    double se = 0.0;  // from the spread of per-run means
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct RateExperiment {
    std::string model;
    Scheme scheme = Scheme::milstein;
    std::size_t n_ref = 0;
    std::size_t particles = 0;
    std::size_t runs = 0;
    std::vector<MseEstimate> rows;
    std::vector<double> running_rate;  // RMS rate of rows[0..k], NaN for k = 0
    RateFit fit;                       // NaN unless >= 4 rows with positive MSE
    std::size_t excluded = 0;          // (run, particle) pairs with a blown-up path
    std::size_t total = 0;
    bool failed = false;
    std::string failure;
};

/// Strong errors E|x_T^{n_ref} - x_T^n|^2 against the same scheme at n_ref on
/// one shared realization per run, for every scheme in `schemes`. More than 1%
/// excluded (run, particle) pairs marks the experiment failed.
std::vector<RateExperiment> rate_experiment(const Model& model, const RunConfig& config,
                                            std::span<const Scheme> schemes,
                                            std::span<const std::size_t> resolutions, std::size_t n_ref);

/// Single-resolution strong error for config.scheme.
RateExperiment strong_error(const Model& model, const RunConfig& config, std::size_t n, std::size_t n_ref);

//---------------------------------------------------------------------------//
// Propagation of chaos
//---------------------------------------------------------------------------//

struct PocRow {
    std::size_t particles = 0;
    double discrepancy = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct PocExperiment {
    std::string model;
    std::size_t reference = 0;
    std::size_t steps = 0;
    std::vector<PocRow> rows;
    RateFit fit;                       // slope of log discrepancy on log N
    bool decreasing = false;           // strictly decreasing in N
    bool endpoints_separated = false;  // CI of the smallest N above CI of the largest
    std::size_t excluded = 0;
    std::size_t total = 0;
    bool failed = false;
    std::string failure;
};

/// Discrepancy mean_{i < N} |x_T^{i,N} - x_T^{i,N_ref}|^2, where particle i uses
/// the same noise and initial value in both systems.
PocExperiment poc_experiment(const Model& model, const RunConfig& config, std::span<const std::size_t> sizes,
                             std::size_t reference, std::size_t n);

//---------------------------------------------------------------------------//
// Ito formula for the particle system
//---------------------------------------------------------------------------//

/// F(x, mu) with the derivatives entering the Ito formula. Matrix outputs are
/// d x d row-major; dx_dmu and dy_dmu are the gradients of d_mu F(x, mu, y) in
/// x and y, dmu2 the second Lions derivative at (y, y').
struct ItoFunction {
    std::function<double(Point, const EmpiricalMeasure&)> value;
    std::function<void(Point, const EmpiricalMeasure&, Out)> dx;
    std::function<void(Point, const EmpiricalMeasure&, Out)> dxx;
    std::function<void(Point, const EmpiricalMeasure&, Point, Out)> dmu;
    std::function<void(Point, const EmpiricalMeasure&, Point, Out)> dx_dmu;
    std::function<void(Point, const EmpiricalMeasure&, Point, Out)> dy_dmu;
    std::function<void(Point, const EmpiricalMeasure&, Point, Point, Out)> dmu2;

    /// Throws ConfigError naming the first missing member.
    void require_complete() const;

    /// |x|^2 + |mean(mu)|^2
    static ItoFunction quadratic_mean();
    static ItoFunction constant(double c);
    /// |x|^2, no measure dependence
    static ItoFunction square();
};

struct ItoEstimate {
    std::size_t steps = 0;
    double direct = 0.0;      // E[F(x_t, mu_t) - F(x_0, mu_0)]
    double formula = 0.0;     // E[sum of ds-integrals], left-point quadrature
    double difference = 0.0;  // direct - formula
    double se = 0.0;          // of difference, from per-run values
    double residual = 0.0;    // difference after subtracting mean-zero discrete martingale increments
    double residual_se = 0.0;
    std::size_t runs_used = 0;
};

struct ItoVerification {
    ItoEstimate coarse;       // n
    ItoEstimate fine;         // 2n on the same realizations (when requested)
    double halving_gap = 0.0;  // residual(n) - 2 residual(2n)
    double halving_gap_se = 0.0;
    std::size_t excluded_runs = 0;

    /// |direct - formula| < 3 SE at n.
    bool within_three_se() const;
    /// residual(n) resolved (> 3 SE) and residual(n) = 2 residual(2n) within 3 SE.
    bool halves() const;
};

/// Monte Carlo check of the Ito formula along simulated paths of
/// config.scheme over [0, config.grid.horizon()] with n steps, evaluated for
/// the first `tagged` particles of each run. With `check_halving` every run is
/// also simulated at 2n on the same realization.
ItoVerification ito_verify(const Model& model, const ItoFunction& f, const RunConfig& config, std::size_t n,
                           std::size_t tagged = 1, bool check_halving = true);

//---------------------------------------------------------------------------//
// p-th power remainder inequality
//---------------------------------------------------------------------------//

struct PowerCheck {
    double lhs = 0.0;  // |x|^p - |y|^p - p |y|^{p-2} y.(x - y)
    double rhs = 0.0;  // p (p-1) |x-y|^2 int_0^1 (1-t) |y + t(x-y)|^{p-2} dt
    double violation = 0.0;  // (lhs - rhs) / (1 + |x|^p + |y|^p)
};

/// Evaluates both sides with adaptive quadrature split at the point of the
/// segment closest to the origin. p <= 4 raises DomainError.
PowerCheck pth_power_inequality(std::span<const double> x, std::span<const double> y, double p);

struct PowerFuzzReport {
    std::size_t samples = 0;
    std::size_t violations = 0;  // samples with violation > slack
    double max_violation = -std::numeric_limits<double>::infinity();
};

/// Random x, y in d in {1, 2, 3} with components in [-2, 2] and p in (4, 12],
/// including exact y = 0 and x = y cases.
PowerFuzzReport pth_power_inequality_check(std::size_t samples, std::uint64_t seed, double slack = 1e-10);

//---------------------------------------------------------------------------//
// Measure Taylor identity and noise coupling
//---------------------------------------------------------------------------//

struct TaylorFuzzReport {
    std::size_t configurations = 0;
    double max_residual = 0.0;
};

/// measure_taylor_check over random atom sets X, Y (N atoms in R^dim, standard
/// normal components) and points z for f(z, mu) = z.mean(mu) + |mean(mu)|^2
/// with d_mu f(z, mu, y) = z + 2 mean(mu).
TaylorFuzzReport measure_taylor_fuzz(std::size_t atoms, std::size_t dim, std::size_t configurations,
                                     std::size_t quadrature_order, std::uint64_t seed);

struct MomentCheck {
    std::string name;
    double estimate = 0.0;
    double target = 0.0;
    double se = 0.0;

    bool within(double k) const { return std::abs(estimate - target) <= k * se; }
};

struct NoiseCouplingReport {
    std::size_t compared_increments = 0;
    std::size_t increment_mismatches = 0;   // coarse dw differing from the sequential fine sum
    std::vector<MomentCheck> covariance;    // E[dw^2], E[dw J], E[J^2] at step size h
    double h = 0.0;
    std::size_t samples = 0;
    std::size_t diagonal_checked = 0;
    double diagonal_max_error = 0.0;        // |I(l,l) - (dw_l^2 - h)/2|
    double symmetry_max_error = 0.0;        // |I(a,b) + I(b,a) - dw_a dw_b| for a != b, up to rounding

    bool passed() const;
};

/// Samples Brownian noise for `samples` (particle, fine step) pairs with
/// m = 2 components and checks coarsening, the covariance of (dw, J) against
/// [[h, h^2/2], [h^2/2, h^3/3]] within 3 SE, and the self iterated-integral
/// identities.
NoiseCouplingReport noise_coupling_check(std::size_t samples, std::uint64_t seed);

}  // namespace mkv
