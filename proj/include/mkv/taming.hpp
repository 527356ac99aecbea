#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkv/core.hpp"

namespace mkv {

/// f / (1 + (n^{-alpha} |f| / scale)^q)^{1/q}. q = 1 is the plain ratio form.
/// The result never exceeds min(|f|, n^alpha scale) and tends to f as n grows;
/// |f - result| <= |f|^2 / (n^alpha scale) for every q >= 1.
double tame(double f, double scale, double alpha, double n, double q = 1.0);

/// Vector form: the Euclidean norm of `values` is tamed and the direction
/// kept. Returns the factor applied (1 when nothing changed).
double tame_scalar_family(std::span<double> values, double scale, double alpha, double n, double q = 1.0);

struct TamingExponents {
    double drift = 1.0 / 3.0;
    double diffusion = 1.0 / 6.0;
    double products = 1.0 / 6.0;
    double jump = 0.0;  // 1 / (4 pbar), filled in by make_tamed
};

/// Model coefficients tamed for step count n. In identity mode (Taming::off)
/// every evaluator returns the base values unchanged.
///
/// Scales: b and the D-products use 1 + |x| + W2(mu, delta_0); sigma and gamma
/// use 1 + |x|, so their dependence on the measure only enters through the base
/// coefficient. Each family uses the sharpness q = 1 / alpha, which keeps the
/// pointwise gap of order 1/n.
class TamedModel {
  public:
    TamedModel(const Model& base, std::size_t n, Taming mode);

    const Model& base() const { return *base_; }
    std::size_t steps() const { return n_; }
    Taming mode() const { return mode_; }
    const TamingExponents& exponents() const { return exp_; }

    /// Returns the factor applied to b (1 = untouched).
    double drift(Point x, const EmpiricalMeasure& mu, Out out) const;
    void diffusion(Point x, const EmpiricalMeasure& mu, Out out) const;
    void jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const;
    /// sum_j lambda_j gamma-hat(x, mu, z_j)
    void jump_compensator(Point x, const EmpiricalMeasure& mu, Out out) const;

    /// (D_x^{sigma^{l1}} sigma^{ul}), layout [u][l][l1]
    void diffusion_dx_products(Point x, const EmpiricalMeasure& mu, Out out) const;
    /// (D_mu^{sigma^{l1}} sigma^{ul})(x, mu, y), layout [u][l][l1]
    void diffusion_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Out out) const;
    /// (D_x^{sigma^{l1}} gamma^u)(x, mu, z), layout [u][l1]
    void jump_dx_products(Point x, const EmpiricalMeasure& mu, Point z, Out out) const;
    /// (D_mu^{sigma^{l1}} gamma^u)(x, mu, y, z), layout [u][l1]
    void jump_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const;

    /// Untamed counterparts of the products, same layouts.
    void raw_diffusion_dx_products(Point x, const EmpiricalMeasure& mu, Out out) const;
    void raw_diffusion_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Out out) const;
    void raw_jump_dx_products(Point x, const EmpiricalMeasure& mu, Point z, Out out) const;
    void raw_jump_dmu_products(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const;

    double measure_scale(Point x, const EmpiricalMeasure& mu) const;
    double state_scale(Point x) const;

  private:
    const Model* base_;
    std::size_t n_;
    Taming mode_;
    TamingExponents exp_;
    double nd_;
    double pow_drift_ = 1.0;  // n^{-alpha} per family
    double pow_diffusion_ = 1.0;
    double pow_products_ = 1.0;
    double pow_jump_ = 1.0;
};

TamedModel make_tamed(const Model& model, std::size_t n, Taming mode = Taming::on);

//---------------------------------------------------------------------------//
// Assumption probes
//---------------------------------------------------------------------------//

struct ProbeSpec {
    std::size_t samples = 2000;        // per probe (per shell for the growth probe)
    std::size_t atoms = 8;             // atoms of each sampled measure
    double radius = 100.0;             // largest |x| sampled
    std::size_t shells = 8;            // geometric radius shells for growth detection
    std::vector<std::size_t> resolutions{4, 16, 64, 256, 1024};
    double epsilon = 0.5;              // scaling exponent n^{1 + 2/(eps + 2)} of taming gaps
    double monotone_alpha = 1.5;       // alpha > 1 of the monotonicity expression
    std::uint64_t seed = 1;
};

struct ProbeRow {
    std::string assumption;
    std::size_t n = 0;  // 0 for untamed probes
    double max_ratio = 0.0;
    std::vector<double> argmax_x;
};

struct ProbeReport {
    std::vector<ProbeRow> rows;
    std::vector<std::string> flagged;  // assumptions whose ratios grow
    std::size_t nonfinite = 0;

    bool passed() const { return flagged.empty() && nonfinite == 0; }
};

struct TamingBoundFamily {
    std::string name;
    std::size_t checked = 0;
    std::size_t violations = 0;
    double max_excess = 0.0;  // largest (tamed - bound) / bound seen
};

struct TamingBoundReport {
    std::size_t n = 0;
    std::vector<TamingBoundFamily> families;  // drift, diffusion, dx_products, dmu_products, jump_moment

    bool passed() const;
};

/// Fuzzes the min-bounds of the tamed coefficients at step count n: |b-hat|,
/// |sigma-hat| and every tamed product entry are at most
/// min{n^alpha (1 + |x| + W2(mu, delta_0)), |untamed|}, and
/// sum_j lambda_j |gamma-hat_j|^pbar <= min{n^{1/4} (1 + |x| + W2)^pbar lambda, sum_j lambda_j |gamma_j|^pbar}.
/// States have log-uniform radius in [1e-3, 1e3]. `rel_slack` absorbs rounding.
TamingBoundReport check_taming_bounds(const Model& model, std::size_t n, std::size_t samples, std::uint64_t seed,
                                      double rel_slack = 1e-12);

/// Empirical ratios for linear-growth coercivity of the untamed coefficients
/// ("growth_coercivity"), one-sided monotonicity ("monotonicity"), p-bar
/// coercivity of the tamed coefficients ("tamed_coercivity") and taming gaps
/// scaled by n^{1 + 2/(eps + 2)} ("taming_gap"). The first two are flagged when
/// their ratio grows with |x|, the last two when it grows with n, judged by a
/// log-log slope.
ProbeReport probe_assumptions(const Model& model, const ProbeSpec& spec);

}  // namespace mkv
