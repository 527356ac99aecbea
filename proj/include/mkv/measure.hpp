#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace mkv {

/// Uniformly weighted empirical measure (1/N) sum_j delta_{x^j} over a
/// borrowed buffer of N atoms in R^d, stored row-major.
///
/// A measure may carry a single-atom displacement (see shifted()): atom k is
/// then read as x^k + v while the buffer stays untouched. Mean and second
/// moment are cached at construction; the shifted variants are O(d) updates of
/// the base values, so building one per jump event is cheap.
class EmpiricalMeasure {
  public:
    EmpiricalMeasure(std::span<const double> atoms, std::size_t dim);
    /// Empty measure, only useful as a shift_into target.
    EmpiricalMeasure() = default;

    std::size_t size() const { return count_; }
    std::size_t dim() const { return dim_; }

    std::span<const double> atom(std::size_t j) const;
    std::span<const double> mean() const { return mean_; }

    /// (1/N) sum_j |x^j|^2, i.e. W_2(mu, delta_0)^2.
    double second_moment() const { return second_moment_; }

    bool is_shifted() const { return shift_index_.has_value(); }
    std::optional<std::size_t> shift_index() const { return shift_index_; }
    std::span<const double> shift() const { return shift_; }

    /// Underlying (unshifted) atom buffer.
    std::span<const double> base_atoms() const { return atoms_; }

  private:
    friend void shift_into(const EmpiricalMeasure&, std::size_t, std::span<const double>, EmpiricalMeasure&);
    friend EmpiricalMeasure shifted(const EmpiricalMeasure&, std::size_t, std::span<const double>);

    std::span<const double> atoms_;
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
    std::vector<double> mean_;
    double second_moment_ = 0.0;

    std::optional<std::size_t> shift_index_;
    std::vector<double> shift_;
    std::vector<double> moved_atom_;
};

/// Lazy view of `base` with atom k displaced by v. `base` must be unshifted
/// and must outlive the returned view.
EmpiricalMeasure shifted(const EmpiricalMeasure& base, std::size_t k, std::span<const double> v);

/// shifted() writing into `out`, reusing its buffers.
void shift_into(const EmpiricalMeasure& base, std::size_t k, std::span<const double> v, EmpiricalMeasure& out);

double w2_to_dirac0(const EmpiricalMeasure& mu);

/// Exact W_2 between two one-dimensional empirical measures with equal atom
/// counts (sorted order-statistic matching).
double w2_1d_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// Index-coupling bound sqrt((1/N) sum_j |x^j - y^j|^2) >= W_2(mu, nu).
double w2_index_bound(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

struct QuadratureRule {
    std::vector<double> nodes;    // on [0, 1]
    std::vector<double> weights;  // sum to 1
};

/// Gauss-Legendre rule with `order` points mapped to [0, 1].
QuadratureRule gauss_legendre(std::size_t order);

/// f(z, mu) for a scalar function of a point and a measure.
using MeasureFunction = std::function<double(std::span<const double>, const EmpiricalMeasure&)>;
/// Lions derivative d_mu f(z, mu, y), written into `out` (length d).
using LionsDerivative = std::function<void(std::span<const double>, const EmpiricalMeasure&,
                                           std::span<const double>, std::span<double>)>;

struct TaylorCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
};

/// Compares f(z, emp(X)) - f(z, emp(Y)) with the interpolated Lions-derivative
/// integral (1/N) int_0^1 sum_j d_mu f(z, emp(Y + t(X - Y)), y^j + t(x^j - y^j)) . (x^j - y^j) dt,
/// the t-integral evaluated with a Gauss-Legendre rule of the given order.
TaylorCheck measure_taylor_check(const MeasureFunction& f, const LionsDerivative& dmu_f,
                                 std::span<const double> z, std::span<const double> x_atoms,
                                 std::span<const double> y_atoms, std::size_t dim,
                                 std::size_t quadrature_order);

}  // namespace mkv
