#include "mkv/measure.hpp"

#include <algorithm>
#include <cmath>
#include <gsl/gsl_integration.h>
#include <memory>
#include <string>

#include "mkv/errors.hpp"

namespace mkv {

EmpiricalMeasure::EmpiricalMeasure(std::span<const double> atoms, std::size_t dim)
    : atoms_(atoms), dim_(dim) {
    if (dim == 0 || atoms.empty() || atoms.size() % dim != 0) {
        throw DomainError("empirical measure needs a non-empty atom buffer whose length is a multiple of d");
    }
    count_ = atoms.size() / dim;
    mean_.assign(dim, 0.0);
    double sq = 0.0;
    for (std::size_t j = 0; j < count_; ++j) {
        for (std::size_t u = 0; u < dim; ++u) {
            const double v = atoms[j * dim + u];
            mean_[u] += v;
            sq += v * v;
        }
    }
    const double inv = 1.0 / static_cast<double>(count_);
    for (auto& m : mean_) m *= inv;
    second_moment_ = sq * inv;
}

std::span<const double> EmpiricalMeasure::atom(std::size_t j) const {
    if (shift_index_ && *shift_index_ == j) return moved_atom_;
    return atoms_.subspan(j * dim_, dim_);
}

void shift_into(const EmpiricalMeasure& base, std::size_t k, std::span<const double> v, EmpiricalMeasure& out) {
    if (base.is_shifted()) throw DomainError("shifted: base measure is already shifted");
    if (k >= base.size()) throw DomainError("shifted: atom index out of range");
    if (v.size() != base.dim()) throw DomainError("shifted: displacement has wrong dimension");

    out.atoms_ = base.atoms_;
    out.dim_ = base.dim_;
    out.count_ = base.count_;
    out.shift_index_ = k;
    out.shift_.assign(v.begin(), v.end());

    const auto old_atom = base.atoms_.subspan(k * base.dim_, base.dim_);
    out.moved_atom_.resize(base.dim_);
    double old_sq = 0.0;
    double new_sq = 0.0;
    for (std::size_t u = 0; u < base.dim_; ++u) {
        out.moved_atom_[u] = old_atom[u] + v[u];
        old_sq += old_atom[u] * old_atom[u];
        new_sq += out.moved_atom_[u] * out.moved_atom_[u];
    }
    const double n = static_cast<double>(base.count_);
    out.mean_.resize(base.dim_);
    for (std::size_t u = 0; u < base.dim_; ++u) out.mean_[u] = base.mean_[u] + v[u] / n;
    out.second_moment_ = base.second_moment_ + (new_sq - old_sq) / n;
}

EmpiricalMeasure shifted(const EmpiricalMeasure& base, std::size_t k, std::span<const double> v) {
    EmpiricalMeasure out;
    shift_into(base, k, v, out);
    return out;
}

double w2_to_dirac0(const EmpiricalMeasure& mu) {
    return std::sqrt(std::max(0.0, mu.second_moment()));
}

namespace {

void require_same_count(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.size() != nu.size()) throw DomainError("measures have different atom counts");
    if (mu.dim() != nu.dim()) throw DomainError("measures live in different dimensions");
}

std::vector<double> collect_1d(const EmpiricalMeasure& mu) {
    std::vector<double> v(mu.size());
    for (std::size_t j = 0; j < mu.size(); ++j) v[j] = mu.atom(j)[0];
    return v;
}

}  // namespace

double w2_1d_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim() != 1 || nu.dim() != 1) throw DomainError("w2_1d_exact: unsupported dimension (d must be 1)");
    require_same_count(mu, nu);
    auto a = collect_1d(mu);
    auto b = collect_1d(nu);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

double w2_index_bound(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    require_same_count(mu, nu);
    double s = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
        const auto x = mu.atom(j);
        const auto y = nu.atom(j);
        for (std::size_t u = 0; u < mu.dim(); ++u) s += (x[u] - y[u]) * (x[u] - y[u]);
    }
    return std::sqrt(s / static_cast<double>(mu.size()));
}

QuadratureRule gauss_legendre(std::size_t order) {
    if (order == 0) throw DomainError("gauss_legendre: order must be positive");
    std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)> table(
        gsl_integration_glfixed_table_alloc(order), &gsl_integration_glfixed_table_free);
    if (!table) throw std::runtime_error("gauss_legendre: table allocation failed");
    QuadratureRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (std::size_t i = 0; i < order; ++i) {
        gsl_integration_glfixed_point(0.0, 1.0, i, &rule.nodes[i], &rule.weights[i], table.get());
    }
    return rule;
}

TaylorCheck measure_taylor_check(const MeasureFunction& f, const LionsDerivative& dmu_f,
                                 std::span<const double> z, std::span<const double> x_atoms,
                                 std::span<const double> y_atoms, std::size_t dim,
                                 std::size_t quadrature_order) {
    if (x_atoms.size() != y_atoms.size()) throw DomainError("measure_taylor_check: mismatched atom counts");
    const EmpiricalMeasure mu_x(x_atoms, dim);
    const EmpiricalMeasure mu_y(y_atoms, dim);
    const std::size_t n = mu_x.size();

    TaylorCheck out;
    out.lhs = f(z, mu_x) - f(z, mu_y);

    const auto rule = gauss_legendre(quadrature_order);
    std::vector<double> interp(x_atoms.size());
    std::vector<double> grad(dim);
    double integral = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const double t = rule.nodes[q];
        for (std::size_t i = 0; i < interp.size(); ++i) interp[i] = y_atoms[i] + t * (x_atoms[i] - y_atoms[i]);
        const EmpiricalMeasure mu_t(interp, dim);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dmu_f(z, mu_t, mu_t.atom(j), grad);
            for (std::size_t u = 0; u < dim; ++u) sum += grad[u] * (x_atoms[j * dim + u] - y_atoms[j * dim + u]);
        }
        integral += rule.weights[q] * sum;
    }
    out.rhs = integral / static_cast<double>(n);
    out.residual = std::abs(out.lhs - out.rhs);
    return out;
}

}  // namespace mkv
