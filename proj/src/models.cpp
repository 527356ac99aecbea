#include "mkv/models.hpp"

#include <array>
#include <cmath>

namespace mkv {

namespace {

void zero(Out out) { std::fill(out.begin(), out.end(), 0.0); }

double scalar_mark(Point z) {
    if (z.size() != 1) throw DomainError("built-in models use scalar marks");
    return z[0];
}

}  // namespace

//---------------------------------------------------------------------------//
// MeanFieldOUJump
//---------------------------------------------------------------------------//

MeanFieldOUJump::MeanFieldOUJump(const Params& p) : MeanFieldOUJump(p, MarkMeasure::symmetric_pair(p.intensity)) {}

MeanFieldOUJump::MeanFieldOUJump(const Params& p, MarkMeasure marks)
    : Model(p.dim, p.dim, std::move(marks), 0.0, p.pbar), p_(p) {}

void MeanFieldOUJump::drift(Point x, const EmpiricalMeasure& mu, Out out) const {
    const auto mean = mu.mean();
    for (std::size_t u = 0; u < p_.dim; ++u) out[u] = p_.a * x[u] + p_.c * mean[u];
}

void MeanFieldOUJump::diffusion(Point x, const EmpiricalMeasure& mu, Out out) const {
    const std::size_t d = p_.dim;
    zero(out);
    if (p_.s2 == 0.0) {
        for (std::size_t u = 0; u < d; ++u) out[u * d + u] = p_.s0 + p_.s1 * x[u];
        return;
    }
    const auto mean = mu.mean();
    for (std::size_t u = 0; u < d; ++u) out[u * d + u] = p_.s0 + p_.s1 * x[u] + p_.s2 * mean[u];
}

void MeanFieldOUJump::jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const {
    const double zz = scalar_mark(z);
    if (p_.g2 == 0.0) {
        for (std::size_t u = 0; u < p_.dim; ++u) out[u] = (p_.g0 + p_.g1 * x[u]) * zz;
        return;
    }
    const auto mean = mu.mean();
    for (std::size_t u = 0; u < p_.dim; ++u) out[u] = (p_.g0 + p_.g1 * x[u] + p_.g2 * mean[u]) * zz;
}

void MeanFieldOUJump::drift_dx(Point, const EmpiricalMeasure&, Out out) const {
    zero(out);
    for (std::size_t u = 0; u < p_.dim; ++u) out[u * p_.dim + u] = p_.a;
}

void MeanFieldOUJump::diffusion_dx(Point, const EmpiricalMeasure&, Out out) const {
    const std::size_t d = p_.dim;
    zero(out);
    for (std::size_t u = 0; u < d; ++u) out[(u * d + u) * d + u] = p_.s1;
}

void MeanFieldOUJump::jump_dx(Point, const EmpiricalMeasure&, Point z, Out out) const {
    const double zz = scalar_mark(z);
    zero(out);
    for (std::size_t u = 0; u < p_.dim; ++u) out[u * p_.dim + u] = p_.g1 * zz;
}

void MeanFieldOUJump::drift_dmu(Point, const EmpiricalMeasure&, Point, Out out) const {
    zero(out);
    for (std::size_t u = 0; u < p_.dim; ++u) out[u * p_.dim + u] = p_.c;
}

void MeanFieldOUJump::diffusion_dmu(Point, const EmpiricalMeasure&, Point, Out out) const {
    const std::size_t d = p_.dim;
    zero(out);
    for (std::size_t u = 0; u < d; ++u) out[(u * d + u) * d + u] = p_.s2;
}

void MeanFieldOUJump::jump_dmu(Point, const EmpiricalMeasure&, Point, Point z, Out out) const {
    const double zz = scalar_mark(z);
    zero(out);
    for (std::size_t u = 0; u < p_.dim; ++u) out[u * p_.dim + u] = p_.g2 * zz;
}

//---------------------------------------------------------------------------//
// CubicMeanField
//---------------------------------------------------------------------------//

CubicMeanField::CubicMeanField(const Params& p)
    : Model(1, 1, MarkMeasure::symmetric_pair(p.intensity), 2.0, p.pbar), p_(p) {
    if (!(p.beta > 0.0)) throw DomainError("cubic model needs beta > 0");
    if (p.rho < 0.0) throw DomainError("cubic model needs rho >= 0");
}

void CubicMeanField::drift(Point x, const EmpiricalMeasure& mu, Out out) const {
    const double v = x[0];
    out[0] = v - p_.beta * v * v * v + p_.c * mu.mean()[0];
}

void CubicMeanField::diffusion(Point x, const EmpiricalMeasure&, Out out) const { out[0] = p_.s1 * x[0]; }

void CubicMeanField::jump(Point x, const EmpiricalMeasure&, Point z, Out out) const {
    const double v = x[0];
    out[0] = p_.g1 * v * (1.0 + p_.rho * std::sqrt(std::abs(v))) * scalar_mark(z);
}

void CubicMeanField::drift_dx(Point x, const EmpiricalMeasure&, Out out) const {
    out[0] = 1.0 - 3.0 * p_.beta * x[0] * x[0];
}

void CubicMeanField::diffusion_dx(Point, const EmpiricalMeasure&, Out out) const { out[0] = p_.s1; }

void CubicMeanField::jump_dx(Point x, const EmpiricalMeasure&, Point z, Out out) const {
    out[0] = p_.g1 * (1.0 + 1.5 * p_.rho * std::sqrt(std::abs(x[0]))) * scalar_mark(z);
}

void CubicMeanField::drift_dmu(Point, const EmpiricalMeasure&, Point, Out out) const { out[0] = p_.c; }

void CubicMeanField::diffusion_dmu(Point, const EmpiricalMeasure&, Point, Out out) const { out[0] = 0.0; }

void CubicMeanField::jump_dmu(Point, const EmpiricalMeasure&, Point, Point z, Out out) const {
    scalar_mark(z);
    out[0] = 0.0;
}

//---------------------------------------------------------------------------//
// Factory
//---------------------------------------------------------------------------//

ParamTable default_params(const std::string& name) {
    if (name == "linear") {
        const MeanFieldOUJump::Params p;
        return {{"a", p.a},   {"c", p.c},   {"s0", p.s0},   {"s1", p.s1},
                {"s2", p.s2}, {"g0", p.g0}, {"g1", p.g1},   {"g2", p.g2},
                {"intensity", p.intensity}, {"dim", static_cast<double>(p.dim)}, {"pbar", p.pbar}};
    }
    if (name == "cubic") {
        const CubicMeanField::Params p;
        return {{"beta", p.beta}, {"c", p.c},     {"s1", p.s1},
                {"g1", p.g1},     {"rho", p.rho}, {"intensity", p.intensity}, {"pbar", p.pbar}};
    }
    throw ConfigError("unknown model '" + name + "' (expected linear|cubic)");
}

std::unique_ptr<Model> make_model(const std::string& name, const ParamTable& params) {
    ParamTable merged = default_params(name);
    for (const auto& [key, value] : params) {
        if (!merged.count(key)) throw ConfigError("unknown parameter '" + key + "' for model '" + name + "'");
        merged[key] = value;
    }
    if (name == "linear") {
        MeanFieldOUJump::Params p;
        p.a = merged["a"];
        p.c = merged["c"];
        p.s0 = merged["s0"];
        p.s1 = merged["s1"];
        p.s2 = merged["s2"];
        p.g0 = merged["g0"];
        p.g1 = merged["g1"];
        p.g2 = merged["g2"];
        p.intensity = merged["intensity"];
        p.pbar = merged["pbar"];
        const double dim = merged["dim"];
        if (!(dim >= 1.0) || dim != std::floor(dim)) throw ConfigError("linear model: dim must be a positive integer");
        p.dim = static_cast<std::size_t>(dim);
        return std::make_unique<MeanFieldOUJump>(p);
    }
    CubicMeanField::Params p;
    p.beta = merged["beta"];
    p.c = merged["c"];
    p.s1 = merged["s1"];
    p.g1 = merged["g1"];
    p.rho = merged["rho"];
    p.intensity = merged["intensity"];
    p.pbar = merged["pbar"];
    return std::make_unique<CubicMeanField>(p);
}

//---------------------------------------------------------------------------//
// Operators
//---------------------------------------------------------------------------//

namespace {

// Multiplier vector dir(p, mu) in R^d.
std::vector<double> multiplier(const Model& model, const Direction& dir, Point p, const EmpiricalMeasure& mu) {
    const std::size_t d = model.state_dim();
    const std::size_t m = model.noise_dim();
    std::vector<double> v(d);
    switch (dir.kind) {
        case Direction::Kind::sigma: {
            if (dir.column >= m) throw DomainError("operator: sigma column out of range");
            std::vector<double> s(d * m);
            model.diffusion(p, mu, s);
            for (std::size_t u = 0; u < d; ++u) v[u] = s[u * m + dir.column];
            break;
        }
        case Direction::Kind::gamma:
            if (dir.mark.size() != model.marks().mark_dim()) throw DomainError("operator: mark has wrong dimension");
            model.jump(p, mu, dir.mark, v);
            break;
        case Direction::Kind::drift:
            model.drift(p, mu, v);
            break;
    }
    return v;
}

std::size_t target_len(const Model& model, Target target) {
    return target == Target::diffusion ? model.state_dim() * model.noise_dim() : model.state_dim();
}

// out[c] = sum_v deriv[c][v] * mult[v]
void contract(std::span<const double> deriv, std::span<const double> mult, Out out) {
    const std::size_t d = mult.size();
    for (std::size_t c = 0; c < out.size(); ++c) {
        double s = 0.0;
        for (std::size_t v = 0; v < d; ++v) s += deriv[c * d + v] * mult[v];
        out[c] = s;
    }
}

}  // namespace

void operator_Dx(const Model& model, Target target, const Direction& dir, Point x, const EmpiricalMeasure& mu,
                 Point z, Out out) {
    const std::size_t len = target_len(model, target);
    if (out.size() != len) throw DomainError("operator_Dx: output has wrong shape for target");
    const auto mult = multiplier(model, dir, x, mu);
    std::vector<double> deriv(len * model.state_dim());
    switch (target) {
        case Target::drift: model.drift_dx(x, mu, deriv); break;
        case Target::diffusion: model.diffusion_dx(x, mu, deriv); break;
        case Target::jump:
            if (z.size() != model.marks().mark_dim()) throw DomainError("operator_Dx: jump target needs a mark");
            model.jump_dx(x, mu, z, deriv);
            break;
    }
    contract(deriv, mult, out);
}

void operator_Dmu(const Model& model, Target target, const Direction& dir, Point x, const EmpiricalMeasure& mu,
                  Point y, Point z, Out out) {
    const std::size_t len = target_len(model, target);
    if (out.size() != len) throw DomainError("operator_Dmu: output has wrong shape for target");
    const auto mult = multiplier(model, dir, y, mu);
    std::vector<double> deriv(len * model.state_dim());
    switch (target) {
        case Target::drift: model.drift_dmu(x, mu, y, deriv); break;
        case Target::diffusion: model.diffusion_dmu(x, mu, y, deriv); break;
        case Target::jump:
            if (z.size() != model.marks().mark_dim()) throw DomainError("operator_Dmu: jump target needs a mark");
            model.jump_dmu(x, mu, y, z, deriv);
            break;
    }
    contract(deriv, mult, out);
}

//---------------------------------------------------------------------------//
// Moment oracle
//---------------------------------------------------------------------------//

MomentState moment_ode_solution(const Model& model, double mean0, double second0, double t, std::size_t particles,
                                std::size_t steps) {
    const auto* lin = dynamic_cast<const MeanFieldOUJump*>(&model);
    if (!lin) throw DomainError("moment_ode_solution: only the linear model family is supported");
    const auto& p = lin->params();
    if (p.dim != 1 || p.s2 != 0.0 || p.g2 != 0.0) {
        throw DomainError("moment_ode_solution: needs d = 1 and measure-independent sigma, gamma");
    }
    if (t < 0.0 || steps == 0) throw DomainError("moment_ode_solution: bad time or step count");

    // second moment of the Levy measure: sum_j lambda_j z_j^2
    const double m2 = model.marks().integrate([](Point z) { return z[0] * z[0]; });
    const bool limit = particles == 0;
    const double nn = static_cast<double>(particles);

    // y = (m, q, r) with r = E[x^i x^j], i != j
    using State = std::array<double, 3>;
    auto rhs = [&](const State& y) {
        const double m = y[0], q = y[1], r = y[2];
        const double cross = limit ? m * m : (q + (nn - 1.0) * r) / nn;
        State f{};
        f[0] = (p.a + p.c) * m;
        f[1] = 2.0 * p.a * q + 2.0 * p.c * cross + p.s0 * p.s0 + 2.0 * p.s0 * p.s1 * m + p.s1 * p.s1 * q +
               m2 * (p.g0 * p.g0 + 2.0 * p.g0 * p.g1 * m + p.g1 * p.g1 * q);
        f[2] = limit ? 0.0 : 2.0 * p.a * r + 2.0 * p.c * cross;
        return f;
    };
    State y{mean0, second0, mean0 * mean0};
    const double h = t / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps && h > 0.0; ++k) {
        const State k1 = rhs(y);
        State tmp;
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k1[c];
        const State k2 = rhs(tmp);
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k2[c];
        const State k3 = rhs(tmp);
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + h * k3[c];
        const State k4 = rhs(tmp);
        for (int c = 0; c < 3; ++c) y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
    return {y[0], y[1]};
}

}  // namespace mkv
