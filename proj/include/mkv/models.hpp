#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mkv/core.hpp"

namespace mkv {

/// Linear mean-field Ornstein-Uhlenbeck model with jumps, extended diagonally
/// to d = m = dim:
///   b^u = a x^u + c mean^u
///   sigma^{uu} = s0 + s1 x^u + s2 mean^u   (off-diagonal entries 0)
///   gamma^u = (g0 + g1 x^u + g2 mean^u) z
/// s2 = g2 = 0 (the default) makes sigma and gamma independent of the measure.
class MeanFieldOUJump final : public Model {
  public:
    struct Params {
        double a = -1.0;
        double c = 0.5;
        double s0 = 0.3;
        double s1 = 0.5;
        double s2 = 0.0;
        double g0 = 0.2;
        double g1 = 0.3;
        double g2 = 0.0;
        double intensity = 2.0;
        std::size_t dim = 1;
        double pbar = 6.0;
    };

    explicit MeanFieldOUJump(const Params& p);
    MeanFieldOUJump(const Params& p, MarkMeasure marks);

    const Params& params() const { return p_; }

    std::string_view name() const override { return "linear"; }
    bool diffusion_depends_on_measure() const override { return p_.s2 != 0.0; }
    bool jump_depends_on_measure() const override { return p_.g2 != 0.0; }

    void drift(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void diffusion(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override;
    void drift_dx(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void diffusion_dx(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void jump_dx(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override;
    void drift_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override;
    void diffusion_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override;
    void jump_dmu(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const override;

  private:
    Params p_;
};

/// Scalar model with cubic drift:
///   b = x - beta x^3 + c mean,  sigma = s1 x,  gamma = g1 x (1 + rho |x|^{1/2}) z.
class CubicMeanField final : public Model {
  public:
    struct Params {
        double beta = 1.0;
        double c = 0.1;
        double s1 = 0.5;
        double g1 = 0.2;
        double rho = 0.0;
        double intensity = 1.0;
        double pbar = 6.0;
    };

    explicit CubicMeanField(const Params& p);

    const Params& params() const { return p_; }

    std::string_view name() const override { return "cubic"; }
    bool diffusion_depends_on_measure() const override { return false; }
    bool jump_depends_on_measure() const override { return false; }

    void drift(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void diffusion(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void jump(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override;
    void drift_dx(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void diffusion_dx(Point x, const EmpiricalMeasure& mu, Out out) const override;
    void jump_dx(Point x, const EmpiricalMeasure& mu, Point z, Out out) const override;
    void drift_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override;
    void diffusion_dmu(Point x, const EmpiricalMeasure& mu, Point y, Out out) const override;
    void jump_dmu(Point x, const EmpiricalMeasure& mu, Point y, Point z, Out out) const override;

  private:
    Params p_;
};

using ParamTable = std::map<std::string, double>;

/// Builds a built-in model by name ("linear" or "cubic"); unknown names or
/// parameter keys raise ConfigError.
std::unique_ptr<Model> make_model(const std::string& name, const ParamTable& params);

/// Parameter names accepted by make_model for `name`, with their defaults.
ParamTable default_params(const std::string& name);

//---------------------------------------------------------------------------//
// Composite operators
//---------------------------------------------------------------------------//

enum class Target { drift, diffusion, jump };

/// Multiplier of a D-operator: column l1 of sigma, gamma(., ., mark), or b.
struct Direction {
    enum class Kind { sigma, gamma, drift };
    Kind kind = Kind::sigma;
    std::size_t column = 0;
    std::vector<double> mark;
};

/// D_x^{dir} f(x, mu) = d_x f(x, mu) . dir(x, mu). Output shape: d (drift,
/// jump) or d x m (diffusion). `z` is the mark of the jump target.
void operator_Dx(const Model& model, Target target, const Direction& dir, Point x, const EmpiricalMeasure& mu,
                 Point z, Out out);

/// D_mu^{dir} f(x, mu, y) = d_mu f(x, mu, y) . dir(y, mu).
void operator_Dmu(const Model& model, Target target, const Direction& dir, Point x, const EmpiricalMeasure& mu,
                  Point y, Point z, Out out);

//---------------------------------------------------------------------------//
// Moment oracle for the linear model
//---------------------------------------------------------------------------//

struct MomentState {
    double mean = 0.0;
    double second_moment = 0.0;
};

/// Mean and second moment at time t of one particle of the linear model with
/// d = 1 and measure-independent sigma, gamma. particles = 0 gives the
/// McKean-Vlasov limit; particles = N the N-particle system, whose moments also
/// involve the cross moment E[x^i x^j], started at mean0^2 (i.i.d. initial law).
/// Integrated by classical RK4 on `steps` steps.
MomentState moment_ode_solution(const Model& model, double mean0, double second0, double t,
                                std::size_t particles = 0, std::size_t steps = 4096);

}  // namespace mkv
