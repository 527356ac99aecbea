#pragma once

#include <cstdint>
#include <vector>

#include "mkv/core.hpp"
#include "mkv/noise.hpp"
#include "mkv/taming.hpp"

namespace mkv {

/// Which correction terms of the Milstein-type scheme are applied. Both off
/// gives the tamed Euler scheme.
struct SchemeToggles {
    bool sigma_corrections = true;  // sigma-hat_1 + sigma-hat_2
    bool gamma_corrections = true;  // gamma-hat_1 + gamma-hat_2

    static SchemeToggles for_scheme(Scheme s) {
        return s == Scheme::milstein ? SchemeToggles{true, true} : SchemeToggles{false, false};
    }
};

struct StepDiagnostics {
    double max_abs = 0.0;          // largest |x| after the step (live particles)
    double taming_fraction = 0.0;  // share of live particles whose drift was cut by > 1%
    std::size_t jumps = 0;
};

/// A path whose state leaves |x| <= 1e9 or turns non-finite is frozen at its
/// last finite state and flagged.
inline constexpr double blow_up_threshold = 1e9;

struct Trajectory {
    std::size_t particles = 0;
    std::size_t dim = 0;
    std::vector<double> times;             // grid points t_0 .. t_n
    std::vector<double> path;              // (n + 1) x N x d, only when stored
    std::vector<double> final_state;       // N x d
    std::vector<std::uint8_t> blown_up;    // N
    std::vector<StepDiagnostics> diagnostics;

    std::size_t blown_up_count() const;
};

/// One step of the scheme for all particles, with the workspace kept for
/// inspection. x^+ = x + b-hat h + lambda_dw + gamma_jump, where lambda_dw is the
/// Brownian integral of sigma-hat (+ sigma-hat_1 + sigma-hat_2) and gamma_jump the
/// compensated jump integral of gamma-hat (+ gamma-hat_1 + gamma-hat_2).
class Stepper {
  public:
    Stepper(const TamedModel& model, std::size_t particles, std::size_t substeps, SchemeToggles toggles);

    /// Also evaluate the cross-particle sums that vanish for measure-independent
    /// sigma and gamma and record their largest magnitude.
    void set_check_cross_terms(bool on) { check_cross_ = on; }
    double max_cross_term() const { return max_cross_; }

    StepDiagnostics advance(std::span<const double> x, const StepNoise& noise, std::span<double> next,
                            std::span<std::uint8_t> blown_up);

    /// Left-end tamed coefficients of the last step: b-hat (N x d), sigma-hat
    /// (N x d x m), gamma-hat per mark (N x marks x d), compensator (N x d).
    std::span<const double> drift_values() const { return drift_; }
    std::span<const double> diffusion_values() const { return sigma_; }
    std::span<const double> jump_values() const { return gamma_; }
    std::span<const double> compensator_values() const { return comp_; }
    std::span<const double> lambda_dw() const { return lambda_dw_; }
    std::span<const double> gamma_jump() const { return gamma_jump_; }

  private:
    const TamedModel* tm_;
    std::size_t n_;
    std::size_t d_;
    std::size_t m_;
    std::size_t substeps_;
    SchemeToggles toggles_;
    bool check_cross_ = false;
    double max_cross_ = 0.0;

    std::vector<double> drift_;       // N x d
    std::vector<double> sigma_;       // N x d x m
    std::vector<double> gamma_;       // N x marks x d
    std::vector<double> comp_;        // N x d
    std::vector<double> lambda_dw_;   // N x d
    std::vector<double> gamma_jump_;  // N x d

    std::vector<EmpiricalMeasure> shifted_mu_;  // per event in the step
    std::vector<std::size_t> own_start_;
    std::vector<std::size_t> own_list_;
    std::vector<std::size_t> fill_;
    std::vector<double> prod_, prod2_, vec_, moved_, coef_, acc_;
};

/// Tamed Euler step (corrections off).
StepDiagnostics euler_step(const TamedModel& model, std::span<const double> x, const StepNoise& noise,
                           std::span<double> next, std::span<std::uint8_t> blown_up);

/// Tamed Milstein-type step with all corrections.
StepDiagnostics milstein_step(const TamedModel& model, std::span<const double> x, const StepNoise& noise,
                              std::span<double> next, std::span<std::uint8_t> blown_up, std::size_t substeps = 32);

/// Runs config.scheme with config.taming at resolution n on `realization`
/// from `initial` (N x d). Deterministic given its inputs.
Trajectory simulate(const Model& model, const RunConfig& config, std::size_t n, const NoiseRealization& realization,
                    std::span<const double> initial, bool store_path = false);

}  // namespace mkv
