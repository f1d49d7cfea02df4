#pragma once

#include "evsteer/common.hpp"
#include "evsteer/subspace.hpp"

#include <optional>
#include <string_view>

namespace evsteer {

inline constexpr double kDefaultMarginEps = 0.05;
inline constexpr double kTikhonov = 1e-8;

using Vector2 = Eigen::Vector2d;
using Matrix2 = Eigen::Matrix2d;

// Margin-deficit problem for one span of R query rows:
//   minimize_{x >= 0}  1/2 x^T M x + 1/2 || max(0, d - C x) ||^2
// with x = (alpha, beta).
struct SolverInstance {
    Vector s_tgt;      // R
    Matrix s_oth;      // R x J
    Vector s_oth_max;  // R, row max of s_oth (zeros when J == 0)
    Vector d;          // s_oth_max - s_tgt + margin_eps
    Matrix2 m = Matrix2::Zero();
    Eigen::Matrix<double, Eigen::Dynamic, 2> c;  // [s_tgt, s_oth_max]
    double margin_eps = kDefaultMarginEps;

    [[nodiscard]] Eigen::Index rows() const { return s_tgt.size(); }
};

enum class SolverMode { closed_form, active_set };

std::string_view to_string(SolverMode mode);
SolverMode solver_mode_from_string(std::string_view name);  // "paper" | "active-set"

struct SolverDiagnostics {
    double objective_at_zero = 0.0;
    double objective_at_solution = 0.0;
    double gradient_norm = 0.0;
    bool alpha_clamped = false;
    bool beta_clamped = false;
    bool zero_deficit = false;     // d <= 0 everywhere, x = 0 returned directly
    bool near_singular = false;    // M + C^T C is (numerically) singular; Tikhonov term decides
    bool safeguard_fired = false;  // active-set result was replaced by 0
    int iterations = 0;
};

struct SteeringStrengths {
    double alpha = 0.0;
    double beta = 0.0;
    SolverMode mode = SolverMode::closed_form;
    SolverDiagnostics diagnostics;

    [[nodiscard]] Vector2 x() const { return {alpha, beta}; }
};

// Builds the instance from precomputed alignment scores. J may be zero, in
// which case the competitor column is identically zero.
SolverInstance instance_from_scores(Vector s_tgt, Matrix s_oth, double margin_eps = kDefaultMarginEps);

// Scores Q* against the dominant directions. Returns nullopt for an empty
// span (R == 0), meaning "skip".
std::optional<SolverInstance> build_instance(const Matrix& q_star, const DominantDirections& dirs,
                                             double margin_eps = kDefaultMarginEps);

double objective(const SolverInstance& inst, const Vector2& x);

// M x - C^T max(0, d - C x).
Vector2 objective_gradient(const SolverInstance& inst, const Vector2& x);

// Single regularized solve of (M + C^T C) x = C^T d followed by x <- max(x, 0).
SteeringStrengths solve_closed_form(const SolverInstance& inst);

// Exact minimizer of the hinge objective over x >= 0: semismooth Newton on
// the hinge mask with exact line search, per sign pattern of x.
SteeringStrengths solve_active_set(const SolverInstance& inst);

SteeringStrengths solve(const SolverInstance& inst, SolverMode mode);

} // namespace evsteer
