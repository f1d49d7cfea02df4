#include "evsteer/strength_solver.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace evsteer {

namespace {

using HingeMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

HingeMask active_rows(const SolverInstance& inst, const Vector2& x)
{
    return (inst.d - inst.c * x).array() > 0.0;
}

// Stationary system of the quadratic obtained by freezing the hinge mask and
// pinning the coordinates not in `free` to zero.
Vector2 masked_stationary_point(const SolverInstance& inst, const HingeMask& mask, const std::array<bool, 2>& free)
{
    Matrix2 h = inst.m;
    Vector2 b = Vector2::Zero();
    for (Eigen::Index r = 0; r < inst.rows(); ++r) {
        if (!mask[r]) continue;
        const Vector2 row = inst.c.row(r).transpose();
        h += row * row.transpose();
        b += row * inst.d[r];
    }
    h.diagonal().array() += kTikhonov;
    for (int k = 0; k < 2; ++k) {
        if (free[k]) continue;
        h.row(k).setZero();
        h.col(k).setZero();
        h(k, k) = 1.0;
        b[k] = 0.0;
    }
    return h.ldlt().solve(b);
}

// Directional derivative of the (Tikhonov-regularized) objective along p.
double slope(const SolverInstance& inst, const Vector2& x, const Vector2& p)
{
    return p.dot(objective_gradient(inst, x) + kTikhonov * x);
}

// Exact minimizer of the convex piecewise quadratic t -> f(x + t p), t >= 0.
double line_search(const SolverInstance& inst, const Vector2& x, const Vector2& p)
{
    double hi = 1.0;
    for (int k = 0; k < 60 && slope(inst, x + hi * p, p) < 0.0; ++k) hi *= 2.0;
    double lo = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (slope(inst, x + mid * p, p) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-16 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

Vector2 restricted_minimizer(const SolverInstance& inst, const std::array<bool, 2>& free, int max_solves,
                             int& solves)
{
    Vector2 x = Vector2::Zero();
    for (int it = 0; it < max_solves; ++it) {
        const HingeMask mask = active_rows(inst, x);
        const Vector2 candidate = masked_stationary_point(inst, mask, free);
        ++solves;
        if ((active_rows(inst, candidate) == mask).all()) return candidate;
        const Vector2 step = candidate - x;
        if (step.norm() <= 1e-15 * (1.0 + x.norm())) return candidate;
        x += line_search(inst, x, step) * step;
    }
    return x;
}

void fill_diagnostics(const SolverInstance& inst, SteeringStrengths& out)
{
    auto& diag = out.diagnostics;
    diag.objective_at_zero = objective(inst, Vector2::Zero());
    diag.objective_at_solution = objective(inst, out.x());
    diag.gradient_norm = objective_gradient(inst, out.x()).norm();
    const Matrix2 system = inst.m + inst.c.transpose() * inst.c;
    const double scale = system.trace();
    diag.near_singular = std::abs(system.determinant()) <= 1e-12 * scale * scale || scale == 0.0;
}

} // namespace

std::string_view to_string(SolverMode mode)
{
    return mode == SolverMode::active_set ? "active-set" : "paper";
}

SolverMode solver_mode_from_string(std::string_view name)
{
    if (name == "paper" || name == "closed-form" || name == "closed_form") return SolverMode::closed_form;
    if (name == "active-set" || name == "active_set") return SolverMode::active_set;
    throw ValidationError("unknown solver mode '" + std::string(name) + "' (expected paper, closed-form or active-set)");
}

SolverInstance instance_from_scores(Vector s_tgt, Matrix s_oth, double margin_eps)
{
    if (s_oth.rows() != s_tgt.size()) {
        throw DimensionError("instance_from_scores: s_tgt has " + std::to_string(s_tgt.size()) + " rows, s_oth has " +
                             std::to_string(s_oth.rows()));
    }
    if (!(margin_eps >= 0.0)) throw ValidationError("instance_from_scores: margin_eps must be >= 0");
    if (!s_tgt.allFinite() || !s_oth.allFinite()) throw ValidationError("instance_from_scores: non-finite scores");

    SolverInstance inst;
    const Eigen::Index rows = s_tgt.size();
    inst.s_oth_max = s_oth.cols() > 0 ? Vector(s_oth.rowwise().maxCoeff()) : Vector(Vector::Zero(rows));
    inst.d = inst.s_oth_max - s_tgt + Vector::Constant(rows, margin_eps);
    inst.m(0, 0) = s_tgt.squaredNorm();
    inst.m(1, 1) = inst.s_oth_max.squaredNorm();
    inst.c.resize(rows, 2);
    inst.c.col(0) = s_tgt;
    inst.c.col(1) = inst.s_oth_max;
    inst.s_tgt = std::move(s_tgt);
    inst.s_oth = std::move(s_oth);
    inst.margin_eps = margin_eps;
    return inst;
}

std::optional<SolverInstance> build_instance(const Matrix& q_star, const DominantDirections& dirs, double margin_eps)
{
    if (q_star.rows() == 0) return std::nullopt;
    if (dirs.competitors() < 1) throw ValidationError("build_instance: at least one competitor direction required");
    if (q_star.cols() != dirs.k_tgt.size() || dirs.k_oth.rows() != dirs.k_tgt.size()) {
        throw DimensionError("build_instance: query and direction dimensions disagree");
    }
    constexpr double unit_tol = 1e-8;
    if (std::abs(dirs.k_tgt.norm() - 1.0) > unit_tol) throw ValidationError("build_instance: k_tgt is not unit norm");
    for (Eigen::Index j = 0; j < dirs.k_oth.cols(); ++j) {
        if (std::abs(dirs.k_oth.col(j).norm() - 1.0) > unit_tol) {
            throw ValidationError("build_instance: competitor direction " + std::to_string(j) + " is not unit norm");
        }
    }
    return instance_from_scores(q_star * dirs.k_tgt, q_star * dirs.k_oth, margin_eps);
}

double objective(const SolverInstance& inst, const Vector2& x)
{
    const Vector hinge = (inst.d - inst.c * x).cwiseMax(0.0);
    return 0.5 * x.dot(inst.m * x) + 0.5 * hinge.squaredNorm();
}

Vector2 objective_gradient(const SolverInstance& inst, const Vector2& x)
{
    const Vector hinge = (inst.d - inst.c * x).cwiseMax(0.0);
    return inst.m * x - inst.c.transpose() * hinge;
}

SteeringStrengths solve_closed_form(const SolverInstance& inst)
{
    SteeringStrengths out;
    out.mode = SolverMode::closed_form;
    if ((inst.d.array() <= 0.0).all()) {
        out.diagnostics.zero_deficit = true;
        fill_diagnostics(inst, out);
        return out;
    }

    Matrix2 system = inst.m + inst.c.transpose() * inst.c;
    system.diagonal().array() += kTikhonov;
    const Vector2 rhs = inst.c.transpose() * inst.d;
    const Vector2 x = system.ldlt().solve(rhs);
    out.diagnostics.iterations = 1;
    out.diagnostics.alpha_clamped = x[0] < 0.0;
    out.diagnostics.beta_clamped = x[1] < 0.0;
    out.alpha = std::max(x[0], 0.0);
    out.beta = std::max(x[1], 0.0);
    fill_diagnostics(inst, out);
    return out;
}

SteeringStrengths solve_active_set(const SolverInstance& inst)
{
    SteeringStrengths out;
    out.mode = SolverMode::active_set;
    if ((inst.d.array() <= 0.0).all()) {
        out.diagnostics.zero_deficit = true;
        fill_diagnostics(inst, out);
        return out;
    }

    const int max_solves = static_cast<int>(inst.rows()) + 2;
    const double f0 = objective(inst, Vector2::Zero());
    Vector2 best = Vector2::Zero();
    double best_f = f0;
    int solves = 0;
    // The minimizer is the unconstrained minimizer on the face spanned by its
    // positive coordinates, so trying each face and keeping the best feasible
    // point is exact.
    constexpr std::array<std::array<bool, 2>, 3> faces{{{true, true}, {true, false}, {false, true}}};
    for (const auto& face : faces) {
        const Vector2 x = restricted_minimizer(inst, face, max_solves, solves);
        if (x[0] < 0.0 || x[1] < 0.0) continue;
        const double f = objective(inst, x);
        if (f < best_f) {
            best_f = f;
            best = x;
        }
    }
    out.diagnostics.iterations = solves;
    out.alpha = best[0];
    out.beta = best[1];
    if (objective(inst, out.x()) > f0) {
        out.alpha = 0.0;
        out.beta = 0.0;
        out.diagnostics.safeguard_fired = true;
    }
    fill_diagnostics(inst, out);
    return out;
}

SteeringStrengths solve(const SolverInstance& inst, SolverMode mode)
{
    return mode == SolverMode::active_set ? solve_active_set(inst) : solve_closed_form(inst);
}

} // namespace evsteer
