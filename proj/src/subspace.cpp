#include "evsteer/subspace.hpp"

#include <cmath>
#include <string>

namespace evsteer {

namespace {

constexpr double kMinRcond = 1e-12;

void require_finite(const Matrix& m, const char* what)
{
    if (!m.allFinite()) throw ValidationError(std::string(what) + ": non-finite entries");
}

// Power iteration on a symmetric PSD matrix, starting from its largest column.
Vector top_eigenvector(const Matrix& gram, const PowerIterationOptions& opts)
{
    Eigen::Index start = 0;
    gram.colwise().norm().maxCoeff(&start);
    Vector v = gram.col(start);
    double n = v.norm();
    if (n == 0.0) {
        v = Vector::Unit(gram.rows(), start);
    } else {
        v /= n;
    }
    for (int it = 0; it < opts.max_iterations; ++it) {
        Vector w = gram * v;
        const double norm = w.norm();
        if (norm == 0.0) break;
        w /= norm;
        const double change = (w - v).norm();
        v = std::move(w);
        if (change < opts.tolerance) break;
    }
    return v;
}

} // namespace

double relative_ridge(const Matrix& keys, double scale)
{
    if (keys.rows() == 0) throw ValidationError("relative_ridge: empty key slice");
    return scale * keys.squaredNorm() / static_cast<double>(keys.rows());
}

RidgeProjector build_projector(const Matrix& keys, double ridge)
{
    if (keys.rows() < 1 || keys.cols() < 1) throw ValidationError("build_projector: empty key slice");
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ValidationError("build_projector: ridge must be >= 0");
    require_finite(keys, "build_projector");

    Matrix gram = keys * keys.transpose();
    const Eigen::FullPivLU<Matrix> lu(gram);
    const int rank = static_cast<int>(lu.rank());
    gram.diagonal().array() += ridge;

    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) {
        if (ridge == 0.0) {
            throw RankDeficiencyError("build_projector: K K^T is singular (key rank " + std::to_string(rank) + " < " +
                                      std::to_string(keys.rows()) + " rows); use a positive ridge");
        }
        throw RankDeficiencyError("build_projector: ridge system is not positive definite");
    }

    Matrix p = keys.transpose() * llt.solve(keys);
    p = 0.5 * (p + p.transpose()).eval();
    return RidgeProjector{std::move(p), ridge, rank};
}

Vector dominant_direction(const Matrix& keys, const PowerIterationOptions& opts)
{
    if (keys.rows() < 1 || keys.cols() < 1) throw DegenerateInputError("dominant_direction: empty key slice");
    require_finite(keys, "dominant_direction");

    const Vector norms = keys.rowwise().norm();
    Eigen::Index live = 0;
    for (Eigen::Index r = 0; r < norms.size(); ++r) live += norms[r] > 0.0 ? 1 : 0;
    if (live == 0) throw DegenerateInputError("dominant_direction: all key rows are zero");

    Matrix normalized(live, keys.cols());
    for (Eigen::Index r = 0, k = 0; r < keys.rows(); ++r) {
        if (norms[r] > 0.0) normalized.row(k++) = keys.row(r) / norms[r];
    }

    Vector v;
    if (normalized.rows() < normalized.cols()) {
        const Vector u = top_eigenvector(normalized * normalized.transpose(), opts);
        v = normalized.transpose() * u;
    } else {
        v = top_eigenvector(normalized.transpose() * normalized, opts);
    }
    v.normalize();

    const double mean_proj = (normalized * v).mean();
    if (mean_proj < -1e-12) {
        v = -v;
    } else if (std::abs(mean_proj) <= 1e-12) {
        // No preferred side: make the largest-magnitude component positive.
        Eigen::Index at = 0;
        v.cwiseAbs().maxCoeff(&at);
        if (v[at] < 0.0) v = -v;
    }
    return v;
}

Matrix project(const Matrix& q, const RidgeProjector& p)
{
    if (q.cols() != p.matrix.rows()) {
        throw DimensionError("project: query has " + std::to_string(q.cols()) + " columns, projector is " +
                             std::to_string(p.matrix.rows()) + "-dimensional");
    }
    return q * p.matrix;
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices)
{
    Matrix out(static_cast<Eigen::Index>(indices.size()), source.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(indices[i]);
        if (idx >= source.rows()) throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range");
        out.row(static_cast<Eigen::Index>(i)) = source.row(idx);
    }
    return out;
}

} // namespace evsteer
