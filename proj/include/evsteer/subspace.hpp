#pragma once

#include "evsteer/common.hpp"

#include <cstddef>
#include <span>

namespace evsteer {

// Key rows gathered by anchor indices for one event (n_tokens x D).
struct KeySlice {
    Matrix rows;
    std::size_t event_id = 0;
};

// Right projector K^T (K K^T + ridge I)^{-1} K onto the row span of K.
struct RidgeProjector {
    Matrix matrix;
    double ridge = 0.0;
    int source_rank = 0;

    [[nodiscard]] Eigen::Index dim() const { return matrix.rows(); }
};

struct DominantDirections {
    Vector k_tgt;  // unit D-vector of the target event
    Matrix k_oth;  // D x J, one unit column per competitor event

    [[nodiscard]] Eigen::Index competitors() const { return k_oth.cols(); }
};

class RankDeficiencyError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateInputError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

struct PowerIterationOptions {
    double tolerance = 1e-10;
    int max_iterations = 500;
};

// ridge = scale * trace(K K^T) / n_tokens, i.e. relative to the mean squared key norm.
double relative_ridge(const Matrix& keys, double scale = 1e-4);

// Throws RankDeficiencyError when ridge == 0 and K K^T is singular.
RidgeProjector build_projector(const Matrix& keys, double ridge);
inline RidgeProjector build_projector(const KeySlice& keys, double ridge) { return build_projector(keys.rows, ridge); }

// Top right-singular vector of the row-normalized keys, signed so that the
// mean projection of the normalized rows is nonnegative. Zero rows are ignored.
Vector dominant_direction(const Matrix& keys, const PowerIterationOptions& opts = {});
inline Vector dominant_direction(const KeySlice& keys) { return dominant_direction(keys.rows); }

Matrix project(const Matrix& q, const RidgeProjector& p);

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices);

} // namespace evsteer
