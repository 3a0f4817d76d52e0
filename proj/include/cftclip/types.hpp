#pragma once

#include <Eigen/Core>

#include "cftclip/errors.hpp"

namespace cftclip {

// Fixed-dimension embedding produced by one encoder tower.
struct EmbeddingVector {
    Eigen::VectorXd values;
    bool normalized = false;
    bool truncated = false; // text inputs longer than the backend context window

    Eigen::Index dimension() const { return values.size(); }
};

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension())
        raise(ErrorCode::DimensionMismatch,
              "embedding dimensions differ: " + std::to_string(a.dimension()) + " vs " +
                  std::to_string(b.dimension()));
    if (a.normalized && b.normalized) return a.values.dot(b.values);
    double na = a.values.norm();
    double nb = b.values.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.values.dot(b.values) / (na * nb);
}

} // namespace cftclip
