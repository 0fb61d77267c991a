#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "apprentice/tensor.hpp"

namespace apprentice {

enum class Mode { Train, Eval };

// Define-by-run gradient tape. Ops append one closure per recorded primitive
// in execution (topological) order; backward() replays them in reverse.
// Closures hold shared_ptrs to everything they need, so recorded
// intermediates stay alive until clear().
template <typename Real>
class Tape {
public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    // Seeds d(root)/d(root) = 1 and replays the tape. root must be a scalar.
    void backward(const TensorPtr<Real>& root) {
        if (root->numel() != 1)
            throw ShapeError(cat("backward root must be scalar, got ", shape_str(root->shape)));
        root->ensure_grad();
        root->grad[0] += Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
};

} // namespace apprentice
