#pragma once

#include "mvflow/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mvflow {

/// Tensor grid of initial points over a box in R^d, first axis fastest in the flat index.
class SpatialGrid {
public:
    SpatialGrid(Vec lo, Vec hi, std::vector<int> points) : lo_(std::move(lo)), hi_(std::move(hi)), points_(std::move(points)) {
        const int d = static_cast<int>(lo_.size());
        if (d < 1 || d > kMaxDim) throw ConfigError("grid dimension out of range");
        if (hi_.size() != d || static_cast<int>(points_.size()) != d) throw ConfigError("grid lo/hi/points dimensions differ");
        for (int a = 0; a < d; ++a) {
            if (!(hi_(a) > lo_(a))) throw ConfigError("grid box is degenerate on axis " + std::to_string(a));
            if (points_[static_cast<std::size_t>(a)] < 2) throw ConfigError("grid needs at least 2 points per axis");
        }
    }

    static SpatialGrid line(double lo, double hi, int points) { return SpatialGrid(make_vec({lo}), make_vec({hi}), {points}); }

    int dim() const { return static_cast<int>(lo_.size()); }
    const Vec& lo() const { return lo_; }
    const Vec& hi() const { return hi_; }
    int points(int axis) const { return points_[static_cast<std::size_t>(axis)]; }
    const std::vector<int>& shape() const { return points_; }
    double spacing(int axis) const { return (hi_(axis) - lo_(axis)) / (points(axis) - 1); }

    std::size_t size() const {
        std::size_t n = 1;
        for (int p : points_) n *= static_cast<std::size_t>(p);
        return n;
    }

    std::array<int, kMaxDim> multi_index(std::size_t flat) const {
        std::array<int, kMaxDim> idx{};
        for (int a = 0; a < dim(); ++a) {
            idx[static_cast<std::size_t>(a)] = static_cast<int>(flat % static_cast<std::size_t>(points(a)));
            flat /= static_cast<std::size_t>(points(a));
        }
        return idx;
    }

    std::size_t flat_index(const std::array<int, kMaxDim>& idx) const {
        std::size_t flat = 0;
        for (int a = dim() - 1; a >= 0; --a) flat = flat * static_cast<std::size_t>(points(a)) + static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
        return flat;
    }

    double coordinate(int axis, int i) const {
        return i == points(axis) - 1 ? hi_(axis) : lo_(axis) + i * spacing(axis);
    }

    Vec node(std::size_t flat) const {
        const auto idx = multi_index(flat);
        Vec x(dim());
        for (int a = 0; a < dim(); ++a) x(a) = coordinate(a, idx[static_cast<std::size_t>(a)]);
        return x;
    }

    bool contains(const Vec& y) const {
        for (int a = 0; a < dim(); ++a) {
            const double tol = 1e-12 * spacing(a);
            if (!(y(a) >= lo_(a) - tol && y(a) <= hi_(a) + tol)) return false;
        }
        return true;
    }

    /// Corner nodes and multilinear weights of the cell containing y (nullopt outside the box).
    struct Stencil {
        std::vector<std::size_t> nodes;
        std::vector<double> weights;
    };

    std::optional<Stencil> stencil(const Vec& y) const {
        if (!contains(y)) return std::nullopt;
        std::array<int, kMaxDim> base{};
        std::array<double, kMaxDim> frac{};
        for (int a = 0; a < dim(); ++a) {
            double u = (y(a) - lo_(a)) / spacing(a);
            // Snap to nodes so nodal evaluation reproduces stored values exactly.
            if (std::abs(u - std::round(u)) < 1e-12) u = std::round(u);
            int i = static_cast<int>(std::floor(u));
            i = std::clamp(i, 0, points(a) - 2);
            base[static_cast<std::size_t>(a)] = i;
            frac[static_cast<std::size_t>(a)] = std::clamp(u - i, 0.0, 1.0);
        }
        Stencil s;
        const int corners = 1 << dim();
        for (int c = 0; c < corners; ++c) {
            std::array<int, kMaxDim> idx = base;
            double w = 1.0;
            for (int a = 0; a < dim(); ++a) {
                const bool upper = (c >> a) & 1;
                idx[static_cast<std::size_t>(a)] += upper ? 1 : 0;
                w *= upper ? frac[static_cast<std::size_t>(a)] : 1.0 - frac[static_cast<std::size_t>(a)];
            }
            s.nodes.push_back(flat_index(idx));
            s.weights.push_back(w);
        }
        return s;
    }

private:
    Vec lo_;
    Vec hi_;
    std::vector<int> points_;
};

}  // namespace mvflow
