#pragma once

// Dense row-major matrix of doubles. All numeric state in the library lives
// in this one shape; vectors are 1xN or Nx1 tensors, scalars are 1x1.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spacetime {

struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor2: negative shape");
    }

    static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> v) {
        Tensor2 t(static_cast<int>(v.size()), v.size() ? static_cast<int>(v.begin()->size()) : 0);
        int i = 0;
        for (const auto& row : v) {
            if (static_cast<int>(row.size()) != t.cols)
                throw std::invalid_argument("Tensor2: ragged initializer");
            int j = 0;
            for (double x : row) t.at(i, j++) = x;
            ++i;
        }
        return t;
    }

    static Tensor2 identity(int n) {
        Tensor2 t(n, n);
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline Tensor2 random_uniform(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
    Tensor2 t(rows, cols);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& x : t.data) x = d(rng);
    return t;
}

// Per-entry keep/skip table used by the masked softmax.
struct BoolMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> keep;

    BoolMask() = default;
    BoolMask(int r, int c, bool fill = true) : rows(r), cols(c), keep(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

    void set(int r, int c, bool v) { keep[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
    bool get(int r, int c) const { return keep[static_cast<size_t>(r) * cols + c] != 0; }
};

}  // namespace spacetime
