#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcld/rng.hpp"

namespace mcld {

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// Dense n-dimensional array, row-major, flat Eigen storage.
template <class S>
struct Tensor {
    std::vector<int64_t> shape;
    ArrayX<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shp) : shape(std::move(shp)) {
        data = ArrayX<S>::Zero(numel_of(shape));
    }
    Tensor(std::vector<int64_t> shp, ArrayX<S> d) : shape(std::move(shp)), data(std::move(d)) {
        check(data.size() == numel_of(shape), "tensor: data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& shp) {
        int64_t n = 1;
        for (int64_t d : shp) {
            check(d >= 0, "tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    S& operator[](int64_t i) { return data[i]; }
    const S& operator[](int64_t i) const { return data[i]; }

    S& at(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
    const S& at(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
    S& at(int64_t i, int64_t j, int64_t k) { return data[(i * shape[1] + j) * shape[2] + k]; }
    const S& at(int64_t i, int64_t j, int64_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    S& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const S& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor reshaped(std::vector<int64_t> shp) const {
        check(numel_of(shp) == numel(), "reshape: element count mismatch");
        return Tensor(std::move(shp), data);
    }

    // Row-major 2-D view of the flat data.
    Eigen::Map<MatRM<S>> as_matrix(int64_t rows, int64_t cols) {
        check(rows * cols == numel(), "as_matrix: element count mismatch");
        return Eigen::Map<MatRM<S>>(data.data(), rows, cols);
    }
    Eigen::Map<const MatRM<S>> as_matrix(int64_t rows, int64_t cols) const {
        check(rows * cols == numel(), "as_matrix: element count mismatch");
        return Eigen::Map<const MatRM<S>>(data.data(), rows, cols);
    }
};

template <class S>
Tensor<S> zeros(std::vector<int64_t> shape) {
    return Tensor<S>(std::move(shape));
}

template <class S>
Tensor<S> full(std::vector<int64_t> shape, S v) {
    Tensor<S> t(std::move(shape));
    t.data.setConstant(v);
    return t;
}

template <class S>
Tensor<S> randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor<S> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<S>(rng.normal() * stddev);
    return t;
}

template <class S>
Tensor<S> rand_uniform(std::vector<int64_t> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor<S> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
    Tensor<To> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

template <class S>
Tensor<S> clamp01(const Tensor<S>& t) {
    Tensor<S> out = t;
    out.data = out.data.min(S(1)).max(S(0));
    return out;
}

// Nearest-neighbor resize of an H×W×C image.
template <class S>
Tensor<S> resize_nearest(const Tensor<S>& img, int64_t oh, int64_t ow) {
    check(img.ndim() == 3, "resize_nearest: expected H×W×C");
    const int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    check(h > 0 && w > 0 && oh > 0 && ow > 0, "resize_nearest: empty image");
    Tensor<S> out({oh, ow, c});
    for (int64_t y = 0; y < oh; ++y) {
        int64_t sy = std::min(h - 1, static_cast<int64_t>((y + 0.5) * h / oh));
        for (int64_t x = 0; x < ow; ++x) {
            int64_t sx = std::min(w - 1, static_cast<int64_t>((x + 0.5) * w / ow));
            for (int64_t k = 0; k < c; ++k) out.at(y, x, k) = img.at(sy, sx, k);
        }
    }
    return out;
}

// Crop [y0,y1)×[x0,x1) from an H×W×C image.
template <class S>
Tensor<S> crop(const Tensor<S>& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
    check(img.ndim() == 3, "crop: expected H×W×C");
    check(x1 > x0 && y1 > y0, "crop: empty box");
    check(x0 >= 0 && y0 >= 0 && x1 <= img.dim(1) && y1 <= img.dim(0), "crop: box outside image");
    Tensor<S> out({y1 - y0, x1 - x0, img.dim(2)});
    for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x)
            for (int64_t k = 0; k < img.dim(2); ++k) out.at(y - y0, x - x0, k) = img.at(y, x, k);
    return out;
}

template <class S>
double mse(const Tensor<S>& a, const Tensor<S>& b) {
    check(a.same_shape(b), "mse: shape mismatch");
    if (a.numel() == 0) return 0.0;
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    check(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <class S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (!(a.data[i] == b.data[i])) return false;
    return true;
}

inline std::string shape_str(const std::vector<int64_t>& shp) {
    std::string s = "[";
    for (size_t i = 0; i < shp.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shp[i]);
    }
    return s + "]";
}

}  // namespace mcld
