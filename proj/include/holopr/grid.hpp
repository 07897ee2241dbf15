#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace holopr {

/// Error raised for violated preconditions, malformed inputs and I/O failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Complex = std::complex<double>;

/// Dense row-major 2-D array.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t height, std::size_t width, T fill = T{})
        : height_(height), width_(width), data_(height * width, fill) {}
    Grid(std::size_t height, std::size_t width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (data_.size() != height_ * width_)
            throw Error("grid: data size " + std::to_string(data_.size()) + " does not match " +
                        std::to_string(height_) + "x" + std::to_string(width_));
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * width_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * width_ + c]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(const Grid& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }
    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<T> data_;
};

/// Real-valued image; nominal intensity range is [0,1].
using GrayImage = Grid<double>;
using ComplexGrid = Grid<Complex>;

struct Shape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t count() const noexcept { return height * width; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
Shape shape_of(const Grid<T>& g) {
    return {g.height(), g.width()};
}

/// Axis-aligned pixel rectangle (top-left corner plus extent).
struct Rect {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t row_end() const noexcept { return row + height; }
    std::size_t col_end() const noexcept { return col + width; }
    bool contains(std::size_t r, std::size_t c) const noexcept {
        return r >= row && r < row_end() && c >= col && c < col_end();
    }
    bool intersects(const Rect& o) const noexcept {
        return row < o.row_end() && o.row < row_end() && col < o.col_end() && o.col < col_end();
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

template <typename T, typename U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                    std::to_string(b.width()) + ")");
}

/// Throws unless the image has at least one pixel and every pixel is finite.
inline void validate_image(const GrayImage& img, const char* what) {
    if (img.height() == 0 || img.width() == 0)
        throw Error(std::string(what) + ": zero-dimension image");
    if (!std::all_of(img.begin(), img.end(), [](double v) { return std::isfinite(v); }))
        throw Error(std::string(what) + ": image contains non-finite pixels");
}

/// Copies `src` into `dst` with its top-left corner at (row, col).
template <typename T>
void paste(Grid<T>& dst, const Grid<T>& src, std::size_t row, std::size_t col) {
    if (row + src.height() > dst.height() || col + src.width() > dst.width())
        throw Error("paste: source does not fit destination");
    for (std::size_t r = 0; r < src.height(); ++r)
        std::copy_n(src.data() + r * src.width(), src.width(), dst.data() + (row + r) * dst.width() + col);
}

template <typename T>
Grid<T> crop(const Grid<T>& src, const Rect& rect) {
    if (rect.row_end() > src.height() || rect.col_end() > src.width())
        throw Error("crop: rectangle exceeds source");
    Grid<T> out(rect.height, rect.width);
    for (std::size_t r = 0; r < rect.height; ++r)
        std::copy_n(src.data() + (rect.row + r) * src.width() + rect.col, rect.width,
                    out.data() + r * rect.width);
    return out;
}

inline double sum(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

inline double sum_squares(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(sum_squares(v)); }

}  // namespace holopr
