#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bandtok {

// Error categories map onto CLI exit codes (see cli.hpp).
class InvalidInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row-major 2D array of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool empty() const { return data.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Channel-major 3D array: channels × rows × cols.
struct Volume {
    std::size_t channels = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Volume() = default;
    Volume(std::size_t ch, std::size_t r, std::size_t c, double fill = 0.0)
        : channels(ch), rows(r), cols(c), data(ch * r * c, fill) {}

    double& operator()(std::size_t ch, std::size_t r, std::size_t c) {
        return data[(ch * rows + r) * cols + c];
    }
    double operator()(std::size_t ch, std::size_t r, std::size_t c) const {
        return data[(ch * rows + r) * cols + c];
    }

    std::size_t plane() const { return rows * cols; }
    bool same_shape(const Volume& o) const {
        return channels == o.channels && rows == o.rows && cols == o.cols;
    }
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace bandtok
