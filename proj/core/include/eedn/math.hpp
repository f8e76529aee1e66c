#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace eedn {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

/// W * z for a rows x cols matrix and a cols-vector.
Vec matvec(const Matrix& w, const Vec& z);

bool all_finite(const Vec& v);
bool all_finite(const Matrix& m);

/// Numerically stable softmax (max-subtraction). Throws std::invalid_argument
/// on empty or non-finite input.
Vec softmax(const Vec& logits);

/// -ln p[y] with p[y] floored at 1e-12 so saturated predictions cannot
/// produce an infinite loss. Throws std::out_of_range if y >= p.size().
double cross_entropy(const Vec& p, std::size_t y);

/// 1 / (1 + e^-s), saturating without overflow at extreme inputs.
double sigmoid(double s);

/// Binary cross entropy -t ln g - (1-t) ln(1-g), with both logs floored
/// at 1e-12.
double binary_cross_entropy(double g, double t);

/// Split-conformal quantile: the k-th smallest score with
/// k = ceil((n+1)(1-alpha)) clamped to [1, n]. Throws std::invalid_argument
/// on an empty score list.
double conformal_quantile(std::vector<double> scores, double alpha);

/// Central-difference gradient (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
/// Test oracle for the closed-form gradients elsewhere in the library.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                     double eps);

/// Deterministic 64-bit-seeded generator. The uniform/normal transforms are
/// implemented here (not via std::*_distribution) so that identical seeds
/// produce byte-identical streams on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (two uniform draws per call).
    double normal();
    double normal(double mean, double stddev);

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n);

    /// Deterministic Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Independent child stream derived from the original seed and a salt.
    Rng child(std::uint64_t salt) const;

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

} // namespace eedn
