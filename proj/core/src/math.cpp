#include "eedn/math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace eedn {

namespace {
constexpr double kProbFloor = 1e-12;

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
} // namespace

Vec matvec(const Matrix& w, const Vec& z) {
    if (z.size() != w.cols) {
        throw std::invalid_argument("matvec: vector length " + std::to_string(z.size()) +
                                    " does not match matrix cols " + std::to_string(w.cols));
    }
    Vec out(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        const double* row = w.data.data() + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * z[c];
        out[r] = acc;
    }
    return out;
}

bool all_finite(const Vec& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

Vec softmax(const Vec& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite logit");
    const double m = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

double cross_entropy(const Vec& p, std::size_t y) {
    if (y >= p.size()) {
        throw std::out_of_range("cross_entropy: class index " + std::to_string(y) +
                                " out of range for " + std::to_string(p.size()) + " classes");
    }
    return -std::log(std::max(p[y], kProbFloor));
}

double sigmoid(double s) {
    if (s >= 0.0) {
        return 1.0 / (1.0 + std::exp(-s));
    }
    const double e = std::exp(s);
    return e / (1.0 + e);
}

double binary_cross_entropy(double g, double t) {
    return -t * std::log(std::max(g, kProbFloor)) -
           (1.0 - t) * std::log(std::max(1.0 - g, kProbFloor));
}

double conformal_quantile(std::vector<double> scores, double alpha) {
    if (scores.empty()) throw std::invalid_argument("conformal_quantile: empty score list");
    if (!all_finite(scores)) throw std::invalid_argument("conformal_quantile: non-finite score");
    const std::size_t n = scores.size();
    auto k = static_cast<std::size_t>(
        std::ceil(static_cast<double>(n + 1) * (1.0 - alpha)));
    k = std::clamp<std::size_t>(k, 1, n);
    std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
    return scores[k - 1];
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                     double eps) {
    Vec grad(x.size());
    Vec probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + eps;
        const double fp = f(probe);
        probe[i] = x[i] - eps;
        const double fm = f(probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    // xoshiro256**
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t draw;
    do {
        draw = next_u64();
    } while (draw >= limit);
    return draw % n;
}

Rng Rng::child(std::uint64_t salt) const {
    std::uint64_t sm = seed_ ^ (0xA3EC4E93D0B4FB91ULL + salt * 0x9E3779B97F4A7C15ULL);
    return Rng(splitmix64(sm));
}

} // namespace eedn
