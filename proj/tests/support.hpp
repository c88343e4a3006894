#pragma once

// Brute-force oracles shared by the unit tests and the acceptance binary.
// They are written from the textbook formulas in double precision and do not
// call into the library's reference implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lazyllm/model.hpp"
#include "lazyllm/tensor.hpp"

namespace testing_support {

using lazyllm::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, float scale = 1.0f) {
    std::uniform_real_distribution<float> dist(-scale, scale);
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = dist(rng);
    return m;
}

inline std::vector<float> random_vector(std::size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

/// Float triple loop, k ascending from a zero accumulator.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            float s = 0.0f;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

inline std::vector<double> softmax(std::span<const double> x) {
    double mx = -INFINITY;
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> e(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += e[i] = std::exp(x[i] - mx);
    for (double& v : e) v /= sum;
    return e;
}

inline std::vector<double> rms_norm_row(std::span<const float> x, std::span<const float> gain) {
    double ss = 0.0;
    for (float v : x) ss += double(v) * v;
    const double inv = 1.0 / std::sqrt(ss / double(x.size()) + 1e-5);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

/// Interleaved-pair rotary rotation: pair (2k, 2k+1) of every head turns by
/// position * 10000^(-2k/head_dim).
inline std::vector<double> rope_row(std::span<const double> x, std::int64_t pos, std::size_t head_dim) {
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t h = 0; h < x.size() / head_dim; ++h) {
        for (std::size_t k = 0; k < head_dim / 2; ++k) {
            const double theta = double(pos) * std::pow(10000.0, -2.0 * double(k) / double(head_dim));
            const std::size_t a = h * head_dim + 2 * k;
            out[a] = x[a] * std::cos(theta) - x[a + 1] * std::sin(theta);
            out[a + 1] = x[a] * std::sin(theta) + x[a + 1] * std::cos(theta);
        }
    }
    return out;
}

struct DenseAttention {
    std::vector<std::vector<double>> output;              // query x width
    std::vector<std::vector<std::vector<double>>> probs;  // head x query x key
};

/// Causal mask on absolute positions built as a full query x key table.
inline DenseAttention dense_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                      std::span<const std::int64_t> qpos, std::span<const std::int64_t> kpos,
                                      std::size_t heads) {
    const std::size_t hd = q.cols() / heads;
    DenseAttention r;
    r.output.assign(q.rows(), std::vector<double>(q.cols(), 0.0));
    r.probs.assign(heads, std::vector<std::vector<double>>(q.rows(), std::vector<double>(k.rows(), 0.0)));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.rows(); ++i) {
            std::vector<double> s;
            std::vector<std::size_t> cols;
            for (std::size_t j = 0; j < k.rows(); ++j) {
                if (kpos[j] > qpos[i]) continue;
                double dot = 0.0;
                for (std::size_t d = 0; d < hd; ++d) dot += double(q(i, h * hd + d)) * k(j, h * hd + d);
                s.push_back(dot / std::sqrt(double(hd)));
                cols.push_back(j);
            }
            const auto p = softmax(s);
            for (std::size_t c = 0; c < cols.size(); ++c) {
                r.probs[h][i][cols[c]] = p[c];
                for (std::size_t d = 0; d < hd; ++d) r.output[i][h * hd + d] += p[c] * v(cols[c], h * hd + d);
            }
        }
    }
    return r;
}

inline std::vector<std::vector<double>> gated_mlp(const Matrix& x, const Matrix& wg, const Matrix& wu, const Matrix& wd) {
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(wd.cols(), 0.0));
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::vector<double> h(wg.cols());
        for (std::size_t j = 0; j < wg.cols(); ++j) {
            double g = 0.0, u = 0.0;
            for (std::size_t i = 0; i < x.cols(); ++i) {
                g += double(x(r, i)) * wg(i, j);
                u += double(x(r, i)) * wu(i, j);
            }
            h[j] = g / (1.0 + std::exp(-g)) * u;
        }
        for (std::size_t c = 0; c < wd.cols(); ++c) {
            for (std::size_t j = 0; j < wg.cols(); ++j) out[r][c] += h[j] * wd(j, c);
        }
    }
    return out;
}

inline double max_diff(const Matrix& a, const std::vector<std::vector<double>>& b) {
    double m = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(double(a(r, c)) - b[r][c]));
    }
    return m;
}

inline lazyllm::ModelConfig tiny_config(std::size_t layers = 4, std::size_t heads = 2, std::size_t dim = 16,
                                        std::size_t ff = 32) {
    lazyllm::ModelConfig c;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_model = dim;
    c.d_ff = ff;
    c.vocab_size = 258;
    c.max_position = 4096;
    return c;
}

/// Seeded prompt of byte ids after a BOS.
inline std::vector<int> random_prompt(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<int> ids{256};
    while (ids.size() < n) ids.push_back(byte(rng));
    ids.resize(n);
    return ids;
}

/// Prefill events for one boundary (layer b, fraction f) on an N-token prompt
/// with the last token protected, in integer arithmetic.
inline std::uint64_t closed_form_events(std::uint64_t b, std::uint64_t num, std::uint64_t den, std::uint64_t n,
                                        std::uint64_t layers) {
    const std::uint64_t candidates = n - 1;
    const std::uint64_t kept = (num * candidates + den - 1) / den + 1;
    return b * n + (layers - b) * kept;
}

}  // namespace testing_support
