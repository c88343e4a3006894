#include "lazyllm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "lazyllm/errors.hpp"

namespace lazyllm {

void set_kernel_threads(int threads) {
    if (threads > 0) {
        omp_set_num_threads(threads);
    }
}

int kernel_threads() { return omp_get_max_threads(); }

namespace kernels {
namespace {

using Index = std::ptrdiff_t;

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 512;
constexpr std::size_t kKeyBlock = 64;
constexpr std::size_t kFastHeadDim = 32;

void check_positions_ascending(std::span<const std::int64_t> positions) {
    for (std::size_t j = 1; j < positions.size(); ++j) {
        if (positions[j] <= positions[j - 1]) {
            throw InputError("attention: key positions must be strictly ascending");
        }
    }
}

}  // namespace

float silu(float g) { return g / (1.0f + std::exp(-g)); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    const std::size_t n = a.rows();
    const std::size_t inner = a.cols();
    const std::size_t m = b.cols();
    Matrix c(n, m);
    const float* ap = a.data();
    const float* bp = b.data();
    float* cp = c.data();

    // Blocked i-k-j: each output element still accumulates over k in order.
#pragma omp parallel for schedule(static)
    for (Index i0 = 0; i0 < static_cast<Index>(n); i0 += kRowBlock) {
        const std::size_t i1 = std::min(static_cast<std::size_t>(i0) + kRowBlock, n);
        for (std::size_t j0 = 0; j0 < m; j0 += kColBlock) {
            const std::size_t j1 = std::min(j0 + kColBlock, m);
            for (std::size_t k = 0; k < inner; ++k) {
                const float* brow = bp + k * m;
                for (std::size_t i = static_cast<std::size_t>(i0); i < i1; ++i) {
                    const float av = ap[i * inner + k];
                    float* crow = cp + i * m;
                    for (std::size_t j = j0; j < j1; ++j) {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
    }
    return c;
}

Matrix softmax_rows(const Matrix& x, std::span<const std::uint8_t> visible) {
    if (!visible.empty() && visible.size() != x.size()) {
        throw ShapeError("softmax_rows: mask size does not match input");
    }
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        bool any = visible.empty() && cols > 0;
        for (std::size_t c = 0; !any && c < cols; ++c) {
            any = visible[r * cols + c] != 0;
        }
        if (!any) {
            throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " is fully masked");
        }
    }

    Matrix out(x.rows(), cols);
#pragma omp parallel for schedule(static)
    for (Index ri = 0; ri < static_cast<Index>(x.rows()); ++ri) {
        const auto r = static_cast<std::size_t>(ri);
        auto in = x.row(r);
        auto o = out.row(r);
        auto is_visible = [&](std::size_t c) { return visible.empty() || visible[r * cols + c] != 0; };
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (is_visible(c)) mx = std::max(mx, in[c]);
        }
        float sum = 0.0f;
        for (std::size_t c = 0; c < cols; ++c) {
            if (is_visible(c)) {
                o[c] = std::exp(in[c] - mx);
                sum += o[c];
            }
        }
        for (std::size_t c = 0; c < cols; ++c) {
            o[c] = is_visible(c) ? o[c] / sum : 0.0f;
        }
    }
    return out;
}

Matrix rms_norm(const Matrix& x, std::span<const float> gain) {
    if (gain.size() != x.cols()) {
        throw ShapeError("rms_norm: gain length " + std::to_string(gain.size()) + " != " +
                         std::to_string(x.cols()));
    }
    const std::size_t cols = x.cols();
    Matrix out(x.rows(), cols);
#pragma omp parallel for schedule(static)
    for (Index ri = 0; ri < static_cast<Index>(x.rows()); ++ri) {
        auto in = x.row(static_cast<std::size_t>(ri));
        auto o = out.row(static_cast<std::size_t>(ri));
        float ss = 0.0f;
        for (std::size_t c = 0; c < cols; ++c) ss += in[c] * in[c];
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(cols) + kRmsEpsilon);
        for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] * inv * gain[c];
    }
    return out;
}

Matrix rope_apply(const Matrix& x, std::span<const std::int64_t> positions, std::size_t head_dim) {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw ConfigError("rope_apply: head_dim must be even and positive, got " + std::to_string(head_dim));
    }
    if (x.cols() % head_dim != 0) {
        throw ShapeError("rope_apply: width " + std::to_string(x.cols()) + " is not a multiple of head_dim");
    }
    if (positions.size() != x.rows()) {
        throw ShapeError("rope_apply: positions length does not match rows");
    }
    const std::size_t half = head_dim / 2;
    std::vector<double> freq(half);
    for (std::size_t i = 0; i < half; ++i) {
        freq[i] = std::pow(kRopeBase, -static_cast<double>(2 * i) / static_cast<double>(head_dim));
    }
    const std::size_t heads = x.cols() / head_dim;
    Matrix out = x;
#pragma omp parallel for schedule(static)
    for (Index ri = 0; ri < static_cast<Index>(x.rows()); ++ri) {
        auto o = out.row(static_cast<std::size_t>(ri));
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(ri)]);
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = pos * freq[i];
            const auto c = static_cast<float>(std::cos(angle));
            const auto s = static_cast<float>(std::sin(angle));
            for (std::size_t h = 0; h < heads; ++h) {
                float& a = o[h * head_dim + 2 * i];
                float& b = o[h * head_dim + 2 * i + 1];
                const float a0 = a;
                const float b0 = b;
                a = a0 * c - b0 * s;
                b = a0 * s + b0 * c;
            }
        }
    }
    return out;
}

AttentionResult attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                          std::span<const std::int64_t> query_positions,
                          std::span<const std::int64_t> key_positions, std::size_t heads,
                          ProbsCapture capture) {
    const std::size_t width = queries.cols();
    if (heads == 0 || width % heads != 0) {
        throw ShapeError("attention: width " + std::to_string(width) + " not divisible by heads");
    }
    if (keys.cols() != width || values.cols() != width || keys.rows() != values.rows()) {
        throw ShapeError("attention: key/value shapes do not match queries");
    }
    if (query_positions.size() != queries.rows() || key_positions.size() != keys.rows()) {
        throw ShapeError("attention: position list length mismatch");
    }
    check_positions_ascending(key_positions);

    const std::size_t nq = queries.rows();
    const std::size_t nk = keys.rows();
    const std::size_t hd = width / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    std::vector<std::size_t> visible(nq);
    for (std::size_t i = 0; i < nq; ++i) {
        visible[i] = static_cast<std::size_t>(
            std::upper_bound(key_positions.begin(), key_positions.end(), query_positions[i]) -
            key_positions.begin());
        if (visible[i] == 0) {
            throw DegenerateRowError("attention: query at position " + std::to_string(query_positions[i]) +
                                     " sees no key");
        }
    }

    AttentionResult result;
    result.output = Matrix(nq, width);
    AttentionProbs& probs = result.probs;
    probs.heads = heads;
    probs.keys = nk;
    if (capture == ProbsCapture::all_queries) {
        for (std::size_t i = 0; i < nq; ++i) probs.query_rows.push_back(i);
    } else if (capture == ProbsCapture::last_query && nq > 0) {
        probs.query_rows.push_back(nq - 1);
    }
    probs.data.assign(heads * probs.query_rows.size() * nk, 0.0f);
    std::vector<std::ptrdiff_t> capture_slot(nq, -1);
    for (std::size_t c = 0; c < probs.query_rows.size(); ++c) {
        capture_slot[probs.query_rows[c]] = static_cast<std::ptrdiff_t>(c);
    }

    // Keys transposed per (head, dim) so the score loop runs contiguously over
    // keys; every score is still the in-order dot product over dims.
    std::vector<float> kt(width * nk);
#pragma omp parallel for schedule(static)
    for (Index ji = 0; ji < static_cast<Index>(nk); ++ji) {
        const auto j = static_cast<std::size_t>(ji);
        auto kr = keys.row(j);
        for (std::size_t c = 0; c < width; ++c) kt[c * nk + j] = kr[c];
    }

    const float* vp = values.data();
    float* outp = result.output.data();

#pragma omp parallel
    {
        std::vector<float> scores(nk);
#pragma omp for schedule(dynamic, 8)
        for (Index idx = 0; idx < static_cast<Index>(heads * nq); ++idx) {
            const std::size_t h = static_cast<std::size_t>(idx) / nq;
            const std::size_t i = static_cast<std::size_t>(idx) % nq;
            const std::size_t nvis = visible[i];
            const float* q = queries.data() + i * width + h * hd;

            // Blocks of keys keep their partial dot products in registers.
            std::size_t j0 = 0;
            for (; j0 + kKeyBlock <= nvis; j0 += kKeyBlock) {
                float acc[kKeyBlock] = {};
                for (std::size_t d = 0; d < hd; ++d) {
                    const float qd = q[d];
                    const float* kr = kt.data() + (h * hd + d) * nk + j0;
                    for (std::size_t jj = 0; jj < kKeyBlock; ++jj) acc[jj] += qd * kr[jj];
                }
                std::copy_n(acc, kKeyBlock, scores.begin() + static_cast<Index>(j0));
            }
            if (j0 < nvis) {
                std::fill(scores.begin() + static_cast<Index>(j0), scores.begin() + static_cast<Index>(nvis), 0.0f);
                for (std::size_t d = 0; d < hd; ++d) {
                    const float qd = q[d];
                    const float* kr = kt.data() + (h * hd + d) * nk;
                    for (std::size_t j = j0; j < nvis; ++j) scores[j] += qd * kr[j];
                }
            }
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < nvis; ++j) {
                scores[j] *= scale;
                mx = std::max(mx, scores[j]);
            }
            float sum = 0.0f;
            for (std::size_t j = 0; j < nvis; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                sum += scores[j];
            }
            for (std::size_t j = 0; j < nvis; ++j) scores[j] /= sum;

            float* o = outp + i * width + h * hd;
            if (hd == kFastHeadDim) {
                float acc[kFastHeadDim] = {};
                for (std::size_t j = 0; j < nvis; ++j) {
                    const float p = scores[j];
                    const float* vr = vp + j * width + h * hd;
                    for (std::size_t d = 0; d < kFastHeadDim; ++d) acc[d] += p * vr[d];
                }
                std::copy_n(acc, kFastHeadDim, o);
            } else {
                for (std::size_t j = 0; j < nvis; ++j) {
                    const float p = scores[j];
                    const float* vr = vp + j * width + h * hd;
                    for (std::size_t d = 0; d < hd; ++d) o[d] += p * vr[d];
                }
            }
            if (capture_slot[i] >= 0) {
                float* dst = probs.data.data() +
                             (h * probs.query_rows.size() + static_cast<std::size_t>(capture_slot[i])) * nk;
                std::copy_n(scores.begin(), nvis, dst);
            }
        }
    }
    return result;
}

Matrix gated_mlp(const Matrix& x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down) {
    if (w_gate.rows() != x.cols() || w_up.rows() != x.cols() || w_gate.cols() != w_up.cols() ||
        w_down.rows() != w_gate.cols() || w_down.cols() != x.cols()) {
        throw ShapeError("gated_mlp: weight shapes inconsistent with input width " + std::to_string(x.cols()));
    }
    Matrix gate = matmul(x, w_gate);
    const Matrix up = matmul(x, w_up);
    float* g = gate.data();
    const float* u = up.data();
    const auto total = static_cast<Index>(gate.size());
#pragma omp parallel for schedule(static)
    for (Index e = 0; e < total; ++e) g[e] = silu(g[e]) * u[e];
    return matmul(gate, w_down);
}

}  // namespace kernels
}  // namespace lazyllm
