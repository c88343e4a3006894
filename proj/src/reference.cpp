#include "lazyllm/reference.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lazyllm/errors.hpp"
#include "lazyllm/model.hpp"

namespace lazyllm::reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("reference::matmul: dimension mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            float sum = 0.0f;
            for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(k, j);
            c(i, j) = sum;
        }
    }
    return c;
}

Matrix softmax_rows(const Matrix& x, std::span<const std::uint8_t> visible) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto vis = [&](std::size_t c) { return visible.empty() || visible[r * x.cols() + c] != 0; };
        float mx = -std::numeric_limits<float>::infinity();
        bool any = false;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (vis(c)) {
                any = true;
                if (x(r, c) > mx) mx = x(r, c);
            }
        }
        if (!any) throw DegenerateRowError("reference::softmax_rows: fully masked row");
        float sum = 0.0f;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (vis(c)) {
                out(r, c) = std::exp(x(r, c) - mx);
                sum += out(r, c);
            }
        }
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = vis(c) ? out(r, c) / sum : 0.0f;
    }
    return out;
}

Matrix rms_norm(const Matrix& x, std::span<const float> gain) {
    if (gain.size() != x.cols()) throw ShapeError("reference::rms_norm: gain length mismatch");
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        float ss = 0.0f;
        for (std::size_t c = 0; c < x.cols(); ++c) ss += x(r, c) * x(r, c);
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.cols()) + kRmsEpsilon);
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * inv * gain[c];
    }
    return out;
}

Matrix rope_apply(const Matrix& x, std::span<const std::int64_t> positions, std::size_t head_dim) {
    if (head_dim == 0 || head_dim % 2 != 0) throw ConfigError("reference::rope_apply: odd head_dim");
    Matrix out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t h = 0; h < x.cols() / head_dim; ++h) {
            for (std::size_t i = 0; i < head_dim / 2; ++i) {
                const double freq =
                    std::pow(kRopeBase, -static_cast<double>(2 * i) / static_cast<double>(head_dim));
                const double angle = static_cast<double>(positions[r]) * freq;
                const auto c = static_cast<float>(std::cos(angle));
                const auto s = static_cast<float>(std::sin(angle));
                const float a = x(r, h * head_dim + 2 * i);
                const float b = x(r, h * head_dim + 2 * i + 1);
                out(r, h * head_dim + 2 * i) = a * c - b * s;
                out(r, h * head_dim + 2 * i + 1) = a * s + b * c;
            }
        }
    }
    return out;
}

AttentionResult attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                          std::span<const std::int64_t> query_positions,
                          std::span<const std::int64_t> key_positions, std::size_t heads) {
    const std::size_t width = queries.cols();
    const std::size_t hd = width / heads;
    const std::size_t nq = queries.rows();
    const std::size_t nk = keys.rows();
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    std::vector<std::uint8_t> mask(nq * nk);
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t j = 0; j < nk; ++j) mask[i * nk + j] = key_positions[j] <= query_positions[i] ? 1 : 0;
    }

    AttentionResult result;
    result.output = Matrix(nq, width);
    result.probs.heads = heads;
    result.probs.keys = nk;
    for (std::size_t i = 0; i < nq; ++i) result.probs.query_rows.push_back(i);
    result.probs.data.assign(heads * nq * nk, 0.0f);

    for (std::size_t h = 0; h < heads; ++h) {
        Matrix scores(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                float dot = 0.0f;
                for (std::size_t d = 0; d < hd; ++d) dot += queries(i, h * hd + d) * keys(j, h * hd + d);
                scores(i, j) = dot * scale;
            }
        }
        const Matrix p = softmax_rows(scores, mask);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t d = 0; d < hd; ++d) {
                float acc = 0.0f;
                for (std::size_t j = 0; j < nk; ++j) {
                    if (mask[i * nk + j]) acc += p(i, j) * values(j, h * hd + d);
                }
                result.output(i, h * hd + d) = acc;
            }
            for (std::size_t j = 0; j < nk; ++j) result.probs.data[(h * nq + i) * nk + j] = p(i, j);
        }
    }
    return result;
}

Matrix gated_mlp(const Matrix& x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down) {
    const Matrix g = matmul(x, w_gate);
    const Matrix u = matmul(x, w_up);
    Matrix hidden(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float gv = g.data()[i];
        hidden.data()[i] = gv / (1.0f + std::exp(-gv)) * u.data()[i];
    }
    return matmul(hidden, w_down);
}

ForwardResult forward(const Model& model, std::span<const int> token_ids) {
    const ModelConfig& cfg = model.config();
    const ModelWeights& w = model.weights();
    const std::size_t n = token_ids.size();
    std::vector<std::int64_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::int64_t>(i);

    Matrix x(n, cfg.d_model);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            x(i, c) = w.token_embedding(static_cast<std::size_t>(token_ids[i]), c);
        }
    }
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        const Matrix xn = rms_norm(x, lw.attn_norm);
        const Matrix q = rope_apply(matmul(xn, lw.wq), positions, cfg.head_dim());
        const Matrix k = rope_apply(matmul(xn, lw.wk), positions, cfg.head_dim());
        const Matrix v = matmul(xn, lw.wv);
        const Matrix attn = matmul(attention(q, k, v, positions, positions, cfg.num_heads).output, lw.wo);
        Matrix h(n, cfg.d_model);
        for (std::size_t e = 0; e < h.size(); ++e) h.data()[e] = x.data()[e] + attn.data()[e];
        const Matrix mlp = gated_mlp(rms_norm(h, lw.ffn_norm), lw.w_gate, lw.w_up, lw.w_down);
        for (std::size_t e = 0; e < h.size(); ++e) x.data()[e] = h.data()[e] + mlp.data()[e];
    }

    ForwardResult out;
    out.final_hidden = x;
    if (n > 0) {
        Matrix last(1, cfg.d_model);
        for (std::size_t c = 0; c < cfg.d_model; ++c) last(0, c) = x(n - 1, c);
        const Matrix normed = rms_norm(last, w.final_norm);
        const Matrix& table = w.unembedding_table();
        out.logits.resize(cfg.vocab_size);
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
            float dot = 0.0f;
            for (std::size_t c = 0; c < cfg.d_model; ++c) dot += table(v, c) * normed(0, c);
            out.logits[v] = dot;
        }
    }
    return out;
}

std::vector<int> generate(const Model& model, std::span<const int> prompt, std::size_t max_new_tokens) {
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> generated;
    for (std::size_t t = 0; t < max_new_tokens; ++t) {
        const ForwardResult fr = forward(model, seq);
        int best = 0;
        for (std::size_t v = 1; v < fr.logits.size(); ++v) {
            if (fr.logits[v] > fr.logits[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
        }
        generated.push_back(best);
        seq.push_back(best);
    }
    return generated;
}

}  // namespace lazyllm::reference
