#include "lazyllm/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "lazyllm/errors.hpp"

namespace lazyllm {

void ModelConfig::validate() const {
    if (num_layers < 2) throw ConfigError("num_layers must be >= 2, got " + std::to_string(num_layers));
    if (num_heads == 0) throw ConfigError("num_heads must be positive");
    if (d_model == 0 || d_model % num_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    }
    if (head_dim() % 2 != 0) throw ConfigError("head_dim " + std::to_string(head_dim()) + " must be even");
    if (d_ff == 0) throw ConfigError("d_ff must be positive");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (max_position == 0) throw ConfigError("max_position must be positive");
}

Model::Model(ModelConfig config, ModelWeights weights) : config_(config), weights_(std::move(weights)) {
    config_.validate();
    const std::size_t d = config_.d_model;
    auto check = [](bool ok, const std::string& what) {
        if (!ok) throw ShapeError("model weights: " + what);
    };
    check(weights_.token_embedding.rows() == config_.vocab_size && weights_.token_embedding.cols() == d,
          "token embedding shape");
    check(weights_.layers.size() == config_.num_layers, "layer count");
    check(weights_.final_norm.size() == d, "final norm length");
    check(config_.tied_embeddings != weights_.unembedding.has_value(), "tied flag vs unembedding tensor");
    if (weights_.unembedding) {
        check(weights_.unembedding->rows() == config_.vocab_size && weights_.unembedding->cols() == d,
              "unembedding shape");
    }
    for (const LayerWeights& lw : weights_.layers) {
        check(lw.attn_norm.size() == d && lw.ffn_norm.size() == d, "norm gain length");
        for (const Matrix* m : {&lw.wq, &lw.wk, &lw.wv, &lw.wo}) {
            check(m->rows() == d && m->cols() == d, "attention projection shape");
        }
        check(lw.w_gate.rows() == d && lw.w_gate.cols() == config_.d_ff, "gate projection shape");
        check(lw.w_up.rows() == d && lw.w_up.cols() == config_.d_ff, "up projection shape");
        check(lw.w_down.rows() == config_.d_ff && lw.w_down.cols() == d, "down projection shape");
    }
}

Matrix Model::embed(std::span<const int> ids) const {
    Matrix out(ids.size(), config_.d_model);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config_.vocab_size) {
            throw InputError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                             std::to_string(config_.vocab_size));
        }
        auto src = weights_.token_embedding.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

LayerOutput Model::layer_forward(std::size_t layer, const Matrix& live_hidden,
                                 std::span<const std::int64_t> live_positions, const Matrix& context_keys,
                                 const Matrix& context_values,
                                 std::span<const std::int64_t> context_positions, ProbsCapture capture) const {
    if (layer >= config_.num_layers) throw InputError("layer index out of range");
    const std::size_t d = config_.d_model;
    if (live_hidden.cols() != d || live_hidden.rows() != live_positions.size()) {
        throw ShapeError("layer_forward: live hidden shape does not match positions");
    }
    if (context_positions.size() != context_keys.rows() || context_keys.rows() != context_values.rows() ||
        (!context_positions.empty() && (context_keys.cols() != d || context_values.cols() != d))) {
        throw ShapeError("layer_forward: context K/V shape mismatch");
    }
    const LayerWeights& lw = weights_.layers[layer];

    const Matrix xn = kernels::rms_norm(live_hidden, lw.attn_norm);
    const Matrix q = kernels::rope_apply(kernels::matmul(xn, lw.wq), live_positions, config_.head_dim());
    LayerOutput out;
    out.keys = kernels::rope_apply(kernels::matmul(xn, lw.wk), live_positions, config_.head_dim());
    out.values = kernels::matmul(xn, lw.wv);

    // Merge live and context rows by position.
    const std::size_t total = live_positions.size() + context_positions.size();
    Matrix keys(total, d);
    Matrix values(total, d);
    out.key_positions.reserve(total);
    std::size_t a = 0;
    std::size_t b = 0;
    for (std::size_t r = 0; r < total; ++r) {
        const bool take_live =
            b >= context_positions.size() || (a < live_positions.size() && live_positions[a] < context_positions[b]);
        if (a < live_positions.size() && b < context_positions.size() && live_positions[a] == context_positions[b]) {
            throw InputError("layer_forward: position " + std::to_string(live_positions[a]) +
                             " is both live and in the context");
        }
        if (take_live) {
            std::copy_n(out.keys.row(a).begin(), d, keys.row(r).begin());
            std::copy_n(out.values.row(a).begin(), d, values.row(r).begin());
            out.key_positions.push_back(live_positions[a++]);
        } else {
            std::copy_n(context_keys.row(b).begin(), d, keys.row(r).begin());
            std::copy_n(context_values.row(b).begin(), d, values.row(r).begin());
            out.key_positions.push_back(context_positions[b++]);
        }
    }

    AttentionResult attn =
        kernels::attention(q, keys, values, live_positions, out.key_positions, config_.num_heads, capture);
    out.probs = std::move(attn.probs);

    Matrix h = kernels::matmul(attn.output, lw.wo);
    for (std::size_t e = 0; e < h.size(); ++e) h.data()[e] = live_hidden.data()[e] + h.data()[e];
    const Matrix mlp = kernels::gated_mlp(kernels::rms_norm(h, lw.ffn_norm), lw.w_gate, lw.w_up, lw.w_down);
    for (std::size_t e = 0; e < h.size(); ++e) h.data()[e] = h.data()[e] + mlp.data()[e];
    out.hidden = std::move(h);
    return out;
}

std::vector<float> Model::final_norm(std::span<const float> hidden_row) const {
    Matrix row(1, config_.d_model, std::vector<float>(hidden_row.begin(), hidden_row.end()));
    const Matrix normed = kernels::rms_norm(row, weights_.final_norm);
    return {normed.values().begin(), normed.values().end()};
}

std::vector<float> Model::logits(std::span<const float> normed_row) const {
    if (normed_row.size() != config_.d_model) throw ShapeError("logits: hidden row length mismatch");
    const Matrix& table = weights_.unembedding_table();
    std::vector<float> scores(config_.vocab_size);
    for (std::size_t v = 0; v < config_.vocab_size; ++v) {
        auto tr = table.row(v);
        float dot = 0.0f;
        for (std::size_t c = 0; c < config_.d_model; ++c) dot += tr[c] * normed_row[c];
        scores[v] = dot;
    }
    return scores;
}

Model generate_random_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(config.d_model)));
    auto random_matrix = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (float& x : m.values()) x = normal(rng);
        return m;
    };
    const std::size_t d = config.d_model;

    ModelWeights w;
    w.token_embedding = random_matrix(config.vocab_size, d);
    w.layers.resize(config.num_layers);
    for (LayerWeights& lw : w.layers) {
        lw.attn_norm.assign(d, 1.0f);
        lw.wq = random_matrix(d, d);
        lw.wk = random_matrix(d, d);
        lw.wv = random_matrix(d, d);
        lw.wo = random_matrix(d, d);
        lw.ffn_norm.assign(d, 1.0f);
        lw.w_gate = random_matrix(d, config.d_ff);
        lw.w_up = random_matrix(d, config.d_ff);
        lw.w_down = random_matrix(config.d_ff, d);
    }
    w.final_norm.assign(d, 1.0f);
    if (!config.tied_embeddings) w.unembedding = random_matrix(config.vocab_size, d);
    return Model(config, std::move(w));
}

}  // namespace lazyllm
