#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lazyllm/kernels.hpp"
#include "lazyllm/tensor.hpp"

namespace lazyllm {

struct ModelConfig {
    std::size_t num_layers = 12;
    std::size_t num_heads = 8;
    std::size_t d_model = 256;
    std::size_t d_ff = 688;
    std::size_t vocab_size = 258;
    std::size_t max_position = 8192;
    bool tied_embeddings = true;

    std::size_t head_dim() const { return d_model / num_heads; }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Projection matrices are stored input-major (in x out) so a layer computes
/// `x * W` on row vectors.
struct LayerWeights {
    std::vector<float> attn_norm;  // d_model
    Matrix wq, wk, wv, wo;         // d_model x d_model
    std::vector<float> ffn_norm;   // d_model
    Matrix w_gate, w_up;           // d_model x d_ff
    Matrix w_down;                 // d_ff x d_model

    bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
    Matrix token_embedding;  // vocab x d_model
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;
    std::optional<Matrix> unembedding;  // vocab x d_model, only when untied

    const Matrix& unembedding_table() const { return unembedding ? *unembedding : token_embedding; }

    bool operator==(const ModelWeights&) const = default;
};

/// Result of one decoder layer over a live token subset.
struct LayerOutput {
    Matrix hidden;  // live x d_model
    Matrix keys;    // live x d_model, rotary already applied
    Matrix values;  // live x d_model
    AttentionProbs probs;
    std::vector<std::int64_t> key_positions;  // merged context order (columns of probs)
};

class Model {
public:
    Model(ModelConfig config, ModelWeights weights);

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }

    /// Row i is the embedding of ids[i]; throws InputError for ids >= vocab.
    Matrix embed(std::span<const int> ids) const;

    /// Pre-norm attention + gated MLP block for the live tokens. `context_*`
    /// holds the cached K/V of the other visible tokens; the live tokens' own
    /// K/V are computed here and merged in by position. All position lists
    /// are strictly ascending.
    LayerOutput layer_forward(std::size_t layer, const Matrix& live_hidden,
                              std::span<const std::int64_t> live_positions, const Matrix& context_keys,
                              const Matrix& context_values, std::span<const std::int64_t> context_positions,
                              ProbsCapture capture = ProbsCapture::last_query) const;

    /// Final RMS norm of a last-layer hidden row.
    std::vector<float> final_norm(std::span<const float> hidden_row) const;

    /// Unembedding scores for an already normalised hidden row.
    std::vector<float> logits(std::span<const float> normed_row) const;

private:
    ModelConfig config_;
    ModelWeights weights_;
};

/// Seeded N(0, 1/d_model) weights, unit norm gains.
Model generate_random_model(const ModelConfig& config, std::uint64_t seed);

/// LZWT weight file: "LZWT", u32 version, u64 header length, JSON header,
/// little-endian f32 payload, trailing CRC32 of the payload.
void save_model(const Model& model, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model load_model(const std::filesystem::path& path);
Model deserialize_model(std::span<const std::uint8_t> bytes);

inline constexpr std::uint32_t kLzwtVersion = 1;

}  // namespace lazyllm
