#pragma once

// Serial reference implementations. They are deliberately naive (dense masks,
// triple loops, full recomputation) and are used by the tests and the kernel
// benchmark as the ground truth for the OpenMP kernels and the cached engine.

#include <cstdint>
#include <span>
#include <vector>

#include "lazyllm/kernels.hpp"
#include "lazyllm/tensor.hpp"

namespace lazyllm {

class Model;

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& x, std::span<const std::uint8_t> visible = {});
Matrix rms_norm(const Matrix& x, std::span<const float> gain);
Matrix rope_apply(const Matrix& x, std::span<const std::int64_t> positions, std::size_t head_dim);

/// Dense attention: builds the full causal mask and runs every head/query
/// through a plain softmax. Key order is arbitrary here.
AttentionResult attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                          std::span<const std::int64_t> query_positions,
                          std::span<const std::int64_t> key_positions, std::size_t heads);

Matrix gated_mlp(const Matrix& x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down);

struct ForwardResult {
    Matrix final_hidden;         // tokens x d_model, before the final norm
    std::vector<float> logits;   // next-token scores for the last token
};

/// Monolithic forward pass over the whole sequence (positions 0..n-1), no
/// cache and no pruning.
ForwardResult forward(const Model& model, std::span<const int> token_ids);

/// Greedy generation by recomputing the full forward pass for every token.
std::vector<int> generate(const Model& model, std::span<const int> prompt, std::size_t max_new_tokens);

}  // namespace reference
}  // namespace lazyllm
