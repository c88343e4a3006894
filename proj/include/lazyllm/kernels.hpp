#pragma once

// Dense numerical kernels used by the model. Every kernel parallelises over
// independent output rows (or (head, query) pairs for attention) and keeps a
// fixed accumulation order per output element, so results are bit-identical
// for any thread count and match the serial versions in reference.hpp.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lazyllm/tensor.hpp"

namespace lazyllm {

inline constexpr float kRmsEpsilon = 1e-5f;
inline constexpr double kRopeBase = 10000.0;

/// Which query rows of the attention probabilities to materialise. Storing all
/// rows costs heads x queries x keys floats, which is prohibitive for long
/// prompts; the pruning score only needs the newest token's row.
enum class ProbsCapture { none, last_query, all_queries };

/// Attention probabilities for a subset of query rows. Entries for keys that a
/// query cannot see are exactly zero.
struct AttentionProbs {
    std::size_t heads = 0;
    std::size_t keys = 0;
    std::vector<std::size_t> query_rows;  // indices into the query matrix
    std::vector<float> data;              // heads x query_rows.size() x keys

    std::span<const float> row(std::size_t head, std::size_t captured) const {
        return {data.data() + (head * query_rows.size() + captured) * keys, keys};
    }
    float at(std::size_t head, std::size_t captured, std::size_t key) const {
        return data[(head * query_rows.size() + captured) * keys + key];
    }
};

struct AttentionResult {
    Matrix output;
    AttentionProbs probs;
};

namespace kernels {

Matrix matmul(const Matrix& a, const Matrix& b);

/// Row softmax. `visible` is a rows x cols 0/1 mask; empty means all visible.
Matrix softmax_rows(const Matrix& x, std::span<const std::uint8_t> visible = {});

Matrix rms_norm(const Matrix& x, std::span<const float> gain);

/// Rotates every head slice of every row by its absolute position.
Matrix rope_apply(const Matrix& x, std::span<const std::int64_t> positions, std::size_t head_dim);

/// Multi-head scaled dot-product attention with a causal mask on absolute
/// positions: query at position p sees keys at positions <= p. Key positions
/// must be strictly ascending.
AttentionResult attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                          std::span<const std::int64_t> query_positions,
                          std::span<const std::int64_t> key_positions, std::size_t heads,
                          ProbsCapture capture = ProbsCapture::none);

/// SiLU-gated MLP: (silu(x Wg) * (x Wu)) Wd.
Matrix gated_mlp(const Matrix& x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down);

float silu(float g);

}  // namespace kernels

/// Sets the OpenMP team size used by the kernels (0 keeps the runtime default).
void set_kernel_threads(int threads);
int kernel_threads();

}  // namespace lazyllm
