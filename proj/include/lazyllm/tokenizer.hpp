#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lazyllm {

/// Byte-level tokenizer: ids 0..255 are raw bytes, plus BOS and EOS.
inline constexpr int kBosId = 256;
inline constexpr int kEosId = 257;
inline constexpr int kByteVocabSize = 258;

/// BOS followed by one id per byte.
std::vector<int> tokenize(std::string_view text);

/// Inverse of tokenize; special ids produce no bytes. Throws InputError for ids
/// outside [0, vocab_size).
std::string detokenize(const std::vector<int>& ids, int vocab_size = kByteVocabSize);

}  // namespace lazyllm
