#include "lazyllm/tokenizer.hpp"

#include "lazyllm/errors.hpp"

namespace lazyllm {

std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size() + 1);
    ids.push_back(kBosId);
    for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
}

std::string detokenize(const std::vector<int>& ids, int vocab_size) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= vocab_size) throw InputError("detokenize: id " + std::to_string(id) + " out of range");
        if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

}  // namespace lazyllm
