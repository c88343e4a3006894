#include "lazyllm/ledger.hpp"

#include "lazyllm/errors.hpp"

namespace lazyllm {

ComputeLedger::ComputeLedger(std::size_t prompt_length, std::size_t num_layers)
    : prompt_length_(prompt_length), num_layers_(num_layers) {
    counts_.assign(prompt_length * num_layers, 0);
    first_step_.assign(prompt_length * num_layers, -1);
}

std::size_t ComputeLedger::begin_step() {
    live_sizes_.emplace_back(num_layers_, 0);
    prompt_step_events_.emplace_back(num_layers_, 0);
    return live_sizes_.size() - 1;
}

void ComputeLedger::record(std::int64_t token, std::size_t layer) {
    if (live_sizes_.empty()) throw InvariantViolation("ledger: record before begin_step");
    if (token < 0 || layer >= num_layers_) throw InputError("ledger: event out of range");
    const std::size_t idx = static_cast<std::size_t>(token) * num_layers_ + layer;
    if (idx >= counts_.size()) {
        const std::size_t grow = std::max(idx + num_layers_, counts_.size() * 2) / num_layers_ * num_layers_;
        counts_.resize(grow, 0);
        first_step_.resize(grow, -1);
    }
    if (counts_[idx]++ == 0) first_step_[idx] = static_cast<std::int32_t>(live_sizes_.size() - 1);
    ++total_events_;
    ++live_sizes_.back()[layer];
    if (static_cast<std::size_t>(token) < prompt_length_) {
        ++prompt_events_;
        ++prompt_step_events_.back()[layer];
    }
}

void ComputeLedger::record_revival(std::int64_t token, std::size_t layer) {
    revivals_.push_back({token, layer, live_sizes_.empty() ? 0 : live_sizes_.size() - 1});
}

std::uint32_t ComputeLedger::event_count(std::int64_t token, std::size_t layer) const {
    const std::size_t idx = static_cast<std::size_t>(token) * num_layers_ + layer;
    return idx < counts_.size() ? counts_[idx] : 0;
}

std::int64_t ComputeLedger::event_step(std::int64_t token, std::size_t layer) const {
    const std::size_t idx = static_cast<std::size_t>(token) * num_layers_ + layer;
    return idx < first_step_.size() ? first_step_[idx] : -1;
}

std::vector<std::string> ComputeLedger::violations() const {
    std::vector<std::string> out;
    for (std::size_t idx = 0; idx < counts_.size(); ++idx) {
        if (counts_[idx] > 1) {
            out.push_back("token " + std::to_string(idx / num_layers_) + " layer " + std::to_string(idx % num_layers_) +
                          " computed " + std::to_string(counts_[idx]) + " times");
        }
    }
    if (prompt_events_ > static_cast<std::uint64_t>(prompt_length_) * num_layers_) {
        out.push_back("prompt events exceed N x L");
    }
    return out;
}

}  // namespace lazyllm
