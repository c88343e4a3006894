#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lazyllm {

/// One revival: `token` re-entered the live set at `layer` during `step`.
struct RevivalEvent {
    std::int64_t token;
    std::size_t layer;
    std::size_t step;
};

/// Counts compute events, i.e. one token passing through one layer, for the
/// whole lifetime of a generation. Step 0 is the prefill.
class ComputeLedger {
public:
    ComputeLedger(std::size_t prompt_length, std::size_t num_layers);

    std::size_t prompt_length() const { return prompt_length_; }
    std::size_t num_layers() const { return num_layers_; }

    /// Opens a new step and returns its index.
    std::size_t begin_step();
    std::size_t num_steps() const { return live_sizes_.size(); }

    void record(std::int64_t token, std::size_t layer);
    void record_revival(std::int64_t token, std::size_t layer);

    std::uint32_t event_count(std::int64_t token, std::size_t layer) const;
    /// Step in which (token, layer) was first computed, or -1.
    std::int64_t event_step(std::int64_t token, std::size_t layer) const;

    std::uint64_t total_events() const { return total_events_; }
    std::uint64_t prompt_events() const { return prompt_events_; }

    /// [step][layer] number of tokens computed.
    const std::vector<std::vector<std::uint32_t>>& live_sizes() const { return live_sizes_; }
    /// [step][layer] number of prompt tokens computed.
    const std::vector<std::vector<std::uint32_t>>& prompt_events_per_step() const { return prompt_step_events_; }
    const std::vector<RevivalEvent>& revivals() const { return revivals_; }

    /// Every (token, layer) pair computed more than once.
    std::vector<std::string> violations() const;

private:
    std::size_t prompt_length_;
    std::size_t num_layers_;
    std::vector<std::uint32_t> counts_;     // token * L + layer
    std::vector<std::int32_t> first_step_;  // token * L + layer
    std::uint64_t total_events_ = 0;
    std::uint64_t prompt_events_ = 0;
    std::vector<std::vector<std::uint32_t>> live_sizes_;
    std::vector<std::vector<std::uint32_t>> prompt_step_events_;
    std::vector<RevivalEvent> revivals_;
};

}  // namespace lazyllm
