#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bsdeuq {

// Non-finite loss or gradient during an optimization step.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite state during path simulation; carries the first failing entry.
struct SimulationDiverged : std::runtime_error {
    SimulationDiverged(std::size_t sample_, std::size_t step_)
        : std::runtime_error("simulation diverged at sample " + std::to_string(sample_) +
                             ", step " + std::to_string(step_)),
          sample(sample_),
          step(step_) {}
    std::size_t sample;
    std::size_t step;
};

} // namespace bsdeuq
