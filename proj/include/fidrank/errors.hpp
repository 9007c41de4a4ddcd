#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fidrank {

/// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Token id, target id or element index outside its valid range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// A caller broke a documented precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Prompt token budget cannot hold the fixed scaffolding.
struct BudgetError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Trace, offsets and spans disagree about the source-token axis.
struct ConsistencyError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// More candidates than a scoring path can take in one forward.
struct CapacityError : std::length_error {
    using std::length_error::length_error;
};

/// Malformed input data; carries the 1-based line number of the first defect.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line)
    {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(std::size_t step)
      : std::runtime_error("non-finite loss at step " + std::to_string(step)), step_(step)
    {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace fidrank
