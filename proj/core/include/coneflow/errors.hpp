#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace coneflow {

// Invalid user input: bad config, out-of-range parameters, unsupported surface.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A computation that could not complete (solver stagnation, corrupt archive).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Metric density lost positivity at the listed nodes.
class PositivityError : public RuntimeFailure {
public:
    PositivityError(const std::string& what, std::vector<std::size_t> nodes)
        : RuntimeFailure(what), nodes_(std::move(nodes)) {}
    const std::vector<std::size_t>& nodes() const noexcept { return nodes_; }

private:
    std::vector<std::size_t> nodes_;
};

}  // namespace coneflow
