#pragma once

#include <stdexcept>
#include <string>

namespace dbal {

/// Invalid shapes, hyper-parameters or experiment settings.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An API was called out of order (e.g. backward before forward).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Unreadable or malformed input files (manifests, images, tensors, reports).
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested more items than available (top-k with k > N).
class SelectionError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

}  // namespace dbal
