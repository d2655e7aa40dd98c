#pragma once

#include <stdexcept>
#include <string>

namespace maskdeep {

struct ConfigNotFound : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointNotFound : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointCorruption : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientPool : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateVector : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingAborted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename E = ValidationError>
inline void check(bool cond, const std::string& msg) {
    if (!cond) throw E(msg);
}

}  // namespace maskdeep
