#pragma once

#include <stdexcept>
#include <string>

namespace mpt {

// Bad config document: unknown op names, missing sections, inconsistent policies.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed binary payload: intermediate models, checkpoints, serialized tensors, CSV rows.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Structural graph problems (cycles, dangling references).
class GraphError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Model cannot be translated under the given training config.
class TranslateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Scheduling failed (missing profile, impossible placement).
class ScheduleError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Latency-table lookups that cannot be answered.
class ProfileError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Memory budget cannot be satisfied by any release combination.
class CapacityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// An operator was dispatched to a backend that does not support it.
class BackendError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Training run setup problems (dataset/model shape mismatch and the like).
class RunError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invariant violations that indicate a bug rather than bad input,
// e.g. a scale exponent leaving the representable range.
class InternalError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

} // namespace mpt
