#pragma once

#include <stdexcept>
#include <string>

namespace tierseg {

/// Shapes or sizes that do not conform to an operation's contract.
class dimension_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class index_error : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Misuse of stateful objects (optimizer without gradients, consumed tape).
class state_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class storage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values encountered during a forward or backward pass.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A data structure invariant (ordering, positivity) does not hold.
class invariant_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class feasibility_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss has no terms for this input (e.g. zero layers); the sample is skipped.
class undefined_loss_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace tierseg
