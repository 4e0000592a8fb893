#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mpt/config.hpp"

namespace mpt {

// Per-site controller state: cached exponent, observed change intervals, and
// the current recompute period.
struct RescaleState {
  int site = -1;
  int cached_exponent = 0;
  bool has_cached = false;
  int64_t last_change_batch = 0;
  std::vector<int64_t> change_intervals;  // ring of the last K intervals
  int period = 1;
  int64_t batches_since_recompute = 0;
  int64_t warmup_until = 0;  // per-batch rescaling below this batch index
};

// Decides, per batch, whether a scale-factor site recomputes its exponent from
// the INT32 intermediates or reuses the cached one. Observed change intervals
// map to the recompute period by the f -> f/2 rule; during warmup the period
// is pinned to 1. A change of two or more steps detected late distrusts the
// interval history and re-enters warmup for the site.
class RescaleController {
public:
  RescaleController() : RescaleController(0, RescalePolicy{}) {}
  RescaleController(int site, const RescalePolicy& policy);

  // True iff this batch must run the exponent recompute: still warming up,
  // or the period has elapsed.
  bool should_recompute(int64_t batch) const;

  // Records the result of a recompute that ran at `batch`.
  void observe(int fresh_exponent, int64_t batch);

  // Marks a batch whose recompute was skipped.
  void advance();

  // The exponent downscale uses this batch: fresh when a recompute ran,
  // cached otherwise.
  int effective_exponent(std::optional<int> fresh) const;

  const RescaleState& state() const { return state_; }
  RescaleState& mutable_state() { return state_; }
  const RescalePolicy& policy() const { return policy_; }

private:
  void push_interval(int64_t interval);

  RescaleState state_;
  RescalePolicy policy_;
};

} // namespace mpt
