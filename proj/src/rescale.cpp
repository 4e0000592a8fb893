#include "mpt/rescale.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>

#include "mpt/errors.hpp"

namespace mpt {

RescaleController::RescaleController(int site, const RescalePolicy& policy) : policy_(policy) {
  state_.site = site;
  state_.warmup_until = policy.warmup_batches;
}

bool RescaleController::should_recompute(int64_t batch) const {
  if (batch < state_.warmup_until) return true;
  return state_.batches_since_recompute + 1 >= state_.period;
}

void RescaleController::push_interval(int64_t interval) {
  state_.change_intervals.push_back(interval);
  const size_t k = static_cast<size_t>(policy_.history);
  if (state_.change_intervals.size() > k) {
    state_.change_intervals.erase(state_.change_intervals.begin());
  }
}

void RescaleController::observe(int fresh_exponent, int64_t batch) {
  state_.batches_since_recompute = 0;

  if (!state_.has_cached) {
    state_.has_cached = true;
    state_.cached_exponent = fresh_exponent;
    state_.last_change_batch = batch;
    return;
  }
  if (fresh_exponent == state_.cached_exponent) return;

  const bool in_warmup = batch < state_.warmup_until;
  if (!in_warmup && std::abs(fresh_exponent - state_.cached_exponent) >= 2) {
    // The exponent drifted past an adjacent value while we slept: the history
    // no longer predicts change frequency, so restart per-batch rescaling.
    state_.cached_exponent = fresh_exponent;
    state_.last_change_batch = batch;
    state_.change_intervals.clear();
    state_.period = 1;
    state_.warmup_until = batch + policy_.warmup_batches;
    return;
  }

  push_interval(batch - state_.last_change_batch);
  state_.cached_exponent = fresh_exponent;
  state_.last_change_batch = batch;
  if (!in_warmup) {
    const int64_t sum = std::accumulate(state_.change_intervals.begin(),
                                        state_.change_intervals.end(), int64_t{0});
    const int64_t mean = sum / static_cast<int64_t>(state_.change_intervals.size());
    state_.period = static_cast<int>(std::max<int64_t>(1, mean / 2));
  }
}

void RescaleController::advance() { ++state_.batches_since_recompute; }

int RescaleController::effective_exponent(std::optional<int> fresh) const {
  if (fresh) return *fresh;
  if (!state_.has_cached) throw InternalError("effective_exponent: no cached exponent yet");
  return state_.cached_exponent;
}

} // namespace mpt
