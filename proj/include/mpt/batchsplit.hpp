#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mpt/tensor.hpp"

namespace mpt {

inline constexpr double kAbnormalThreshold = 1.5;  // "noticeably higher" per-flop ratio

struct LatencyEntry {
  double latency_ms = 0.0;
  double flops = 0.0;
};

// Profiled (op signature, batch size) -> latency/workload grid.
class LatencyTable {
public:
  void add(const std::string& signature, int batch, double latency_ms, double flops);
  const LatencyEntry* find(const std::string& signature, int batch) const;
  bool has_signature(const std::string& signature) const;
  std::vector<int> batches_for(const std::string& signature) const;  // ascending

  // CSV rows: op_signature,batch,latency_ms,flops
  static LatencyTable from_csv(const std::string& text);
  std::string to_csv() const;

private:
  std::map<std::string, std::map<int, LatencyEntry>> rows_;
};

// True iff the op's latency-to-workload ratio at `batch` noticeably exceeds the
// same signature at `ref_batch` (the cache-exhaustion signature). Throws
// ProfileError when either row is missing.
bool detect_abnormal(const LatencyTable& t, const std::string& signature, int batch,
                     int ref_batch, double theta = kAbnormalThreshold);

struct SplitPlan {
  std::string signature;
  int batch = 0;
  int micro_batch = 0;
  int num_micro = 1;

  std::vector<int> micro_sizes() const;  // covers the full batch, last may be partial
};

// micro_batch = the largest profiled size (clamped to batch) whose per-flop
// latency stays within theta of the signature's best; num_micro = ceil cover.
SplitPlan plan_split(const LatencyTable& t, const std::string& signature, int batch,
                     double theta = kAbnormalThreshold);

// Unified-scale accumulation of micro-batch weight gradients. All parts must
// share shape and base exponent. With agreeing per-part scale exponents the
// INT32 partials are summed losslessly and downscaled once, reproducing the
// unsplit gradient bit for bit; with mixed exponents each part is
// rounded-shifted to the max exponent first (one rounding per part).
QuantTensor accumulate_weight_grads(std::span<const AccumTensor> parts);

} // namespace mpt
