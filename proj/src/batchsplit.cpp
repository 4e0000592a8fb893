#include "mpt/batchsplit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mpt/errors.hpp"

namespace mpt {

void LatencyTable::add(const std::string& signature, int batch, double latency_ms, double flops) {
  if (batch < 1) throw std::invalid_argument("latency table: batch must be >= 1");
  if (latency_ms < 0 || flops <= 0) {
    throw std::invalid_argument("latency table: latency must be >= 0 and flops > 0");
  }
  rows_[signature][batch] = {latency_ms, flops};
}

const LatencyEntry* LatencyTable::find(const std::string& signature, int batch) const {
  auto sit = rows_.find(signature);
  if (sit == rows_.end()) return nullptr;
  auto bit = sit->second.find(batch);
  return bit == sit->second.end() ? nullptr : &bit->second;
}

bool LatencyTable::has_signature(const std::string& signature) const {
  return rows_.count(signature) != 0;
}

std::vector<int> LatencyTable::batches_for(const std::string& signature) const {
  std::vector<int> out;
  auto sit = rows_.find(signature);
  if (sit == rows_.end()) return out;
  for (const auto& [batch, entry] : sit->second) out.push_back(batch);
  return out;
}

LatencyTable LatencyTable::from_csv(const std::string& text) {
  LatencyTable t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("op_signature,", 0) == 0) continue;
    std::istringstream ls(line);
    std::string sig, batch, latency, flops;
    if (!std::getline(ls, sig, ',') || !std::getline(ls, batch, ',') ||
        !std::getline(ls, latency, ',') || !std::getline(ls, flops)) {
      throw FormatError("latency csv line " + std::to_string(lineno) + ": expected 4 columns");
    }
    try {
      t.add(sig, std::stoi(batch), std::stod(latency), std::stod(flops));
    } catch (const std::invalid_argument& e) {
      throw FormatError("latency csv line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception&) {
      throw FormatError("latency csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return t;
}

std::string LatencyTable::to_csv() const {
  std::ostringstream os;
  os << "op_signature,batch,latency_ms,flops\n";
  for (const auto& [sig, batches] : rows_) {
    for (const auto& [batch, e] : batches) {
      os << sig << ',' << batch << ',' << e.latency_ms << ',' << e.flops << '\n';
    }
  }
  return os.str();
}

namespace {

double per_flop(const LatencyEntry& e) { return e.latency_ms / e.flops; }

} // namespace

bool detect_abnormal(const LatencyTable& t, const std::string& signature, int batch,
                     int ref_batch, double theta) {
  const LatencyEntry* cur = t.find(signature, batch);
  const LatencyEntry* ref = t.find(signature, ref_batch);
  if (!cur || !ref) {
    throw ProfileError("detect_abnormal: no profile row for " + signature + " at batch " +
                       std::to_string(cur ? ref_batch : batch));
  }
  return per_flop(*cur) > theta * per_flop(*ref);
}

std::vector<int> SplitPlan::micro_sizes() const {
  std::vector<int> sizes;
  int remaining = batch;
  while (remaining > 0) {
    sizes.push_back(std::min(micro_batch, remaining));
    remaining -= micro_batch;
  }
  return sizes;
}

SplitPlan plan_split(const LatencyTable& t, const std::string& signature, int batch,
                     double theta) {
  if (batch < 1) throw std::invalid_argument("plan_split: batch must be >= 1");
  const std::vector<int> profiled = t.batches_for(signature);
  if (profiled.empty()) {
    throw ProfileError("plan_split: no profile rows for signature " + signature);
  }

  double best = std::numeric_limits<double>::infinity();
  for (int b : profiled) best = std::min(best, per_flop(*t.find(signature, b)));

  int micro = 0;
  for (int b : profiled) {
    if (b > batch) break;
    if (per_flop(*t.find(signature, b)) <= theta * best) micro = std::max(micro, b);
  }
  if (micro == 0) micro = batch;  // nothing profiled at or below this batch qualifies

  SplitPlan plan;
  plan.signature = signature;
  plan.batch = batch;
  plan.micro_batch = std::min(micro, batch);
  plan.num_micro = (batch + plan.micro_batch - 1) / plan.micro_batch;
  return plan;
}

QuantTensor accumulate_weight_grads(std::span<const AccumTensor> parts) {
  if (parts.empty()) throw std::invalid_argument("accumulate_weight_grads: no parts");
  const Shape& shape = parts[0].shape;
  const int base_exponent = parts[0].exponent;
  for (const AccumTensor& p : parts) {
    if (p.shape != shape) {
      throw std::invalid_argument("accumulate_weight_grads: part shapes differ");
    }
    if (p.exponent != base_exponent) {
      throw std::invalid_argument("accumulate_weight_grads: part base exponents differ");
    }
  }

  int unified = 0;
  bool uniform = true;
  std::vector<int> shifts(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    shifts[i] = compute_scale_exponent(parts[i]);
    unified = std::max(unified, shifts[i]);
  }
  for (int s : shifts) uniform &= s == unified;

  // Scales agree in most cases; the INT32 partials then add losslessly and a
  // single downscale reproduces the unsplit gradient exactly. Mixed scales
  // pre-shift every part to the unified exponent (one rounding each).
  const int pre_shift = uniform ? 0 : unified;

  const size_t n = parts[0].data.size();
  std::vector<int64_t> acc(n, 0);
  for (const AccumTensor& p : parts) {
    for (size_t i = 0; i < n; ++i) acc[i] += round_shift(p.data[i], pre_shift);
  }

  uint64_t max_mag = 0;
  for (int64_t v : acc) {
    max_mag = std::max(max_mag, static_cast<uint64_t>(v < 0 ? -v : v));
  }
  const int final_shift = scale_shift_for_magnitude(max_mag);

  QuantTensor out;
  out.shape = shape;
  out.exponent = checked_exponent(int64_t{base_exponent} + pre_shift + final_shift);
  out.data.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.data[i] = saturate_int8(round_shift(acc[i], final_shift));
  }
  return out;
}

} // namespace mpt
