#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mpt {

struct MemoryRegion {
  int id = -1;
  int64_t size = 0;
  int owner = -1;             // owning subgraph
  int64_t last_use_step = 0;  // logical time of the owner's last execution
  bool resident = false;
};

struct SubgraphFootprint {
  int id = -1;
  std::vector<int> region_ids;
  int64_t total = 0;
};

struct ReleaseCombo {
  std::vector<int> region_ids;
  int64_t total = 0;
};

// Release combinations precomputed at the preparing stage, ordered by
// (fewest regions, smallest excess) for best-fit lookup. Combinations are
// capped at three regions; the per-footprint classes index the common needs.
class ReleaseCatalog {
public:
  // Throws CapacityError when a single subgraph cannot fit the budget alone.
  static ReleaseCatalog prepare(std::span<const SubgraphFootprint> subgraphs,
                                std::span<const MemoryRegion> regions, int64_t budget);

  // All combinations freeing at least `deficit` bytes, best-fit first.
  std::vector<ReleaseCombo> candidates(int64_t deficit) const;

  const std::map<int64_t, std::vector<ReleaseCombo>>& size_classes() const { return classes_; }

private:
  std::vector<ReleaseCombo> combos_;  // sorted by (count, total)
  std::map<int64_t, std::vector<ReleaseCombo>> classes_;
};

struct ReleaseTraceRow {
  int64_t step = 0;
  int subgraph = -1;
  std::vector<int> released;
  int64_t resident_bytes = 0;
};

// Tracks residency under the byte budget. Releases follow MRU-first order
// over whole recency groups, with best-fit combinations inside the
// most-recent group that covers the remaining deficit.
class MemoryPlanner {
public:
  MemoryPlanner(std::vector<SubgraphFootprint> subgraphs, std::vector<MemoryRegion> regions,
                int64_t budget);

  // Makes the subgraph's regions resident, returning the released region ids.
  // Throws CapacityError when no release set can satisfy the deficit.
  std::vector<int> ensure_resident(int subgraph_id);

  int64_t resident_bytes() const { return resident_bytes_; }
  int64_t budget() const { return budget_; }
  int64_t step() const { return step_; }
  int64_t release_count() const { return release_count_; }
  const std::vector<MemoryRegion>& regions() const { return regions_; }
  const std::vector<ReleaseTraceRow>& trace() const { return trace_; }
  std::string trace_csv() const;

private:
  std::vector<SubgraphFootprint> subgraphs_;
  std::vector<MemoryRegion> regions_;
  ReleaseCatalog catalog_;
  int64_t budget_ = 0;
  int64_t resident_bytes_ = 0;
  int64_t step_ = 0;
  int64_t release_count_ = 0;
  std::vector<ReleaseTraceRow> trace_;
};

// Caches prepared subgraph handles keyed by structure hash. The builder runs
// only on a miss or when the hash changed; its return value is the simulated
// preparation cost.
class ReuseCache {
public:
  struct Entry {
    uint64_t structure_hash = 0;
    double build_cost_ms = 0.0;
  };

  // Returns the preparation cost paid this call (0 on a cache hit).
  double get_or_build(int subgraph_id, uint64_t structure_hash,
                      const std::function<double()>& builder);

  void invalidate(int subgraph_id);
  int build_count() const { return build_count_; }
  bool contains(int subgraph_id) const { return entries_.count(subgraph_id) != 0; }

private:
  std::map<int, Entry> entries_;
  int build_count_ = 0;
};

} // namespace mpt
