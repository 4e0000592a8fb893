#include "mpt/memplan.hpp"

#include <algorithm>
#include <sstream>

#include "mpt/errors.hpp"

namespace mpt {

ReleaseCatalog ReleaseCatalog::prepare(std::span<const SubgraphFootprint> subgraphs,
                                       std::span<const MemoryRegion> regions, int64_t budget) {
  if (subgraphs.size() >= 100) {
    throw CapacityError("release catalog: expected fewer than 100 subgraphs");
  }
  for (const SubgraphFootprint& sg : subgraphs) {
    if (sg.total > budget) {
      throw CapacityError("subgraph " + std::to_string(sg.id) + " alone exceeds the budget (" +
                          std::to_string(sg.total) + " > " + std::to_string(budget) + ")");
    }
  }

  ReleaseCatalog cat;
  const size_t n = regions.size();
  // Exhaustive combinations of up to three regions.
  for (size_t i = 0; i < n; ++i) {
    cat.combos_.push_back({{regions[i].id}, regions[i].size});
    for (size_t j = i + 1; j < n; ++j) {
      cat.combos_.push_back({{regions[i].id, regions[j].id}, regions[i].size + regions[j].size});
      for (size_t k = j + 1; k < n; ++k) {
        cat.combos_.push_back({{regions[i].id, regions[j].id, regions[k].id},
                               regions[i].size + regions[j].size + regions[k].size});
      }
    }
  }
  std::sort(cat.combos_.begin(), cat.combos_.end(), [](const ReleaseCombo& a, const ReleaseCombo& b) {
    if (a.region_ids.size() != b.region_ids.size()) {
      return a.region_ids.size() < b.region_ids.size();
    }
    if (a.total != b.total) return a.total < b.total;
    return a.region_ids < b.region_ids;
  });

  // Index the deficits that can actually occur: one class per footprint size.
  for (const SubgraphFootprint& sg : subgraphs) {
    if (sg.total <= 0 || cat.classes_.count(sg.total)) continue;
    std::vector<ReleaseCombo> fitting;
    for (const ReleaseCombo& c : cat.combos_) {
      if (c.total >= sg.total) fitting.push_back(c);
    }
    cat.classes_[sg.total] = std::move(fitting);
  }
  return cat;
}

std::vector<ReleaseCombo> ReleaseCatalog::candidates(int64_t deficit) const {
  std::vector<ReleaseCombo> out;
  for (const ReleaseCombo& c : combos_) {
    if (c.total >= deficit) out.push_back(c);
  }
  return out;
}

MemoryPlanner::MemoryPlanner(std::vector<SubgraphFootprint> subgraphs,
                             std::vector<MemoryRegion> regions, int64_t budget)
    : subgraphs_(std::move(subgraphs)), regions_(std::move(regions)), budget_(budget) {
  catalog_ = ReleaseCatalog::prepare(subgraphs_, regions_, budget_);
  for (size_t i = 0; i < regions_.size(); ++i) {
    if (regions_[i].id != static_cast<int>(i)) {
      throw CapacityError("memory planner: region ids must be dense");
    }
  }
}

std::vector<int> MemoryPlanner::ensure_resident(int subgraph_id) {
  const auto it = std::find_if(subgraphs_.begin(), subgraphs_.end(),
                               [&](const SubgraphFootprint& s) { return s.id == subgraph_id; });
  if (it == subgraphs_.end()) throw CapacityError("unknown subgraph id");
  const SubgraphFootprint& sg = *it;

  int64_t need = 0;
  for (int r : sg.region_ids) {
    if (!regions_[static_cast<size_t>(r)].resident) need += regions_[static_cast<size_t>(r)].size;
  }

  std::vector<int> released;
  int64_t deficit = need - (budget_ - resident_bytes_);
  if (deficit > 0) {
    // Candidates: resident regions not owned by the incoming subgraph,
    // grouped by recency, most recent group first.
    std::map<int64_t, std::vector<int>, std::greater<>> groups;
    for (const MemoryRegion& r : regions_) {
      if (r.resident && r.owner != subgraph_id) groups[r.last_use_step].push_back(r.id);
    }

    for (const auto& [step, group] : groups) {
      if (deficit <= 0) break;
      int64_t group_total = 0;
      for (int r : group) group_total += regions_[static_cast<size_t>(r)].size;

      std::vector<int> chosen;
      if (group_total <= deficit) {
        chosen = group;  // the whole group is needed, release it all
      } else {
        // Best fit inside the recency group: the catalog is ordered by
        // (fewest regions, smallest excess), take the first combination that
        // lies fully in this group.
        for (const ReleaseCombo& combo : catalog_.candidates(deficit)) {
          const bool in_group = std::all_of(
              combo.region_ids.begin(), combo.region_ids.end(), [&](int id) {
                return std::find(group.begin(), group.end(), id) != group.end();
              });
          if (in_group) {
            chosen = combo.region_ids;
            break;
          }
        }
        if (chosen.empty()) {
          // No cataloged combination (more than three regions required):
          // greedily peel the largest regions of the group.
          std::vector<int> sorted = group;
          std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
            return regions_[static_cast<size_t>(a)].size > regions_[static_cast<size_t>(b)].size;
          });
          int64_t freed = 0;
          for (int r : sorted) {
            if (freed >= deficit) break;
            chosen.push_back(r);
            freed += regions_[static_cast<size_t>(r)].size;
          }
        }
      }
      for (int r : chosen) {
        regions_[static_cast<size_t>(r)].resident = false;
        resident_bytes_ -= regions_[static_cast<size_t>(r)].size;
        deficit -= regions_[static_cast<size_t>(r)].size;
        released.push_back(r);
      }
    }
    if (deficit > 0) {
      throw CapacityError("cannot free " + std::to_string(deficit) +
                          " bytes for subgraph " + std::to_string(subgraph_id));
    }
  }

  ++step_;
  for (int r : sg.region_ids) {
    MemoryRegion& region = regions_[static_cast<size_t>(r)];
    if (!region.resident) {
      region.resident = true;
      resident_bytes_ += region.size;
    }
    region.last_use_step = step_;
  }
  release_count_ += static_cast<int64_t>(released.size());
  trace_.push_back({step_, subgraph_id, released, resident_bytes_});
  if (resident_bytes_ > budget_) throw InternalError("memory budget violated");
  return released;
}

std::string MemoryPlanner::trace_csv() const {
  std::ostringstream os;
  os << "step,subgraph,released_ids,resident_bytes\n";
  for (const ReleaseTraceRow& row : trace_) {
    os << row.step << ',' << row.subgraph << ',';
    for (size_t i = 0; i < row.released.size(); ++i) {
      if (i) os << ' ';
      os << row.released[i];
    }
    os << ',' << row.resident_bytes << '\n';
  }
  return os.str();
}

double ReuseCache::get_or_build(int subgraph_id, uint64_t structure_hash,
                                const std::function<double()>& builder) {
  auto it = entries_.find(subgraph_id);
  if (it != entries_.end() && it->second.structure_hash == structure_hash) {
    return 0.0;
  }
  const double cost = builder();
  entries_[subgraph_id] = {structure_hash, cost};
  ++build_count_;
  return cost;
}

void ReuseCache::invalidate(int subgraph_id) { entries_.erase(subgraph_id); }

} // namespace mpt
