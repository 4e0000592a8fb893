#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mpt/graph.hpp"

namespace mpt {

enum class Proc : uint8_t { CPU = 0, DSP = 1 };

inline const char* proc_name(Proc p) { return p == Proc::CPU ? "CPU" : "DSP"; }

// Measured or modelled per-operator latencies. latency_dsp is +inf for ops the
// accelerator cannot run.
struct OpProfile {
  std::string op_id;
  double latency_cpu = 0.0;
  double latency_dsp = std::numeric_limits<double>::infinity();
  int64_t flops = 0;
};

struct SwitchCost {
  double latency = 25.0;  // ms per CPU<->DSP context switch
};

struct Schedule {
  std::vector<Proc> assignment;
  double total_latency = 0.0;  // sequential objective value
  int switch_count = 0;
};

// Deterministic Kahn topological sort over a DAG given as (src, dst) edges;
// ties resolve to the smallest node id. Throws GraphError on cycles.
std::vector<int> topo_order(int node_count, std::span<const std::pair<int, int>> edges);
std::vector<int> topo_order(const TrainGraph& g);

// Optimal placement over one fixed linearization by dynamic programming.
// T[0] starts at the first op's own latency on either processor (no initial
// switch); every processor change afterwards pays the switch latency. Ties
// prefer staying on the same processor, and CPU at the final argmin.
// Throws ScheduleError when an op has no finite latency on any processor.
Schedule schedule_dp(std::span<const OpProfile> seq, SwitchCost sw);

// Exhaustive 2^N oracle over the same sequential cost model. Requires N <= 20.
Schedule schedule_bruteforce(std::span<const OpProfile> seq, SwitchCost sw);

// Maximal same-processor runs of the topological order. Predecessor links are
// collapsed from node-level edges; crossing links pay the switch cost in the
// makespan simulation.
struct Subgraph {
  int id = -1;
  Proc proc = Proc::CPU;
  std::vector<int> seq_positions;            // indices into the linearization
  std::vector<int> node_ids;                 // graph node ids, same order
  std::vector<std::pair<int, bool>> preds;   // (subgraph id, crossing?)
};

std::vector<Subgraph> build_subgraphs(const TrainGraph& g, std::span<const int> order,
                                      const Schedule& s);

// Earliest-start list simulation with two unit-capacity resources. durations
// holds one entry per subgraph. A subgraph starts once every predecessor has
// finished (plus the switch latency on crossing links) and its processor is
// free; returns the completion time of the last subgraph.
double simulate_makespan(std::span<const Subgraph> subgraphs, std::span<const double> durations,
                         SwitchCost sw);

// Profile CSV: op_id,latency_cpu_ms,latency_dsp_ms,flops ("inf" allowed in the
// DSP column). Throws FormatError on malformed rows.
std::vector<OpProfile> parse_profile_csv(const std::string& text);
std::string profile_csv(std::span<const OpProfile> profiles);

// Human/machine-readable placement report (JSON).
std::string schedule_report(std::span<const OpProfile> seq, const Schedule& s, SwitchCost sw);

} // namespace mpt
