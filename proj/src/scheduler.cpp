#include "mpt/scheduler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "mpt/errors.hpp"

namespace mpt {

std::vector<int> topo_order(int node_count, std::span<const std::pair<int, int>> edges) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(node_count));
  std::vector<int> indeg(static_cast<size_t>(node_count), 0);
  for (auto [src, dst] : edges) {
    if (src < 0 || src >= node_count || dst < 0 || dst >= node_count) {
      throw GraphError("topo_order: edge endpoint out of range");
    }
    adj[static_cast<size_t>(src)].push_back(dst);
    ++indeg[static_cast<size_t>(dst)];
  }

  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < node_count; ++i) {
    if (indeg[static_cast<size_t>(i)] == 0) ready.push(i);
  }

  std::vector<int> order;
  order.reserve(static_cast<size_t>(node_count));
  while (!ready.empty()) {
    const int n = ready.top();
    ready.pop();
    order.push_back(n);
    for (int m : adj[static_cast<size_t>(n)]) {
      if (--indeg[static_cast<size_t>(m)] == 0) ready.push(m);
    }
  }
  if (static_cast<int>(order.size()) != node_count) {
    throw GraphError("topo_order: graph contains a cycle");
  }
  return order;
}

std::vector<int> topo_order(const TrainGraph& g) {
  const auto edges = g.edges();
  return topo_order(static_cast<int>(g.nodes.size()), edges);
}

namespace {

double lat(const OpProfile& p, Proc proc) {
  return proc == Proc::CPU ? p.latency_cpu : p.latency_dsp;
}

int count_switches(std::span<const Proc> assignment) {
  int s = 0;
  for (size_t i = 1; i < assignment.size(); ++i) s += assignment[i] != assignment[i - 1];
  return s;
}

double sequential_cost(std::span<const OpProfile> seq, std::span<const Proc> assignment,
                       SwitchCost sw) {
  double total = 0.0;
  for (size_t i = 0; i < seq.size(); ++i) {
    total += lat(seq[i], assignment[i]);
    if (i > 0 && assignment[i] != assignment[i - 1]) total += sw.latency;
  }
  return total;
}

} // namespace

Schedule schedule_dp(std::span<const OpProfile> seq, SwitchCost sw) {
  const size_t n = seq.size();
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();

  for (const OpProfile& p : seq) {
    if (!std::isfinite(p.latency_cpu) && !std::isfinite(p.latency_dsp)) {
      throw ScheduleError("op '" + p.op_id + "' has no finite latency on either processor");
    }
    if (p.latency_cpu < 0 || p.latency_dsp < 0) {
      throw ScheduleError("op '" + p.op_id + "' has a negative latency");
    }
  }

  // T[i][p]: cheapest way to finish ops 0..i with op i on processor p.
  std::vector<std::array<double, 2>> T(n);
  std::vector<std::array<uint8_t, 2>> from(n);  // backtracking: processor of op i-1

  T[0] = {seq[0].latency_cpu, seq[0].latency_dsp};
  for (size_t i = 1; i < n; ++i) {
    for (int p = 0; p < 2; ++p) {
      const double stay = T[i - 1][static_cast<size_t>(p)];
      const double cross = T[i - 1][static_cast<size_t>(1 - p)] + sw.latency;
      const double own = p == 0 ? seq[i].latency_cpu : seq[i].latency_dsp;
      // Tie between staying and crossing keeps the run unbroken.
      if (stay <= cross) {
        T[i][static_cast<size_t>(p)] = stay + own;
        from[i][static_cast<size_t>(p)] = static_cast<uint8_t>(p);
      } else {
        T[i][static_cast<size_t>(p)] = cross + own;
        from[i][static_cast<size_t>(p)] = static_cast<uint8_t>(1 - p);
      }
    }
  }

  Schedule s;
  s.assignment.resize(n);
  // Final tie breaks toward CPU (keeps data on the host).
  Proc cur = T[n - 1][0] <= T[n - 1][1] ? Proc::CPU : Proc::DSP;
  s.total_latency = std::min(T[n - 1][0], T[n - 1][1]);
  if (!std::isfinite(s.total_latency)) {
    throw ScheduleError("no feasible placement (infinite total latency)");
  }
  for (size_t i = n; i-- > 0;) {
    s.assignment[i] = cur;
    if (i > 0) cur = static_cast<Proc>(from[i][static_cast<size_t>(cur)]);
  }
  s.switch_count = count_switches(s.assignment);
  return s;
}

Schedule schedule_bruteforce(std::span<const OpProfile> seq, SwitchCost sw) {
  const size_t n = seq.size();
  if (n == 0) return {};
  if (n > 20) throw ScheduleError("brute force limited to 20 ops");

  Schedule best;
  best.total_latency = std::numeric_limits<double>::infinity();
  std::vector<Proc> assignment(n);
  for (uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool feasible = true;
    for (size_t i = 0; i < n && feasible; ++i) {
      assignment[i] = (mask >> i) & 1 ? Proc::DSP : Proc::CPU;
      feasible = std::isfinite(lat(seq[i], assignment[i]));
    }
    if (!feasible) continue;
    const double cost = sequential_cost(seq, assignment, sw);
    if (cost < best.total_latency) {
      best.total_latency = cost;
      best.assignment = assignment;
    }
  }
  if (!std::isfinite(best.total_latency)) {
    throw ScheduleError("no feasible placement exists");
  }
  best.switch_count = count_switches(best.assignment);
  return best;
}

std::vector<Subgraph> build_subgraphs(const TrainGraph& g, std::span<const int> order,
                                      const Schedule& s) {
  if (order.size() != s.assignment.size()) {
    throw ScheduleError("build_subgraphs: order and assignment length differ");
  }
  std::vector<Subgraph> subgraphs;
  std::vector<int> node_to_sg(g.nodes.size(), -1);
  for (size_t pos = 0; pos < order.size(); ++pos) {
    const Proc p = s.assignment[pos];
    if (subgraphs.empty() || subgraphs.back().proc != p) {
      Subgraph sg;
      sg.id = static_cast<int>(subgraphs.size());
      sg.proc = p;
      subgraphs.push_back(std::move(sg));
    }
    subgraphs.back().seq_positions.push_back(static_cast<int>(pos));
    subgraphs.back().node_ids.push_back(order[pos]);
    node_to_sg[static_cast<size_t>(order[pos])] = subgraphs.back().id;
  }

  for (Subgraph& sg : subgraphs) {
    std::vector<bool> seen(subgraphs.size(), false);
    for (int node : sg.node_ids) {
      for (const PortRef& in : g.nodes[static_cast<size_t>(node)].inputs) {
        const int pred = node_to_sg[static_cast<size_t>(in.node)];
        if (pred >= 0 && pred != sg.id && !seen[static_cast<size_t>(pred)]) {
          seen[static_cast<size_t>(pred)] = true;
          sg.preds.emplace_back(pred, subgraphs[static_cast<size_t>(pred)].proc != sg.proc);
        }
      }
    }
    std::sort(sg.preds.begin(), sg.preds.end());
  }
  return subgraphs;
}

double simulate_makespan(std::span<const Subgraph> subgraphs, std::span<const double> durations,
                         SwitchCost sw) {
  if (durations.size() != subgraphs.size()) {
    throw ScheduleError("simulate_makespan: one duration per subgraph required");
  }
  double resource_free[2] = {0.0, 0.0};
  std::vector<double> finish(subgraphs.size(), 0.0);
  double makespan = 0.0;
  // Subgraph ids ascend along the topological order, so a linear sweep visits
  // every predecessor before its consumers.
  for (size_t i = 0; i < subgraphs.size(); ++i) {
    const Subgraph& sg = subgraphs[i];
    double ready = 0.0;
    for (auto [pred, crossing] : sg.preds) {
      ready = std::max(ready, finish[static_cast<size_t>(pred)] + (crossing ? sw.latency : 0.0));
    }
    const double start = std::max(ready, resource_free[static_cast<size_t>(sg.proc)]);
    finish[i] = start + durations[i];
    resource_free[static_cast<size_t>(sg.proc)] = finish[i];
    makespan = std::max(makespan, finish[i]);
  }
  return makespan;
}

std::vector<OpProfile> parse_profile_csv(const std::string& text) {
  std::vector<OpProfile> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (first && line.rfind("op_id,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string id, cpu, dsp, flops;
    if (!std::getline(ls, id, ',') || !std::getline(ls, cpu, ',') || !std::getline(ls, dsp, ',') ||
        !std::getline(ls, flops)) {
      throw FormatError("profile csv line " + std::to_string(lineno) + ": expected 4 columns");
    }
    OpProfile p;
    p.op_id = id;
    try {
      p.latency_cpu = std::stod(cpu);
      p.latency_dsp = dsp == "inf" ? std::numeric_limits<double>::infinity() : std::stod(dsp);
      p.flops = std::stoll(flops);
    } catch (const std::exception&) {
      throw FormatError("profile csv line " + std::to_string(lineno) + ": bad number");
    }
    if (p.latency_cpu < 0 || p.latency_dsp < 0 || p.flops < 0) {
      throw FormatError("profile csv line " + std::to_string(lineno) + ": negative value");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string profile_csv(std::span<const OpProfile> profiles) {
  std::ostringstream os;
  os << "op_id,latency_cpu_ms,latency_dsp_ms,flops\n";
  for (const OpProfile& p : profiles) {
    os << p.op_id << ',' << p.latency_cpu << ',';
    if (std::isfinite(p.latency_dsp)) {
      os << p.latency_dsp;
    } else {
      os << "inf";
    }
    os << ',' << p.flops << '\n';
  }
  return os.str();
}

std::string schedule_report(std::span<const OpProfile> seq, const Schedule& s, SwitchCost sw) {
  nlohmann::json doc;
  doc["t_model_ms"] = s.total_latency;
  doc["switch_count"] = s.switch_count;
  doc["switch_ms"] = sw.latency;
  doc["assignment"] = nlohmann::json::array();
  for (size_t i = 0; i < seq.size(); ++i) {
    doc["assignment"].push_back({{"op", seq[i].op_id}, {"proc", proc_name(s.assignment[i])}});
  }
  return doc.dump(2);
}

} // namespace mpt
