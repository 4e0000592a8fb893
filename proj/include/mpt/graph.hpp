#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpt/config.hpp"
#include "mpt/kernels.hpp"
#include "mpt/model.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

enum class Phase : uint8_t { Forward = 0, Backward = 1, Update = 2 };

struct PortRef {
  int node = -1;
  int port = 0;
  bool operator==(const PortRef&) const = default;
};

// One mixed-precision operator instance. Nodes are stored in a topological
// order by construction (an input's id is always smaller than the consumer's).
struct GraphNode {
  int id = -1;
  std::string op;
  Phase phase = Phase::Forward;
  int layer = -1;            // source-model layer, -1 for input/loss plumbing
  bool dsp_supported = true;
  bool splittable = false;   // batch dimension can be partitioned
  ConvParams conv;
  PoolParams pool;
  int weight_id = -1;        // weight operand, when the op touches one
  int site_id = -1;          // rescale site owned by ReduceMaxScale nodes
  int aux_h = 0, aux_w = 0;  // original input spatial size for deconv
  std::vector<PortRef> inputs;

  // Cost/size metadata derived at translation time.
  std::string cost_signature;
  int64_t flops = 0;         // per sample when batch_scaled, absolute otherwise
  int64_t out_elems = 0;     // port-0 element count (per sample when batch_scaled)
  uint8_t out_bytes_per_elem = 1;
  bool batch_scaled = true;

  bool operator==(const GraphNode&) const;
};

struct WeightInfo {
  int id = -1;
  int layer = -1;
  Shape shape;
  std::string initializer;
  bool operator==(const WeightInfo&) const = default;
};

enum class SiteKind : uint8_t { Activation = 0, Error = 1, WeightGrad = 2 };

// One dynamic scale-factor site; every layer with trainable weights owns one
// per activation, error, and weight-gradient exponent.
struct RescaleSite {
  int id = -1;
  int layer = -1;
  SiteKind kind = SiteKind::Activation;
  bool operator==(const RescaleSite&) const = default;
};

// The gradient-producing chain of one weight: core kernel, its rescale pair,
// and the update node. Exactly one chain exists per trainable weight.
struct WeightGradChain {
  int weight_id = -1;
  int core_node = -1;
  int rms_node = -1;
  int shift_node = -1;
  int update_node = -1;
  bool operator==(const WeightGradChain&) const = default;
};

struct TrainGraph {
  Shape input_shape;  // per-sample
  int num_classes = 0;
  std::vector<GraphNode> nodes;  // nodes[i].id == i
  std::vector<WeightInfo> weights;
  std::vector<RescaleSite> sites;
  std::vector<WeightGradChain> wgrad_chains;
  int input_node = -1;
  int loss_node = -1;

  std::vector<std::pair<int, int>> edges() const;  // (producer, consumer)
  bool operator==(const TrainGraph&) const;
};

// Expands the model into the mixed-precision forward, backward, and update
// operator graph prescribed by the training config. Throws TranslateError for
// empty models, missing translation/backprop entries, or malformed chains.
TrainGraph translate(const ModelSpec& model, const TrainingConfig& cfg);

// Tagged binary container: magic "MPIM", version u16, then length-prefixed
// node records. Round-trips the full structure and metadata.
std::vector<uint8_t> serialize_intermediate(const TrainGraph& g);
TrainGraph load_intermediate(std::span<const uint8_t> bytes);

} // namespace mpt
