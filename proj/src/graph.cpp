#include "mpt/graph.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "mpt/errors.hpp"
#include "mpt/registry.hpp"

namespace mpt {

bool GraphNode::operator==(const GraphNode& o) const {
  return id == o.id && op == o.op && phase == o.phase && layer == o.layer &&
         dsp_supported == o.dsp_supported && splittable == o.splittable &&
         conv.stride_h == o.conv.stride_h && conv.stride_w == o.conv.stride_w &&
         conv.pad_h == o.conv.pad_h && conv.pad_w == o.conv.pad_w &&
         pool.window_h == o.pool.window_h && pool.window_w == o.pool.window_w &&
         pool.stride_h == o.pool.stride_h && pool.stride_w == o.pool.stride_w &&
         weight_id == o.weight_id && site_id == o.site_id && aux_h == o.aux_h &&
         aux_w == o.aux_w && inputs == o.inputs && cost_signature == o.cost_signature &&
         flops == o.flops && out_elems == o.out_elems &&
         out_bytes_per_elem == o.out_bytes_per_elem && batch_scaled == o.batch_scaled;
}

bool TrainGraph::operator==(const TrainGraph& o) const {
  return input_shape == o.input_shape && num_classes == o.num_classes && nodes == o.nodes &&
         weights == o.weights && sites == o.sites && wgrad_chains == o.wgrad_chains &&
         input_node == o.input_node && loss_node == o.loss_node;
}

std::vector<std::pair<int, int>> TrainGraph::edges() const {
  std::vector<std::pair<int, int>> e;
  for (const GraphNode& n : nodes) {
    for (const PortRef& in : n.inputs) e.emplace_back(in.node, n.id);
  }
  return e;
}

namespace {

int64_t elems(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string sig_hw(int64_t h, int64_t w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

class Builder {
public:
  Builder(const ModelSpec& model, const TrainingConfig& cfg) : model_(model), cfg_(cfg) {}

  TrainGraph run() {
    shapes_ = infer_layer_shapes(model_);
    g_.input_shape = model_.input_shape;
    g_.num_classes = model_.num_classes;

    build_forward();
    build_loss();
    build_backward();
    return std::move(g_);
  }

private:
  GraphNode& add(const std::string& op, Phase phase, int layer, std::vector<PortRef> inputs) {
    const OpInfo* info = find_op(op);
    if (!info) throw TranslateError("unknown op in config chain: " + op);
    GraphNode n;
    n.id = static_cast<int>(g_.nodes.size());
    n.op = op;
    n.phase = phase;
    n.layer = layer;
    n.dsp_supported = info->dsp_supported;
    n.splittable = info->batch_splittable;
    n.inputs = std::move(inputs);
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back();
  }

  int add_site(int layer, SiteKind kind) {
    const int id = static_cast<int>(g_.sites.size());
    g_.sites.push_back({id, layer, kind});
    return id;
  }

  int add_weight(int layer, Shape shape) {
    const int id = static_cast<int>(g_.weights.size());
    g_.weights.push_back({id, layer, std::move(shape), cfg_.weight.initializer});
    return id;
  }

  const std::vector<std::string>& translation_for(const LayerSpec& layer) {
    auto it = cfg_.translation.find(layer.op);
    if (it == cfg_.translation.end()) {
      throw TranslateError("no translation rule for layer op " + layer.op);
    }
    return it->second;
  }

  const BackpropRule& backprop_for(const LayerSpec& layer) {
    auto it = cfg_.backprop.find(layer.op);
    if (it == cfg_.backprop.end()) {
      throw TranslateError("no backprop rule for layer op " + layer.op);
    }
    return it->second;
  }

  // Appends the ReduceMaxScale/Shift tail of a chain over an INT32 producer.
  // Returns the Shift node id (the INT8 result).
  int add_rescale_tail(std::span<const std::string> tail, int acc, int layer, SiteKind kind,
                       int64_t acc_elems, bool batch_scaled) {
    int rms = -1, shift = -1;
    for (const std::string& op : tail) {
      if (op == "ReduceMaxScale") {
        GraphNode& n = add(op, kind == SiteKind::Activation ? Phase::Forward : Phase::Backward,
                           layer, {{acc, 0}});
        n.site_id = add_site(layer, kind);
        n.cost_signature = "ReduceMaxScale|n=" + std::to_string(acc_elems);
        n.flops = acc_elems;
        n.out_elems = 1;
        n.out_bytes_per_elem = 4;
        n.batch_scaled = batch_scaled;
        rms = n.id;
      } else if (op == "Shift") {
        if (rms < 0) throw TranslateError("Shift without a preceding ReduceMaxScale");
        GraphNode& n = add(op, kind == SiteKind::Activation ? Phase::Forward : Phase::Backward,
                           layer, {{acc, 0}, {rms, 0}});
        n.cost_signature = "Shift|n=" + std::to_string(acc_elems);
        n.flops = acc_elems;
        n.out_elems = acc_elems;
        n.out_bytes_per_elem = 1;
        n.batch_scaled = batch_scaled;
        shift = n.id;
      } else {
        throw TranslateError("unsupported op '" + op + "' in rescale tail");
      }
    }
    if (shift < 0) throw TranslateError("chain must end with ReduceMaxScale+Shift");
    last_rms_ = rms;
    return shift;
  }

  void build_forward() {
    GraphNode& input = add("Input", Phase::Forward, -1, {});
    input.cost_signature = "Input";
    input.out_elems = elems(model_.input_shape);
    input.out_bytes_per_elem = 4;
    g_.input_node = input.id;

    GraphNode& q = add("Quantize", Phase::Forward, -1, {{input.id, 0}});
    q.cost_signature = "Quantize|n=" + std::to_string(elems(model_.input_shape));
    q.flops = elems(model_.input_shape);
    q.out_elems = elems(model_.input_shape);
    carried_ = q.id;

    Shape cur = model_.input_shape;
    for (size_t l = 0; l < model_.layers.size(); ++l) {
      const LayerSpec& layer = model_.layers[l];
      const auto& ops = translation_for(layer);
      const Shape& out = shapes_[l];
      layer_in_shape_.push_back(cur);
      layer_in_node_.push_back(carried_);

      if (layer.op == "Conv2D") {
        if (ops[0] != "Int8Conv") throw TranslateError("Conv2D translation must start with Int8Conv");
        const int w = add_weight(static_cast<int>(l), {layer.out_channels, cur[0], layer.kernel,
                                                       layer.kernel});
        GraphNode& conv = add("Int8Conv", Phase::Forward, static_cast<int>(l), {{carried_, 0}});
        conv.weight_id = w;
        conv.conv = {layer.stride, layer.stride, layer.pad, layer.pad};
        conv.cost_signature = conv_signature("Int8Conv", cur, layer);
        conv.flops = 2 * cur[0] * layer.kernel * layer.kernel * elems(out);
        conv.out_elems = elems(out);
        conv.out_bytes_per_elem = 4;
        carried_ = add_rescale_tail(std::span(ops).subspan(1), conv.id, static_cast<int>(l),
                                    SiteKind::Activation, elems(out), true);
        fwd_weight_node_.push_back(conv.id);
      } else if (layer.op == "Dense") {
        if (ops[0] != "Int8MatMul") throw TranslateError("Dense translation must start with Int8MatMul");
        const int64_t features = elems(cur);
        const int w = add_weight(static_cast<int>(l), {features, layer.units});
        GraphNode& mm = add("Int8MatMul", Phase::Forward, static_cast<int>(l), {{carried_, 0}});
        mm.weight_id = w;
        mm.cost_signature = matmul_signature(features, layer.units);
        mm.flops = 2 * features * layer.units;
        mm.out_elems = layer.units;
        mm.out_bytes_per_elem = 4;
        carried_ = add_rescale_tail(std::span(ops).subspan(1), mm.id, static_cast<int>(l),
                                    SiteKind::Activation, layer.units, true);
        fwd_weight_node_.push_back(mm.id);
      } else if (layer.op == "MaxPool") {
        if (ops.size() != 1 || ops[0] != "Int8MaxPool") {
          throw TranslateError("MaxPool translation must be [Int8MaxPool]");
        }
        GraphNode& n = add("Int8MaxPool", Phase::Forward, static_cast<int>(l), {{carried_, 0}});
        n.pool = {layer.window, layer.window, layer.stride, layer.stride};
        n.cost_signature = "Int8MaxPool|hw=" + sig_hw(cur[1], cur[2]) + "|c=" +
                           std::to_string(cur[0]) + "|w=" + std::to_string(layer.window);
        n.flops = elems(out) * layer.window * layer.window;
        n.out_elems = elems(out);
        carried_ = n.id;
        fwd_weight_node_.push_back(n.id);
      } else if (layer.op == "ReLU") {
        if (ops.size() != 1 || ops[0] != "Int8ReLU") {
          throw TranslateError("ReLU translation must be [Int8ReLU]");
        }
        GraphNode& n = add("Int8ReLU", Phase::Forward, static_cast<int>(l), {{carried_, 0}});
        n.cost_signature = "Int8ReLU|n=" + std::to_string(elems(out));
        n.flops = elems(out);
        n.out_elems = elems(out);
        carried_ = n.id;
        fwd_weight_node_.push_back(n.id);
      } else {
        throw TranslateError("unknown layer op " + layer.op);
      }
      fwd_out_node_.push_back(carried_);
      cur = out;
    }
  }

  void build_loss() {
    GraphNode& loss = add("SoftmaxXentLoss", Phase::Backward, -1, {{carried_, 0}});
    loss.cost_signature = "SoftmaxXentLoss|c=" + std::to_string(model_.num_classes);
    loss.flops = 4 * model_.num_classes;
    loss.out_elems = model_.num_classes;  // error tensor on port 1
    g_.loss_node = loss.id;
    error_ = {loss.id, 1};
  }

  void build_backward() {
    for (int l = static_cast<int>(model_.layers.size()) - 1; l >= 0; --l) {
      const LayerSpec& layer = model_.layers[static_cast<size_t>(l)];
      const BackpropRule& rule = backprop_for(layer);
      const Shape& in_shape = layer_in_shape_[static_cast<size_t>(l)];
      const Shape& out_shape = shapes_[static_cast<size_t>(l)];

      if (layer.op == "Conv2D") {
        build_conv_weight_grad(l, layer, rule, in_shape, out_shape);
        build_conv_error_grad(l, layer, rule, in_shape, out_shape);
      } else if (layer.op == "Dense") {
        build_dense_weight_grad(l, layer, rule, in_shape);
        build_dense_error_grad(l, layer, rule, in_shape);
      } else if (layer.op == "MaxPool") {
        if (rule.error_grad != std::vector<std::string>{"Int8MaxPoolBwd"}) {
          throw TranslateError("MaxPool backprop must be [Int8MaxPoolBwd]");
        }
        const int fwd = fwd_weight_node_[static_cast<size_t>(l)];
        GraphNode& n = add("Int8MaxPoolBwd", Phase::Backward, l,
                           {error_, {fwd, 1}, {layer_in_node_[static_cast<size_t>(l)], 0}});
        n.pool = g_.nodes[static_cast<size_t>(fwd)].pool;
        n.cost_signature = "Int8MaxPoolBwd|hw=" + sig_hw(in_shape[1], in_shape[2]) + "|c=" +
                           std::to_string(in_shape[0]);
        n.flops = elems(in_shape);
        n.out_elems = elems(in_shape);
        error_ = {n.id, 0};
      } else if (layer.op == "ReLU") {
        if (rule.error_grad != std::vector<std::string>{"Int8ReLUBwd"}) {
          throw TranslateError("ReLU backprop must be [Int8ReLUBwd]");
        }
        const int fwd = fwd_weight_node_[static_cast<size_t>(l)];
        GraphNode& n = add("Int8ReLUBwd", Phase::Backward, l, {error_, {fwd, 1}});
        n.cost_signature = "Int8ReLUBwd|n=" + std::to_string(elems(in_shape));
        n.flops = elems(in_shape);
        n.out_elems = elems(in_shape);
        error_ = {n.id, 0};
      }
    }
  }

  void build_conv_weight_grad(int l, const LayerSpec& layer, const BackpropRule& rule,
                              const Shape& in_shape, const Shape& out_shape) {
    if (rule.weight_grad.empty() || rule.weight_grad[0] != "Int8ConvBackpropFilter") {
      throw TranslateError("Conv2D weight_grad must start with Int8ConvBackpropFilter");
    }
    const int w = weight_of_layer(l);
    GraphNode& core = add("Int8ConvBackpropFilter", Phase::Backward, l,
                          {{layer_in_node_[static_cast<size_t>(l)], 0}, error_});
    core.weight_id = w;
    core.conv = {layer.stride, layer.stride, layer.pad, layer.pad};
    core.cost_signature = conv_signature("Int8ConvBackpropFilter", in_shape, layer);
    core.flops = 2 * in_shape[0] * layer.kernel * layer.kernel * elems(out_shape);
    core.out_elems = elems(g_.weights[static_cast<size_t>(w)].shape);
    core.out_bytes_per_elem = 4;
    const int shift = add_rescale_tail(std::span(rule.weight_grad).subspan(1), core.id, l,
                                       SiteKind::WeightGrad, core.out_elems,
                                       /*batch_scaled=*/false);
    const int update = add_update(l, w, shift);
    g_.wgrad_chains.push_back({w, core.id, last_rms_, shift, update});
  }

  void build_conv_error_grad(int l, const LayerSpec& layer, const BackpropRule& rule,
                             const Shape& in_shape, const Shape& out_shape) {
    if (rule.error_grad.empty()) return;
    const int w = weight_of_layer(l);
    size_t i = 0;
    PortRef weight_src{-1, 0};
    bool rotated = false;
    if (rule.error_grad[i] == "WeightRotate") {
      GraphNode& rot = add("WeightRotate", Phase::Backward, l, {});
      rot.weight_id = w;
      rot.cost_signature =
          "WeightRotate|n=" + std::to_string(elems(g_.weights[static_cast<size_t>(w)].shape));
      rot.flops = elems(g_.weights[static_cast<size_t>(w)].shape);
      rot.out_elems = rot.flops;
      rot.batch_scaled = false;
      weight_src = {rot.id, 0};
      rotated = true;
      ++i;
    }
    if (i >= rule.error_grad.size() || rule.error_grad[i] != "Int8Deconv") {
      throw TranslateError("Conv2D error_grad must contain Int8Deconv");
    }
    GraphNode& dec = add("Int8Deconv", Phase::Backward, l,
                         rotated ? std::vector<PortRef>{error_, weight_src}
                                 : std::vector<PortRef>{error_});
    if (!rotated) dec.weight_id = w;
    dec.conv = {layer.stride, layer.stride, layer.pad, layer.pad};
    dec.aux_h = static_cast<int>(in_shape[1]);
    dec.aux_w = static_cast<int>(in_shape[2]);
    dec.cost_signature = conv_signature("Int8Deconv", in_shape, layer);
    dec.flops = 2 * in_shape[0] * layer.kernel * layer.kernel * elems(out_shape);
    dec.out_elems = elems(in_shape);
    dec.out_bytes_per_elem = 4;
    const int shift = add_rescale_tail(std::span(rule.error_grad).subspan(i + 1), dec.id, l,
                                       SiteKind::Error, elems(in_shape), true);
    error_ = {shift, 0};
  }

  void build_dense_weight_grad(int l, const LayerSpec& layer, const BackpropRule& rule,
                               const Shape& in_shape) {
    if (rule.weight_grad.size() < 2 || rule.weight_grad[0] != "Transpose" ||
        rule.weight_grad[1] != "Int8MatMul") {
      throw TranslateError("Dense weight_grad must start with Transpose,Int8MatMul");
    }
    const int w = weight_of_layer(l);
    const int64_t features = elems(in_shape);

    GraphNode& tx = add("Transpose", Phase::Backward, l,
                        {{layer_in_node_[static_cast<size_t>(l)], 0}});
    tx.cost_signature = "Transpose|n=" + std::to_string(features);
    tx.flops = features;
    tx.out_elems = features;

    GraphNode& core = add("Int8MatMul", Phase::Backward, l, {{tx.id, 0}, error_});
    core.weight_id = w;
    core.cost_signature = matmul_signature(features, layer.units);
    core.flops = 2 * features * layer.units;
    core.out_elems = features * layer.units;
    core.out_bytes_per_elem = 4;
    core.batch_scaled = false;  // output is weight-shaped
    const int shift = add_rescale_tail(std::span(rule.weight_grad).subspan(2), core.id, l,
                                       SiteKind::WeightGrad, core.out_elems,
                                       /*batch_scaled=*/false);
    const int update = add_update(l, w, shift);
    g_.wgrad_chains.push_back({w, core.id, last_rms_, shift, update});
  }

  void build_dense_error_grad(int l, const LayerSpec& layer, const BackpropRule& rule,
                              const Shape& in_shape) {
    if (rule.error_grad.size() < 2 || rule.error_grad[0] != "Transpose" ||
        rule.error_grad[1] != "Int8MatMul") {
      throw TranslateError("Dense error_grad must start with Transpose,Int8MatMul");
    }
    const int w = weight_of_layer(l);
    const int64_t features = elems(in_shape);

    GraphNode& tw = add("Transpose", Phase::Backward, l, {});
    tw.weight_id = w;
    tw.cost_signature = "Transpose|n=" + std::to_string(features * layer.units);
    tw.flops = features * layer.units;
    tw.out_elems = features * layer.units;
    tw.batch_scaled = false;

    GraphNode& mm = add("Int8MatMul", Phase::Backward, l, {error_, {tw.id, 0}});
    mm.cost_signature = matmul_signature(layer.units, features);
    mm.flops = 2 * features * layer.units;
    mm.out_elems = features;
    mm.out_bytes_per_elem = 4;
    const int shift = add_rescale_tail(std::span(rule.error_grad).subspan(2), mm.id, l,
                                       SiteKind::Error, features, true);
    error_ = {shift, 0};
  }

  int add_update(int l, int weight_id, int grad_node) {
    const std::string op =
        cfg_.weight.update == DataKind::Int8 ? "WeightUpdateInt8" : "WeightUpdateFp32";
    GraphNode& n = add(op, Phase::Update, l, {{grad_node, 0}});
    n.weight_id = weight_id;
    const int64_t w_elems = elems(g_.weights[static_cast<size_t>(weight_id)].shape);
    n.cost_signature = op + "|n=" + std::to_string(w_elems);
    n.flops = w_elems;
    n.out_elems = w_elems;
    n.batch_scaled = false;
    return n.id;
  }

  int weight_of_layer(int l) const {
    for (const WeightInfo& w : g_.weights) {
      if (w.layer == l) return w.id;
    }
    throw InternalError("layer has no registered weight");
  }

  std::string conv_signature(const char* op, const Shape& in, const LayerSpec& layer) const {
    return std::string(op) + "|hw=" + sig_hw(in[1], in[2]) + "|cin=" + std::to_string(in[0]) +
           "|cout=" + std::to_string(layer.out_channels) + "|k=" + std::to_string(layer.kernel) +
           "|s=" + std::to_string(layer.stride);
  }

  static std::string matmul_signature(int64_t k, int64_t n) {
    return "Int8MatMul|k=" + std::to_string(k) + "|n=" + std::to_string(n);
  }

  const ModelSpec& model_;
  const TrainingConfig& cfg_;
  TrainGraph g_;
  std::vector<Shape> shapes_;
  std::vector<Shape> layer_in_shape_;
  std::vector<int> layer_in_node_;
  std::vector<int> fwd_weight_node_;  // per layer: main fwd node (conv/matmul/pool/relu)
  std::vector<int> fwd_out_node_;
  int carried_ = -1;
  PortRef error_;
  int last_rms_ = -1;
};

} // namespace

TrainGraph translate(const ModelSpec& model, const TrainingConfig& cfg) {
  if (model.layers.empty()) throw TranslateError("cannot translate an empty model");
  return Builder(model, cfg).run();
}

// --- intermediate model container -------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'P', 'I', 'M'};
constexpr uint16_t kVersion = 1;

class Writer {
public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v));
    buf_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void i64(int64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i)));
  }
  void str(const std::string& s) {
    u16(static_cast<uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void shape(const Shape& s) {
    u16(static_cast<uint16_t>(s.size()));
    for (int64_t d : s) i64(d);
  }
  std::vector<uint8_t> take() { return std::move(buf_); }

private:
  std::vector<uint8_t> buf_;
};

class Reader {
public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    auto p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    auto p = take(4);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  int64_t i64() {
    auto p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return static_cast<int64_t>(v);
  }
  std::string str() {
    const uint16_t n = u16();
    auto p = take(n);
    return std::string(reinterpret_cast<const char*>(p.data()), n);
  }
  Shape shape() {
    const uint16_t n = u16();
    Shape s(n);
    for (uint16_t i = 0; i < n; ++i) s[i] = i64();
    return s;
  }
  size_t remaining() const { return b_.size() - pos_; }

private:
  std::span<const uint8_t> take(size_t n) {
    if (pos_ + n > b_.size()) throw FormatError("intermediate model truncated");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

} // namespace

std::vector<uint8_t> serialize_intermediate(const TrainGraph& g) {
  Writer w;
  w.u8(kMagic[0]);
  w.u8(kMagic[1]);
  w.u8(kMagic[2]);
  w.u8(kMagic[3]);
  w.u16(kVersion);
  w.shape(g.input_shape);
  w.i32(g.num_classes);
  w.i32(g.input_node);
  w.i32(g.loss_node);

  w.u32(static_cast<uint32_t>(g.weights.size()));
  for (const WeightInfo& wi : g.weights) {
    w.i32(wi.id);
    w.i32(wi.layer);
    w.shape(wi.shape);
    w.str(wi.initializer);
  }
  w.u32(static_cast<uint32_t>(g.sites.size()));
  for (const RescaleSite& s : g.sites) {
    w.i32(s.id);
    w.i32(s.layer);
    w.u8(static_cast<uint8_t>(s.kind));
  }
  w.u32(static_cast<uint32_t>(g.wgrad_chains.size()));
  for (const WeightGradChain& c : g.wgrad_chains) {
    w.i32(c.weight_id);
    w.i32(c.core_node);
    w.i32(c.rms_node);
    w.i32(c.shift_node);
    w.i32(c.update_node);
  }

  w.u32(static_cast<uint32_t>(g.nodes.size()));
  for (const GraphNode& n : g.nodes) {
    Writer rec;
    rec.i32(n.id);
    rec.str(n.op);
    rec.u8(static_cast<uint8_t>(n.phase));
    rec.i32(n.layer);
    rec.u8(n.dsp_supported ? 1 : 0);
    rec.u8(n.splittable ? 1 : 0);
    rec.i32(n.conv.stride_h);
    rec.i32(n.conv.stride_w);
    rec.i32(n.conv.pad_h);
    rec.i32(n.conv.pad_w);
    rec.i32(n.pool.window_h);
    rec.i32(n.pool.window_w);
    rec.i32(n.pool.stride_h);
    rec.i32(n.pool.stride_w);
    rec.i32(n.weight_id);
    rec.i32(n.site_id);
    rec.i32(n.aux_h);
    rec.i32(n.aux_w);
    rec.u16(static_cast<uint16_t>(n.inputs.size()));
    for (const PortRef& p : n.inputs) {
      rec.i32(p.node);
      rec.u16(static_cast<uint16_t>(p.port));
    }
    rec.str(n.cost_signature);
    rec.i64(n.flops);
    rec.i64(n.out_elems);
    rec.u8(n.out_bytes_per_elem);
    rec.u8(n.batch_scaled ? 1 : 0);

    const std::vector<uint8_t> bytes = rec.take();
    w.u32(static_cast<uint32_t>(bytes.size()));
    for (uint8_t b : bytes) w.u8(b);
  }
  return w.take();
}

TrainGraph load_intermediate(std::span<const uint8_t> bytes) {
  if (bytes.size() < 6) throw FormatError("intermediate model: payload too small");
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("intermediate model: bad magic");
  const uint16_t version = r.u16();
  if (version != kVersion) {
    throw FormatError("intermediate model: unsupported version " + std::to_string(version));
  }

  TrainGraph g;
  g.input_shape = r.shape();
  g.num_classes = r.i32();
  g.input_node = r.i32();
  g.loss_node = r.i32();

  const uint32_t n_weights = r.u32();
  for (uint32_t i = 0; i < n_weights; ++i) {
    WeightInfo wi;
    wi.id = r.i32();
    wi.layer = r.i32();
    wi.shape = r.shape();
    wi.initializer = r.str();
    g.weights.push_back(std::move(wi));
  }
  const uint32_t n_sites = r.u32();
  for (uint32_t i = 0; i < n_sites; ++i) {
    RescaleSite s;
    s.id = r.i32();
    s.layer = r.i32();
    s.kind = static_cast<SiteKind>(r.u8());
    g.sites.push_back(s);
  }
  const uint32_t n_chains = r.u32();
  for (uint32_t i = 0; i < n_chains; ++i) {
    WeightGradChain c;
    c.weight_id = r.i32();
    c.core_node = r.i32();
    c.rms_node = r.i32();
    c.shift_node = r.i32();
    c.update_node = r.i32();
    g.wgrad_chains.push_back(c);
  }

  const uint32_t n_nodes = r.u32();
  for (uint32_t i = 0; i < n_nodes; ++i) {
    const uint32_t len = r.u32();
    if (len > r.remaining()) throw FormatError("intermediate model: node record truncated");
    GraphNode n;
    n.id = r.i32();
    n.op = r.str();
    n.phase = static_cast<Phase>(r.u8());
    n.layer = r.i32();
    n.dsp_supported = r.u8() != 0;
    n.splittable = r.u8() != 0;
    n.conv.stride_h = r.i32();
    n.conv.stride_w = r.i32();
    n.conv.pad_h = r.i32();
    n.conv.pad_w = r.i32();
    n.pool.window_h = r.i32();
    n.pool.window_w = r.i32();
    n.pool.stride_h = r.i32();
    n.pool.stride_w = r.i32();
    n.weight_id = r.i32();
    n.site_id = r.i32();
    n.aux_h = r.i32();
    n.aux_w = r.i32();
    const uint16_t n_inputs = r.u16();
    for (uint16_t j = 0; j < n_inputs; ++j) {
      PortRef p;
      p.node = r.i32();
      p.port = r.u16();
      n.inputs.push_back(p);
    }
    n.cost_signature = r.str();
    n.flops = r.i64();
    n.out_elems = r.i64();
    n.out_bytes_per_elem = r.u8();
    n.batch_scaled = r.u8() != 0;
    if (n.id != static_cast<int>(i)) throw FormatError("intermediate model: node ids not dense");
    g.nodes.push_back(std::move(n));
  }

  for (const GraphNode& n : g.nodes) {
    for (const PortRef& p : n.inputs) {
      if (p.node < 0 || p.node >= n.id) {
        throw FormatError("intermediate model: edge breaks topological id order");
      }
    }
  }
  return g;
}

} // namespace mpt
