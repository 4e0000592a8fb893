#pragma once

#include <string>
#include <vector>

#include "mpt/tensor.hpp"

namespace mpt {

// One layer of the FP32 source model: operator type plus hyperparameters.
// Weight shapes are derived during shape inference.
struct LayerSpec {
  std::string op;        // Conv2D | Dense | MaxPool | ReLU
  int out_channels = 0;  // Conv2D
  int kernel = 0;        // Conv2D
  int stride = 1;        // Conv2D / MaxPool
  int pad = 0;           // Conv2D
  int window = 0;        // MaxPool
  int units = 0;         // Dense
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // per-sample, [C,H,W] or [features]
  int num_classes = 0;
  std::vector<LayerSpec> layers;
};

ModelSpec parse_model_spec(const std::string& text);
ModelSpec load_model_spec(const std::string& path);
std::string model_spec_to_json(const ModelSpec& spec);

// Per-layer output shapes (sample-level, no batch dimension). Throws
// TranslateError when consecutive shapes do not compose or the final layer
// does not produce num_classes logits.
std::vector<Shape> infer_layer_shapes(const ModelSpec& spec);

// Weight shape of a layer given its input shape; empty for weightless layers.
Shape layer_weight_shape(const LayerSpec& layer, const Shape& in);

} // namespace mpt
