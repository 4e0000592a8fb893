#include "mpt/model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mpt/errors.hpp"
#include "mpt/kernels.hpp"

namespace mpt {

using nlohmann::json;

ModelSpec parse_model_spec(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model parse error: ") + e.what());
  }

  ModelSpec spec;
  try {
    spec.name = doc.value("name", "model");
    for (const auto& d : doc.at("input_shape")) spec.input_shape.push_back(d.get<int64_t>());
    spec.num_classes = doc.at("num_classes").get<int>();
    for (const auto& l : doc.at("layers")) {
      LayerSpec layer;
      layer.op = l.at("op").get<std::string>();
      layer.out_channels = l.value("out_channels", 0);
      layer.kernel = l.value("kernel", 0);
      layer.stride = l.value("stride", l.value("window", 0) > 0 ? l.value("window", 1) : 1);
      layer.pad = l.value("pad", 0);
      layer.window = l.value("window", 0);
      layer.units = l.value("units", 0);
      spec.layers.push_back(layer);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  if (spec.input_shape.empty()) throw FormatError("model: empty input_shape");
  if (spec.num_classes < 2) throw FormatError("model: num_classes must be >= 2");
  return spec;
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model_spec(ss.str());
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json doc;
  doc["name"] = spec.name;
  doc["input_shape"] = spec.input_shape;
  doc["num_classes"] = spec.num_classes;
  doc["layers"] = json::array();
  for (const LayerSpec& l : spec.layers) {
    json jl{{"op", l.op}};
    if (l.op == "Conv2D") {
      jl["out_channels"] = l.out_channels;
      jl["kernel"] = l.kernel;
      jl["stride"] = l.stride;
      jl["pad"] = l.pad;
    } else if (l.op == "MaxPool") {
      jl["window"] = l.window;
      jl["stride"] = l.stride;
    } else if (l.op == "Dense") {
      jl["units"] = l.units;
    }
    doc["layers"].push_back(jl);
  }
  return doc.dump(2);
}

Shape layer_weight_shape(const LayerSpec& layer, const Shape& in) {
  if (layer.op == "Conv2D") {
    if (in.size() != 3) throw TranslateError("Conv2D expects a C,H,W input");
    return {layer.out_channels, in[0], layer.kernel, layer.kernel};
  }
  if (layer.op == "Dense") {
    int64_t features = 1;
    for (int64_t d : in) features *= d;
    return {features, layer.units};
  }
  return {};
}

std::vector<Shape> infer_layer_shapes(const ModelSpec& spec) {
  if (spec.layers.empty()) throw TranslateError("model has no layers");
  std::vector<Shape> out;
  Shape cur = spec.input_shape;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + l.op + ")";
    if (l.op == "Conv2D") {
      if (cur.size() != 3) throw TranslateError(where + ": needs a C,H,W input");
      if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) {
        throw TranslateError(where + ": bad hyperparameters");
      }
      const int64_t h = conv_out_dim(cur[1], l.kernel, l.pad, l.stride);
      const int64_t w = conv_out_dim(cur[2], l.kernel, l.pad, l.stride);
      if (h < 1 || w < 1) throw TranslateError(where + ": output collapses to zero size");
      cur = {l.out_channels, h, w};
    } else if (l.op == "MaxPool") {
      if (cur.size() != 3) throw TranslateError(where + ": needs a C,H,W input");
      if (l.window < 1 || l.stride < 1) throw TranslateError(where + ": bad window/stride");
      if (l.window > cur[1] || l.window > cur[2]) {
        throw TranslateError(where + ": window larger than input");
      }
      cur = {cur[0], (cur[1] - l.window) / l.stride + 1, (cur[2] - l.window) / l.stride + 1};
    } else if (l.op == "ReLU") {
      // shape preserved
    } else if (l.op == "Dense") {
      if (l.units < 1) throw TranslateError(where + ": units must be >= 1");
      int64_t features = 1;
      for (int64_t d : cur) features *= d;
      if (features > kMaxReduction) throw TranslateError(where + ": reduction too long");
      cur = {l.units};
    } else {
      throw TranslateError(where + ": unknown layer op");
    }
    out.push_back(cur);
  }
  if (out.back() != Shape{spec.num_classes}) {
    throw TranslateError("final layer must produce num_classes=" +
                         std::to_string(spec.num_classes) + " logits, got " +
                         shape_str(out.back()));
  }
  return out;
}

} // namespace mpt
