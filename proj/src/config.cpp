#include "mpt/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mpt/errors.hpp"
#include "mpt/registry.hpp"

namespace mpt {

using nlohmann::json;

std::string to_string(DataKind k) { return k == DataKind::Int8 ? "INT8" : "FP32"; }

namespace {

DataKind parse_kind(const json& v, const std::string& where) {
  const std::string s = v.get<std::string>();
  if (s == "INT8") return DataKind::Int8;
  if (s == "FP32") return DataKind::Fp32;
  throw ConfigError(where + ": unknown data kind '" + s + "' (expected INT8 or FP32)");
}

const json& member(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + ": missing section '" + key + "'");
  return *it;
}

std::vector<std::string> op_list(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a non-empty op list");
  std::vector<std::string> ops;
  for (const auto& e : v) {
    const std::string name = e.get<std::string>();
    if (!find_op(name)) throw ConfigError(where + ": unknown op name '" + name + "'");
    ops.push_back(name);
  }
  return ops;
}

} // namespace

TrainingConfig parse_training_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be an object");

  TrainingConfig cfg;
  try {
    cfg.version = member(doc, "version", "config").get<int>();
    if (cfg.version != 1) {
      throw ConfigError("config: unsupported schema version " + std::to_string(cfg.version));
    }
    cfg.name = doc.value("name", "unnamed");

    const json& tr = member(doc, "translation", "config");
    if (!tr.is_object() || tr.empty()) throw ConfigError("translation: map must be non-empty");
    for (auto it = tr.begin(); it != tr.end(); ++it) {
      cfg.translation[it.key()] = op_list(it.value(), "translation." + it.key());
    }

    const json& bp = member(doc, "backprop", "config");
    for (auto it = bp.begin(); it != bp.end(); ++it) {
      BackpropRule rule;
      const json& v = it.value();
      if (v.contains("error_grad")) {
        rule.error_grad = op_list(v["error_grad"], "backprop." + it.key() + ".error_grad");
      }
      if (v.contains("weight_grad")) {
        rule.weight_grad = op_list(v["weight_grad"], "backprop." + it.key() + ".weight_grad");
      }
      if (rule.error_grad.empty() && rule.weight_grad.empty()) {
        throw ConfigError("backprop." + it.key() + ": no gradient chains given");
      }
      cfg.backprop[it.key()] = std::move(rule);
    }

    const json& w = member(doc, "weight", "config");
    cfg.weight.initializer = member(w, "initializer", "weight").get<std::string>();
    cfg.weight.type = parse_kind(member(w, "type", "weight"), "weight.type");
    cfg.weight.update = parse_kind(member(w, "update", "weight"), "weight.update");
    if (cfg.weight.update == DataKind::Int8 && cfg.weight.type != DataKind::Int8) {
      throw ConfigError("weight: INT8 update requires INT8 weight type");
    }
    if (cfg.weight.initializer != "xavier_normal" && cfg.weight.initializer != "zeros") {
      throw ConfigError("weight.initializer: unknown initializer '" + cfg.weight.initializer + "'");
    }

    const json& opt = member(doc, "optimizer", "config");
    cfg.optimizer.loss = member(opt, "loss", "optimizer").get<std::string>();
    if (cfg.optimizer.loss != "cross_entropy") {
      throw ConfigError("optimizer.loss: only cross_entropy is available");
    }
    cfg.optimizer.optimizer = member(opt, "optimizer", "optimizer").get<std::string>();
    if (cfg.optimizer.optimizer != "sgd") {
      throw ConfigError("optimizer.optimizer: only sgd is available");
    }
    if (cfg.weight.update == DataKind::Int8) {
      cfg.optimizer.lr_shift = member(opt, "lr_shift", "optimizer").get<int>();
      if (cfg.optimizer.lr_shift < 0 || cfg.optimizer.lr_shift > 31) {
        throw ConfigError("optimizer.lr_shift: expected 0..31");
      }
    } else {
      cfg.optimizer.lr = member(opt, "lr", "optimizer").get<float>();
      if (!(cfg.optimizer.lr >= 0.0f)) throw ConfigError("optimizer.lr: must be >= 0");
    }

    if (doc.contains("rescale")) {
      const json& rs = doc["rescale"];
      cfg.rescale.warmup_batches = rs.value("warmup_batches", cfg.rescale.warmup_batches);
      cfg.rescale.history = rs.value("history", cfg.rescale.history);
      if (cfg.rescale.warmup_batches < 0 || cfg.rescale.history < 1) {
        throw ConfigError("rescale: warmup_batches >= 0 and history >= 1 required");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

TrainingConfig load_training_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_training_config(ss.str());
}

std::string training_config_to_json(const TrainingConfig& cfg) {
  json doc;
  doc["version"] = cfg.version;
  doc["name"] = cfg.name;
  for (const auto& [k, v] : cfg.translation) doc["translation"][k] = v;
  for (const auto& [k, v] : cfg.backprop) {
    json rule;
    if (!v.error_grad.empty()) rule["error_grad"] = v.error_grad;
    if (!v.weight_grad.empty()) rule["weight_grad"] = v.weight_grad;
    doc["backprop"][k] = rule;
  }
  doc["weight"] = {{"initializer", cfg.weight.initializer},
                   {"type", to_string(cfg.weight.type)},
                   {"update", to_string(cfg.weight.update)}};
  doc["optimizer"] = {{"loss", cfg.optimizer.loss}, {"optimizer", cfg.optimizer.optimizer}};
  if (cfg.weight.update == DataKind::Int8) {
    doc["optimizer"]["lr_shift"] = cfg.optimizer.lr_shift;
  } else {
    doc["optimizer"]["lr"] = cfg.optimizer.lr;
  }
  doc["rescale"] = {{"warmup_batches", cfg.rescale.warmup_batches},
                    {"history", cfg.rescale.history}};
  return doc.dump(2);
}

TrainingConfig builtin_int8_config() {
  TrainingConfig cfg;
  cfg.version = 1;
  cfg.name = "int8-full";
  cfg.translation = {
      {"Conv2D", {"Int8Conv", "ReduceMaxScale", "Shift"}},
      {"Dense", {"Int8MatMul", "ReduceMaxScale", "Shift"}},
      {"MaxPool", {"Int8MaxPool"}},
      {"ReLU", {"Int8ReLU"}},
  };
  cfg.backprop = {
      {"Conv2D",
       {{"WeightRotate", "Int8Deconv", "ReduceMaxScale", "Shift"},
        {"Int8ConvBackpropFilter", "ReduceMaxScale", "Shift"}}},
      {"Dense",
       {{"Transpose", "Int8MatMul", "ReduceMaxScale", "Shift"},
        {"Transpose", "Int8MatMul", "ReduceMaxScale", "Shift"}}},
      {"MaxPool", {{"Int8MaxPoolBwd"}, {}}},
      {"ReLU", {{"Int8ReLUBwd"}, {}}},
  };
  cfg.weight = {"xavier_normal", DataKind::Int8, DataKind::Int8};
  cfg.optimizer.loss = "cross_entropy";
  cfg.optimizer.optimizer = "sgd";
  cfg.optimizer.lr_shift = 5;
  return cfg;
}

TrainingConfig builtin_fp32_update_config() {
  TrainingConfig cfg = builtin_int8_config();
  cfg.name = "int8-fp32-update";
  cfg.weight.update = DataKind::Fp32;
  cfg.optimizer.lr = 0.01f;
  return cfg;
}

} // namespace mpt
