#pragma once

#include <map>
#include <string>
#include <vector>

namespace mpt {

enum class DataKind { Int8, Fp32 };

std::string to_string(DataKind k);

// How a layer's gradients are produced, mirroring the two backprop rows of a
// training config: one chain for the error gradient, one for the weight
// gradient (ops with trainable weights carry both).
struct BackpropRule {
  std::vector<std::string> error_grad;
  std::vector<std::string> weight_grad;
};

struct WeightPolicy {
  std::string initializer = "xavier_normal";
  DataKind type = DataKind::Int8;
  DataKind update = DataKind::Int8;
};

struct OptimizerPolicy {
  std::string loss = "cross_entropy";
  std::string optimizer = "sgd";
  int lr_shift = 5;      // INT8 update: learning rate 2^-lr_shift
  float lr = 0.01f;      // FP32 update path
};

struct RescalePolicy {
  int warmup_batches = 50;
  int history = 4;       // interval ring-buffer length K
};

// The four elements that jointly define a mixed-precision training algorithm:
// operator translation, backpropagation rules, weight handling, optimizer.
struct TrainingConfig {
  int version = 1;
  std::string name;
  std::map<std::string, std::vector<std::string>> translation;
  std::map<std::string, BackpropRule> backprop;
  WeightPolicy weight;
  OptimizerPolicy optimizer;
  RescalePolicy rescale;
};

// Parses and validates a UTF-8 config document (JSON). Throws ConfigError with
// the offending location for syntax errors, unknown op names, missing
// sections, empty translation maps, or weight/update inconsistencies.
TrainingConfig parse_training_config(const std::string& text);
TrainingConfig load_training_config(const std::string& path);

// Built-in algorithms: the full-INT8-update configuration and the generic
// FP32-master-weight variant.
TrainingConfig builtin_int8_config();
TrainingConfig builtin_fp32_update_config();

std::string training_config_to_json(const TrainingConfig& cfg);

} // namespace mpt
