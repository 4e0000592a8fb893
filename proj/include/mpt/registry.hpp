#pragma once

#include <span>
#include <string>
#include <string_view>

namespace mpt {

// Coarse operator families the synthetic cost model can rate when no profiled
// row exists for a concrete signature.
enum class OpClass {
  Source,    // graph inputs, zero cost
  Quantize,  // FP32 <-> INT8 conversion
  Conv,      // convolution-shaped integer reductions
  MatMul,
  Reduce,    // max/clz scans over INT32 intermediates
  Eltwise,   // shifts, relu, pooling and other per-element passes
  Layout,    // transpose / rotate / slice marshalling
  Loss,
  Update,
};

struct OpInfo {
  std::string_view name;
  bool dsp_supported;   // false: FP32-only or otherwise absent from the accelerator
  bool batch_splittable; // batch (dim 0) can be partitioned across micro-batches
  OpClass cls;
};

// nullptr when the name is unknown.
const OpInfo* find_op(std::string_view name);

std::span<const OpInfo> op_registry();

} // namespace mpt
