#include "mpt/registry.hpp"

#include <array>

namespace mpt {

namespace {

// The operator vocabulary the translator may emit plus the CPU-pinned ops that
// exist purely as scheduling subjects (Normalization, Round, Sqrt).
constexpr std::array<OpInfo, 22> kOps = {{
    {"Input", false, true, OpClass::Source},
    {"Quantize", false, true, OpClass::Quantize},
    {"Dequantize", false, true, OpClass::Quantize},
    {"Int8Conv", true, true, OpClass::Conv},
    {"Int8MatMul", true, true, OpClass::MatMul},
    {"Int8Deconv", true, true, OpClass::Conv},
    {"Int8ConvBackpropFilter", true, true, OpClass::Conv},
    {"ReduceMaxScale", true, false, OpClass::Reduce},
    {"Shift", true, true, OpClass::Eltwise},
    {"Int8ReLU", true, true, OpClass::Eltwise},
    {"Int8ReLUBwd", true, true, OpClass::Eltwise},
    {"Int8MaxPool", true, true, OpClass::Eltwise},
    {"Int8MaxPoolBwd", true, true, OpClass::Eltwise},
    {"Transpose", true, false, OpClass::Layout},
    {"WeightRotate", true, false, OpClass::Layout},
    {"Slice", true, false, OpClass::Layout},
    {"SoftmaxXentLoss", false, false, OpClass::Loss},
    {"WeightUpdateInt8", true, false, OpClass::Update},
    {"WeightUpdateFp32", false, false, OpClass::Update},
    {"Normalization", false, true, OpClass::Eltwise},
    {"Round", false, true, OpClass::Eltwise},
    {"Sqrt", false, true, OpClass::Eltwise},
}};

} // namespace

const OpInfo* find_op(std::string_view name) {
  for (const OpInfo& op : kOps) {
    if (op.name == name) return &op;
  }
  return nullptr;
}

std::span<const OpInfo> op_registry() { return kOps; }

} // namespace mpt
