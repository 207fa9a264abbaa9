#pragma once

// Primitive operation ids and the generic forward_op dispatcher. This is
// the uniform surface the gradient checker drives; the search space builds
// its cells from the same underlying ops directly.

#include <stdexcept>
#include <string>
#include <vector>

#include "confopt/ops.hpp"

namespace confopt {

enum class PrimOp {
  kConv2d,
  kDepthwiseConv2d,
  kPointwiseConv2d,
  kDilatedConv2d,
  kMaxPool,
  kAvgPool,
  kIdentity,
  kZero,
  kRelu,
  kBatchNorm,
  kLinear,
  kSoftmax,
  kGlobalAvgPool,
  kAdd,
  kScalarMul,
  kConcatChannels,
};

inline const std::vector<std::pair<PrimOp, std::string>>& prim_op_names() {
  static const std::vector<std::pair<PrimOp, std::string>> names = {
      {PrimOp::kConv2d, "conv2d"},
      {PrimOp::kDepthwiseConv2d, "depthwise_conv2d"},
      {PrimOp::kPointwiseConv2d, "pointwise_conv2d"},
      {PrimOp::kDilatedConv2d, "dilated_conv2d"},
      {PrimOp::kMaxPool, "max_pool"},
      {PrimOp::kAvgPool, "avg_pool"},
      {PrimOp::kIdentity, "identity"},
      {PrimOp::kZero, "zero"},
      {PrimOp::kRelu, "relu"},
      {PrimOp::kBatchNorm, "batch_norm"},
      {PrimOp::kLinear, "linear"},
      {PrimOp::kSoftmax, "softmax"},
      {PrimOp::kGlobalAvgPool, "global_avg_pool"},
      {PrimOp::kAdd, "add"},
      {PrimOp::kScalarMul, "scalar_mul"},
      {PrimOp::kConcatChannels, "concat_channels"},
  };
  return names;
}

inline std::string prim_op_name(PrimOp op) {
  for (const auto& [k, n] : prim_op_names())
    if (k == op) return n;
  throw std::invalid_argument("unknown primitive op id");
}

inline PrimOp parse_prim_op(const std::string& s) {
  for (const auto& [k, n] : prim_op_names())
    if (n == s) return k;
  throw std::invalid_argument("unknown primitive op: " + s);
}

// Applies `kind` to `input` with `params` as its parameter leaves, using
// canonical shape-preserving settings (3x3 kernels pad to same size,
// dilated convs use dilation 2).
template <typename T>
Var forward_op(Tape<T>& tape, PrimOp kind, const std::vector<Var>& params, Var input) {
  auto want = [&](size_t n) {
    if (params.size() != n) {
      ops::shape_error(prim_op_name(kind), "expected " + std::to_string(n) + " params, got " +
                                               std::to_string(params.size()));
    }
  };
  switch (kind) {
    case PrimOp::kConv2d: {
      want(1);
      int k = tape.value(params[0]).shape.at(2);
      return ops::conv2d(tape, input, params[0], 1, (k - 1) / 2, 1, 1);
    }
    case PrimOp::kDepthwiseConv2d: {
      want(1);
      int groups = tape.value(input).shape.at(1);
      int k = tape.value(params[0]).shape.at(2);
      return ops::conv2d(tape, input, params[0], 1, (k - 1) / 2, 1, groups);
    }
    case PrimOp::kPointwiseConv2d:
      want(1);
      return ops::conv2d(tape, input, params[0], 1, 0, 1, 1);
    case PrimOp::kDilatedConv2d: {
      want(1);
      int groups = tape.value(input).shape.at(1);
      int k = tape.value(params[0]).shape.at(2);
      return ops::conv2d(tape, input, params[0], 1, k - 1, 2, groups);
    }
    case PrimOp::kMaxPool:
      want(0);
      return ops::max_pool2d(tape, input, 3, 1, 1);
    case PrimOp::kAvgPool:
      want(0);
      return ops::avg_pool2d(tape, input, 3, 1, 1);
    case PrimOp::kIdentity:
      want(0);
      return ops::identity(tape, input);
    case PrimOp::kZero:
      want(0);
      return ops::zero_op(tape, input, 1);
    case PrimOp::kRelu:
      want(0);
      return ops::relu(tape, input);
    case PrimOp::kBatchNorm:
      if (params.empty()) return ops::batch_norm(tape, input, -1, -1, T(1e-5));
      want(2);
      return ops::batch_norm(tape, input, params[0], params[1], T(1e-5));
    case PrimOp::kLinear:
      if (params.size() == 1) return ops::linear(tape, input, params[0]);
      want(2);
      return ops::linear(tape, input, params[0], params[1]);
    case PrimOp::kSoftmax:
      want(0);
      return ops::softmax_rows(tape, input);
    case PrimOp::kGlobalAvgPool:
      want(0);
      return ops::global_avg_pool(tape, input);
    case PrimOp::kAdd:
      want(1);
      return ops::add(tape, input, params[0]);
    case PrimOp::kScalarMul:
      want(1);
      return ops::scale_by_element(tape, input, params[0], 0);
    case PrimOp::kConcatChannels:
      want(1);
      return ops::concat_channels(tape, std::vector<Var>{input, params[0]});
  }
  throw std::invalid_argument("unknown primitive op id");
}

}  // namespace confopt
