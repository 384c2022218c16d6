#pragma once

// Differentiable primitives. Each one validates shapes (throwing
// std::invalid_argument naming both shapes on mismatch) and records an exact
// reverse-mode gradient.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mplbench/numerics/tensor.hpp"

namespace mplbench::numerics {

inline constexpr double kLayerNormEps = 1e-5;

// [n x k] @ [k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Multiplies every element of `a` by the single element of `s`.
Tensor scale_by(const Tensor& a, const Tensor& s);

// [n x m] + [m] broadcast over rows.
Tensor add_rowwise(const Tensor& a, const Tensor& row);

// Per-row normalization of [n x m] with learnable gain/bias of length m.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// Softmax over the last axis (rank 1 or 2).
Tensor softmax(const Tensor& x);

// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

// Gathers rows of a [n x m] table. Doubles as masked-row selection.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Mean of a rank-2 tensor over `axis` (0: over rows -> [cols], 1: over cols -> [rows]).
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Copy of `x` whose rows at `indices` are replaced by `row`. The replaced
// rows carry no dependence on the original values of `x`.
Tensor replace_rows(const Tensor& x, std::span<const std::size_t> indices, const Tensor& row);

// softmax(q k^T / sqrt(d_k)) v, composed from the primitives above.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

} // namespace mplbench::numerics
