#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "selfmon/tape.hpp"

namespace selfmon::num {

// Every op evaluates eagerly and registers its gradient rule on the operands' tape.
// Shape violations raise DimensionError naming the offending shapes.

Var matmul(Var a, Var b);              // [m x k] . [k x n]
Var linear(Var x, Var weight, Var bias);  // x[in] . W[in x out] + b[out]
Var matvec(Var m, Var v);              // M[n x d] . v[d] -> [n]
Var vecmat(Var v, Var m);              // v[n]^T . M[n x d] -> [d]

Var add(Var a, Var b);
Var add_rows(Var m, Var v);  // M[n x d] + v[d] on every row
Var mul_rows(Var m, Var v);  // M[n x d] * v[d] on every row
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a + c for a constant tensor c of the same shape.
Var add_constant(Var a, const Tensor& c);
/// a * s + t elementwise with constant s, t of a's shape.
Var affine_constant(Var a, const Tensor& s, const Tensor& t);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

Var concat(std::span<const Var> parts);  // 1-D join
inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice(Var a, std::size_t offset, std::size_t length);  // 1-D
/// Rows must share a 1-D shape; `rows_total` > rows.size() pads with zero rows.
Var stack_rows(std::span<const Var> rows, std::size_t rows_total = 0);
Var row(Var m, std::size_t index);

Var softmax(Var z);      // 1-D, max-subtracted
Var log_softmax(Var z);  // 1-D, log-sum-exp form
Var pick(Var a, std::size_t index);
Var sum(Var a);
Var square(Var a);

/// Inverted dropout: multiplies by a precomputed mask of 0 and 1/(1-rate).
Var dropout(Var a, const Tensor& mask);

/// Plain softmax on a value vector (same numerics as the tape op).
std::vector<double> softmax_values(std::span<const double> z);

}  // namespace selfmon::num
