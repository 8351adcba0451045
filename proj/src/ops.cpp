#include "selfmon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "selfmon/errors.hpp"

namespace selfmon::num {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operand is not on a tape");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_string(A.shape()) + " by " +
                         shape_string(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
    }
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::uint32_t self) {
    const Tensor& dC = tp.grad(self);
    const Tensor& A = tp.value(ia);
    const Tensor& B = tp.value(ib);
    if (Tensor* dA = tp.grad_target(ia))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dC.at(i, j) * B.at(p, j);
          dA->at(i, p) += s;
        }
    if (Tensor* dB = tp.grad_target(ib))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          for (std::size_t j = 0; j < n; ++j) dB->at(p, j) += aip * dC.at(i, j);
        }
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = tape_of(x, weight);
  tape_of(x, bias);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& b = bias.value();
  if (X.rank() != 1 || W.rank() != 2 || b.rank() != 1 || W.dim(0) != X.dim(0) || W.dim(1) != b.dim(0))
    throw DimensionError("linear: input " + shape_string(X.shape()) + ", weight " +
                         shape_string(W.shape()) + ", bias " + shape_string(b.shape()));
  const std::size_t in = W.dim(0), out = W.dim(1);
  Tensor y = b;
  {
    double* __restrict yp = y.storage().data();
    const double* __restrict wp = W.storage().data();
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = X[i];
      if (xi == 0.0) continue;
      const double* __restrict wrow = wp + i * out;
      for (std::size_t j = 0; j < out; ++j) yp[j] += xi * wrow[j];
    }
  }
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.record(std::move(y), {ix, iw, ib}, [ix, iw, ib, in, out](Tape& tp, std::uint32_t self) {
    const double* __restrict dy = tp.grad(self).storage().data();
    if (Tensor* dx = tp.grad_target(ix)) {
      const double* __restrict wp = tp.value(iw).storage().data();
      for (std::size_t i = 0; i < in; ++i) {
        const double* __restrict wrow = wp + i * out;
        double s = 0.0;
        for (std::size_t j = 0; j < out; ++j) s += wrow[j] * dy[j];
        (*dx)[i] += s;
      }
    }
    if (Tensor* dW = tp.grad_target(iw)) {
      const Tensor& X = tp.value(ix);
      double* __restrict dwp = dW->storage().data();
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = X[i];
        if (xi == 0.0) continue;
        double* __restrict drow = dwp + i * out;
        for (std::size_t j = 0; j < out; ++j) drow[j] += xi * dy[j];
      }
    }
    if (Tensor* db = tp.grad_target(ib)) *db += tp.grad(self);
  });
}

Var matvec(Var m, Var v) {
  Tape& t = tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.dim(1) != V.dim(0))
    throw DimensionError("matvec: cannot multiply " + shape_string(M.shape()) + " by " +
                         shape_string(V.shape()));
  const std::size_t n = M.dim(0), d = M.dim(1);
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = M.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += r[j] * V[j];
    y[i] = s;
  }
  const auto im = m.id(), iv = v.id();
  return t.record(std::move(y), {im, iv}, [im, iv, n, d](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* dM = tp.grad_target(im)) {
      const Tensor& V = tp.value(iv);
      for (std::size_t i = 0; i < n; ++i) {
        auto r = dM->row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] += dy[i] * V[j];
      }
    }
    if (Tensor* dV = tp.grad_target(iv)) {
      const Tensor& M = tp.value(im);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = M.row(i);
        for (std::size_t j = 0; j < d; ++j) (*dV)[j] += dy[i] * r[j];
      }
    }
  });
}

Var vecmat(Var v, Var m) {
  Tape& t = tape_of(v, m);
  const Tensor& V = v.value();
  const Tensor& M = m.value();
  if (M.rank() != 2 || V.rank() != 1 || M.dim(0) != V.dim(0))
    throw DimensionError("vecmat: cannot multiply " + shape_string(V.shape()) + " by " +
                         shape_string(M.shape()));
  const std::size_t n = M.dim(0), d = M.dim(1);
  Tensor y({d});
  for (std::size_t i = 0; i < n; ++i) {
    if (V[i] == 0.0) continue;
    const auto r = M.row(i);
    for (std::size_t j = 0; j < d; ++j) y[j] += V[i] * r[j];
  }
  const auto iv = v.id(), im = m.id();
  return t.record(std::move(y), {iv, im}, [iv, im, n, d](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* dV = tp.grad_target(iv)) {
      const Tensor& M = tp.value(im);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = M.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += r[j] * dy[j];
        (*dV)[i] += s;
      }
    }
    if (Tensor* dM = tp.grad_target(im)) {
      const Tensor& V = tp.value(iv);
      for (std::size_t i = 0; i < n; ++i) {
        if (V[i] == 0.0) continue;
        auto r = dM->row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] += V[i] * dy[j];
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  y += b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia)) *da += dy;
    if (Tensor* db = tp.grad_target(ib)) *db += dy;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= B[i];
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia)) *da += dy;
    if (Tensor* db = tp.grad_target(ib))
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] -= dy[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(y), {ia, ib}, [ia, ib](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia)) {
      const Tensor& B = tp.value(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * B[i];
    }
    if (Tensor* db = tp.grad_target(ib)) {
      const Tensor& A = tp.value(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * A[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (auto& v : y.values()) v *= factor;
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia, factor](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += factor * dy[i];
  });
}

Var add_constant(Var a, const Tensor& c) {
  Tape& t = tape_of(a);
  require_same_shape("add_constant", a.value(), c);
  Tensor y = a.value();
  y += c;
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& tp, std::uint32_t self) {
    if (Tensor* da = tp.grad_target(ia)) *da += tp.grad(self);
  });
}

Var affine_constant(Var a, const Tensor& s, const Tensor& shift) {
  Tape& t = tape_of(a);
  require_same_shape("affine_constant", a.value(), s);
  require_same_shape("affine_constant", a.value(), shift);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * s[i] + shift[i];
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia, s](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * s[i];
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (auto& v : y.values()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& y = tp.value(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (auto& v : y.values()) v = std::tanh(v);
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& y = tp.value(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& x = tp.value(ia);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (x[i] > 0.0) (*da)[i] += dy[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  Tape& t = tape_of(parts.front());
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> sizes;
  std::vector<double> values;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    require_rank("concat", p.value(), 1);
    ids.push_back(p.id());
    sizes.push_back(p.size());
    const auto v = p.value().values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return t.record(Tensor::vector(std::move(values)), ids, [ids, sizes](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* dp = tp.grad_target(ids[k]))
        for (std::size_t i = 0; i < sizes[k]; ++i) (*dp)[i] += dy[off + i];
      off += sizes[k];
    }
  });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  Tape& t = tape_of(a);
  require_rank("slice", a.value(), 1);
  if (length == 0 || offset + length > a.size())
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of " + shape_string(a.shape()));
  const auto v = a.value().values().subspan(offset, length);
  const auto ia = a.id();
  return t.record(Tensor::vector({v.begin(), v.end()}), {ia}, [ia, offset, length](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < length; ++i) (*da)[offset + i] += dy[i];
  });
}

Var stack_rows(std::span<const Var> rows, std::size_t rows_total) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  Tape& t = tape_of(rows.front());
  const std::size_t d = rows.front().size();
  const std::size_t n = std::max(rows_total, rows.size());
  Tensor y({n, d});
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tape_of(rows.front(), rows[i]);
    const Tensor& r = rows[i].value();
    if (r.rank() != 1 || r.size() != d)
      throw DimensionError("stack_rows: row " + shape_string(r.shape()) + " vs [" + std::to_string(d) + "]");
    std::copy(r.values().begin(), r.values().end(), y.row(i).begin());
    ids.push_back(rows[i].id());
  }
  return t.record(std::move(y), ids, [ids, d](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (Tensor* dr = tp.grad_target(ids[i]))
        for (std::size_t j = 0; j < d; ++j) (*dr)[j] += dy.at(i, j);
  });
}

Var row(Var m, std::size_t index) {
  Tape& t = tape_of(m);
  require_rank("row", m.value(), 2);
  if (index >= m.value().dim(0))
    throw DimensionError("row " + std::to_string(index) + " out of " + shape_string(m.shape()));
  const auto r = m.value().row(index);
  const auto im = m.id();
  return t.record(Tensor::vector({r.begin(), r.end()}), {im}, [im, index](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* dm = tp.grad_target(im)) {
      auto r = dm->row(index);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += dy[j];
    }
  });
}

std::vector<double> softmax_values(std::span<const double> z) {
  if (z.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= s;
  return p;
}

Var softmax(Var z) {
  Tape& t = tape_of(z);
  require_rank("softmax", z.value(), 1);
  Tensor p = Tensor::vector(softmax_values(z.value().values()));
  const auto iz = z.id();
  return t.record(std::move(p), {iz}, [iz](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& p = tp.value(self);
    if (Tensor* dz = tp.grad_target(iz)) {
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += dy[i] * p[i];
      for (std::size_t i = 0; i < p.size(); ++i) (*dz)[i] += p[i] * (dy[i] - dot);
    }
  });
}

Var log_softmax(Var z) {
  Tape& t = tape_of(z);
  require_rank("log_softmax", z.value(), 1);
  const auto zv = z.value().values();
  const double mx = *std::max_element(zv.begin(), zv.end());
  double s = 0.0;
  for (double v : zv) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  Tensor y = z.value();
  for (auto& v : y.values()) v -= lse;
  const auto iz = z.id();
  return t.record(std::move(y), {iz}, [iz](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& y = tp.value(self);
    if (Tensor* dz = tp.grad_target(iz)) {
      double total = 0.0;
      for (double v : dy.values()) total += v;
      for (std::size_t i = 0; i < y.size(); ++i) (*dz)[i] += dy[i] - std::exp(y[i]) * total;
    }
  });
}

Var pick(Var a, std::size_t index) {
  Tape& t = tape_of(a);
  if (index >= a.size())
    throw DimensionError("pick " + std::to_string(index) + " out of " + shape_string(a.shape()));
  const auto ia = a.id();
  return t.record(Tensor::scalar(a.value()[index]), {ia}, [ia, index](Tape& tp, std::uint32_t self) {
    if (Tensor* da = tp.grad_target(ia)) (*da)[index] += tp.grad(self)[0];
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return t.record(Tensor::scalar(s), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    if (Tensor* da = tp.grad_target(ia))
      for (auto& v : da->values()) v += g;
  });
}

Var square(Var a) { return mul(a, a); }

Var dropout(Var a, const Tensor& mask) {
  Tape& t = tape_of(a);
  require_same_shape("dropout", a.value(), mask);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  const auto ia = a.id();
  return t.record(std::move(y), {ia}, [ia, mask](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* da = tp.grad_target(ia))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * mask[i];
  });
}


Var add_rows(Var m, Var v) {
  Tape& t = tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.dim(1) != V.dim(0))
    throw DimensionError("add_rows: cannot broadcast " + shape_string(V.shape()) + " over " +
                         shape_string(M.shape()));
  Tensor y = M;
  const std::size_t n = M.dim(0), d = M.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) += V[j];
  const auto im = m.id(), iv = v.id();
  return t.record(std::move(y), {im, iv}, [im, iv, n, d](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* dm = tp.grad_target(im)) *dm += dy;
    if (Tensor* dv = tp.grad_target(iv))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*dv)[j] += dy.at(i, j);
  });
}

Var mul_rows(Var m, Var v) {
  Tape& t = tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.dim(1) != V.dim(0))
    throw DimensionError("mul_rows: cannot broadcast " + shape_string(V.shape()) + " over " +
                         shape_string(M.shape()));
  Tensor y = M;
  const std::size_t n = M.dim(0), d = M.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) *= V[j];
  const auto im = m.id(), iv = v.id();
  return t.record(std::move(y), {im, iv}, [im, iv, n, d](Tape& tp, std::uint32_t self) {
    const Tensor& dy = tp.grad(self);
    if (Tensor* dm = tp.grad_target(im)) {
      const Tensor& V = tp.value(iv);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dm->at(i, j) += dy.at(i, j) * V[j];
    }
    if (Tensor* dv = tp.grad_target(iv)) {
      const Tensor& M = tp.value(im);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*dv)[j] += dy.at(i, j) * M.at(i, j);
    }
  });
}

}  // namespace selfmon::num
