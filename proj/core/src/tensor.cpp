#include "ctf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ctf {

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{1};

#define CTF_REQUIRE(ok, what)   \
  do {                           \
    if (!(ok)) throw ShapeError(what); \
  } while (0)

std::string pair_shapes(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
         " and " + shape_to_string(b.shape());
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape()));
  }
  return impl_->shape[axis];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor " + shape_to_string(shape()) + " is not a scalar");
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  CTF_REQUIRE(rank() == 2, "at(r, c) on " + shape_to_string(shape()));
  return impl_->data.at(r * impl_->shape[1] + c);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!t_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<GradNode>();
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward_fn);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  CTF_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          pair_shapes("matmul", a, b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = &B[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  TensorImpl* pa = a.impl().get();
  TensorImpl* pb = b.impl().get();
  return make_result({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](const TensorImpl& o) {
    const auto& G = o.grad;
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = dC · Bᵀ
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb->data[p * n + j];
      for (std::size_t i = 0; i < m; ++i) {
        double* arow = &pa->grad[i * k];
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* btrow = &bt[j * k];
          for (std::size_t p = 0; p < k; ++p) arow[p] += g * btrow[p];
        }
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) pb->grad[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise2(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  CTF_REQUIRE(a.shape() == b.shape(), pair_shapes(name, a, b));
  std::vector<double> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A[i], B[i]);
  TensorImpl* pa = a.impl().get();
  TensorImpl* pb = b.impl().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb, bwd](const TensorImpl& o) {
    const std::size_t n = o.grad.size();
    if (pa->requires_grad) pa->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      auto [ga, gb] = bwd(pa->data[i], pb->data[i], o.grad[i]);
      if (pa->requires_grad) pa->grad[i] += ga;
      if (pb->requires_grad) pb->grad[i] += gb;
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
  TensorImpl* pa = a.impl().get();
  return make_result(a.shape(), std::move(out), {a}, [pa, factor](const TensorImpl& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * factor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  CTF_REQUIRE(a.rank() == 2 && row.numel() == a.dim(1) && row.rank() >= 1,
          pair_shapes("add_row", a, row));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto R = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += R[j];
  TensorImpl* pa = a.impl().get();
  TensorImpl* pr = row.impl().get();
  return make_result({m, n}, std::move(out), {a, row}, [pa, pr, m, n](const TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) pa->grad[i] += o.grad[i];
    }
    if (pr->requires_grad) {
      pr->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pr->grad[j] += o.grad[i * n + j];
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
  TensorImpl* pa = a.impl().get();
  return make_result(a.shape(), std::move(out), {a}, [pa](const TensorImpl& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (pa->data[i] > 0.0) pa->grad[i] += o.grad[i];
  });
}

Tensor abs(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(A[i]);
  TensorImpl* pa = a.impl().get();
  return make_result(a.shape(), std::move(out), {a}, [pa](const TensorImpl& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double x = pa->data[i];
      pa->grad[i] += x > 0.0 ? o.grad[i] : (x < 0.0 ? -o.grad[i] : 0.0);
    }
  });
}

Tensor transpose(const Tensor& a) {
  CTF_REQUIRE(a.rank() == 2, "transpose: expected rank 2, got " + shape_to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  TensorImpl* pa = a.impl().get();
  return make_result({n, m}, std::move(out), {a}, [pa, m, n](const TensorImpl& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += o.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  CTF_REQUIRE(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_to_string(a.shape()) + " as " +
              shape_to_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  TensorImpl* pa = a.impl().get();
  return make_result(std::move(shape), std::move(out), {a}, [pa](const TensorImpl& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
  });
}

namespace {

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  CTF_REQUIRE(axis < ref.size(), "concat: axis out of range for " + shape_to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t d = 0; ok && d < ref.size(); ++d)
      if (d != axis && p.shape()[d] != ref[d]) ok = false;
    CTF_REQUIRE(ok, pair_shapes("concat", parts.front(), p));
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.shape()[axis];
    auto P = p.data();
    for (std::size_t o = 0; o < total.outer; ++o)
      std::copy_n(&P[o * ext * total.inner], ext * total.inner,
                  &out[(o * total.extent + off) * total.inner]);
    off += ext;
  }
  std::vector<TensorImpl*> raw;
  for (const auto& p : parts) raw.push_back(p.impl().get());
  return make_result(out_shape, std::move(out), parts,
                     [raw, offsets, total, axis](const TensorImpl& o) {
                       for (std::size_t k = 0; k < raw.size(); ++k) {
                         TensorImpl* p = raw[k];
                         if (!p->requires_grad) continue;
                         p->ensure_grad();
                         const std::size_t ext = p->shape[axis];
                         for (std::size_t q = 0; q < total.outer; ++q)
                           for (std::size_t i = 0; i < ext * total.inner; ++i)
                             p->grad[q * ext * total.inner + i] +=
                                 o.grad[(q * total.extent + offsets[k]) * total.inner + i];
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  CTF_REQUIRE(axis < a.rank() && begin <= end && end <= a.shape()[axis],
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") on axis " + std::to_string(axis) + " of " + shape_to_string(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  std::vector<double> out(shape_numel(out_shape));
  auto A = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(&A[(o * s.extent + begin) * s.inner], ext * s.inner,
                &out[o * ext * s.inner]);
  TensorImpl* pa = a.impl().get();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [pa, s, begin, ext](const TensorImpl& o) {
                       pa->ensure_grad();
                       for (std::size_t q = 0; q < s.outer; ++q)
                         for (std::size_t i = 0; i < ext * s.inner; ++i)
                           pa->grad[(q * s.extent + begin) * s.inner + i] +=
                               o.grad[q * ext * s.inner + i];
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  TensorImpl* pa = a.impl().get();
  return make_result({}, {total}, {a}, [pa](const TensorImpl& o) {
    pa->ensure_grad();
    for (auto& g : pa->grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  CTF_REQUIRE(table.rank() == 2, "gather_rows: table must be rank 2, got " +
                                 shape_to_string(table.shape()));
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  auto T = table.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[k]) +
                       " out of range for " + shape_to_string(table.shape()));
    }
    std::copy_n(&T[idx[k] * d], d, &out[k * d]);
  }
  TensorImpl* pt = table.impl().get();
  const std::size_t k_rows = idx.size();
  return make_result({k_rows, d}, std::move(out), {table}, [pt, idx, d](const TensorImpl& o) {
    pt->ensure_grad();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < d; ++j) pt->grad[idx[k] * d + j] += o.grad[k * d + j];
  });
}

Tensor masked_softmax(const Tensor& scores, const AdditiveBias& bias) {
  CTF_REQUIRE(scores.rank() == 2 && scores.dim(0) == bias.rows && scores.dim(1) == bias.cols &&
              bias.values.size() == bias.rows * bias.cols,
          "masked_softmax: scores " + shape_to_string(scores.shape()) + " vs bias [" +
              std::to_string(bias.rows) + "x" + std::to_string(bias.cols) + "]");
  const std::size_t m = bias.rows, n = bias.cols;
  std::vector<double> out(m * n, 0.0);
  auto S = scores.data();
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!bias.allowed(i, j)) continue;
      any = true;
      row_max = std::max(row_max, S[i * n + j] + bias.values[i * n + j]);
    }
    if (!any) {
      throw ContractError("masked_softmax: row " + std::to_string(i) +
                          " has no admissible key");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!bias.allowed(i, j)) continue;
      const double e = std::exp(S[i * n + j] + bias.values[i * n + j] - row_max);
      out[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  TensorImpl* ps = scores.impl().get();
  auto result = make_result({m, n}, out, {scores}, nullptr);
  if (result.impl()->node) {
    TensorImpl* po = result.impl().get();
    result.impl()->node->backward = [ps, po, m, n](const TensorImpl& o) {
      ps->ensure_grad();
      const auto& Y = po->data;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * Y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          ps->grad[i * n + j] += Y[i * n + j] * (o.grad[i * n + j] - dot);
      }
    };
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  CTF_REQUIRE(x.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  CTF_REQUIRE(d >= 1 && gain.numel() == d && shift.numel() == d,
          "layer_norm: x " + shape_to_string(x.shape()) + " gain " +
              shape_to_string(gain.shape()) + " shift " + shape_to_string(shift.shape()));
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto X = x.data();
  auto G = gain.data();
  auto B = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = X[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (X[r * d + j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  TensorImpl* px = x.impl().get();
  TensorImpl* pg = gain.impl().get();
  TensorImpl* pb = shift.impl().get();
  return make_result(
      x.shape(), std::move(out), {x, gain, shift},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](const TensorImpl& o) {
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double go = o.grad[r * d + j];
            const double h = xhat[r * d + j];
            if (pg->requires_grad) pg->grad[j] += go * h;
            if (pb->requires_grad) pb->grad[j] += go;
            const double dh = go * pg->data[j];
            sum_dh += dh;
            sum_dh_h += dh * h;
          }
          if (!px->requires_grad) continue;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = o.grad[r * d + j] * pg->data[j];
            const double h = xhat[r * d + j];
            px->grad[r * d + j] += inv_std[r] * (dh - sum_dh / dd - h * sum_dh_h / dd);
          }
        }
      });
}

// ---------------------------------------------------------------------------

GradTape GradTape::collect(const Tensor& root) {
  GradTape tape;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<std::shared_ptr<TensorImpl>> stack{root.impl()};
  while (!stack.empty()) {
    auto cur = std::move(stack.back());
    stack.pop_back();
    if (!cur->node || !seen.insert(cur.get()).second) continue;
    for (const auto& in : cur->node->inputs) stack.push_back(in);
    tape.nodes.push_back(std::move(cur));
  }
  std::sort(tape.nodes.begin(), tape.nodes.end(),
            [](const auto& a, const auto& b) { return a->node->seq < b->node->seq; });
  return tape;
}

void GradTape::replay_backward() const {
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const TensorImpl& out = **it;
    if (out.grad.empty()) continue;
    out.node->backward(out);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any parameter");
  }
  GradTape tape = GradTape::collect(loss);
  // Interior gradients are recomputed from scratch on every call; only
  // leaves accumulate across calls.
  for (const auto& impl : tape.nodes) impl->grad.assign(impl->data.size(), 0.0);
  if (tape.nodes.empty()) {
    loss.impl()->accumulate(0, 1.0);
    return;
  }
  loss.impl()->grad[0] = 1.0;
  tape.replay_backward();
}

}  // namespace ctf
