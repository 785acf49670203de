#include "punr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "punr/error.hpp"

namespace punr::ops {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

// Parent `i` if it participates in gradient flow, else nullptr.
Node* grad_parent(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

// outer x len x inner decomposition around `axis`.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

enum class Broadcast { none, rows };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  const std::size_t n = a.rank() == 2 ? a.dim(1) : 0;
  const bool bias_like = (b.rank() == 1 && b.dim(0) == n) ||
                         (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == n);
  if (a.rank() == 2 && bias_like) return Broadcast::rows;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not align");
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (Node* pa = grad_parent(self, 0)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = bv.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (Node* pb = grad_parent(self, 1)) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not align");
  }
  std::vector<double> out(m * n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bv.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (Node* pa = grad_parent(self, 0)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double* garow = ga.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          if (s == 0.0) continue;
          const double* brow = bv.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += s * brow[p];
        }
      }
    }
    if (Node* pb = grad_parent(self, 1)) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          if (s == 0.0) continue;
          double* gbrow = gb.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) gbrow[p] += s * arow[p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (Node* pa = grad_parent(self, 0)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }
  });
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da,
                          DB db) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const std::size_t total = a.size();
  const std::size_t width = kind == Broadcast::rows ? b.size() : total;
  std::vector<double> out(total);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < total; ++i) out[i] = fwd(av[i], bv[i % width]);
  return make_result(op, a.shape(), std::move(out), {a, b},
                     [total, width, da, db](Node& self) {
                       const auto& av = self.parents[0]->value;
                       const auto& bv = self.parents[1]->value;
                       if (Node* pa = grad_parent(self, 0)) {
                         auto& ga = pa->grad_buffer();
                         for (std::size_t i = 0; i < total; ++i)
                           ga[i] += self.grad[i] * da(av[i], bv[i % width]);
                       }
                       if (Node* pb = grad_parent(self, 1)) {
                         auto& gb = pb->grad_buffer();
                         for (std::size_t i = 0; i < total; ++i)
                           gb[i % width] += self.grad[i] * db(av[i], bv[i % width]);
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [deriv](Node& self) {
    if (Node* pa = grad_parent(self, 0)) {
      auto& ga = pa->grad_buffer();
      const auto& av = pa->value;
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += self.grad[i] * deriv(av[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_elementwise(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& a) {
  return unary_elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary_elementwise(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_result("sum", {1}, {acc}, {a}, [](Node& self) {
    if (Node* pa = grad_parent(self, 0)) {
      for (double& g : pa->grad_buffer()) g += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis, "softmax");
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = av[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, av[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(av[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= z;
    }
  }
  return make_result("softmax", a.shape(), std::move(out), {a}, [v](Node& self) {
    Node* pa = grad_parent(self, 0);
    if (!pa) return;
    auto& ga = pa->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t i = base + l * v.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t i = base + l * v.inner;
          ga[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, std::size_t axis, double eps) {
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be > 0");
  const AxisView v = axis_view(a.shape(), axis, "layer_norm");
  std::vector<double> out(a.size());
  std::vector<double> inv_std(v.outer * v.inner);
  const auto av = a.values();
  const double n = static_cast<double>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mu = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) mu += av[base + l * v.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double d = av[base + l * v.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * v.inner + in] = is;
      for (std::size_t l = 0; l < v.len; ++l) {
        out[base + l * v.inner] = (av[base + l * v.inner] - mu) * is;
      }
    }
  }
  return make_result(
      "layer_norm", a.shape(), std::move(out), {a},
      [v, n, inv_std = std::move(inv_std)](Node& self) {
        Node* pa = grad_parent(self, 0);
        if (!pa) return;
        auto& ga = pa->grad_buffer();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.len * v.inner + in;
            double mean_g = 0.0, mean_gy = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) {
              const std::size_t i = base + l * v.inner;
              mean_g += g[i];
              mean_gy += g[i] * y[i];
            }
            mean_g /= n;
            mean_gy /= n;
            const double is = inv_std[o * v.inner + in];
            for (std::size_t l = 0; l < v.len; ++l) {
              const std::size_t i = base + l * v.inner;
              ga[i] += is * (g[i] - mean_g - y[i] * mean_gy);
            }
          }
        }
      });
}

Tensor embedding_gather(const Tensor& table, std::span<const int> indices,
                        const char* table_name) {
  require_rank2(table, "embedding_gather");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      std::string name = table_name ? table_name
                                    : (table.name().empty() ? "<unnamed>" : table.name());
      throw ShapeError("embedding_gather: index " + std::to_string(idx[r]) +
                       " out of bounds for table '" + name + "' with " + std::to_string(rows) +
                       " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  }
  const std::size_t n = idx.size();
  return make_result("embedding_gather", {n, d}, std::move(out), {table},
                     [d, idx = std::move(idx)](Node& self) {
                       Node* pt = grad_parent(self, 0);
                       if (!pt) return;
                       auto& gt = pt->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * d;
                         const double* src = self.grad.data() + r * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2(p, "concat");
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) {
      throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()) + " disagree off the concat axis");
    }
    total += p.dim(axis);
  }
  const Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(total * fixed);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto pv = p.values();
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(off * fixed));
    } else {
      const std::size_t w = p.dim(1);
      for (std::size_t r = 0; r < fixed; ++r)
        std::copy_n(pv.data() + r * w, w, out.data() + r * total + off);
    }
    off += p.dim(axis);
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return make_result("concat", shape, std::move(out), parts,
                     [axis, fixed, total, offsets, extents](Node& self) {
                       for (std::size_t k = 0; k < offsets.size(); ++k) {
                         Node* p = grad_parent(self, k);
                         if (!p) continue;
                         auto& gp = p->grad_buffer();
                         if (axis == 0) {
                           const double* src = self.grad.data() + offsets[k] * fixed;
                           for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
                         } else {
                           const std::size_t w = extents[k];
                           for (std::size_t r = 0; r < fixed; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               gp[r * w + c] += self.grad[r * total + offsets[k] + c];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice");
  if (axis > 1 || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const std::size_t out_rows = axis == 0 ? end - begin : rows;
  const std::size_t out_cols = axis == 1 ? end - begin : cols;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 1 ? begin : 0;
  std::vector<double> out(out_rows * out_cols);
  const auto av = a.values();
  for (std::size_t r = 0; r < out_rows; ++r)
    std::copy_n(av.data() + (r + r0) * cols + c0, out_cols, out.data() + r * out_cols);
  return make_result("slice", {out_rows, out_cols}, std::move(out), {a},
                     [out_rows, out_cols, r0, c0, cols](Node& self) {
                       Node* pa = grad_parent(self, 0);
                       if (!pa) return;
                       auto& ga = pa->grad_buffer();
                       for (std::size_t r = 0; r < out_rows; ++r)
                         for (std::size_t c = 0; c < out_cols; ++c)
                           ga[(r + r0) * cols + c0 + c] += self.grad[r * out_cols + c];
                     });
}

Tensor masked_fill(const Tensor& a, const std::vector<bool>& mask, double value) {
  if (mask.size() != a.size()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) +
                     " entries for tensor " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return make_result("masked_fill", a.shape(), std::move(out), {a}, [mask](Node& self) {
    Node* pa = grad_parent(self, 0);
    if (!pa) return;
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!mask[i]) ga[i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw NumericError("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(a.size());
  for (double& f : factor) f = rng.bernoulli(rate) ? 0.0 : keep_scale;
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor[i];
  return make_result("dropout", a.shape(), std::move(out), {a},
                     [factor = std::move(factor)](Node& self) {
                       Node* pa = grad_parent(self, 0);
                       if (!pa) return;
                       auto& ga = pa->grad_buffer();
                       for (std::size_t i = 0; i < ga.size(); ++i)
                         ga[i] += self.grad[i] * factor[i];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(n * vocab);
  const auto lv = logits.values();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] == ignore_index) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw ShapeError("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0," +
                       std::to_string(vocab) + ")");
    }
    const double* row = lv.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[r * vocab + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= z;
    total += (mx + std::log(z)) - row[tgt[r]];
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  return make_result("cross_entropy", {1}, {loss}, {logits},
                     [n, vocab, count, ignore_index, tgt = std::move(tgt),
                      probs = std::move(probs)](Node& self) {
                       Node* pl = grad_parent(self, 0);
                       if (!pl || count == 0) return;
                       auto& gl = pl->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(count);
                       for (std::size_t r = 0; r < n; ++r) {
                         if (tgt[r] == ignore_index) continue;
                         for (std::size_t j = 0; j < vocab; ++j)
                           gl[r * vocab + j] += s * probs[r * vocab + j];
                         gl[r * vocab + static_cast<std::size_t>(tgt[r])] -= s;
                       }
                     });
}

}  // namespace punr::ops
