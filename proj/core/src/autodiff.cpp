#include "kgdial/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kgdial/error.hpp"

namespace kgdial {

const Tensor& Var::value() const { return graph_->value(id_); }

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::watch(const Tensor& external) {
  Node node;
  node.external = &external;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::uint32_t id) {
    return nodes_[id].requires_grad;
  });
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Graph::value(std::uint32_t id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.value;
}

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.grad_allocated) {
    node.grad = Tensor(value(id).shape(), 0.0);
    node.grad_allocated = true;
  }
  return node.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad_allocated) return node.grad;
  return Tensor(value(v.id()).shape(), 0.0);
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw UsageError("backward: loss belongs to another graph");
  if (value(loss.id()).size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_string(value(loss.id()).shape()));
  }
  grad_slot(loss.id())[0] += 1.0;
  for (std::int64_t id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad_allocated && node.backward) {
      node.backward(*this, static_cast<std::uint32_t>(id));
    }
  }
}

// ---------------------------------------------------------------------------
// ParameterSet / Binding

std::size_t ParameterSet::add(const std::string& name, Tensor init) {
  if (lookup_.count(name)) throw UsageError("duplicate parameter name: " + name);
  names_.push_back(name);
  tensors_.push_back(std::move(init));
  lookup_.emplace(name, names_.size() - 1);
  return names_.size() - 1;
}

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw UsageError("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const {
  return lookup_.find(name) != lookup_.end();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ParameterSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Tensor& t) { return t.all_finite(); });
}

Binding::Binding(Graph& graph, const ParameterSet& params)
    : graph_(&graph), params_(&params), bound_(params.size()) {}

Var Binding::operator()(std::size_t index) {
  Var& v = bound_.at(index);
  if (!v.valid()) v = graph_->watch((*params_)[index]);
  return v;
}

std::vector<Tensor> Binding::gradients() const {
  std::vector<Tensor> out;
  out.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (bound_[i].valid()) {
      out.push_back(graph_->grad(bound_[i]));
    } else {
      out.emplace_back((*params_)[i].shape(), 0.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace ad {
namespace {

Graph& same_graph(const char* op, Var a, Var b) {
  if (a.graph() != b.graph() || a.graph() == nullptr) {
    throw UsageError(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph();
}

void require_shape(const char* op, bool ok, const Shape& a, const Shape& b) {
  if (!ok) throw DimensionError(op, shape_string(a) + " vs " + shape_string(b));
}

// Rows and row width of a rank-1 (one row) or rank-2 tensor.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError("row op", "expected rank 1 or 2, got " + shape_string(t.shape()));
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward forward, Derivative derivative) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  const std::uint32_t in = a.id();
  return g.record(std::move(y), {in}, [in, derivative](Graph& gr, std::uint32_t self) {
    const Tensor& xv = gr.value(in);
    const Tensor& yv = gr.value(self);
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::uint32_t ia = a.id(), ib = b.id();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
      const Tensor& dy = gr.grad_of(self);
      if (gr.requires_grad(ia)) {
        Tensor& d = gr.grad_slot(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      }
      if (gr.requires_grad(ib)) {
        Tensor& d = gr.grad_slot(ib);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      }
    });
  }
  require_shape("add", x.rank() == 2 && y.rank() == 1 && x.dim(1) == y.dim(0), x.shape(),
                y.shape());
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(r, c) + y[c];
  return g.record(std::move(out), {ia, ib}, [ia, ib, rows, cols](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    if (gr.requires_grad(ia)) {
      Tensor& d = gr.grad_slot(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& d = gr.grad_slot(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) d[c] += dy.at(r, c);
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_shape("sub", x.shape() == y.shape(), x.shape(), y.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    if (gr.requires_grad(ia)) {
      Tensor& d = gr.grad_slot(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& d = gr.grad_slot(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_shape("mul", x.shape() == y.shape(), x.shape(), y.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    const Tensor& xv = gr.value(ia);
    const Tensor& yv = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor& d = gr.grad_slot(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * yv[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& d = gr.grad_slot(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * xv[i];
    }
  });
}

Var scale(Var a, Real factor) {
  return unary(
      a, [factor](Real x) { return x * factor; },
      [factor](Real, Real) { return factor; });
}

Var scale_by(Var a, Var s) {
  Graph& g = same_graph("scale_by", a, s);
  if (s.size() != 1) throw DimensionError("scale_by", "factor must have one element, got " + shape_string(s.shape()));
  const Real k = s.value()[0];
  Tensor out = a.value();
  for (Real& v : out.values()) v *= k;
  const std::uint32_t ia = a.id(), is = s.id();
  return g.record(std::move(out), {ia, is}, [ia, is](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    if (gr.requires_grad(ia)) {
      const Real kv = gr.value(is)[0];
      Tensor& dx = gr.grad_slot(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * kv;
    }
    if (gr.requires_grad(is)) {
      const Tensor& xv = gr.value(ia);
      Real total = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) total += dy[i] * xv[i];
      gr.grad_slot(is)[0] += total;
    }
  });
}

Var add_scalar(Var a, Real offset) {
  return unary(
      a, [offset](Real x) { return x + offset; }, [](Real, Real) { return 1.0; });
}

Var one_minus(Var a) {
  return unary(
      a, [](Real x) { return 1.0 - x; }, [](Real, Real) { return -1.0; });
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::uint32_t ia = a.id(), ib = b.id();

  if (x.rank() == 2 && y.rank() == 2) {
    require_shape("matmul", x.dim(1) == y.dim(0), x.shape(), y.shape());
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
      Real* orow = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const Real xv = x[i * k + p];
        const Real* yrow = y.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
      }
    }
    return g.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& gr, std::uint32_t self) {
      const Tensor& dy = gr.grad_of(self);
      const Tensor& xv = gr.value(ia);
      const Tensor& yv = gr.value(ib);
      if (gr.requires_grad(ia)) {
        Tensor& dx = gr.grad_slot(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            Real acc = 0;
            const Real* yrow = yv.data() + p * n;
            const Real* drow = dy.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += drow[j] * yrow[j];
            dx[i * k + p] += acc;
          }
      }
      if (gr.requires_grad(ib)) {
        Tensor& dw = gr.grad_slot(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const Real xval = xv[i * k + p];
            Real* wrow = dw.data() + p * n;
            const Real* drow = dy.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) wrow[j] += xval * drow[j];
          }
      }
    });
  }

  if (x.rank() == 2 && y.rank() == 1) {
    require_shape("matmul", x.dim(1) == y.dim(0), x.shape(), y.shape());
    const std::size_t m = x.dim(0), k = x.dim(1);
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
      Real acc = 0;
      const Real* xrow = x.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) acc += xrow[p] * y[p];
      out[i] = acc;
    }
    return g.record(std::move(out), {ia, ib}, [ia, ib, m, k](Graph& gr, std::uint32_t self) {
      const Tensor& dy = gr.grad_of(self);
      const Tensor& wv = gr.value(ia);
      const Tensor& vv = gr.value(ib);
      if (gr.requires_grad(ia)) {
        Tensor& dw = gr.grad_slot(ia);
        for (std::size_t i = 0; i < m; ++i) {
          const Real d = dy[i];
          if (d == 0.0) continue;
          Real* wrow = dw.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) wrow[p] += d * vv[p];
        }
      }
      if (gr.requires_grad(ib)) {
        Tensor& dv = gr.grad_slot(ib);
        for (std::size_t i = 0; i < m; ++i) {
          const Real d = dy[i];
          if (d == 0.0) continue;
          const Real* wrow = wv.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) dv[p] += d * wrow[p];
        }
      }
    });
  }

  require_shape("matmul", x.rank() == 1 && y.rank() == 2 && x.dim(0) == y.dim(0), x.shape(),
                y.shape());
  const std::size_t k = y.dim(0), n = y.dim(1);
  Tensor out(Shape{n});
  for (std::size_t p = 0; p < k; ++p) {
    const Real xv = x[p];
    const Real* yrow = y.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xv * yrow[j];
  }
  return g.record(std::move(out), {ia, ib}, [ia, ib, k, n](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    const Tensor& vv = gr.value(ia);
    const Tensor& wv = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor& dv = gr.grad_slot(ia);
      for (std::size_t p = 0; p < k; ++p) {
        Real acc = 0;
        const Real* wrow = wv.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * dy[j];
        dv[p] += acc;
      }
    }
    if (gr.requires_grad(ib)) {
      Tensor& dw = gr.grad_slot(ib);
      for (std::size_t p = 0; p < k; ++p) {
        Real* wrow = dw.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) wrow[j] += vv[p] * dy[j];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph();
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape", shape_string(a.shape()) + " to " + shape_string(shape));
  }
  const std::uint32_t in = a.id();
  return g.record(Tensor(std::move(shape), std::vector<Real>(a.value().values().begin(), a.value().values().end())),
                  {in}, [in](Graph& gr, std::uint32_t self) {
                    const Tensor& dy = gr.grad_of(self);
                    Tensor& dx = gr.grad_slot(in);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                  });
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("transpose", "expected rank 2, got " + shape_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  const std::uint32_t in = a.id();
  return g.record(std::move(out), {in}, [in, m, n](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no operands");
  Graph& g = *parts.front().graph();
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    same_graph("concat", parts.front(), p);
    ids.push_back(p.id());
  }
  const Tensor& first = parts.front().value();

  if (first.rank() == 1 || (first.rank() == 2 && axis == 0)) {
    // Contiguous layout: operands are laid end to end.
    const std::size_t width = first.rank() == 2 ? first.dim(1) : 1;
    std::size_t total = 0;
    for (const Var& p : parts) {
      const Tensor& t = p.value();
      require_shape("concat", t.rank() == first.rank() && (t.rank() == 1 || t.dim(1) == width),
                    first.shape(), t.shape());
      total += t.rank() == 1 ? t.dim(0) : t.dim(0);
    }
    Tensor out(first.rank() == 1 ? Shape{total} : Shape{total, width});
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const Tensor& t = p.value();
      std::copy(t.data(), t.data() + t.size(), out.data() + offset);
      offset += t.size();
    }
    return g.record(std::move(out), ids, [ids](Graph& gr, std::uint32_t self) {
      const Tensor& dy = gr.grad_of(self);
      std::size_t off = 0;
      for (std::uint32_t id : ids) {
        const std::size_t n = gr.value(id).size();
        if (gr.requires_grad(id)) {
          Tensor& d = gr.grad_slot(id);
          for (std::size_t i = 0; i < n; ++i) d[i] += dy[off + i];
        }
        off += n;
      }
    });
  }

  if (first.rank() != 2 || axis != 1) {
    throw DimensionError("concat", "unsupported axis " + std::to_string(axis) + " for shape " +
                                       shape_string(first.shape()));
  }
  const std::size_t rows = first.dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    require_shape("concat", t.rank() == 2 && t.dim(0) == rows, first.shape(), t.shape());
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor out(Shape{rows, total});
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(t.data() + r * widths[k], t.data() + (r + 1) * widths[k],
                out.data() + r * total + col);
    col += widths[k];
  }
  return g.record(std::move(out), ids, [ids, widths, rows, total](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        Tensor& d = gr.grad_slot(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += dy[r * total + c0 + c];
      }
      c0 += widths[k];
    }
  });
}

Var slice(Var a, std::size_t start, std::size_t length) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (x.rank() != 1 && x.rank() != 2) {
    throw DimensionError("slice", "expected rank 1 or 2, got " + shape_string(x.shape()));
  }
  if (start + length > x.dim(0)) {
    throw DimensionError("slice", "range [" + std::to_string(start) + "," +
                                      std::to_string(start + length) + ") outside " +
                                      shape_string(x.shape()));
  }
  const std::size_t width = x.rank() == 2 ? x.dim(1) : 1;
  Shape shape = x.shape();
  shape[0] = length;
  Tensor out(shape);
  std::copy(x.data() + start * width, x.data() + (start + length) * width, out.data());
  const std::uint32_t in = a.id();
  const std::size_t offset = start * width;
  return g.record(std::move(out), {in}, [in, offset](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[offset + i] += dy[i];
  });
}

Var row(Var a, std::size_t index) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("row", "expected rank 2, got " + shape_string(x.shape()));
  if (index >= x.dim(0)) {
    throw DimensionError("row", "index " + std::to_string(index) + " outside " + shape_string(x.shape()));
  }
  Graph& g = *a.graph();
  const std::size_t width = x.dim(1);
  Tensor out(Shape{width});
  std::copy(x.data() + index * width, x.data() + (index + 1) * width, out.data());
  const std::uint32_t in = a.id();
  const std::size_t offset = index * width;
  return g.record(std::move(out), {in}, [in, offset](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[offset + i] += dy[i];
  });
}

Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw UsageError("stack: no operands");
  Graph& g = *rows.front().graph();
  const std::size_t width = rows.front().value().size();
  std::vector<std::uint32_t> ids;
  Tensor out(Shape{rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    same_graph("stack", rows.front(), rows[r]);
    const Tensor& t = rows[r].value();
    require_shape("stack", t.rank() == 1 && t.dim(0) == width, rows.front().shape(), t.shape());
    std::copy(t.data(), t.data() + width, out.data() + r * width);
    ids.push_back(rows[r].id());
  }
  return g.record(std::move(out), ids, [ids, width](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!gr.requires_grad(ids[r])) continue;
      Tensor& d = gr.grad_slot(ids[r]);
      for (std::size_t c = 0; c < width; ++c) d[c] += dy[r * width + c];
    }
  });
}

Var softmax(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  const auto [rows, width] = as_rows(x);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * width;
    Real* yr = out.data() + r * width;
    const Real mx = *std::max_element(xr, xr + width);
    Real total = 0;
    for (std::size_t c = 0; c < width; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < width; ++c) yr[c] /= total;
  }
  const std::uint32_t in = a.id();
  return g.record(std::move(out), {in}, [in, rows, width](Graph& gr, std::uint32_t self) {
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * width;
      Real inner = 0;
      for (std::size_t c = 0; c < width; ++c) inner += dy[o + c] * y[o + c];
      for (std::size_t c = 0; c < width; ++c) dx[o + c] += y[o + c] * (dy[o + c] - inner);
    }
  });
}

Var log_softmax(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  const auto [rows, width] = as_rows(x);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * width;
    Real* yr = out.data() + r * width;
    const Real mx = *std::max_element(xr, xr + width);
    Real total = 0;
    for (std::size_t c = 0; c < width; ++c) total += std::exp(xr[c] - mx);
    const Real lse = mx + std::log(total);
    for (std::size_t c = 0; c < width; ++c) yr[c] = xr[c] - lse;
  }
  const std::uint32_t in = a.id();
  return g.record(std::move(out), {in}, [in, rows, width](Graph& gr, std::uint32_t self) {
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * width;
      Real total = 0;
      for (std::size_t c = 0; c < width; ++c) total += dy[o + c];
      for (std::size_t c = 0; c < width; ++c) dx[o + c] += dy[o + c] - std::exp(y[o + c]) * total;
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](Real x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const Real e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log_floor(Var a, Real floor) {
  return unary(
      a, [floor](Real x) { return std::log(std::max(x, floor)); },
      [floor](Real x, Real) { return x > floor ? 1.0 / x : 0.0; });
}

Var sum(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Real total = 0;
  for (Real v : x.values()) total += v;
  const std::uint32_t in = a.id();
  return g.record(Tensor::scalar(total), {in}, [in](Graph& gr, std::uint32_t self) {
    const Real d = gr.grad_of(self)[0];
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw DimensionError("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(n));
}

Var dot(Var a, Var b) {
  Graph& g = same_graph("dot", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_shape("dot", x.size() == y.size(), x.shape(), y.shape());
  Real total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * y[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return g.record(Tensor::scalar(total), {ia, ib}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Real d = gr.grad_of(self)[0];
    const Tensor& xv = gr.value(ia);
    const Tensor& yv = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor& dx = gr.grad_slot(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * yv[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& dyv = gr.grad_slot(ib);
      for (std::size_t i = 0; i < dyv.size(); ++i) dyv[i] += d * xv[i];
    }
  });
}

Var pick(Var a, std::size_t index) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (index >= x.size()) {
    throw DimensionError("pick", "index " + std::to_string(index) + " outside " + shape_string(x.shape()));
  }
  const std::uint32_t in = a.id();
  return g.record(Tensor::scalar(x[index]), {in}, [in, index](Graph& gr, std::uint32_t self) {
    gr.grad_slot(in)[index] += gr.grad_of(self)[0];
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  Graph& g = *table.graph();
  const Tensor& t = table.value();
  if (t.rank() != 2) throw DimensionError("embedding", "table must be rank 2, got " + shape_string(t.shape()));
  const std::size_t width = t.dim(1);
  Tensor out(Shape{ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= t.dim(0)) {
      throw DimensionError("embedding", "id " + std::to_string(ids[r]) + " outside table " +
                                            shape_string(t.shape()));
    }
    std::copy(t.data() + ids[r] * width, t.data() + (ids[r] + 1) * width, out.data() + r * width);
  }
  const std::uint32_t in = table.id();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return g.record(std::move(out), {in}, [in, rows, width](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dt = gr.grad_slot(in);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) dt[rows[r] * width + c] += dy[r * width + c];
  });
}

Var embedding_row(Var table, std::size_t id) {
  Graph& g = *table.graph();
  const Tensor& t = table.value();
  if (t.rank() != 2 || id >= t.dim(0)) {
    throw DimensionError("embedding", "id " + std::to_string(id) + " outside table " +
                                          shape_string(t.shape()));
  }
  const std::size_t width = t.dim(1);
  Tensor out(Shape{width});
  std::copy(t.data() + id * width, t.data() + (id + 1) * width, out.data());
  const std::uint32_t in = table.id();
  return g.record(std::move(out), {in}, [in, id, width](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dt = gr.grad_slot(in);
    for (std::size_t c = 0; c < width; ++c) dt[id * width + c] += dy[c];
  });
}

Var scatter_add(Var a, std::span<const std::size_t> indices, std::size_t size) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (x.rank() != 1 || x.dim(0) != indices.size()) {
    throw DimensionError("scatter_add", shape_string(x.shape()) + " vs " +
                                            std::to_string(indices.size()) + " indices");
  }
  Tensor out(Shape{size});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size) {
      throw DimensionError("scatter_add", "index " + std::to_string(indices[i]) + " >= " +
                                              std::to_string(size));
    }
    out[indices[i]] += x[i];
  }
  const std::uint32_t in = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return g.record(std::move(out), {in}, [in, idx](Graph& gr, std::uint32_t self) {
    const Tensor& dy = gr.grad_of(self);
    Tensor& dx = gr.grad_slot(in);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i] += dy[idx[i]];
  });
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  Graph& g = same_graph("layer_norm", x, gain);
  same_graph("layer_norm", x, bias);
  const Tensor& xv = x.value();
  const auto [rows, width] = as_rows(xv);
  require_shape("layer_norm", gain.size() == width && bias.size() == width, xv.shape(),
                gain.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<Real> xhat(xv.size());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * width;
    Real mu = 0;
    for (std::size_t c = 0; c < width; ++c) mu += xr[c];
    mu /= static_cast<Real>(width);
    Real var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<Real>(width);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      xhat[i] = (xr[c] - mu) * rstd[r];
      out[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  const std::uint32_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.record(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, rows, width, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Graph& gr, std::uint32_t self) {
                    const Tensor& dy = gr.grad_of(self);
                    const Tensor& gv2 = gr.value(ig);
                    if (gr.requires_grad(ig)) {
                      Tensor& dg = gr.grad_slot(ig);
                      for (std::size_t i = 0; i < dy.size(); ++i) dg[i % width] += dy[i] * xhat[i];
                    }
                    if (gr.requires_grad(ib)) {
                      Tensor& db = gr.grad_slot(ib);
                      for (std::size_t i = 0; i < dy.size(); ++i) db[i % width] += dy[i];
                    }
                    if (gr.requires_grad(ix)) {
                      Tensor& dx = gr.grad_slot(ix);
                      const Real n = static_cast<Real>(width);
                      for (std::size_t r = 0; r < rows; ++r) {
                        Real mean_d = 0, mean_dx = 0;
                        for (std::size_t c = 0; c < width; ++c) {
                          const std::size_t i = r * width + c;
                          const Real d = dy[i] * gv2[c];
                          mean_d += d;
                          mean_dx += d * xhat[i];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (std::size_t c = 0; c < width; ++c) {
                          const std::size_t i = r * width + c;
                          const Real d = dy[i] * gv2[c];
                          dx[i] += rstd[r] * (d - mean_d - xhat[i] * mean_dx);
                        }
                      }
                    }
                  });
}

}  // namespace ad
}  // namespace kgdial
