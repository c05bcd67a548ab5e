#include "hpvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "hpvit/error.hpp"

namespace hpvit {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  Tensor t;
  t.s_ = std::make_shared<Storage>();
  t.s_->shape = std::move(shape);
  t.s_->data = std::move(values);
  t.s_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!s_) throw GraphError("use of an undefined tensor");
  return s_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!s_) throw GraphError("use of an undefined tensor");
  return s_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!s_) throw GraphError("use of an undefined tensor");
  return s_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& sh = shape();
  if (index.size() != sh.size()) throw ShapeError("index rank does not match " + shape_str(sh));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= sh[axis]) throw ShapeError("index out of range for " + shape_str(sh));
    flat = flat * sh[axis] + i;
    ++axis;
  }
  return s_->data[flat];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!s_) throw GraphError("use of an undefined tensor");
  s_->requires_grad = on;
}

std::span<const double> Tensor::grad() const {
  if (!s_) throw GraphError("use of an undefined tensor");
  return s_->grad;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

void Tensor::zero_grad() {
  if (s_) s_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!s_) return {};
  Tensor t;
  t.s_ = std::make_shared<Storage>(*s_);
  return t;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

using StoragePtr = std::shared_ptr<Tensor::Storage>;

std::vector<double>& grad_of(Tensor::Storage& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

// C[m,n] += A[m,p] * B[p,n]
void gemm_nn(std::size_t m, std::size_t p, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double av = a[i * p + k];
      const double* brow = b + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,p] += A[m,n] * B[p,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t p, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double* brow = b + k * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * p + k] += acc;
    }
  }
}

// C[p,n] += A[m,p]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t p, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double av = a[i * p + k];
      double* crow = c + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Graph plumbing

Tensor Graph::output(Shape shape, std::vector<double> values, bool is_tracked) const {
  if (precision_ == Precision::f32) {
    for (double& v : values) v = static_cast<float>(v);
  }
  return Tensor::from(std::move(shape), std::move(values), is_tracked);
}

void Graph::record(std::string op, std::vector<StoragePtr> inputs, std::function<void()> fn) {
  if (consumed_) throw GraphError("graph already ran backward; build a new graph for the next forward pass");
  nodes_.push_back(Node{std::move(op), std::move(fn), std::move(inputs)});
}

bool Graph::tracked(std::initializer_list<const Tensor*> inputs) const {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const Node& n : nodes_) names.push_back(n.op);
  return names;
}

void Graph::backward(const Tensor& loss) {
  if (consumed_) throw GraphError("stale graph: backward() already called; re-run the forward pass");
  if (!loss.defined() || loss.numel() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty() || !loss.requires_grad()) {
    throw GraphError("backward() on a loss that was not produced by recorded ops");
  }
  consumed_ = true;
  grad_of(*loss.s_)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
    if (precision_ == Precision::f32) {
      for (const StoragePtr& in : it->inputs) {
        for (double& g : in->grad) g = static_cast<float>(g);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul shape mismatch: " + shape_str(as) + " x " + shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();
  const std::size_t m = as[as.size() - 2];
  const std::size_t p = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != p) throw mismatch();

  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch;
  if (a_batch == b_batch || b_batch.empty()) {
    out_batch = a_batch;
  } else if (a_batch.empty()) {
    out_batch = b_batch;
  } else {
    throw mismatch();
  }
  const std::size_t batches = shape_numel(out_batch);
  const std::size_t a_stride = a_batch.empty() ? 0 : m * p;
  const std::size_t b_stride = b_batch.empty() ? 0 : p * n;

  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  const double* ad = a.s_->data.data();
  const double* bd = b.s_->data.data();
  for (std::size_t t = 0; t < batches; ++t) {
    gemm_nn(m, p, n, ad + t * a_stride, bd + t * b_stride, out.data() + t * m * n);
  }

  const bool trk = tracked({&a, &b});
  Tensor result = output(std::move(out_shape), std::move(out), trk);
  if (trk) {
    StoragePtr sa = a.s_, sb = b.s_, so = result.s_;
    record("matmul", {sa, sb}, [=] {
      if (so->grad.empty()) return;
      const double* g = so->grad.data();
      for (std::size_t t = 0; t < batches; ++t) {
        if (sa->requires_grad) {
          gemm_nt(m, n, p, g + t * m * n, sb->data.data() + t * b_stride, grad_of(*sa).data() + t * a_stride);
        }
        if (sb->requires_grad) {
          gemm_tn(m, p, n, sa->data.data() + t * a_stride, g + t * m * n, grad_of(*sb).data() + t * b_stride);
        }
      }
    });
  }
  return result;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    throw ShapeError("add: " + shape_str(bs) + " is not broadcastable onto " + shape_str(as));
  }
  const std::size_t inner = shape_numel(bs);
  const std::size_t outer = a.numel() / inner;
  std::vector<double> out(a.numel());
  const auto& ad = a.s_->data;
  const auto& bd = b.s_->data;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = ad[o * inner + i] + bd[i];
  }
  const bool trk = tracked({&a, &b});
  Tensor result = output(as, std::move(out), trk);
  if (trk) {
    StoragePtr sa = a.s_, sb = b.s_, so = result.s_;
    record("add", {sa, sb}, [=] {
      if (so->grad.empty()) return;
      const auto& g = so->grad;
      if (sa->requires_grad) {
        auto& ga = grad_of(*sa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (sb->requires_grad) {
        auto& gb = grad_of(*sb);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
        }
      }
    });
  }
  return result;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto& ad = a.s_->data;
  const auto& bd = b.s_->data;
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  const bool trk = tracked({&a, &b});
  Tensor result = output(a.shape(), std::move(out), trk);
  if (trk) {
    StoragePtr sa = a.s_, sb = b.s_, so = result.s_;
    record("mul", {sa, sb}, [=] {
      if (so->grad.empty()) return;
      const auto& g = so->grad;
      if (sa->requires_grad) {
        auto& ga = grad_of(*sa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        auto& gb = grad_of(*sb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * sa->data[i];
      }
    });
  }
  return result;
}

Tensor Graph::scale(const Tensor& x, double factor) {
  std::vector<double> out(x.s_->data);
  for (double& v : out) v *= factor;
  const bool trk = tracked({&x});
  Tensor result = output(x.shape(), std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("scale", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * factor;
    });
  }
  return result;
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const bool trk = tracked({&x});
  Tensor result = output(std::move(shape), x.s_->data, trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("reshape", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i];
    });
  }
  return result;
}

Tensor Graph::permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  const std::size_t rank = xs.size();
  std::vector<std::size_t> seen(axes);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen.size() != rank || seen[i] != i) throw ShapeError("permute: invalid axis order for " + shape_str(xs));
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * xs[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = xs[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // src_index[o] maps each output position to its input position.
  const std::size_t total = x.numel();
  auto src_index = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    (*src_index)[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += src_stride[d];
      if (counter[d] < out_shape[d]) break;
      src -= src_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = x.s_->data[(*src_index)[o]];
  const bool trk = tracked({&x});
  Tensor result = output(std::move(out_shape), std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("permute", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (std::size_t o = 0; o < total; ++o) gx[(*src_index)[o]] += so->grad[o];
    });
  }
  return result;
}

Tensor Graph::transpose(const Tensor& x) {
  const std::size_t rank = x.rank();
  if (rank < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(rank);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[rank - 1], axes[rank - 2]);
  return permute(x, axes);
}

Tensor Graph::concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  std::size_t total_axis = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    total_axis += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + static_cast<long>(axis)));
  const std::size_t inner = shape_numel(Shape(first.begin() + static_cast<long>(axis) + 1, first.end()));
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const std::size_t chunk = t.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(t.s_->data.begin() + static_cast<long>(o * chunk), chunk,
                  out.begin() + static_cast<long>(o * total_axis * inner + off));
    }
    off += chunk;
  }
  bool trk = false;
  for (const Tensor& t : parts) trk = trk || t.requires_grad();
  Tensor result = output(std::move(out_shape), std::move(out), trk);
  if (trk) {
    std::vector<StoragePtr> ins;
    for (const Tensor& t : parts) ins.push_back(t.s_);
    StoragePtr so = result.s_;
    const std::size_t row = total_axis * inner;
    record("concat", ins, [=] {
      if (so->grad.empty()) return;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        auto& g = grad_of(*ins[k]);
        const std::size_t chunk = ins[k]->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += so->grad[o * row + offsets[k] + i];
        }
      }
    });
  }
  return result;
}

Tensor Graph::slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw ShapeError("slice axis out of range for " + shape_str(xs));
  if (length == 0 || start + length > xs[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(axis) + " of " + shape_str(xs));
  }
  const std::size_t outer = shape_numel(Shape(xs.begin(), xs.begin() + static_cast<long>(axis)));
  const std::size_t inner = shape_numel(Shape(xs.begin() + static_cast<long>(axis) + 1, xs.end()));
  const std::size_t row = xs[axis] * inner;
  const std::size_t chunk = length * inner;
  Shape out_shape = xs;
  out_shape[axis] = length;
  std::vector<double> out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.s_->data.begin() + static_cast<long>(o * row + start * inner), chunk,
                out.begin() + static_cast<long>(o * chunk));
  }
  const bool trk = tracked({&x});
  Tensor result = output(std::move(out_shape), std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("slice", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < chunk; ++i) gx[o * row + start * inner + i] += so->grad[o * chunk + i];
      }
    });
  }
  return result;
}

Tensor Graph::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.s_->data) acc += v;
  const bool trk = tracked({&x});
  Tensor result = output({1}, {acc}, trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("sum", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (double& g : gx) g += so->grad[0];
    });
  }
  return result;
}

Tensor Graph::mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.s_->data) acc += v;
  const bool trk = tracked({&x});
  Tensor result = output({1}, {acc / n}, trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("mean", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (double& g : gx) g += so->grad[0] / n;
    });
  }
  return result;
}

Tensor Graph::softmax(const Tensor& x, int axis_arg) {
  const Shape& xs = x.shape();
  const std::size_t axis = normalize_axis(axis_arg, xs.size());
  const std::size_t outer = shape_numel(Shape(xs.begin(), xs.begin() + static_cast<long>(axis)));
  const std::size_t len = xs[axis];
  const std::size_t inner = shape_numel(Shape(xs.begin() + static_cast<long>(axis) + 1, xs.end()));
  const auto& in = x.s_->data;
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  const bool trk = tracked({&x});
  Tensor result = output(xs, std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("softmax", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      const auto& y = so->data;
      const auto& gy = so->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& xs = x.shape();
  const std::size_t d = xs.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                     " must be [" + std::to_string(d) + "] for input " + shape_str(xs));
  }
  const std::size_t rows = x.numel() / d;
  const auto& in = x.s_->data;
  const auto& gd = gain.s_->data;
  const auto& bd = bias.s_->data;
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  const bool trk = tracked({&x, &gain, &bias});
  Tensor result = output(xs, std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, sg = gain.s_, sb = bias.s_, so = result.s_;
    record("layer_norm", {sx, sg, sb}, [=] {
      if (so->grad.empty()) return;
      const auto& gy = so->grad;
      const auto& h = *xhat;
      if (sg->requires_grad || sb->requires_grad) {
        auto& gg = grad_of(*sg);
        auto& gb = grad_of(*sb);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += gy[r * d + j] * h[r * d + j];
            gb[j] += gy[r * d + j];
          }
        }
      }
      if (sx->requires_grad) {
        auto& gx = grad_of(*sx);
        const auto& gdat = sg->data;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = gy[r * d + j] * gdat[j];
            mean_dh += dh;
            mean_dh_h += dh * h[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = gy[r * d + j] * gdat[j];
            gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return result;
}

Tensor Graph::gelu(const Tensor& x) {
  const auto& in = x.s_->data;
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu_value(in[i]);
  const bool trk = tracked({&x});
  Tensor result = output(x.shape(), std::move(out), trk);
  if (trk) {
    StoragePtr sx = x.s_, so = result.s_;
    record("gelu", {sx}, [=] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * gelu_derivative(sx->data[i]);
    });
  }
  return result;
}

Tensor Graph::cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) throw ShapeError("cross_entropy expects [batch, classes] logits, got " + shape_str(ls));
  const std::size_t batch = ls[0];
  const std::size_t classes = ls[1];
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  const auto& in = logits.s_->data;
  auto probs = std::make_shared<std::vector<double>>(in.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = in.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - lse);
    total += lse - row[labels[b]];
  }
  const bool trk = tracked({&logits});
  Tensor result = output({1}, {total / static_cast<double>(batch)}, trk);
  if (trk) {
    StoragePtr sl = logits.s_, so = result.s_;
    std::vector<std::size_t> ys(labels.begin(), labels.end());
    record("cross_entropy", {sl}, [=] {
      if (so->grad.empty()) return;
      auto& gl = grad_of(*sl);
      const double scale = so->grad[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double target = c == ys[b] ? 1.0 : 0.0;
          gl[b * classes + c] += scale * ((*probs)[b * classes + c] - target);
        }
      }
    });
  }
  return result;
}

}  // namespace hpvit
