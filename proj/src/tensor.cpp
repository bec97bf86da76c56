#include "ckm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Dense>

namespace ckm::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

// Reductions in a fixed order. Eigen's vectorized reductions peel up to the first aligned
// element, so their rounding would depend on where a buffer happens to live.
double ordered_sum(const double* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

std::shared_ptr<Node> make_node(Shape shape, const char* op) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  n->op = op;
  return n;
}

// Output node wired to `parents`; records history only if some parent needs it.
std::shared_ptr<Node> make_result(Shape shape, const char* op, std::initializer_list<const Tensor*> parents) {
  auto n = make_node(std::move(shape), op);
  if (!g_grad_enabled) return n;
  for (const Tensor* p : parents)
    if (p->defined() && p->requires_grad()) n->requires_grad = true;
  if (n->requires_grad)
    for (const Tensor* p : parents)
      if (p->defined()) n->parents.push_back(p->ptr());
  return n;
}

// Gradient buffer of a parent, or null when it does not take gradients.
double* grad_buf(Node& n) {
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad.data();
}

double* grad_buf(const std::shared_ptr<Node>& n) { return grad_buf(*n); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  require(a.shape().size() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

// Geometry shared by conv2d and its transpose: an image (n,c,h,w) read through k x k windows
// of stride s and zero padding p gives (ho, wo) window positions.
struct ConvGeom {
  int n, c, h, w, k, s, p, ho, wo;
  int rows() const { return c * k * k; }
  int cols() const { return n * ho * wo; }
};

// cols[(ci*k+ki)*k+kj][(b*ho+oh)*wo+ow] = x[b, ci, oh*s-p+ki, ow*s-p+kj]
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t ncols = static_cast<std::size_t>(g.cols());
  for (int ci = 0; ci < g.c; ++ci)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = cols + static_cast<std::size_t>((ci * g.k + ki) * g.k + kj) * ncols;
        for (int b = 0; b < g.n; ++b) {
          const double* xb = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.s - g.p + ki;
            double* dst = row + (static_cast<std::size_t>(b) * g.ho + oh) * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(dst, dst + g.wo, 0.0);
              continue;
            }
            const double* src = xb + static_cast<std::size_t>(ih) * g.w;
            if (g.s == 1) {
              const int lo = std::max(0, g.p - kj), hi = std::min(g.wo, g.w + g.p - kj);
              for (int ow = 0; ow < std::min(lo, g.wo); ++ow) dst[ow] = 0.0;
              for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow - g.p + kj];
              for (int ow = std::max(hi, 0); ow < g.wo; ++ow) dst[ow] = 0.0;
            } else {
              for (int ow = 0; ow < g.wo; ++ow) {
                const int iw = ow * g.s - g.p + kj;
                dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
              }
            }
          }
        }
      }
}

// Adjoint of im2col: accumulates columns back into x.
void col2im(const ConvGeom& g, const double* cols, double* x) {
  const std::size_t ncols = static_cast<std::size_t>(g.cols());
  for (int ci = 0; ci < g.c; ++ci)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = cols + static_cast<std::size_t>((ci * g.k + ki) * g.k + kj) * ncols;
        for (int b = 0; b < g.n; ++b) {
          double* xb = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.s - g.p + ki;
            if (ih < 0 || ih >= g.h) continue;
            const double* src = row + (static_cast<std::size_t>(b) * g.ho + oh) * g.wo;
            double* dst = xb + static_cast<std::size_t>(ih) * g.w;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.s - g.p + kj;
              if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
            }
          }
        }
      }
}

// (n, ch, hw) <-> (ch, n*hw) layout changes.
void nchw_to_cm(const double* x, int n, int ch, int hw, double* out) {
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < ch; ++c)
      std::copy_n(x + (static_cast<std::size_t>(b) * ch + c) * hw, hw,
                  out + (static_cast<std::size_t>(c) * n + b) * hw);
}

void cm_to_nchw(const double* x, int n, int ch, int hw, double* out) {
  for (int c = 0; c < ch; ++c)
    for (int b = 0; b < n; ++b)
      std::copy_n(x + (static_cast<std::size_t>(c) * n + b) * hw, hw,
                  out + (static_cast<std::size_t>(b) * ch + c) * hw);
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  auto n = make_node(shape, "leaf");
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != ad::numel(shape))
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, bool requires_grad) {
  auto n = make_node(shape, "leaf");
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : n->value) v = nd(rng);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({1}, v, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), data(), false); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto n = make_result(a.shape(), "add", {&a, &b});
  CMapV av(a.data().data(), a.numel()), bv(b.data().data(), b.numel());
  MapV(n->value.data(), n->value.size()) = av + bv;
  if (n->requires_grad)
    n->backward = [](Node& self) {
      const CMapV g(self.grad.data(), self.grad.size());
      for (auto& p : self.parents)
        if (double* d = grad_buf(p)) MapV(d, g.size()) += g;
    };
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  auto n = make_result(a.shape(), "sub", {&a, &b});
  CMapV av(a.data().data(), a.numel()), bv(b.data().data(), b.numel());
  MapV(n->value.data(), n->value.size()) = av - bv;
  if (n->requires_grad)
    n->backward = [](Node& self) {
      const CMapV g(self.grad.data(), self.grad.size());
      if (double* d = grad_buf(self.parents[0])) MapV(d, g.size()) += g;
      if (double* d = grad_buf(self.parents[1])) MapV(d, g.size()) -= g;
    };
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  auto n = make_result(a.shape(), "mul", {&a, &b});
  CMapV av(a.data().data(), a.numel()), bv(b.data().data(), b.numel());
  MapV(n->value.data(), n->value.size()) = av.cwiseProduct(bv);
  if (n->requires_grad)
    n->backward = [](Node& self) {
      const CMapV g(self.grad.data(), self.grad.size());
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      const CMapV av(pa->value.data(), g.size()), bv(pb->value.data(), g.size());
      if (double* d = grad_buf(pa)) MapV(d, g.size()) += g.cwiseProduct(bv);
      if (double* d = grad_buf(pb)) MapV(d, g.size()) += g.cwiseProduct(av);
    };
  return Tensor(n);
}

Tensor scale(const Tensor& a, double s) {
  auto n = make_result(a.shape(), "scale", {&a});
  MapV(n->value.data(), n->value.size()) = s * CMapV(a.data().data(), a.numel());
  if (n->requires_grad)
    n->backward = [s](Node& self) {
      if (double* d = grad_buf(self.parents[0]))
        MapV(d, self.grad.size()) += s * CMapV(self.grad.data(), self.grad.size());
    };
  return Tensor(n);
}

Tensor relu(const Tensor& x) {
  auto n = make_result(x.shape(), "relu", {&x});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::max(0.0, x.data()[i]);
  if (n->requires_grad)
    n->backward = [](Node& self) {
      double* d = grad_buf(self.parents[0]);
      if (!d) return;
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xv[i] > 0.0) d[i] += self.grad[i];
    };
  return Tensor(n);
}

Tensor silu(const Tensor& x) {
  auto n = make_result(x.shape(), "silu", {&x});
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    const double v = x.data()[i];
    n->value[i] = v / (1.0 + std::exp(-v));
  }
  if (n->requires_grad)
    n->backward = [](Node& self) {
      double* d = grad_buf(self.parents[0]);
      if (!d) return;
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double sg = 1.0 / (1.0 + std::exp(-xv[i]));
        d[i] += self.grad[i] * sg * (1.0 + xv[i] * (1.0 - sg));
      }
    };
  return Tensor(n);
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  auto n = make_result({m, nn}, "matmul", {&a, &b});
  MapM(n->value.data(), m, nn).noalias() = CMapM(a.data().data(), m, k) * CMapM(b.data().data(), k, nn);
  if (n->requires_grad)
    n->backward = [m, k, nn](Node& self) {
      const CMapM g(self.grad.data(), m, nn);
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      if (double* d = grad_buf(pa)) MapM(d, m, k).noalias() += g * CMapM(pb->value.data(), k, nn).transpose();
      if (double* d = grad_buf(pb)) MapM(d, k, nn).noalias() += CMapM(pa->value.data(), m, k).transpose() * g;
    };
  return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require(x.dim(1) == w.dim(1), "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int nb = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (b.defined()) require(b.shape() == Shape{out}, "linear: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  auto n = make_result({nb, out}, "linear", {&x, &w, &b});
  MapM y(n->value.data(), nb, out);
  y.noalias() = CMapM(x.data().data(), nb, in) * CMapM(w.data().data(), out, in).transpose();
  if (b.defined()) y.rowwise() += CMapV(b.data().data(), out).transpose();
  if (n->requires_grad)
    n->backward = [nb, in, out, has_b = b.defined()](Node& self) {
      const CMapM g(self.grad.data(), nb, out);
      const auto& px = self.parents[0];
      const auto& pw = self.parents[1];
      if (double* d = grad_buf(px)) MapM(d, nb, in).noalias() += g * CMapM(pw->value.data(), out, in);
      if (double* d = grad_buf(pw)) MapM(d, out, in).noalias() += g.transpose() * CMapM(px->value.data(), nb, in);
      if (has_b)
        if (double* d = grad_buf(self.parents[2])) MapV(d, out) += g.colwise().sum().transpose();
    };
  return Tensor(n);
}

// ---- convolution ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  require(w.dim(2) == w.dim(3), "conv2d: square kernels only, got " + shape_str(w.shape()));
  require(x.dim(1) == w.dim(1), "conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (stride < 1 || padding < 0) throw RangeError("conv2d: stride must be >= 1 and padding >= 0");
  const int k = w.dim(2), o = w.dim(0);
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, stride, padding, 0, 0};
  require(g.h + 2 * padding >= k && g.w + 2 * padding >= k,
          "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
  g.ho = (g.h + 2 * padding - k) / stride + 1;
  g.wo = (g.w + 2 * padding - k) / stride + 1;
  if (b.defined()) require(b.shape() == Shape{o}, "conv2d: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  auto n = make_result({g.n, o, g.ho, g.wo}, "conv2d", {&x, &w, &b});
  // One GEMM per image keeps the column buffer cache-resident and the output already in
  // (n, c, h, w) order.
  const int hw = g.ho * g.wo;
  const ConvGeom g1{1, g.c, g.h, g.w, k, stride, padding, g.ho, g.wo};
  const bool pointwise = k == 1 && stride == 1 && padding == 0;
  const std::size_t in_plane = static_cast<std::size_t>(g.c) * g.h * g.w, out_plane = static_cast<std::size_t>(o) * hw;
  {
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(g1.rows()) * hw);
    const CMapM W(w.data().data(), o, g1.rows());
    for (int bi = 0; bi < g.n; ++bi) {
      const double* xb = x.data().data() + bi * in_plane;
      if (!pointwise) im2col(g1, xb, cols.data());
      MapM Y(n->value.data() + bi * out_plane, o, hw);
      Y.noalias() = W * CMapM(pointwise ? xb : cols.data(), g1.rows(), hw);
      if (b.defined()) Y.colwise() += CMapV(b.data().data(), o);
    }
  }
  if (n->requires_grad)
    n->backward = [g1, nb = g.n, o, hw, pointwise, in_plane, out_plane, has_b = b.defined()](Node& self) {
      const auto& px = self.parents[0];
      const auto& pw = self.parents[1];
      double* db = has_b ? grad_buf(self.parents[2]) : nullptr;
      double* dw = grad_buf(pw);
      double* dx = grad_buf(px);
      const CMapM W(pw->value.data(), o, g1.rows());
      std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(g1.rows()) * hw);
      std::vector<double> dcols(dx && !pointwise ? static_cast<std::size_t>(g1.rows()) * hw : 0);
      for (int bi = 0; bi < nb; ++bi) {
        const CMapM G(self.grad.data() + bi * out_plane, o, hw);
        if (db)
          for (int oi = 0; oi < o; ++oi) db[oi] += ordered_sum(self.grad.data() + bi * out_plane + static_cast<std::size_t>(oi) * hw, static_cast<std::size_t>(hw));
        const double* xb = px->value.data() + bi * in_plane;
        if (dw) {
          // Columns are recomputed rather than kept from the forward pass.
          if (!pointwise) im2col(g1, xb, cols.data());
          MapM(dw, o, g1.rows()).noalias() += G * CMapM(pointwise ? xb : cols.data(), g1.rows(), hw).transpose();
        }
        if (dx) {
          if (pointwise) {
            MapM(dx + bi * in_plane, g1.rows(), hw).noalias() += W.transpose() * G;
          } else {
            MapM(dcols.data(), g1.rows(), hw).noalias() = W.transpose() * G;
            col2im(g1, dcols.data(), dx + bi * in_plane);
          }
        }
      }
    };
  return Tensor(n);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  require(w.dim(2) == w.dim(3), "conv_transpose2d: square kernels only, got " + shape_str(w.shape()));
  require(x.dim(1) == w.dim(0), "conv_transpose2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (stride < 1 || padding < 0) throw RangeError("conv_transpose2d: stride must be >= 1 and padding >= 0");
  const int ci = w.dim(0), co = w.dim(1), k = w.dim(2);
  const int nb = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int ho = (h - 1) * stride - 2 * padding + k, wo = (wd - 1) * stride - 2 * padding + k;
  require(ho > 0 && wo > 0, "conv_transpose2d: empty output for input " + shape_str(x.shape()));
  if (b.defined()) require(b.shape() == Shape{co}, "conv_transpose2d: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  // Adjoint of a conv2d whose input is the (ho, wo) output and whose output is (h, wd).
  const ConvGeom g{nb, co, ho, wo, k, stride, padding, h, wd};
  require((ho + 2 * padding - k) / stride + 1 == h && (wo + 2 * padding - k) / stride + 1 == wd,
          "conv_transpose2d: inconsistent geometry");
  auto n = make_result({nb, co, ho, wo}, "conv_transpose2d", {&x, &w, &b});
  const int hw = h * wd;
  {
    std::vector<double> xm(static_cast<std::size_t>(ci) * g.cols());
    nchw_to_cm(x.data().data(), nb, ci, hw, xm.data());
    std::vector<double> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    MapM(cols.data(), g.rows(), g.cols()).noalias() = CMapM(w.data().data(), ci, g.rows()).transpose() * CMapM(xm.data(), ci, g.cols());
    col2im(g, cols.data(), n->value.data());
    if (b.defined())
      for (int bi = 0; bi < nb; ++bi)
        for (int c = 0; c < co; ++c) {
          double* p = n->value.data() + (static_cast<std::size_t>(bi) * co + c) * ho * wo;
          for (int i = 0; i < ho * wo; ++i) p[i] += b.data()[static_cast<std::size_t>(c)];
        }
  }
  if (n->requires_grad)
    n->backward = [g, ci, co, nb, hw, has_b = b.defined()](Node& self) {
      const auto& px = self.parents[0];
      const auto& pw = self.parents[1];
      std::vector<double> cols(static_cast<std::size_t>(g.rows()) * g.cols());
      im2col(g, self.grad.data(), cols.data());
      const CMapM C(cols.data(), g.rows(), g.cols());
      if (double* dx = grad_buf(px)) {
        std::vector<double> dxm(static_cast<std::size_t>(ci) * g.cols());
        MapM(dxm.data(), ci, g.cols()).noalias() = CMapM(pw->value.data(), ci, g.rows()) * C;
        std::vector<double> tmp(dxm.size());
        cm_to_nchw(dxm.data(), nb, ci, hw, tmp.data());
        MapV(dx, tmp.size()) += CMapV(tmp.data(), tmp.size());
      }
      if (double* dw = grad_buf(pw)) {
        std::vector<double> xm(static_cast<std::size_t>(ci) * g.cols());
        nchw_to_cm(px->value.data(), nb, ci, hw, xm.data());
        MapM(dw, ci, g.rows()).noalias() += CMapM(xm.data(), ci, g.cols()) * C.transpose();
      }
      if (has_b)
        if (double* db = grad_buf(self.parents[2])) {
          const int area = g.h * g.w;
          for (int bi = 0; bi < nb; ++bi)
            for (int c = 0; c < co; ++c) {
              const double* p = self.grad.data() + (static_cast<std::size_t>(bi) * co + c) * area;
              db[c] += std::accumulate(p, p + area, 0.0);
            }
        }
    };
  return Tensor(n);
}

Tensor avg_pool2d(const Tensor& x, int k) {
  require_rank(x, 4, "avg_pool2d");
  if (k < 1) throw RangeError("avg_pool2d: kernel must be >= 1");
  require(x.dim(2) % k == 0 && x.dim(3) % k == 0,
          "avg_pool2d: spatial size of " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / k, wo = w / k;
  auto n = make_result({x.dim(0), x.dim(1), ho, wo}, "avg_pool2d", {&x});
  const double inv = 1.0 / (k * k);
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data().data() + static_cast<std::size_t>(p) * h * w;
    double* dst = n->value.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) dst[(r / k) * wo + c / k] += src[r * w + c] * inv;
  }
  if (n->requires_grad)
    n->backward = [planes, h, w, ho, wo, k, inv](Node& self) {
      double* d = grad_buf(self.parents[0]);
      if (!d) return;
      for (int p = 0; p < planes; ++p) {
        const double* g = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
        double* dst = d + static_cast<std::size_t>(p) * h * w;
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) dst[r * w + c] += g[(r / k) * wo + c / k] * inv;
      }
    };
  return Tensor(n);
}

Tensor upsample_nearest(const Tensor& x, int f) {
  require_rank(x, 4, "upsample_nearest");
  if (f < 1) throw RangeError("upsample_nearest: factor must be >= 1");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h * f, wo = w * f;
  auto n = make_result({x.dim(0), x.dim(1), ho, wo}, "upsample_nearest", {&x});
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data().data() + static_cast<std::size_t>(p) * h * w;
    double* dst = n->value.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int r = 0; r < ho; ++r)
      for (int c = 0; c < wo; ++c) dst[r * wo + c] = src[(r / f) * w + c / f];
  }
  if (n->requires_grad)
    n->backward = [planes, h, w, ho, wo, f](Node& self) {
      double* d = grad_buf(self.parents[0]);
      if (!d) return;
      for (int p = 0; p < planes; ++p) {
        const double* g = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
        double* dst = d + static_cast<std::size_t>(p) * h * w;
        for (int r = 0; r < ho; ++r)
          for (int c = 0; c < wo; ++c) dst[(r / f) * w + c / f] += g[r * wo + c];
      }
    };
  return Tensor(n);
}

// ---- normalization ----

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "group_norm");
  const int nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "group_norm: affine parameters " + shape_str(gamma.shape()) + ", " + shape_str(beta.shape()) + " vs " +
              std::to_string(c) + " channels");
  const int cg = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cg) * hw;
  auto n = make_result(x.shape(), "group_norm", {&x, &gamma, &beta});
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nb) * groups);
  for (int b = 0; b < nb; ++b)
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gi) * cg) * hw;
      const double* src = x.data().data() + off;
      double m = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) m += src[i];
      m /= static_cast<double>(gsize);
      double v = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) v += (src[i] - m) * (src[i] - m);
      v /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(v + eps);
      (*inv_std)[static_cast<std::size_t>(b) * groups + gi] = is;
      for (int cc = 0; cc < cg; ++cc) {
        const int ch = gi * cg + cc;
        const double ga = gamma.data()[static_cast<std::size_t>(ch)], be = beta.data()[static_cast<std::size_t>(ch)];
        for (int i = 0; i < hw; ++i) {
          const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
          const double xh = (x.data()[idx] - m) * is;
          (*xhat)[idx] = xh;
          n->value[idx] = ga * xh + be;
        }
      }
    }
  if (n->requires_grad)
    n->backward = [nb, c, hw, groups, cg, gsize, xhat, inv_std](Node& self) {
      const auto& pg = self.parents[1];
      double* dx = grad_buf(self.parents[0]);
      double* dgamma = grad_buf(pg);
      double* dbeta = grad_buf(self.parents[2]);
      const double* gy = self.grad.data();
      for (int b = 0; b < nb; ++b)
        for (int gi = 0; gi < groups; ++gi) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gi) * cg) * hw;
          double s1 = 0.0, s2 = 0.0;  // mean of dxhat and of dxhat * xhat
          for (int cc = 0; cc < cg; ++cc) {
            const int ch = gi * cg + cc;
            const double ga = pg->value[static_cast<std::size_t>(ch)];
            for (int i = 0; i < hw; ++i) {
              const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
              const double dxh = gy[idx] * ga;
              s1 += dxh;
              s2 += dxh * (*xhat)[idx];
              if (dgamma) dgamma[ch] += gy[idx] * (*xhat)[idx];
              if (dbeta) dbeta[ch] += gy[idx];
            }
          }
          if (!dx) continue;
          s1 /= static_cast<double>(gsize);
          s2 /= static_cast<double>(gsize);
          const double is = (*inv_std)[static_cast<std::size_t>(b) * groups + gi];
          for (int cc = 0; cc < cg; ++cc) {
            const double ga = pg->value[static_cast<std::size_t>(gi * cg + cc)];
            for (int i = 0; i < hw; ++i) {
              const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
              dx[idx] += is * (gy[idx] * ga - s1 - (*xhat)[idx] * s2);
            }
          }
        }
    };
  return Tensor(n);
}

// ---- shape ops ----

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of no tensors");
  const Shape& s0 = xs[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  Shape out = s0;
  out[static_cast<std::size_t>(axis)] = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = s0;
    require(a.size() == b.size(), "concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    require(a == b, "concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    out[static_cast<std::size_t>(axis)] += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
  auto n = make_node(out, "concat");
  bool any = false;
  if (g_grad_enabled)
    for (const auto& t : xs) any = any || t.requires_grad();
  n->requires_grad = any;
  std::vector<std::size_t> chunk;
  for (const auto& t : xs) chunk.push_back(static_cast<std::size_t>(t.dim(axis)) * inner);
  const std::size_t row = static_cast<std::size_t>(out[static_cast<std::size_t>(axis)]) * inner;
  std::size_t pos = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xs[j].data().data() + o * chunk[j], chunk[j], n->value.data() + o * row + pos);
    pos += chunk[j];
  }
  if (any) {
    for (const auto& t : xs) n->parents.push_back(t.ptr());
    n->backward = [chunk, outer, row](Node& self) {
      std::size_t pos = 0;
      for (std::size_t j = 0; j < self.parents.size(); ++j) {
        if (double* d = grad_buf(self.parents[j]))
          for (std::size_t o = 0; o < outer; ++o)
            MapV(d + o * chunk[j], static_cast<Eigen::Index>(chunk[j])) +=
                CMapV(self.grad.data() + o * row + pos, static_cast<Eigen::Index>(chunk[j]));
        pos += chunk[j];
      }
    };
  }
  return Tensor(n);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  auto n = make_result(shape, "reshape", {&x});
  n->value = x.data();
  if (n->requires_grad)
    n->backward = [](Node& self) {
      if (double* d = grad_buf(self.parents[0]))
        MapV(d, self.grad.size()) += CMapV(self.grad.data(), self.grad.size());
    };
  return Tensor(n);
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const int rank = static_cast<int>(x.shape().size());
  if (axis < 0 || axis >= rank) throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  if (start < 0 || length < 1 || start + length > x.dim(axis))
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") outside axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out = x.shape();
  out[static_cast<std::size_t>(axis)] = length;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  const std::size_t src_row = static_cast<std::size_t>(x.dim(axis)) * inner, len = static_cast<std::size_t>(length) * inner,
                    off = static_cast<std::size_t>(start) * inner;
  auto n = make_result(out, "slice", {&x});
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data().data() + o * src_row + off, len, n->value.data() + o * len);
  if (n->requires_grad)
    n->backward = [outer, src_row, len, off](Node& self) {
      double* d = grad_buf(self.parents[0]);
      if (!d) return;
      for (std::size_t o = 0; o < outer; ++o)
        MapV(d + o * src_row + off, static_cast<Eigen::Index>(len)) +=
            CMapV(self.grad.data() + o * len, static_cast<Eigen::Index>(len));
    };
  return Tensor(n);
}

Tensor add_channel(const Tensor& x, const Tensor& v) {
  require_rank(x, 4, "add_channel");
  require(v.shape() == Shape{x.dim(0), x.dim(1)},
          "add_channel: vector " + shape_str(v.shape()) + " vs tensor " + shape_str(x.shape()));
  const int planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto n = make_result(x.shape(), "add_channel", {&x, &v});
  for (int p = 0; p < planes; ++p) {
    const double add = v.data()[static_cast<std::size_t>(p)];
    const double* src = x.data().data() + static_cast<std::size_t>(p) * hw;
    double* dst = n->value.data() + static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) dst[i] = src[i] + add;
  }
  if (n->requires_grad)
    n->backward = [planes, hw](Node& self) {
      if (double* d = grad_buf(self.parents[0])) MapV(d, self.grad.size()) += CMapV(self.grad.data(), self.grad.size());
      if (double* d = grad_buf(self.parents[1]))
        for (int p = 0; p < planes; ++p) d[p] += ordered_sum(self.grad.data() + static_cast<std::size_t>(p) * hw, static_cast<std::size_t>(hw));
    };
  return Tensor(n);
}

Tensor sum(const Tensor& x) {
  auto n = make_result({1}, "sum", {&x});
  n->value[0] = ordered_sum(x.data().data(), x.numel());
  if (n->requires_grad)
    n->backward = [](Node& self) {
      auto& p = self.parents[0];
      if (double* d = grad_buf(p)) MapV(d, p->value.size()).array() += self.grad[0];
    };
  return Tensor(n);
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  auto n = make_result({1}, "mse", {&a, &b});
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  n->value[0] = acc * inv;
  if (n->requires_grad)
    n->backward = [inv](Node& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      const auto sz = static_cast<Eigen::Index>(pa->value.size());
      const Eigen::VectorXd diff = (CMapV(pa->value.data(), sz) - CMapV(pb->value.data(), sz)) * (2.0 * inv * self.grad[0]);
      if (double* d = grad_buf(pa)) MapV(d, sz) += diff;
      if (double* d = grad_buf(pb)) MapV(d, sz) -= diff;
    };
  return Tensor(n);
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw PreconditionError("backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) throw PreconditionError("backward on a loss that does not depend on any parameter");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node* root = loss.node();
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    // Interior gradients are no longer needed once pushed to the parents.
    if (n != root) std::vector<double>().swap(n->grad);
  }
}

Tensor init_param(const Shape& shape, int fan_in, Rng& rng, double gain) {
  if (fan_in < 1) throw RangeError("init_param: fan_in must be >= 1");
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  auto n = make_node(shape, "leaf");
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : n->value) {
    double z;
    do z = nd(rng);
    while (std::abs(z) > 2.0);
    v = std * z;
  }
  n->requires_grad = true;
  return Tensor(n);
}

}  // namespace ckm::ad
