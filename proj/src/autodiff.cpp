#include "divgce/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <unordered_set>

namespace divgce::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Var leaf(Tensor value, bool tracked) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = tracked;
  return Var(std::move(node));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(v.shape()));
}

}  // namespace

Var parameter(Tensor value) { return leaf(std::move(value), true); }
Var constant(Tensor value) { return leaf(std::move(value), false); }

Tensor& grad_of(Node& node) {
  if (node.grad.shape() != node.value.shape() || node.grad.size() != node.value.size())
    node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn,
                const char* op_name) {
  require_finite(value, op_name);
  bool tracked = false;
  for (const auto& p : parents) tracked = tracked || p.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (tracked) {
    node->requires_grad = true;
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise

Var binary(const Var& a, const Var& b, BinaryOp op) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool same = x.shape() == y.shape();
  if (!same && !x.is_scalar() && !y.is_scalar())
    throw ShapeError("binary op: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  // Broadcast side (if any) is the single-value operand.
  const bool bx = !same && x.is_scalar();
  const bool by = !same && !bx;
  Tensor out(bx ? y.shape() : x.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = bx ? x[0] : x[i];
    const double yi = by ? y[0] : y[i];
    switch (op) {
      case BinaryOp::add: out[i] = xi + yi; break;
      case BinaryOp::sub: out[i] = xi - yi; break;
      case BinaryOp::mul: out[i] = xi * yi; break;
    }
  }
  return make_result(
      std::move(out), {a, b},
      [bx, by, op](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const Tensor& g = self.grad;
        const std::size_t n = g.size();
        if (pa.requires_grad) {
          Tensor& ga = grad_of(pa);
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (op == BinaryOp::mul) d *= by ? pb.value[0] : pb.value[i];
            ga[bx ? 0 : i] += d;
          }
        }
        if (pb.requires_grad) {
          Tensor& gb = grad_of(pb);
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (op == BinaryOp::sub) d = -d;
            if (op == BinaryOp::mul) d *= bx ? pa.value[0] : pa.value[i];
            gb[by ? 0 : i] += d;
          }
        }
      },
      "binary");
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(
      Tensor::scalar(s), {x},
      [](Node& self) {
        Tensor& g = grad_of(*self.parents[0]);
        const double d = self.grad[0];
        for (auto& v : g.data()) v += d;
      },
      "sum");
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_result(
      std::move(out), {x},
      [](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = grad_of(p);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (p.value[i] > 0.0) g[i] += self.grad[i];
      },
      "relu");
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias");
  const auto& s = x.shape();
  if (bias.value().size() != s[1])
    throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs channels of " +
                     shape_str(s));
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double b = bias.value()[ch];
      double* row = out.data().data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) row[j] += b;
    }
  return make_result(
      std::move(out), {x, bias},
      [n, c, hw](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
          Tensor& g = grad_of(px);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          Tensor& g = grad_of(pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double* row = self.grad.data().data() + (i * c + ch) * hw;
              double acc = 0.0;
              for (std::size_t j = 0; j < hw; ++j) acc += row[j];
              g[ch] += acc;
            }
        }
      },
      "add_channel_bias");
}

Var max_pool2d(const Var& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  const auto& s = x.shape();
  if (window == 0 || s[2] % window != 0 || s[3] % window != 0)
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " does not tile " +
                     shape_str(s));
  const std::size_t ho = s[2] / window, wo = s[3] / window;
  Tensor out({s[0], s[1], ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const Tensor& in = x.value();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j, ++o) {
          std::size_t best = ((n * s[1] + c) * s[2] + i * window) * s[3] + j * window;
          for (std::size_t di = 0; di < window; ++di)
            for (std::size_t dj = 0; dj < window; ++dj) {
              const std::size_t idx = ((n * s[1] + c) * s[2] + i * window + di) * s[3] + j * window + dj;
              if (in[idx] > in[best]) best = idx;
            }
          out[o] = in[best];
          (*argmax)[o] = best;
        }
  return make_result(
      std::move(out), {x},
      [argmax](Node& self) {
        Tensor& g = grad_of(*self.parents[0]);
        for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
      },
      "max_pool2d");
}

// ---------------------------------------------------------------------------
// convolution: im2col over the whole batch followed by one GEMM

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_hw() const { return ho * wo; }
};

// cols: patch() x (batch * out_hw()), row-major; sample n owns columns
// [n * out_hw(), (n + 1) * out_hw()).
void batch_im2col(const ConvGeom& g, const double* img, double* cols, std::size_t n, std::size_t batch) {
  const std::size_t ld = batch * g.out_hw();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + n * g.out_hw();
        // Output columns oj whose source column lies inside the image.
        const long off = static_cast<long>(kj) - static_cast<long>(g.pad);
        std::size_t lo = 0, hi = g.wo;
        while (lo < g.wo && static_cast<long>(lo * g.stride) + off < 0) ++lo;
        while (hi > lo && static_cast<long>((hi - 1) * g.stride) + off >= static_cast<long>(g.w)) --hi;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          double* dst = row + oi * g.wo;
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + ii) * g.w;
          std::fill(dst, dst + lo, 0.0);
          for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = src[static_cast<long>(oj * g.stride) + off];
          std::fill(dst + hi, dst + g.wo, 0.0);
        }
      }
}

void batch_col2im_add(const ConvGeom& g, const double* cols, double* img, std::size_t n, std::size_t batch) {
  const std::size_t ld = batch * g.out_hw();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + n * g.out_hw();
        const long off = static_cast<long>(kj) - static_cast<long>(g.pad);
        std::size_t lo = 0, hi = g.wo;
        while (lo < g.wo && static_cast<long>(lo * g.stride) + off < 0) ++lo;
        while (hi > lo && static_cast<long>((hi - 1) * g.stride) + off >= static_cast<long>(g.w)) --hi;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          const double* src = row + oi * g.wo;
          double* dst = img + (c * g.h + ii) * g.w;
          for (std::size_t oj = lo; oj < hi; ++oj) dst[static_cast<long>(oj * g.stride) + off] += src[oj];
        }
      }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (is[1] != ks[1])
    throw ShapeError("conv2d: input " + shape_str(is) + " and kernel " + shape_str(ks) +
                     " disagree on input channels");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t ph = is[2] + 2 * padding, pw = is[3] + 2 * padding;
  if (ks[2] > ph || ks[3] > pw)
    throw ShapeError("conv2d: kernel " + shape_str(ks) + " larger than padded input " +
                     shape_str(is) + " (padding " + std::to_string(padding) + ")");
  ConvGeom g{is[1], is[2], is[3], ks[0], ks[2], ks[3], stride, padding,
             (ph - ks[2]) / stride + 1, (pw - ks[3]) / stride + 1};
  const std::size_t batch = is[0];
  const std::size_t cols_w = batch * g.out_hw();

  // All samples side by side: cols is patch x (batch * out_hw), so each layer
  // is a single GEMM. The product is Cout x (batch * out_hw) and gets
  // scattered back to N x Cout x Ho x Wo.
  auto cols = std::make_shared<std::vector<double>>(g.patch() * cols_w);
  for (std::size_t n = 0; n < batch; ++n)
    batch_im2col(g, input.value().data().data() + n * g.cin * g.h * g.w, cols->data(), n, batch);
  RowMat prod(g.cout, cols_w);
  prod.noalias() = ConstMatMap(kernel.value().data().data(), g.cout, g.patch()) *
                   ConstMatMap(cols->data(), g.patch(), cols_w);
  Tensor out({batch, g.cout, g.ho, g.wo});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      std::copy_n(prod.data() + co * cols_w + n * g.out_hw(), g.out_hw(),
                  out.data().data() + (n * g.cout + co) * g.out_hw());

  const bool keep_cols = kernel.requires_grad();
  return make_result(
      std::move(out), {input, kernel},
      [g, batch, cols_w, cols = keep_cols ? cols : nullptr](Node& self) {
        Node& pin = *self.parents[0];
        Node& pk = *self.parents[1];
        RowMat dout(g.cout, cols_w);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t co = 0; co < g.cout; ++co)
            std::copy_n(self.grad.data().data() + (n * g.cout + co) * g.out_hw(), g.out_hw(),
                        dout.data() + co * cols_w + n * g.out_hw());
        if (pk.requires_grad) {
          MatMap dk(grad_of(pk).data().data(), g.cout, g.patch());
          dk.noalias() += dout * ConstMatMap(cols->data(), g.patch(), cols_w).transpose();
        }
        if (pin.requires_grad) {
          RowMat dcols(g.patch(), cols_w);
          dcols.noalias() = ConstMatMap(pk.value.data().data(), g.cout, g.patch()).transpose() * dout;
          Tensor& gin = grad_of(pin);
          for (std::size_t n = 0; n < batch; ++n)
            batch_col2im_add(g, dcols.data(), gin.data().data() + n * g.cin * g.h * g.w, n, batch);
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------------------

void backward(const Var& root) {
  if (!root.node()) throw std::invalid_argument("backward: empty root");
  if (root.value().size() != 1)
    throw ShapeError("backward: root must hold a single value, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Tensor(n->value.shape(), 0.0);
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace divgce::ad
