#include "deepcov/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <random>
#include <unordered_set>

#include "deepcov/error.hpp"

namespace deepcov::ag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

thread_local bool t_grad_enabled = true;
thread_local KinkMonitor* t_kink_monitor = nullptr;

bool needs_record(std::initializer_list<const Var*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Var* v : inputs)
    if (v->requires_grad()) return true;
  return false;
}

// Creates the output node, wiring parents and backward only when recording.
Var make_result(Tensor value, const char* op, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (needs_record(inputs)) {
    node->requires_grad = true;
    for (const Var* v : inputs) node->parents.push_back(v->node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw Error(ErrorKind::Shape, std::string(op) + ": expected rank " + std::to_string(rank) +
                                      " input, got " + shape_string(v.shape()));
}

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out;
  std::size_t k() const { return c_in * kh * kw; }
  std::size_t p() const { return h_out * w_out; }
};

// col is K x P, K ordered (c_in, ki, kj), P ordered (oi, oj).
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t P = g.p();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oi = 0; oi < g.h_out; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t oj = 0; oj < g.w_out; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w);
            row[oi * g.w_out + oj] = inside ? xc[ii * static_cast<long>(g.w) + jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t P = g.p();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oi = 0; oi < g.h_out; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.w_out; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            dxc[ii * static_cast<long>(g.w) + jj] += row[oi * g.w_out + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

KinkMonitor::KinkMonitor() : previous_(t_kink_monitor) { t_kink_monitor = this; }
KinkMonitor::~KinkMonitor() { t_kink_monitor = previous_; }
void KinkMonitor::record(std::uint64_t h) { hash_ = mix64(hash_ ^ h); }

Var conv2d(const Var& input, const Var& weights, const Var& bias, Conv2dSpec spec) {
  require_rank(input, 4, "conv2d");
  require_rank(weights, 4, "conv2d weights");
  require_rank(bias, 1, "conv2d bias");
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], spec.stride, spec.padding, 0, 0};
  if (ws[1] != g.c_in)
    throw Error(ErrorKind::Shape, "conv2d: weights " + shape_string(ws) + " do not match input " + shape_string(xs));
  if (bias.shape()[0] != g.c_out) throw Error(ErrorKind::Shape, "conv2d: bias length mismatch");
  if (g.stride == 0) throw Error(ErrorKind::InvalidArgument, "conv2d: stride must be positive");
  const long span_h = static_cast<long>(g.h + 2 * g.pad) - static_cast<long>(g.kh);
  const long span_w = static_cast<long>(g.w + 2 * g.pad) - static_cast<long>(g.kw);
  // Output size floors, as usual: trailing rows/cols a stride cannot reach are ignored.
  if (span_h < 0 || span_w < 0)
    throw Error(ErrorKind::Shape, "conv2d: kernel larger than padded input " + shape_string(xs) +
                                      ", kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                                      ", stride " + std::to_string(g.stride) + ", padding " +
                                      std::to_string(g.pad));
  g.h_out = static_cast<std::size_t>(span_h) / g.stride + 1;
  g.w_out = static_cast<std::size_t>(span_w) / g.stride + 1;

  const std::size_t K = g.k(), P = g.p();
  Tensor out({g.n, g.c_out, g.h_out, g.w_out});
  std::vector<double> col(K * P);
  ConstRowMap wm(weights.value().ptr(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(K));
  ConstVecMap bv(bias.value().ptr(), static_cast<Eigen::Index>(g.c_out));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.value().ptr() + n * g.c_in * g.h * g.w, g, col.data());
    ConstRowMap cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    RowMap om(out.ptr() + n * g.c_out * P, static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(P));
    om.noalias() = wm * cm;
    om.colwise() += bv;
  }

  return make_result(std::move(out), "conv2d", {&input, &weights, &bias}, [g](Node& self) {
    const Node& x = *self.parents[0];
    const Node& w = *self.parents[1];
    const std::size_t K = g.k(), P = g.p();
    std::vector<double> col(K * P), dcol(K * P);
    ConstRowMap wm(w.value.ptr(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(K));
    double* dx = self.parents[0]->requires_grad ? self.parents[0]->grad_buffer().ptr() : nullptr;
    RowMatrix dw = RowMatrix::Zero(static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(K));
    Eigen::VectorXd db = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.c_out));
    const bool want_w = self.parents[1]->requires_grad;
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstRowMap dom(self.grad.ptr() + n * g.c_out * P, static_cast<Eigen::Index>(g.c_out),
                      static_cast<Eigen::Index>(P));
      for (Eigen::Index c = 0; c < dom.rows(); ++c)
        for (Eigen::Index j = 0; j < dom.cols(); ++j) db[c] += dom(c, j);
      if (want_w) {
        im2col(x.value.ptr() + n * g.c_in * g.h * g.w, g, col.data());
        ConstRowMap cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dw.noalias() += dom * cm.transpose();
      }
      if (dx) {
        RowMap dcm(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dcm.noalias() = wm.transpose() * dom;
        col2im_add(dcol.data(), g, dx + n * g.c_in * g.h * g.w);
      }
    }
    if (want_w) {
      RowMap gw(self.parents[1]->grad_buffer().ptr(), static_cast<Eigen::Index>(g.c_out),
                static_cast<Eigen::Index>(K));
      gw += dw;
    }
    if (self.parents[2]->requires_grad) {
      VecMap gb(self.parents[2]->grad_buffer().ptr(), static_cast<Eigen::Index>(g.c_out));
      gb += db;
    }
  });
}

Var dense(const Var& input, const Var& weights, const Var& bias) {
  require_rank(input, 2, "dense");
  require_rank(weights, 2, "dense weights");
  require_rank(bias, 1, "dense bias");
  const std::size_t n = input.shape()[0], f_in = input.shape()[1];
  const std::size_t f_out = weights.shape()[1];
  if (weights.shape()[0] != f_in || bias.shape()[0] != f_out)
    throw Error(ErrorKind::Shape, "dense: input " + shape_string(input.shape()) + ", weights " +
                                      shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  Tensor out({n, f_out});
  ConstRowMap wm(weights.value().ptr(), ei(f_in), ei(f_out));
  ConstVecMap bv(bias.value().ptr(), ei(f_out));
  // Row-at-a-time so each sample's result is independent of batch composition.
  for (std::size_t r = 0; r < n; ++r) {
    ConstVecMap x(input.value().ptr() + r * f_in, ei(f_in));
    VecMap y(out.ptr() + r * f_out, ei(f_out));
    y.noalias() = wm.transpose() * x;
    y += bv;
  }
  return make_result(std::move(out), "dense", {&input, &weights, &bias}, [=](Node& self) {
    ConstRowMap dy(self.grad.ptr(), ei(n), ei(f_out));
    if (self.parents[0]->requires_grad) {
      ConstRowMap w(self.parents[1]->value.ptr(), ei(f_in), ei(f_out));
      RowMap dx(self.parents[0]->grad_buffer().ptr(), ei(n), ei(f_in));
      dx.noalias() += dy * w.transpose();
    }
    if (self.parents[1]->requires_grad) {
      ConstRowMap x(self.parents[0]->value.ptr(), ei(n), ei(f_in));
      RowMap dw(self.parents[1]->grad_buffer().ptr(), ei(f_in), ei(f_out));
      dw.noalias() += x.transpose() * dy;
    }
    if (self.parents[2]->requires_grad) {
      VecMap db(self.parents[2]->grad_buffer().ptr(), ei(f_out));
      for (Eigen::Index r = 0; r < dy.rows(); ++r)
        for (Eigen::Index j = 0; j < dy.cols(); ++j) db[j] += dy(r, j);
    }
  });
}

Var relu(const Var& input) {
  Tensor out(input.shape());
  const auto in = input.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (t_kink_monitor) {
    std::uint64_t h = in.size();
    for (std::size_t i = 0; i < in.size(); ++i) h = h * 31 + (in[i] > 0.0 ? 1 : 0) + (in[i] == 0.0 ? 7 : 0);
    t_kink_monitor->record(h);
  }
  return make_result(std::move(out), "relu", {&input}, [](Node& self) {
    const auto x = self.parents[0]->value.data();
    auto dx = self.parents[0]->grad_buffer().data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) dx[i] += dy[i];
  });
}

Var avg_pool2d(const Var& input, std::size_t pool) {
  require_rank(input, 4, "avg_pool2d");
  const Shape& s = input.shape();
  if (pool == 0 || s[2] % pool != 0 || s[3] % pool != 0)
    throw Error(ErrorKind::Shape, "avg_pool2d: pool " + std::to_string(pool) + " does not divide " +
                                      shape_string(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / pool, wo = w / pool;
  const double inv = 1.0 / static_cast<double>(pool * pool);
  Tensor out({s[0], s[1], ho, wo});
  const double* x = input.value().ptr();
  double* y = out.ptr();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < pool; ++a)
          for (std::size_t b = 0; b < pool; ++b) acc += x[p * h * w + (i * pool + a) * w + j * pool + b];
        y[p * ho * wo + i * wo + j] = acc * inv;
      }
    }
  }
  return make_result(std::move(out), "avg_pool2d", {&input}, [=](Node& self) {
    double* dx = self.parents[0]->grad_buffer().ptr();
    const double* dy = self.grad.ptr();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          const double g = dy[p * ho * wo + i * wo + j] * inv;
          for (std::size_t a = 0; a < pool; ++a)
            for (std::size_t b = 0; b < pool; ++b) dx[p * h * w + (i * pool + a) * w + j * pool + b] += g;
        }
  });
}

Var reshape(const Var& input, Shape shape) {
  Tensor out = input.value().reshaped(std::move(shape));
  return make_result(std::move(out), "reshape", {&input}, [](Node& self) {
    auto dx = self.parents[0]->grad_buffer().data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

Var flatten(const Var& input) {
  if (input.value().rank() < 1) throw Error(ErrorKind::Shape, "flatten: scalar input");
  const std::size_t n = input.shape()[0];
  return reshape(input, {n, n ? input.value().size() / n : 0});
}

Var dropout(const Var& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw Error(ErrorKind::InvalidArgument, "dropout rate must lie in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> mask(input.value().size());
  for (double& m : mask) m = u(rng) < rate ? 0.0 : keep_scale;
  Tensor out(input.shape());
  const auto x = input.value().data();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return make_result(std::move(out), "dropout", {&input}, [mask = std::move(mask)](Node& self) {
    auto dx = self.parents[0]->grad_buffer().data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

Var gaussian_noise(const Var& input, double sigma, Mode mode, Rng& rng) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise sigma must be non-negative");
  if (mode == Mode::Eval || sigma == 0.0) return input;
  std::normal_distribution<double> nd(0.0, sigma);
  Tensor out = input.value();
  for (double& v : out.data()) v += nd(rng);
  return make_result(std::move(out), "gaussian_noise", {&input}, [](Node& self) {
    auto dx = self.parents[0]->grad_buffer().data();
    const auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  const std::size_t n = pred.value().size();
  if (n == 0 || target.value().size() != n)
    throw Error(ErrorKind::Shape, "mse_loss: pred " + shape_string(pred.shape()) + " vs target " +
                                      shape_string(target.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  Tensor out({}, std::vector<double>{acc / static_cast<double>(n)});
  return make_result(std::move(out), "mse_loss", {&pred, &target}, [n](Node& self) {
    const double g = self.grad[0] * 2.0 / static_cast<double>(n);
    const Tensor& p = self.parents[0]->value;
    const Tensor& t = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto dp = self.parents[0]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) dp[i] += g * (p[i] - t[i]);
    }
    if (self.parents[1]->requires_grad) {
      auto dt = self.parents[1]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) dt[i] -= g * (p[i] - t[i]);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw Error(ErrorKind::Shape, "add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), "add", {&a, &b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto d = self.parents[k]->grad_buffer().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return make_result(std::move(out), "scale", {&a}, [factor](Node& self) {
    auto d = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self.grad[i];
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return make_result(Tensor({}, std::vector<double>{acc}), "sum", {&a}, [](Node& self) {
    auto d = self.parents[0]->grad_buffer().data();
    for (double& v : d) v += self.grad[0];
  });
}

void backward(const Var& loss) {
  if (!loss.valid() || loss.value().size() != 1)
    throw Error(ErrorKind::Shape, "backward requires a scalar loss, got " +
                                      (loss.valid() ? shape_string(loss.shape()) : std::string("null")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace deepcov::ag
