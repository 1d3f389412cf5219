#include "spkmoco/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Tensor& t) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
MapMat as_matrix(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " +
                                          shape_string(t.shape()));
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, p.trainable});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.graph() != this) throw ContractError("operand belongs to a different graph");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  if (!value.all_finite()) throw DivergenceError("non-finite value produced in forward pass");
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr,
                        needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ContractError("loss belongs to a different graph");
  if (value(loss.id()).size() != 1) throw ContractError("backward requires a scalar loss");
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr && n.param->trainable) {
      auto& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

namespace kernels {

void gemm_nt(const double* x, const double* W, double* out, std::size_t n, std::size_t in,
             std::size_t outd) {
  std::vector<double> wt(in * outd);
  for (std::size_t o = 0; o < outd; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * outd + o] = W[o * in + i];
  constexpr std::size_t kBlock = 4;
  std::fill(out, out + n * outd, 0.0);
  for (std::size_t n0 = 0; n0 < n; n0 += kBlock) {
    const std::size_t nb = std::min(kBlock, n - n0);
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = wt.data() + i * outd;
      for (std::size_t r = 0; r < nb; ++r) {
        const double xv = x[(n0 + r) * in + i];
        double* orow = out + (n0 + r) * outd;
        for (std::size_t o = 0; o < outd; ++o) orow[o] += xv * wr[o];
      }
    }
  }
}

}  // namespace kernels

namespace ops {

namespace {

// Shared backward for y = x Wᵀ (+ b).
void linear_backward(Graph& g, std::size_t self, std::size_t xid, std::size_t wid,
                     std::size_t bid, bool has_bias) {
  const Tensor& dy = g.grad(self);
  auto dY = as_matrix(dy);
  if (g.requires_grad(xid)) {
    auto dX = as_matrix(g.grad_buffer(xid));
    dX.noalias() += dY * as_matrix(g.value(wid));
  }
  if (g.requires_grad(wid)) {
    auto dW = as_matrix(g.grad_buffer(wid));
    dW.noalias() += dY.transpose() * as_matrix(g.value(xid));
  }
  if (has_bias && g.requires_grad(bid)) {
    Tensor& db = g.grad_buffer(bid);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy.at(r, c);
  }
}

}  // namespace

Var matmul_nt(Var x, Var W) {
  const Tensor& xv = x.value();
  const Tensor& wv = W.value();
  require_matrix(xv, "matmul_nt x");
  require_matrix(wv, "matmul_nt W");
  if (xv.cols() != wv.cols())
    throw DimensionError("matmul_nt: x " + shape_string(xv.shape()) + " incompatible with W " +
                         shape_string(wv.shape()));
  Tensor out({xv.rows(), wv.rows()});
  kernels::gemm_nt(xv.data(), wv.data(), out.data(), xv.rows(), xv.cols(), wv.rows());
  const std::size_t xid = x.id(), wid = W.id();
  const Var in[] = {x, W};
  return x.graph()->record(std::move(out), in, [xid, wid](Graph& g, std::size_t self) {
    linear_backward(g, self, xid, wid, 0, false);
  });
}

Var affine(Var x, Var W, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = W.value();
  const Tensor& bv = b.value();
  require_matrix(xv, "affine x");
  require_matrix(wv, "affine W");
  if (xv.cols() != wv.cols() || bv.size() != wv.rows())
    throw DimensionError("affine: x " + shape_string(xv.shape()) + ", W " +
                         shape_string(wv.shape()) + ", b " + shape_string(bv.shape()));
  Tensor out({xv.rows(), wv.rows()});
  kernels::gemm_nt(xv.data(), wv.data(), out.data(), xv.rows(), xv.cols(), wv.rows());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t o = 0; o < out.cols(); ++o) out.at(r, o) += bv[o];
  const std::size_t xid = x.id(), wid = W.id(), bid = b.id();
  const Var in[] = {x, W, b};
  return x.graph()->record(std::move(out), in, [xid, wid, bid](Graph& g, std::size_t self) {
    linear_backward(g, self, xid, wid, bid, true);
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(std::move(out), in, [xid](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = g.value(xid);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dy[i];
  });
}

Var dropout(Var x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must lie in [0,1)");
  if (!train || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] *= (*mask)[i];
  }
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(std::move(out), in, [xid, mask](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
}

Var batch_norm(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
               const BatchNormOptions& opt, Tensor* update_mean, Tensor* update_var) {
  const Tensor& xv = x.value();
  require_matrix(xv, "batch_norm x");
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw DimensionError("batch_norm: parameter width does not match " + shape_string(xv.shape()));
  const std::size_t groups = opt.train ? std::max<std::size_t>(opt.groups, 1) : 1;
  if (n % groups != 0)
    throw DimensionError("batch_norm: " + std::to_string(n) + " rows not divisible into " +
                         std::to_string(groups) + " groups");
  const std::size_t m = n / groups;
  if (opt.train && m < 2)
    throw DataError("batch_norm: degenerate batch (fewer than 2 rows per statistics group)");

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<Tensor>(Shape{groups, c});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());

  if (opt.train) {
    std::vector<double> mean_acc(c, 0.0), var_acc(c, 0.0);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t r0 = gi * m;
      std::vector<double> mean(c, 0.0), var(c, 0.0);
      for (std::size_t r = r0; r < r0 + m; ++r)
        for (std::size_t j = 0; j < c; ++j) mean[j] += xv.at(r, j);
      for (auto& v : mean) v /= static_cast<double>(m);
      for (std::size_t r = r0; r < r0 + m; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double d = xv.at(r, j) - mean[j];
          var[j] += d * d;
        }
      for (std::size_t j = 0; j < c; ++j) {
        var[j] /= static_cast<double>(m);
        inv_std->at(gi, j) = 1.0 / std::sqrt(var[j] + opt.eps);
        mean_acc[j] += mean[j];
        var_acc[j] += var[j];
      }
      for (std::size_t r = r0; r < r0 + m; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double h = (xv.at(r, j) - mean[j]) * inv_std->at(gi, j);
          xhat->at(r, j) = h;
          out.at(r, j) = gv[j] * h + bv[j];
        }
    }
    if (update_mean && update_var) {
      for (std::size_t j = 0; j < c; ++j) {
        (*update_mean)[j] = (1.0 - opt.momentum) * (*update_mean)[j] +
                            opt.momentum * mean_acc[j] / static_cast<double>(groups);
        (*update_var)[j] = (1.0 - opt.momentum) * (*update_var)[j] +
                           opt.momentum * var_acc[j] / static_cast<double>(groups);
      }
    }
  } else {
    for (std::size_t j = 0; j < c; ++j)
      inv_std->at(0, j) = 1.0 / std::sqrt(running_var[j] + opt.eps);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double h = (xv.at(r, j) - running_mean[j]) * inv_std->at(0, j);
        xhat->at(r, j) = h;
        out.at(r, j) = gv[j] * h + bv[j];
      }
  }

  const std::size_t xid = x.id(), gid = gamma.id(), bid = beta.id();
  const bool train = opt.train;
  const Var in[] = {x, gamma, beta};
  return x.graph()->record(
      std::move(out), in,
      [xid, gid, bid, xhat, inv_std, groups, m, c, train](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        const Tensor& gv = g.value(gid);
        if (g.requires_grad(bid)) {
          Tensor& db = g.grad_buffer(bid);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) db[j] += dy.at(r, j);
        }
        if (g.requires_grad(gid)) {
          Tensor& dg = g.grad_buffer(gid);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) dg[j] += dy.at(r, j) * xhat->at(r, j);
        }
        if (!g.requires_grad(xid)) return;
        Tensor& dx = g.grad_buffer(xid);
        if (!train) {
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j)
              dx.at(r, j) += dy.at(r, j) * gv[j] * inv_std->at(0, j);
          return;
        }
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t r0 = gi * m;
          std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
          for (std::size_t r = r0; r < r0 + m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              sum_dy[j] += dy.at(r, j);
              sum_dy_xhat[j] += dy.at(r, j) * xhat->at(r, j);
            }
          for (std::size_t r = r0; r < r0 + m; ++r)
            for (std::size_t j = 0; j < c; ++j)
              dx.at(r, j) += gv[j] * inv_std->at(gi, j) *
                             (dy.at(r, j) - inv_m * sum_dy[j] -
                              xhat->at(r, j) * inv_m * sum_dy_xhat[j]);
        }
      });
}

Var l2_normalize(Var x, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "l2_normalize x");
  const std::size_t n = xv.rows(), c = xv.cols();
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double nr = std::max(l2_norm(xv.row(r)), eps);
    (*norms)[r] = nr;
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = xv.at(r, j) / nr;
  }
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(std::move(out), in, [xid, norms, eps](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& y = g.value(self);
    const Tensor& xv = g.value(xid);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const double nr = (*norms)[r];
      const bool clamped = l2_norm(xv.row(r)) <= eps;
      double proj = 0.0;
      if (!clamped)
        for (std::size_t j = 0; j < dy.cols(); ++j) proj += y.at(r, j) * dy.at(r, j);
      for (std::size_t j = 0; j < dy.cols(); ++j)
        dx.at(r, j) += (dy.at(r, j) - y.at(r, j) * proj) / nr;
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "log_softmax x");
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < row.size(); ++j) out.at(r, j) = row[j] - lse;
  }
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(std::move(out), in, [xid](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& y = g.value(self);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < dy.cols(); ++j) s += dy.at(r, j);
      for (std::size_t j = 0; j < dy.cols(); ++j)
        dx.at(r, j) += dy.at(r, j) - std::exp(y.at(r, j)) * s;
    }
  });
}

Var splice(Var x, std::size_t batch, std::span<const int> offsets) {
  const Tensor& xv = x.value();
  require_matrix(xv, "splice x");
  if (offsets.empty()) throw ParameterError("splice: empty context");
  if (batch == 0 || xv.rows() % batch != 0)
    throw DimensionError("splice: rows not divisible by batch size");
  const auto [lo_it, hi_it] = std::minmax_element(offsets.begin(), offsets.end());
  const int lo = *lo_it, hi = *hi_it;
  const std::size_t t_in = xv.rows() / batch;
  const std::size_t span = static_cast<std::size_t>(hi - lo);
  if (t_in <= span)
    throw DataError("splice: sequence of " + std::to_string(t_in) +
                    " frames shorter than context " + std::to_string(span + 1));
  const std::size_t t_out = t_in - span, c = xv.cols(), k = offsets.size();
  std::vector<int> offs(offsets.begin(), offsets.end());
  Tensor out({batch * t_out, k * c});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < t_out; ++t) {
      double* dst = out.data() + (b * t_out + t) * k * c;
      for (std::size_t q = 0; q < k; ++q) {
        const std::size_t src = b * t_in + t + static_cast<std::size_t>(offs[q] - lo);
        std::copy_n(xv.data() + src * c, c, dst + q * c);
      }
    }
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(
      std::move(out), in,
      [xid, offs, lo, batch, t_in, t_out, c, k](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        Tensor& dx = g.grad_buffer(xid);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < t_out; ++t) {
            const double* src = dy.data() + (b * t_out + t) * k * c;
            for (std::size_t q = 0; q < k; ++q) {
              double* dst =
                  dx.data() + (b * t_in + t + static_cast<std::size_t>(offs[q] - lo)) * c;
              for (std::size_t j = 0; j < c; ++j) dst[j] += src[q * c + j];
            }
          }
      });
}

Var stats_pooling(Var x, std::size_t batch, double variance_floor) {
  const Tensor& xv = x.value();
  require_matrix(xv, "stats_pooling x");
  if (batch == 0 || xv.rows() % batch != 0 || xv.rows() == 0)
    throw DimensionError("stats_pooling: rows not divisible by batch size");
  const std::size_t t = xv.rows() / batch, c = xv.cols();
  const double inv_t = 1.0 / static_cast<double>(t);
  Tensor out({batch, 2 * c});
  auto clamped = std::make_shared<std::vector<char>>(batch * c, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> s(c, 0.0), s2(c, 0.0);
    for (std::size_t r = b * t; r < (b + 1) * t; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double v = xv.at(r, j);
        s[j] += v;
        s2[j] += v * v;
      }
    for (std::size_t j = 0; j < c; ++j) {
      const double mean = s[j] * inv_t;
      const double var = s2[j] * inv_t - mean * mean;
      (*clamped)[b * c + j] = var <= variance_floor;
      out.at(b, j) = mean;
      out.at(b, c + j) = std::sqrt(std::max(var, variance_floor));
    }
  }
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(
      std::move(out), in, [xid, batch, t, c, inv_t, clamped](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        const Tensor& y = g.value(self);
        const Tensor& xv = g.value(xid);
        Tensor& dx = g.grad_buffer(xid);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < c; ++j) {
            const double mean = y.at(b, j);
            const double dmean = dy.at(b, j) * inv_t;
            const double dstd =
                (*clamped)[b * c + j] ? 0.0 : dy.at(b, c + j) * inv_t / y.at(b, c + j);
            for (std::size_t r = b * t; r < (b + 1) * t; ++r)
              dx.at(r, j) += dmean + dstd * (xv.at(r, j) - mean);
          }
      });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= c;
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(std::move(out), in, [xid, c](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  const Var in[] = {a, b};
  return a.graph()->record(std::move(out), in, [aid, bid](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    for (std::size_t id : {aid, bid}) {
      if (!g.requires_grad(id)) continue;
      Tensor& d = g.grad_buffer(id);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(Tensor::scalar(s), in, [xid](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    Tensor& dx = g.grad_buffer(xid);
    for (auto& v : dx.values()) v += d;
  });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v * v;
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(Tensor::scalar(s), in, [xid](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    const Tensor& xv = g.value(xid);
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * d * xv[i];
  });
}

Var weighted_sum(Var x, const Tensor& w) {
  if (w.size() != x.value().size()) throw DimensionError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
  const std::size_t xid = x.id();
  const Var in[] = {x};
  return x.graph()->record(Tensor::scalar(s), in, [xid, w](Graph& g, std::size_t self) {
    const double d = g.grad(self)[0];
    Tensor& dx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * w[i];
  });
}

Var row_dot(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "row_dot a");
  if (av.shape() != bv.shape())
    throw DimensionError("row_dot: " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  Tensor out({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av.at(r, j) * bv.at(r, j);
    out[r] = s;
  }
  const std::size_t aid = a.id(), bid = b.id();
  const Var in[] = {a, b};
  return a.graph()->record(std::move(out), in, [aid, bid](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& av = g.value(aid);
    const Tensor& bv = g.value(bid);
    if (g.requires_grad(aid)) {
      Tensor& da = g.grad_buffer(aid);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t j = 0; j < av.cols(); ++j) da.at(r, j) += dy[r] * bv.at(r, j);
    }
    if (g.requires_grad(bid)) {
      Tensor& db = g.grad_buffer(bid);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t j = 0; j < av.cols(); ++j) db.at(r, j) += dy[r] * av.at(r, j);
    }
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "concat_cols a");
  require_matrix(bv, "concat_cols b");
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out({av.rows(), ca + cb});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  const std::size_t aid = a.id(), bid = b.id();
  const Var in[] = {a, b};
  return a.graph()->record(std::move(out), in, [aid, bid, ca, cb](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    if (g.requires_grad(aid)) {
      Tensor& da = g.grad_buffer(aid);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t j = 0; j < ca; ++j) da.at(r, j) += dy.at(r, j);
    }
    if (g.requires_grad(bid)) {
      Tensor& db = g.grad_buffer(bid);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t j = 0; j < cb; ++j) db.at(r, j) += dy.at(r, ca + j);
    }
  });
}

}  // namespace ops
}  // namespace spkmoco
