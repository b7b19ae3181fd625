#include "chartlab/numerics/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "chartlab/util/error.hpp"

namespace chartlab::num {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) {
  return MapC(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
Map view(Tensor& t) {
  return Map(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ContractError(op + ": " + what);
}

std::string dims(const Tensor& t) { return shape_string(t.shape()); }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kNormFloor = 1e-12;

}  // namespace

Var Tape::push(std::string op, Tensor value, bool needs_grad,
               std::function<void(Tape&, std::size_t)> backward) {
  if (!value.all_finite()) throw NumericalError(op + ": produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false); }

Var Tape::param(const std::string& name, const Tensor& value) {
  Var v = push("param", value, true, [](Tape&, std::size_t) {});
  nodes_[v.id].param_name = name;
  return v;
}

Var Tape::param(const ParamSet& set, const std::string& name) {
  auto it = set.find(name);
  if (it == set.end()) throw ContractError("tape: unknown parameter '" + name + "'");
  return param(name, it->second);
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.cols() == B.rows(), "matmul", "inner dimensions differ: " + dims(A) + " x " + dims(B));
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  view(C).noalias() = view(A) * view(B);
  return push("matmul", std::move(C), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) view(t.grad_of(a.id)).noalias() += view(g) * view(t.value(b)).transpose();
    if (t.needs(b)) view(t.grad_of(b.id)).noalias() += view(t.value(a)).transpose() * view(g);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.cols() == B.cols(), "matmul_nt", "inner dimensions differ: " + dims(A) + " x " + dims(B) + "^T");
  Tensor C = Tensor::matrix(A.rows(), B.rows());
  view(C).noalias() = view(A) * view(B).transpose();
  return push("matmul_nt", std::move(C), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) view(t.grad_of(a.id)).noalias() += view(g) * view(t.value(b));
    if (t.needs(b)) view(t.grad_of(b.id)).noalias() += view(g).transpose() * view(t.value(a));
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "add", "shape mismatch " + dims(A) + " vs " + dims(B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return push("add", std::move(C), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (Var p : {a, b}) {
      if (!t.needs(p)) continue;
      Tensor& gp = t.grad_of(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "sub", "shape mismatch " + dims(A) + " vs " + dims(B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return push("sub", std::move(C), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) {
      Tensor& ga = t.grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(b)) {
      Tensor& gb = t.grad_of(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "mul", "shape mismatch " + dims(A) + " vs " + dims(B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return push("mul", std::move(C), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) {
      Tensor& ga = t.grad_of(a.id);
      const Tensor& B = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs(b)) {
      Tensor& gb = t.grad_of(b.id);
      const Tensor& A = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  require(R.size() == A.cols(), "add_row", "row " + dims(R) + " does not fit " + dims(A));
  Tensor C = A;
  const std::size_t n = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) C[r * n + c] += R[c];
  }
  return push("add_row", std::move(C), needs(a) || needs(row), [a, row](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) {
      Tensor& ga = t.grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(row)) {
      Tensor& gr = t.grad_of(row.id);
      const std::size_t n = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c];
      }
    }
  });
}

Var Tape::add_tiled(Var a, Var block) {
  const Tensor& A = value(a);
  const Tensor& B = value(block);
  require(A.cols() == B.cols() && A.rows() % B.rows() == 0, "add_tiled",
          "block " + dims(B) + " does not tile " + dims(A));
  Tensor C = A;
  const std::size_t bs = B.size();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i % bs];
  return push("add_tiled", std::move(C), needs(a) || needs(block), [a, block](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs(a)) {
      Tensor& ga = t.grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(block)) {
      Tensor& gb = t.grad_of(block.id);
      const std::size_t bs = gb.size();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i];
    }
  });
}

Var Tape::scale(Var a, double k) {
  Tensor C = value(a);
  for (double& v : C.data()) v *= k;
  return push("scale", std::move(C), needs(a), [a, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

Var Tape::scale_by(Var a, Var s) {
  const Tensor& S = value(s);
  require(S.size() == 1, "scale_by", "scale must hold one element, got " + dims(S));
  const double k = S[0];
  Tensor C = value(a);
  for (double& v : C.data()) v *= k;
  return push("scale_by", std::move(C), needs(a) || needs(s), [a, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(a);
    if (t.needs(a)) {
      const double k = t.value(s)[0];
      Tensor& ga = t.grad_of(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    }
    if (t.needs(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * A[i];
      t.grad_of(s.id)[0] += acc;
    }
  });
}

Var Tape::exp(Var a) {
  Tensor C = value(a);
  for (double& v : C.data()) v = std::exp(v);
  return push("exp", std::move(C), needs(a), [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(Var{self});
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var Tape::tanh(Var a) {
  Tensor C = value(a);
  for (double& v : C.data()) v = std::tanh(v);
  return push("tanh", std::move(C), needs(a), [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(Var{self});
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::relu(Var a) {
  Tensor C = value(a);
  for (double& v : C.data()) v = v > 0.0 ? v : 0.0;
  return push("relu", std::move(C), needs(a), [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var Tape::gelu(Var a) {
  Tensor C = value(a);
  for (double& v : C.data()) {
    const double x = v;
    v = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
  return push("gelu", std::move(C), needs(a), [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(a);
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = X[i];
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
}

Var Tape::softmax_rows(Var a) {
  Tensor Y = value(a);
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    auto row = Y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return push("softmax_rows", std::move(Y), needs(a), [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(Var{self});
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      auto out = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var Tape::cross_entropy_rows(Var logits, std::span<const std::size_t> targets) {
  const Tensor& Z = value(logits);
  const std::size_t n = Z.rows();
  const std::size_t k = Z.cols();
  require(targets.size() == n, "cross_entropy_rows",
          "expected " + std::to_string(n) + " targets, got " + std::to_string(targets.size()));
  Tensor probs = Tensor::matrix(n, k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < k, "cross_entropy_rows", "target index out of range");
    auto zr = Z.row(r);
    const double m = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (double v : zr) s += std::exp(v - m);
    const double lse = m + std::log(s);
    total += lse - zr[targets[r]];
    auto pr = probs.row(r);
    for (std::size_t c = 0; c < k; ++c) pr[c] = std::exp(zr[c] - lse);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return push("cross_entropy_rows", Tensor::scalar(total / static_cast<double>(n)), needs(logits),
              [logits, tgt = std::move(tgt), probs = std::move(probs)](Tape& t, std::size_t self) {
                const double g = t.grad(self)[0] / static_cast<double>(probs.rows());
                Tensor& gz = t.grad_of(logits.id);
                for (std::size_t r = 0; r < probs.rows(); ++r) {
                  auto pr = probs.row(r);
                  auto out = gz.row(r);
                  for (std::size_t c = 0; c < pr.size(); ++c) out[c] += g * pr[c];
                  out[tgt[r]] -= g;
                }
              });
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = value(x);
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  require(value(gamma).size() == d && value(beta).size() == d, "layer_norm_rows",
          "gain/bias must have " + std::to_string(d) + " entries");
  Tensor xhat = Tensor::matrix(n, d);
  std::vector<double> rstd(n);
  Tensor Y = Tensor::matrix(n, d);
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = X.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    auto hr = xhat.row(r);
    auto yr = Y.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mu) * rstd[r];
      yr[c] = hr[c] * G[c] + B[c];
    }
  }
  return push("layer_norm_rows", std::move(Y), needs(x) || needs(gamma) || needs(beta),
              [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                const std::size_t d = g.cols();
                const Tensor& G = t.value(gamma);
                if (t.needs(gamma) || t.needs(beta)) {
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    auto gr = g.row(r);
                    auto hr = xhat.row(r);
                    if (t.needs(gamma)) {
                      Tensor& gg = t.grad_of(gamma.id);
                      for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * hr[c];
                    }
                    if (t.needs(beta)) {
                      Tensor& gb = t.grad_of(beta.id);
                      for (std::size_t c = 0; c < d; ++c) gb[c] += gr[c];
                    }
                  }
                }
                if (!t.needs(x)) return;
                Tensor& gx = t.grad_of(x.id);
                std::vector<double> dh(d);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                  auto gr = g.row(r);
                  auto hr = xhat.row(r);
                  double mean_dh = 0.0;
                  double mean_dh_h = 0.0;
                  for (std::size_t c = 0; c < d; ++c) {
                    dh[c] = gr[c] * G[c];
                    mean_dh += dh[c];
                    mean_dh_h += dh[c] * hr[c];
                  }
                  mean_dh /= static_cast<double>(d);
                  mean_dh_h /= static_cast<double>(d);
                  auto out = gx.row(r);
                  for (std::size_t c = 0; c < d; ++c) {
                    out[c] += rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                  }
                }
              });
}

Var Tape::l2_normalize_rows(Var a) {
  const Tensor& A = value(a);
  std::vector<double> norms(A.rows());
  Tensor Y = A;
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto row = Y.row(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    require(ss > 0.0, "l2_normalize_rows", "row " + std::to_string(r) + " is zero");
    norms[r] = std::sqrt(ss);
    for (double& v : row) v /= norms[r];
  }
  return push("l2_normalize_rows", std::move(Y), needs(a), [a, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(Var{self});
    Tensor& ga = t.grad_of(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
      const double inv = 1.0 / std::max(norms[r], kNormFloor);
      auto out = ga.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out[c] += (gr[c] - yr[c] * dot) * inv;
    }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& A = value(a);
  Tensor C = Tensor::matrix(A.cols(), A.rows());
  view(C) = view(A).transpose();
  return push("transpose", std::move(C), needs(a), [a](Tape& t, std::size_t self) {
    view(t.grad_of(a.id)) += view(t.grad(self)).transpose();
  });
}

Var Tape::concat_rows(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.cols() == B.cols(), "concat_rows", "column counts differ: " + dims(A) + " vs " + dims(B));
  std::vector<double> data(A.data().begin(), A.data().end());
  data.insert(data.end(), B.data().begin(), B.data().end());
  const std::size_t split = A.size();
  return push("concat_rows", Tensor::matrix(A.rows() + B.rows(), A.cols(), std::move(data)),
              needs(a) || needs(b), [a, b, split](Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                if (t.needs(a)) {
                  Tensor& ga = t.grad_of(a.id);
                  for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                }
                if (t.needs(b)) {
                  Tensor& gb = t.grad_of(b.id);
                  for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
                }
              });
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.rows() == B.rows(), "concat_cols", "row counts differ: " + dims(A) + " vs " + dims(B));
  const std::size_t ca = A.cols();
  const std::size_t cb = B.cols();
  Tensor C = Tensor::matrix(A.rows(), ca + cb);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    std::copy(A.row(r).begin(), A.row(r).end(), C.row(r).begin());
    std::copy(B.row(r).begin(), B.row(r).end(), C.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return push("concat_cols", std::move(C), needs(a) || needs(b), [a, b, ca, cb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto gr = g.row(r);
      if (t.needs(a)) {
        auto out = t.grad_of(a.id).row(r);
        for (std::size_t c = 0; c < ca; ++c) out[c] += gr[c];
      }
      if (t.needs(b)) {
        auto out = t.grad_of(b.id).row(r);
        for (std::size_t c = 0; c < cb; ++c) out[c] += gr[ca + c];
      }
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& T = value(table);
  require(!ids.empty(), "gather_rows", "no ids");
  const std::size_t d = T.cols();
  Tensor C = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < T.rows(), "gather_rows", "id " + std::to_string(ids[i]) + " out of range");
    std::copy(T.row(ids[i]).begin(), T.row(ids[i]).end(), C.row(i).begin());
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return push("gather_rows", std::move(C), needs(table), [table, idv = std::move(idv)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad_of(table.id);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      auto gr = g.row(i);
      auto out = gt.row(idv[i]);
      for (std::size_t c = 0; c < gr.size(); ++c) out[c] += gr[c];
    }
  });
}

Var Tape::segment_mean(Var x, std::size_t seq_len, std::span<const std::size_t> lengths) {
  const Tensor& X = value(x);
  require(seq_len > 0 && X.rows() % seq_len == 0, "segment_mean",
          dims(X) + " is not a whole number of length-" + std::to_string(seq_len) + " sequences");
  const std::size_t n = X.rows() / seq_len;
  const std::size_t d = X.cols();
  std::vector<std::size_t> len(n, seq_len);
  if (!lengths.empty()) {
    require(lengths.size() == n, "segment_mean", "one length per sequence required");
    for (std::size_t s = 0; s < n; ++s) {
      require(lengths[s] >= 1 && lengths[s] <= seq_len, "segment_mean", "length out of range");
      len[s] = lengths[s];
    }
  }
  Tensor C = Tensor::matrix(n, d);
  for (std::size_t s = 0; s < n; ++s) {
    auto out = C.row(s);
    for (std::size_t p = 0; p < len[s]; ++p) {
      auto xr = X.row(s * seq_len + p);
      for (std::size_t c = 0; c < d; ++c) out[c] += xr[c];
    }
    const double inv = 1.0 / static_cast<double>(len[s]);
    for (double& v : out) v *= inv;
  }
  return push("segment_mean", std::move(C), needs(x), [x, seq_len, len = std::move(len)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_of(x.id);
    for (std::size_t s = 0; s < len.size(); ++s) {
      auto gr = g.row(s);
      const double inv = 1.0 / static_cast<double>(len[s]);
      for (std::size_t p = 0; p < len[s]; ++p) {
        auto out = gx.row(s * seq_len + p);
        for (std::size_t c = 0; c < gr.size(); ++c) out[c] += gr[c] * inv;
      }
    }
  });
}

Var Tape::self_attention(Var qkv, std::size_t seq_len, std::size_t heads,
                         std::span<const std::size_t> lengths) {
  const Tensor& QKV = value(qkv);
  require(seq_len > 0 && QKV.rows() % seq_len == 0, "self_attention", "rows are not whole sequences");
  require(QKV.cols() % 3 == 0, "self_attention", "expected [Q|K|V] columns");
  const std::size_t d = QKV.cols() / 3;
  require(heads > 0 && d % heads == 0, "self_attention", "model width not divisible by head count");
  const std::size_t n = QKV.rows() / seq_len;
  const std::size_t dh = d / heads;
  std::vector<std::size_t> len(n, seq_len);
  if (!lengths.empty()) {
    require(lengths.size() == n, "self_attention", "one length per sequence required");
    for (std::size_t s = 0; s < n; ++s) {
      require(lengths[s] >= 1 && lengths[s] <= seq_len, "self_attention", "length out of range");
      len[s] = lengths[s];
    }
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto L = static_cast<Eigen::Index>(seq_len);
  const auto D3 = static_cast<Eigen::Index>(3 * d);
  const auto Dh = static_cast<Eigen::Index>(dh);
  using Stride = Eigen::OuterStride<>;
  using BlockC = Eigen::Map<const RowMat, 0, Stride>;
  using Block = Eigen::Map<RowMat, 0, Stride>;

  // probs[s][h] is L x L, stored contiguously per (s, h).
  auto probs = std::make_shared<Storage>(n * heads * seq_len * seq_len);
  Tensor O = Tensor::matrix(n * seq_len, d);
  RowMat scores(L, L);
  for (std::size_t s = 0; s < n; ++s) {
    const auto kv = static_cast<Eigen::Index>(len[s]);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* base = QKV.raw() + s * seq_len * 3 * d + h * dh;
      BlockC Q(base, L, Dh, Stride(D3));
      BlockC K(base + d, kv, Dh, Stride(D3));
      BlockC V(base + 2 * d, kv, Dh, Stride(D3));
      Eigen::Map<RowMat> P(probs->data() + (s * heads + h) * seq_len * seq_len, L, L);
      P.setZero();
      P.leftCols(kv).noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < L; ++i) {
        auto row = P.row(i).head(kv);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
      }
      Block out(O.raw() + s * seq_len * d + h * dh, L, Dh, Stride(static_cast<Eigen::Index>(d)));
      out.noalias() = P.leftCols(kv) * V;
    }
  }
  return push("self_attention", std::move(O), needs(qkv),
              [qkv, seq_len, heads, d, dh, inv_sqrt, probs, len = std::move(len)](Tape& t, std::size_t self) {
                const Tensor& G = t.grad(self);
                const Tensor& QKV = t.value(qkv);
                Tensor& GQKV = t.grad_of(qkv.id);
                const auto L = static_cast<Eigen::Index>(seq_len);
                const auto D3 = static_cast<Eigen::Index>(3 * d);
                const auto D = static_cast<Eigen::Index>(d);
                const auto Dh = static_cast<Eigen::Index>(dh);
                RowMat dP;
                for (std::size_t s = 0; s < len.size(); ++s) {
                  const auto kv = static_cast<Eigen::Index>(len[s]);
                  for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = s * seq_len * 3 * d + h * dh;
                    BlockC Q(QKV.raw() + off, L, Dh, Stride(D3));
                    BlockC K(QKV.raw() + off + d, kv, Dh, Stride(D3));
                    BlockC V(QKV.raw() + off + 2 * d, kv, Dh, Stride(D3));
                    Block dQ(GQKV.raw() + off, L, Dh, Stride(D3));
                    Block dK(GQKV.raw() + off + d, kv, Dh, Stride(D3));
                    Block dV(GQKV.raw() + off + 2 * d, kv, Dh, Stride(D3));
                    BlockC dO(G.raw() + s * seq_len * d + h * dh, L, Dh, Stride(D));
                    Eigen::Map<const RowMat> Pfull(probs->data() + (s * heads + h) * seq_len * seq_len, L, L);
                    auto P = Pfull.leftCols(kv);
                    dV.noalias() += P.transpose() * dO;
                    dP.noalias() = dO * V.transpose();
                    // softmax backward, row-wise
                    for (Eigen::Index i = 0; i < L; ++i) {
                      const double dot = dP.row(i).dot(P.row(i));
                      dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
                    }
                    dQ.noalias() += (dP * K) * inv_sqrt;
                    dK.noalias() += (dP.transpose() * Q) * inv_sqrt;
                  }
                }
              });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push("sum", Tensor::scalar(s), needs(a), [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_of(a.id).data()) v += g;
  });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  return scale(sum(a), 1.0 / n);
}

GradientSet Tape::backward(Var loss) {
  const Tensor& L = value(loss);
  if (L.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + dims(L));
  GradientSet grads;
  if (!nodes_[loss.id].needs_grad) return grads;
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (!n.grad.all_finite()) {
      throw NumericalError(n.op + ": non-finite gradient during backward");
    }
    if (!n.param_name.empty()) {
      auto [it, inserted] = grads.emplace(n.param_name, n.grad);
      if (!inserted) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) it->second[k] += n.grad[k];
      }
      continue;
    }
    if (n.backward) n.backward(*this, i);
  }
  return grads;
}

double softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw ContractError("softmax_cross_entropy: target " + std::to_string(target) +
                        " out of range for " + std::to_string(logits.size()) + " logits");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s) - logits[target];
}

}  // namespace chartlab::num
