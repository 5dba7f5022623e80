#include "mvct/tape.hpp"

#include <cmath>

namespace mvct::ad {

// ---- ParamStore -------------------------------------------------------------

Mat& ParamStore::create(const std::string& name, Eigen::Index r,
                        Eigen::Index c) {
  require(!has(name), "duplicate parameter: " + name);
  value[name] = Mat::Zero(r, c);
  grad[name] = Mat::Zero(r, c);
  return value[name];
}

void ParamStore::zero_grad() {
  for (auto& [k, g] : grad) g.setZero();
}

double ParamStore::grad_sq_norm() const {
  double s = 0;
  for (const auto& [k, g] : grad) s += g.squaredNorm();
  return s;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : value) n += std::size_t(v.size());
  return n;
}

// ---- Tape -------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
  require(v.i >= 0 && std::size_t(v.i) < nodes_.size(), "invalid tape var");
  return nodes_[std::size_t(v.i)];
}

Tape::Node& Tape::node(Var v) {
  require(v.i >= 0 && std::size_t(v.i) < nodes_.size(), "invalid tape var");
  return nodes_[std::size_t(v.i)];
}

Var Tape::input(Mat v) {
  Node n;
  n.owned = std::move(v);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Var Tape::param(ParamStore& ps, const std::string& name) {
  require(ps.has(name), "unknown parameter: " + name);
  Node n;
  n.external = &ps.value[name];
  n.needs = true;
  ParamStore* psp = &ps;
  int idx = int(nodes_.size());
  n.back = [psp, name, idx](Tape& t) {
    Node& self = t.nodes_[std::size_t(idx)];
    if (self.has_grad) psp->grad[name] += self.grad;
  };
  nodes_.push_back(std::move(n));
  return Var{idx};
}

const Mat& Tape::val(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

Mat& Tape::grad_ref(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    const Mat& x = n.external ? *n.external : n.owned;
    n.grad = Mat::Zero(x.rows(), x.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::acc(Var v, const Mat& g) {
  Node& n = node(v);
  if (!n.needs) return;
  grad_ref(v) += g;
}

Var Tape::make(Mat v, bool needs, std::function<void(Tape&)> back) {
  Node n;
  n.owned = std::move(v);
  n.needs = needs;
  if (needs) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  const Mat& r = val(root);
  require(r.rows() == 1 && r.cols() == 1, "backward root must be a scalar");
  require(node(root).needs, "backward root does not depend on any parameter");
  grad_ref(root)(0, 0) += 1.0;
  for (int i = root.i; i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (n.needs && n.has_grad && n.back) n.back(*this);
  }
}

void Tape::clear_grads() {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
}

// ---- op helpers -------------------------------------------------------------

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch");
}

double stable_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  Mat y = t.val(a) + t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.make(std::move(y), ng, [a, b, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    tt.acc(a, g);
    tt.acc(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  Mat y = t.val(a) - t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.make(std::move(y), ng, [a, b, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    tt.acc(a, g);
    tt.acc(b, Mat(-g));
  });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  Mat y = t.val(a).cwiseProduct(t.val(b));
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.make(std::move(y), ng, [a, b, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    if (tt.needs_grad(a)) tt.acc(a, g.cwiseProduct(tt.val(b)));
    if (tt.needs_grad(b)) tt.acc(b, g.cwiseProduct(tt.val(a)));
  });
}

Var scale(Tape& t, Var a, double c) {
  Mat y = t.val(a) * c;
  return t.make(std::move(y), t.needs_grad(a),
                [a, c, outi = int(t.size())](Tape& tt) {
                  tt.acc(a, Mat(tt.grad_ref(Var{outi}) * c));
                });
}

Var shift(Tape& t, Var a, double c) {
  Mat y = (t.val(a).array() + c).matrix();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  tt.acc(a, tt.grad_ref(Var{outi}));
                });
}

Var matmul(Tape& t, Var a, Var b) {
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dim mismatch");
  Mat y = t.val(a) * t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.make(std::move(y), ng, [a, b, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    if (tt.needs_grad(a)) tt.acc(a, Mat(g * tt.val(b).transpose()));
    if (tt.needs_grad(b)) tt.acc(b, Mat(tt.val(a).transpose() * g));
  });
}

Var transpose(Tape& t, Var a) {
  Mat y = t.val(a).transpose();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  tt.acc(a, Mat(tt.grad_ref(Var{outi}).transpose()));
                });
}

Var sigmoid(Tape& t, Var a) {
  Mat y = t.val(a).unaryExpr([](double x) { return stable_sigmoid(x); });
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& y2 = tt.val(Var{outi});
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat gx = (g.array() * y2.array() * (1.0 - y2.array())).matrix();
                  tt.acc(a, gx);
                });
}

Var softplus(Tape& t, Var a) {
  Mat y = t.val(a).unaryExpr([](double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
  });
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat d = x.unaryExpr([](double v) { return stable_sigmoid(v); });
                  tt.acc(a, Mat(g.cwiseProduct(d)));
                });
}

Var relu(Tape& t, Var a) {
  Mat y = t.val(a).cwiseMax(0.0);
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat d = (x.array() > 0.0).cast<double>().matrix();
                  tt.acc(a, Mat(g.cwiseProduct(d)));
                });
}

Var gelu(Tape& t, Var a) {
  Mat y = t.val(a).unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat d = x.unaryExpr([](double v) {
                    double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                    double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                    return cdf + v * pdf;
                  });
                  tt.acc(a, Mat(g.cwiseProduct(d)));
                });
}

Var sin_op(Tape& t, Var a) {
  Mat y = t.val(a).array().sin().matrix();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  tt.acc(a, Mat((g.array() * x.array().cos()).matrix()));
                });
}

Var cos_op(Tape& t, Var a) {
  Mat y = t.val(a).array().cos().matrix();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  tt.acc(a, Mat((-g.array() * x.array().sin()).matrix()));
                });
}

Var log_op(Tape& t, Var a) {
  Mat y = t.val(a).array().log().matrix();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  tt.acc(a, Mat(g.cwiseQuotient(x)));
                });
}

Var recip(Tape& t, Var a) {
  Mat y = t.val(a).cwiseInverse();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& y2 = tt.val(Var{outi});
                  const Mat& g = tt.grad_ref(Var{outi});
                  tt.acc(a, Mat((-g.array() * y2.array() * y2.array()).matrix()));
                });
}

Var cmax(Tape& t, Var a, double c) {
  Mat y = t.val(a).cwiseMax(c);
  return t.make(std::move(y), t.needs_grad(a),
                [a, c, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat d = (x.array() > c).cast<double>().matrix();
                  tt.acc(a, Mat(g.cwiseProduct(d)));
                });
}

Var smooth_l1(Tape& t, Var a) {
  Mat y = t.val(a).unaryExpr([](double x) {
    double ax = std::abs(x);
    return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
  });
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& x = tt.val(a);
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat d = x.unaryExpr([](double v) {
                    return std::abs(v) < 1.0 ? v : (v > 0 ? 1.0 : -1.0);
                  });
                  tt.acc(a, Mat(g.cwiseProduct(d)));
                });
}

// ---- reductions -------------------------------------------------------------

Var sum_all(Tape& t, Var a) {
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum();
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  double g = tt.grad_ref(Var{outi})(0, 0);
                  const Mat& x = tt.val(a);
                  tt.acc(a, Mat::Constant(x.rows(), x.cols(), g));
                });
}

Var mean_all(Tape& t, Var a) {
  double n = double(t.val(a).size());
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum() / n;
  return t.make(std::move(y), t.needs_grad(a),
                [a, n, outi = int(t.size())](Tape& tt) {
                  double g = tt.grad_ref(Var{outi})(0, 0) / n;
                  const Mat& x = tt.val(a);
                  tt.acc(a, Mat::Constant(x.rows(), x.cols(), g));
                });
}

Var col_mean(Tape& t, Var a) {
  double n = double(t.val(a).rows());
  Mat y = t.val(a).colwise().mean();
  return t.make(std::move(y), t.needs_grad(a),
                [a, n, outi = int(t.size())](Tape& tt) {
                  const Mat& g = tt.grad_ref(Var{outi});
                  const Mat& x = tt.val(a);
                  tt.acc(a, Mat(g.replicate(x.rows(), 1) / n));
                });
}

// ---- structured ops ---------------------------------------------------------

Var row_softmax(Tape& t, Var a) {
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    RowArr e = (x.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return t.make(std::move(y), t.needs_grad(a),
                [a, outi = int(t.size())](Tape& tt) {
                  const Mat& y2 = tt.val(Var{outi});
                  const Mat& g = tt.grad_ref(Var{outi});
                  Mat gx(y2.rows(), y2.cols());
                  for (Eigen::Index i = 0; i < y2.rows(); ++i) {
                    double dot = g.row(i).dot(y2.row(i));
                    gx.row(i) =
                        (y2.row(i).array() * (g.row(i).array() - dot)).matrix();
                  }
                  tt.acc(a, gx);
                });
}

Var layer_norm_rows(Tape& t, Var a, double eps) {
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  std::vector<double> inv_std(std::size_t(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double s = 1.0 / std::sqrt(var + eps);
    inv_std[std::size_t(i)] = s;
    y.row(i) = ((x.row(i).array() - mu) * s).matrix();
  }
  return t.make(
      std::move(y), t.needs_grad(a),
      [a, inv_std = std::move(inv_std), outi = int(t.size())](Tape& tt) {
        const Mat& y2 = tt.val(Var{outi});
        const Mat& g = tt.grad_ref(Var{outi});
        Mat gx(y2.rows(), y2.cols());
        for (Eigen::Index i = 0; i < y2.rows(); ++i) {
          double gmean = g.row(i).mean();
          double gy = g.row(i).dot(y2.row(i)) / double(y2.cols());
          gx.row(i) = (inv_std[std::size_t(i)] *
                       (g.row(i).array() - gmean - y2.row(i).array() * gy))
                          .matrix();
        }
        tt.acc(a, gx);
      });
}

Var add_rowvec(Tape& t, Var x, Var v) {
  require(t.val(v).rows() == 1 && t.val(v).cols() == t.val(x).cols(),
          "add_rowvec: shape mismatch");
  Mat y = t.val(x).rowwise() + t.val(v).row(0);
  bool ng = t.needs_grad(x) || t.needs_grad(v);
  return t.make(std::move(y), ng, [x, v, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    tt.acc(x, g);
    if (tt.needs_grad(v)) tt.acc(v, Mat(g.colwise().sum()));
  });
}

Var mul_rowvec(Tape& t, Var x, Var v) {
  require(t.val(v).rows() == 1 && t.val(v).cols() == t.val(x).cols(),
          "mul_rowvec: shape mismatch");
  Mat y = (t.val(x).array().rowwise() * t.val(v).row(0).array()).matrix();
  bool ng = t.needs_grad(x) || t.needs_grad(v);
  return t.make(std::move(y), ng, [x, v, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    if (tt.needs_grad(x))
      tt.acc(x, Mat((g.array().rowwise() * tt.val(v).row(0).array()).matrix()));
    if (tt.needs_grad(v))
      tt.acc(v, Mat(g.cwiseProduct(tt.val(x)).colwise().sum()));
  });
}

Var mul_cmat(Tape& t, Var x, const Mat& m) {
  check_same_shape(t.val(x), m, "mul_cmat");
  Mat y = t.val(x).cwiseProduct(m);
  return t.make(std::move(y), t.needs_grad(x),
                [x, m, outi = int(t.size())](Tape& tt) {
                  tt.acc(x, Mat(tt.grad_ref(Var{outi}).cwiseProduct(m)));
                });
}

Var bcast_mul(Tape& t, Var s, Var x) {
  require(t.val(s).size() == 1, "bcast_mul: scalar must be 1x1");
  Mat y = t.val(x) * t.val(s)(0, 0);
  bool ng = t.needs_grad(s) || t.needs_grad(x);
  return t.make(std::move(y), ng, [s, x, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    if (tt.needs_grad(s)) {
      Mat gs(1, 1);
      gs(0, 0) = g.cwiseProduct(tt.val(x)).sum();
      tt.acc(s, gs);
    }
    if (tt.needs_grad(x)) tt.acc(x, Mat(g * tt.val(s)(0, 0)));
  });
}

Var bcast_add(Tape& t, Var s, Var x) {
  require(t.val(s).size() == 1, "bcast_add: scalar must be 1x1");
  Mat y = (t.val(x).array() + t.val(s)(0, 0)).matrix();
  bool ng = t.needs_grad(s) || t.needs_grad(x);
  return t.make(std::move(y), ng, [s, x, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    if (tt.needs_grad(s)) {
      Mat gs(1, 1);
      gs(0, 0) = g.sum();
      tt.acc(s, gs);
    }
    tt.acc(x, g);
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index rows = t.val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    require(t.val(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.val(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    offsets.push_back(off);
    y.middleCols(off, t.val(p).cols()) = t.val(p);
    off += t.val(p).cols();
  }
  return t.make(std::move(y), ng,
                [parts, offsets, outi = int(t.size())](Tape& tt) {
                  const Mat& g = tt.grad_ref(Var{outi});
                  for (std::size_t k = 0; k < parts.size(); ++k) {
                    Eigen::Index w = tt.val(parts[k]).cols();
                    tt.acc(parts[k], Mat(g.middleCols(offsets[k], w)));
                  }
                });
}

Var interleave_cols(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "interleave_cols");
  const Mat& A = t.val(a);
  const Mat& B = t.val(b);
  Mat y(A.rows(), 2 * A.cols());
  for (Eigen::Index k = 0; k < A.cols(); ++k) {
    y.col(2 * k) = A.col(k);
    y.col(2 * k + 1) = B.col(k);
  }
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.make(std::move(y), ng, [a, b, outi = int(t.size())](Tape& tt) {
    const Mat& g = tt.grad_ref(Var{outi});
    Eigen::Index K = g.cols() / 2;
    Mat ga(g.rows(), K), gb(g.rows(), K);
    for (Eigen::Index k = 0; k < K; ++k) {
      ga.col(k) = g.col(2 * k);
      gb.col(k) = g.col(2 * k + 1);
    }
    tt.acc(a, ga);
    tt.acc(b, gb);
  });
}

Var detach(Tape& t, Var a) { return t.input(t.val(a)); }

Var ce_loss(Tape& t, Var logits, int label) {
  const Mat& z = t.val(logits);
  require(z.rows() == 1, "ce_loss: logits must be a row vector");
  require(label >= 0 && label < z.cols(),
          "ce_loss: label " + std::to_string(label) + " out of range [0, " +
              std::to_string(z.cols()) + ")");
  double m = z.row(0).maxCoeff();
  double se = (z.row(0).array() - m).exp().sum();
  Mat y(1, 1);
  y(0, 0) = m + std::log(se) - z(0, label);
  return t.make(std::move(y), t.needs_grad(logits),
                [logits, label, m, se, outi = int(t.size())](Tape& tt) {
                  double g = tt.grad_ref(Var{outi})(0, 0);
                  const Mat& z2 = tt.val(logits);
                  Mat gz = ((z2.row(0).array() - m).exp() / se).matrix() * g;
                  gz(0, label) -= g;
                  tt.acc(logits, gz);
                });
}

}  // namespace mvct::ad
