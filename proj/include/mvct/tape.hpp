#ifndef MVCT_TAPE_HPP
#define MVCT_TAPE_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mvct/common.hpp"

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records one forward computation as a flat list of nodes; creation
// order is a topological order, so backward() is a single reverse sweep.
// Scalars are 1x1 matrices. Parameter leaves reference matrices owned by a
// ParamStore and accumulate their gradients back into it, so one tape can be
// rebuilt per optimization step at no copy cost for the parameters.

namespace mvct::ad {

struct Var {
  int i = -1;
  bool ok() const { return i >= 0; }
};

struct ParamStore {
  std::map<std::string, Mat> value;  // ordered: serialization + optimizer state
  std::map<std::string, Mat> grad;

  Mat& create(const std::string& name, Eigen::Index r, Eigen::Index c);
  bool has(const std::string& name) const { return value.count(name) != 0; }
  void zero_grad();
  double grad_sq_norm() const;
  std::size_t scalar_count() const;
};

class Tape {
 public:
  // Constant (no gradient flows into it).
  Var input(Mat v);
  // Parameter leaf; gradient accumulates into ps.grad[name] during backward().
  Var param(ParamStore& ps, const std::string& name);

  const Mat& val(Var v) const;
  Mat& grad_ref(Var v);  // allocates zeros on first touch
  bool needs_grad(Var v) const { return node(v).needs; }

  // root must be 1x1; seeds d(root)/d(root) = 1 and sweeps the tape backwards.
  void backward(Var root);

  // Drops all node adjoints so another root can be back-propagated through the
  // same graph. Parameter grads in the store are untouched.
  void clear_grads();

  std::size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---
  Var make(Mat v, bool needs, std::function<void(Tape&)> back);
  void acc(Var v, const Mat& g);  // += g if the node participates in grads

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;  // set for parameter leaves
    Mat grad;
    bool has_grad = false;
    bool needs = false;
    std::function<void(Tape&)> back;
  };
  const Node& node(Var v) const;
  Node& node(Var v);
  std::vector<Node> nodes_;
};

// ---- primitive ops ----------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var mul(Tape& t, Var a, Var b);              // elementwise
Var scale(Tape& t, Var a, double c);
Var shift(Tape& t, Var a, double c);         // elementwise + c
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var gelu(Tape& t, Var a);                    // exact erf form
Var sin_op(Tape& t, Var a);
Var cos_op(Tape& t, Var a);
Var log_op(Tape& t, Var a);
Var recip(Tape& t, Var a);                   // elementwise 1/x
Var cmax(Tape& t, Var a, double c);          // elementwise max(x, c)
Var smooth_l1(Tape& t, Var a);               // 0.5 x^2 (|x|<1) else |x|-0.5
Var sum_all(Tape& t, Var a);                 // -> 1x1
Var mean_all(Tape& t, Var a);                // -> 1x1
Var col_mean(Tape& t, Var a);                // -> 1 x cols
Var row_softmax(Tape& t, Var a);
Var layer_norm_rows(Tape& t, Var a, double eps);
Var add_rowvec(Tape& t, Var x, Var v);       // v: 1 x cols, broadcast over rows
Var mul_rowvec(Tape& t, Var x, Var v);
Var mul_cmat(Tape& t, Var x, const Mat& m);  // elementwise by a constant
Var bcast_mul(Tape& t, Var s, Var x);        // s: 1x1 scalar times matrix
Var bcast_add(Tape& t, Var s, Var x);        // matrix + scalar
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var interleave_cols(Tape& t, Var a, Var b);  // [a0 b0 a1 b1 ...]
Var detach(Tape& t, Var a);
// Numerically stable cross-entropy of a 1xC logit row against an index label.
Var ce_loss(Tape& t, Var logits, int label);

}  // namespace mvct::ad

#endif
