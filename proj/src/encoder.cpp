#include "mvct/encoder.hpp"

#include <cmath>

namespace mvct {

using namespace ad;

Var Fwd::p(const std::string& name) {
  auto it = cache.find(name);
  if (it != cache.end()) return it->second;
  Var v = t.param(ps, name);
  cache.emplace(name, v);
  return v;
}

Var DropCtx::apply(Fwd& f, Var x) {
  if (!on) return x;
  const Mat& v = f.t.val(x);
  Mat mask(v.rows(), v.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = (stream.uniform() >= rate) ? 1.0 / keep : 0.0;
  return mul_cmat(f.t, x, mask);
}

static constexpr double kLnEps = 1e-5;

Var fourier_features(Fwd& f, const Mat& coords) {
  require(coords.cols() == 3, "coordinates must be N x 3");
  Var z = f.p("freq.Z");
  Var c = f.t.input(coords);
  Var ang = scale(f.t, matmul(f.t, c, transpose(f.t, z)), 2.0 * M_PI);
  return interleave_cols(f.t, sin_op(f.t, ang), cos_op(f.t, ang));
}

Mat fourier_features_value(const Mat& coords, const Mat& freq) {
  ad::Tape t;
  ad::ParamStore ps;
  ps.create("freq.Z", freq.rows(), freq.cols()) = freq;
  Fwd f(t, ps);
  return t.val(fourier_features(f, coords));
}

Var atlas_encode(Fwd& f, const Atlas& atlas, const Mat& conn) {
  std::string wname = "atlas." + atlas.id + ".W";
  require(f.ps.has(wname),
          "atlas '" + atlas.id +
              "' has no projection parameters; register the atlas on the "
              "model before encoding");
  require(conn.rows() == atlas.roi_count() && conn.cols() == atlas.roi_count(),
          "connectivity for atlas '" + atlas.id + "' must be " +
              std::to_string(atlas.roi_count()) + "x" +
              std::to_string(atlas.roi_count()));
  Var x = f.t.input(conn);
  Var h = matmul(f.t, x, f.p(wname));
  Var phi = fourier_features(f, atlas.coords);
  return add(f.t, h, matmul(f.t, phi, f.p("freq.Wproj")));
}

namespace {

std::string head_prefix(const char* group, const std::string& mid, int layer,
                        int head) {
  return std::string(group) + mid + ".l" + std::to_string(layer) + ".h" +
         std::to_string(head);
}

}  // namespace

Var distance_bias(Fwd& f, int layer, int head, const Atlas& atlas) {
  std::string hp = head_prefix("enc", "", layer, head);
  Var alpha = softplus(f.t, f.p(hp + ".alpha_raw"));
  Var beta = f.p(hp + ".beta");
  Var mu_t = sigmoid(f.t, f.p(hp + ".mu_raw"));
  Var sigma_t = shift(f.t, softplus(f.t, f.p(hp + ".sigma_raw")), 1e-4);
  Var mu = scale(f.t, mu_t, atlas.dis_max);
  Var sigma = scale(f.t, sigma_t, atlas.dis_max);
  Var d = f.t.input(atlas.dist);
  Var dm = bcast_add(f.t, neg(f.t, mu), d);             // D - mu
  Var quad = mul(f.t, dm, dm);                          // (D - mu)^2
  Var inv2s2 = recip(f.t, scale(f.t, mul(f.t, sigma, sigma), 2.0));
  Var core = scale(f.t, bcast_mul(f.t, inv2s2, quad), -1.0);
  return bcast_add(f.t, beta, bcast_mul(f.t, alpha, core));
}

BiasParams bias_params_value(const ModelState& ms, int layer, int head) {
  std::string hp = head_prefix("enc", "", layer, head);
  auto raw = [&](const std::string& n) {
    auto it = ms.params.value.find(hp + n);
    require(it != ms.params.value.end(), "missing bias parameter " + hp + n);
    return it->second(0, 0);
  };
  auto sp = [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); };
  BiasParams b;
  b.alpha = sp(raw(".alpha_raw"));
  b.beta = raw(".beta");
  b.mu_t = 1.0 / (1.0 + std::exp(-raw(".mu_raw")));
  b.sigma_t = sp(raw(".sigma_raw")) + 1e-4;
  return b;
}

Mat distance_bias_value(const ModelState& ms, int layer, int head,
                        const Atlas& atlas) {
  ad::Tape t;
  Fwd f(t, const_cast<ad::ParamStore&>(ms.params));  // read-only use
  return t.val(distance_bias(f, layer, head, atlas));
}

Var dasa_layer(Fwd& f, Var h, int layer, const Atlas& atlas,
               const ModelConfig& cfg, DropCtx& drop,
               std::vector<Mat>* attn_trace) {
  std::string lp = "enc.l" + std::to_string(layer);
  double inv_sqrt_dh = 1.0 / std::sqrt(double(cfg.head_dim()));
  std::vector<Var> head_outs;
  for (int hd = 0; hd < cfg.heads; ++hd) {
    std::string hp = lp + ".h" + std::to_string(hd);
    Var q = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wq")), f.p(hp + ".bq"));
    Var k = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wk")), f.p(hp + ".bk"));
    Var v = add_rowvec(f.t, matmul(f.t, h, f.p(hp + ".Wv")), f.p(hp + ".bv"));
    Var b = distance_bias(f, layer, hd, atlas);
    Var logits = add(
        f.t, scale(f.t, matmul(f.t, q, transpose(f.t, k)), inv_sqrt_dh), b);
    if (!f.t.val(logits).allFinite())
      fail("non-finite attention logits at layer " + std::to_string(layer) +
           " head " + std::to_string(hd) + " (parameter blow-up)");
    Var a = row_softmax(f.t, logits);
    if (attn_trace) attn_trace->push_back(f.t.val(a));
    Var ad_ = drop.apply(f, a);
    head_outs.push_back(matmul(f.t, ad_, v));
  }
  Var mh = add_rowvec(f.t, matmul(f.t, concat_cols(f.t, head_outs),
                                  f.p(lp + ".WO")),
                      f.p(lp + ".bO"));
  Var gate = sigmoid(
      f.t, add_rowvec(f.t, matmul(f.t, h, f.p(lp + ".Wg")), f.p(lp + ".bg")));
  Var gated = mul(f.t, gate, mh);
  Var norm1 = add_rowvec(
      f.t,
      mul_rowvec(f.t, layer_norm_rows(f.t, gated, kLnEps), f.p(lp + ".ln1.g")),
      f.p(lp + ".ln1.b"));
  Var dasa = add(f.t, h, norm1);
  Var hidden = gelu(
      f.t,
      add_rowvec(f.t, matmul(f.t, dasa, f.p(lp + ".ffn.W1")),
                 f.p(lp + ".ffn.b1")));
  hidden = drop.apply(f, hidden);
  Var ffn_out = add_rowvec(f.t, matmul(f.t, hidden, f.p(lp + ".ffn.W2")),
                           f.p(lp + ".ffn.b2"));
  Var res = add(f.t, h, ffn_out);
  return add_rowvec(
      f.t,
      mul_rowvec(f.t, layer_norm_rows(f.t, res, kLnEps), f.p(lp + ".ln2.g")),
      f.p(lp + ".ln2.b"));
}

Var encode(Fwd& f, const ModelState& ms, const Atlas& atlas, const Mat& conn,
           DropCtx& drop, EncodeTrace* trace) {
  require(ms.has_atlas(atlas.id),
          "atlas '" + atlas.id +
              "' is not registered on this model; call register_atlas first");
  require(ms.atlas_dims.at(atlas.id) == atlas.roi_count(),
          "atlas '" + atlas.id + "' has " + std::to_string(atlas.roi_count()) +
              " ROIs but the model was built for " +
              std::to_string(ms.atlas_dims.at(atlas.id)));
  Var h = atlas_encode(f, atlas, conn);
  for (int l = 0; l < ms.cfg.layers; ++l) {
    std::vector<Mat>* layer_trace = nullptr;
    if (trace) {
      trace->attn.emplace_back();
      layer_trace = &trace->attn.back();
    }
    h = dasa_layer(f, h, l, atlas, ms.cfg, drop, layer_trace);
  }
  return h;
}

Mat encode_value(const ModelState& ms, const Atlas& atlas, const Mat& conn,
                 EncodeTrace* trace) {
  ad::Tape t;
  Fwd f(t, const_cast<ad::ParamStore&>(ms.params));  // read-only use
  DropCtx drop = DropCtx::off();
  return t.val(encode(f, ms, atlas, conn, drop, trace));
}

}  // namespace mvct
