#ifndef MVCT_ENCODER_HPP
#define MVCT_ENCODER_HPP

#include <string>
#include <vector>

#include "mvct/atlas.hpp"
#include "mvct/model.hpp"
#include "mvct/tape.hpp"

namespace mvct {

// Shared forward-pass context: one tape, the parameter store, and a per-tape
// cache so each parameter becomes a single leaf even when touched repeatedly.
struct Fwd {
  ad::Tape& t;
  ad::ParamStore& ps;
  std::map<std::string, ad::Var> cache;

  Fwd(ad::Tape& tape, ad::ParamStore& store) : t(tape), ps(store) {}
  ad::Var p(const std::string& name);
};

// Inverted-dropout mask source. Each call site consumes the next slice of a
// keyed counter stream, so masks are a pure function of (key, call order) and
// training runs are reproducible bit-for-bit.
struct DropCtx {
  bool on = false;
  double rate = 0;
  Stream stream{0};

  static DropCtx off() { return DropCtx{}; }
  static DropCtx active(double rate, Stream s) {
    DropCtx d;
    d.on = rate > 0;
    d.rate = rate;
    d.stream = s;
    return d;
  }
  ad::Var apply(Fwd& f, ad::Var x);
};

// Per-layer, per-head attention matrices captured during encode.
struct EncodeTrace {
  std::vector<std::vector<Mat>> attn;  // [layer][head], each N x N
};

// sin/cos positional features of 3D coordinates against the learned frequency
// bank: row i = [sin(2 pi z_1 . c_i), cos(2 pi z_1 . c_i), sin(2 pi z_2 . c_i), ...]
ad::Var fourier_features(Fwd& f, const Mat& coords);
Mat fourier_features_value(const Mat& coords, const Mat& freq);  // plain eval

// Node embeddings: connectivity rows through the atlas projection plus
// projected positional features.
ad::Var atlas_encode(Fwd& f, const Atlas& atlas, const Mat& conn);

// Gaussian distance bias for one (layer, head): alpha * (-(D - mu)^2 /
// (2 sigma^2)) + beta with mu = mu_t * dis_max, sigma = sigma_t * dis_max.
ad::Var distance_bias(Fwd& f, int layer, int head, const Atlas& atlas);
Mat distance_bias_value(const ModelState& ms, int layer, int head,
                        const Atlas& atlas);

// Derived bias parameters from raw values (softplus / sigmoid maps).
struct BiasParams {
  double alpha, beta, mu_t, sigma_t;
};
BiasParams bias_params_value(const ModelState& ms, int layer, int head);

// One distance-aware layer (gated multi-head attention block + FFN).
ad::Var dasa_layer(Fwd& f, ad::Var h, int layer, const Atlas& atlas,
                   const ModelConfig& cfg, DropCtx& drop,
                   std::vector<Mat>* attn_trace);

// Full encoder: atlas projection + positional features, then every layer.
ad::Var encode(Fwd& f, const ModelState& ms, const Atlas& atlas,
               const Mat& conn, DropCtx& drop, EncodeTrace* trace = nullptr);

// Plain forward (no gradients, dropout off).
Mat encode_value(const ModelState& ms, const Atlas& atlas, const Mat& conn,
                 EncodeTrace* trace = nullptr);

}  // namespace mvct

#endif
