#include "mvct/model.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "mvct/io.hpp"

namespace mvct {

void ModelConfig::validate() const {
  require(d >= 1, "d must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(d % heads == 0, "d (" + std::to_string(d) +
                              ") must be divisible by heads (" +
                              std::to_string(heads) + ")");
  require(layers >= 1, "layers must be >= 1");
  require(freq_count >= 1, "freq_count must be >= 1");
  require(n_super >= 2, "n_super must be >= 2");
  require(prototypes >= 2, "prototypes must be >= 2");
  require(gcn_layers >= 1, "gcn_layers must be >= 1");
  require(proto_layers >= 1, "proto_layers must be >= 1");
  require(decoder_layers >= 1, "decoder_layers must be >= 1");
  require(std::isfinite(threshold), "threshold must be finite");
  require(readout_source == "nodes" || readout_source == "supernodes",
          "readout_source must be 'nodes' or 'supernodes'");
  require(saliency_layer == "last" || saliency_layer == "mean_all",
          "saliency_layer must be 'last' or 'mean_all'");
  require(num_classes >= 0, "num_classes must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"layers", layers},
          {"heads", heads},
          {"freq_count", freq_count},
          {"d_ffn", d_ffn},
          {"n_super", n_super},
          {"prototypes", prototypes},
          {"gcn_layers", gcn_layers},
          {"proto_layers", proto_layers},
          {"decoder_layers", decoder_layers},
          {"threshold", threshold},
          {"threshold_abs", threshold_abs},
          {"readout_source", readout_source},
          {"saliency_layer", saliency_layer},
          {"num_classes", num_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.freq_count = j.value("freq_count", c.freq_count);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.n_super = j.value("n_super", c.n_super);
  c.prototypes = j.value("prototypes", c.prototypes);
  c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
  c.proto_layers = j.value("proto_layers", c.proto_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.threshold = j.value("threshold", c.threshold);
  c.threshold_abs = j.value("threshold_abs", c.threshold_abs);
  c.readout_source = j.value("readout_source", c.readout_source);
  c.saliency_layer = j.value("saliency_layer", c.saliency_layer);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

// ---- parameter layout -------------------------------------------------------

namespace {

enum Kind { kZero, kOne, kGauss, kGlorot, kConst };

struct ParamSpec {
  std::string name;
  Eigen::Index r, c;
  Kind kind;
  double p = 0;  // std for kGauss, value for kConst
};

double inv_softplus(double y) {
  // solve log(1 + e^x) = y  =>  x = log(e^y - 1)
  return std::log(std::expm1(y));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void attention_block_specs(std::vector<ParamSpec>& out, const std::string& pre,
                           int heads, int d, int dh, Kind proj_kind,
                           double proj_std) {
  for (int h = 0; h < heads; ++h) {
    std::string hp = pre + ".h" + std::to_string(h);
    out.push_back({hp + ".Wq", d, dh, proj_kind, proj_std});
    out.push_back({hp + ".bq", 1, dh, kZero});
    out.push_back({hp + ".Wk", d, dh, proj_kind, proj_std});
    out.push_back({hp + ".bk", 1, dh, kZero});
    out.push_back({hp + ".Wv", d, dh, proj_kind, proj_std});
    out.push_back({hp + ".bv", 1, dh, kZero});
  }
  out.push_back({pre + ".WO", Eigen::Index(heads) * dh, d, proj_kind, proj_std});
  out.push_back({pre + ".bO", 1, d, kZero});
}

void ffn_ln_specs(std::vector<ParamSpec>& out, const std::string& pre, int d,
                  int ffn) {
  out.push_back({pre + ".ln1.g", 1, d, kOne});
  out.push_back({pre + ".ln1.b", 1, d, kZero});
  out.push_back({pre + ".ffn.W1", d, ffn, kGlorot});
  out.push_back({pre + ".ffn.b1", 1, ffn, kZero});
  out.push_back({pre + ".ffn.W2", ffn, d, kGlorot});
  out.push_back({pre + ".ffn.b2", 1, d, kZero});
  out.push_back({pre + ".ln2.g", 1, d, kOne});
  out.push_back({pre + ".ln2.b", 1, d, kZero});
}

std::vector<ParamSpec> atlas_specs(const ModelConfig& cfg,
                                   const std::string& id, int n_roi) {
  std::vector<ParamSpec> out;
  out.push_back({"atlas." + id + ".W", n_roi, cfg.d, kGauss, 0.02});
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string pre = "dec." + id + ".l" + std::to_string(l);
    attention_block_specs(out, pre, cfg.heads, cfg.d, cfg.head_dim(), kGlorot,
                          0);
    ffn_ln_specs(out, pre, cfg.d, cfg.ffn_width());
  }
  return out;
}

std::vector<ParamSpec> backbone_specs(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  out.push_back({"freq.Z", cfg.freq_count, 3, kGauss, 0.01});
  out.push_back({"freq.Wproj", Eigen::Index(2) * cfg.freq_count, cfg.d,
                 kGlorot});
  int H = cfg.heads;
  for (int l = 0; l < cfg.layers; ++l) {
    std::string pre = "enc.l" + std::to_string(l);
    attention_block_specs(out, pre, H, cfg.d, cfg.head_dim(), kGauss, 0.02);
    for (int h = 0; h < H; ++h) {
      std::string hp = pre + ".h" + std::to_string(h);
      double mu_t = (H == 1) ? 0.5 : 0.1 + 0.8 * double(h) / double(H - 1);
      out.push_back({hp + ".alpha_raw", 1, 1, kConst, inv_softplus(1.0)});
      out.push_back({hp + ".beta", 1, 1, kZero});
      out.push_back({hp + ".mu_raw", 1, 1, kConst, logit(mu_t)});
      out.push_back({hp + ".sigma_raw", 1, 1, kConst, inv_softplus(0.2 - 1e-4)});
    }
    out.push_back({pre + ".Wg", cfg.d, cfg.d, kGlorot});
    out.push_back({pre + ".bg", 1, cfg.d, kZero});
    ffn_ln_specs(out, pre, cfg.d, cfg.ffn_width());
  }
  for (int i = 0; i < cfg.gcn_layers; ++i) {
    bool last = (i == cfg.gcn_layers - 1);
    out.push_back({"align.feat.W" + std::to_string(i), cfg.d, cfg.d, kGlorot});
    out.push_back({"align.pool.W" + std::to_string(i), cfg.d,
                   last ? cfg.n_super : cfg.d, kGlorot});
  }
  for (int i = 0; i < cfg.proto_layers; ++i) {
    bool last = (i == cfg.proto_layers - 1);
    Eigen::Index outdim = last ? cfg.prototypes : cfg.d;
    out.push_back({"proto.W" + std::to_string(i), cfg.d, outdim, kGlorot});
    out.push_back({"proto.b" + std::to_string(i), 1, outdim, kZero});
  }
  return out;
}

void create_and_fill(ModelState& ms, const std::vector<ParamSpec>& specs) {
  for (const auto& sp : specs) {
    Mat& m = ms.params.create(sp.name, sp.r, sp.c);
    switch (sp.kind) {
      case kZero:
        break;
      case kOne:
        m.setOnes();
        break;
      case kConst:
        m.setConstant(sp.p);
        break;
      case kGauss:
      case kGlorot: {
        double std = sp.kind == kGauss
                         ? sp.p
                         : std::sqrt(2.0 / double(sp.r + sp.c));
        Stream rng(ms.init_seed, {stream_tag::init, hash_str(sp.name)});
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = std * rng.gaussian();
        break;
      }
    }
  }
}

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg,
                            const std::vector<const Atlas*>& atlases,
                            std::uint64_t seed) {
  require(!atlases.empty(), "model needs at least one atlas");
  ModelState ms;
  ms.cfg = cfg;
  ms.init_seed = seed;
  create_and_fill(ms, backbone_specs(cfg));
  for (const Atlas* a : atlases) {
    require(ms.atlas_dims.count(a->id) == 0, "duplicate atlas '" + a->id + "'");
    ms.atlas_ids.push_back(a->id);
    ms.atlas_dims[a->id] = a->roi_count();
    create_and_fill(ms, atlas_specs(cfg, a->id, a->roi_count()));
  }
  if (cfg.num_classes > 0) ms.ensure_head(cfg.num_classes);
  return ms;
}

void ModelState::register_atlas(const Atlas& atlas) {
  require(!has_atlas(atlas.id),
          "atlas '" + atlas.id + "' is already registered");
  atlas_ids.push_back(atlas.id);
  atlas_dims[atlas.id] = atlas.roi_count();
  create_and_fill(*this, atlas_specs(cfg, atlas.id, atlas.roi_count()));
}

void ModelState::ensure_head(int num_classes) {
  require(num_classes >= 2, "classifier head needs >= 2 classes");
  if (params.has("head.W")) {
    require(cfg.num_classes == num_classes,
            "checkpoint head has " + std::to_string(cfg.num_classes) +
                " classes, dataset has " + std::to_string(num_classes));
    return;
  }
  cfg.num_classes = num_classes;
  std::vector<ParamSpec> sp;
  sp.push_back({"head.W", cfg.d, num_classes, kGlorot});
  sp.push_back({"head.b", 1, num_classes, kZero});
  create_and_fill(*this, sp);
}

std::map<std::string, std::size_t> ModelState::component_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [name, m] : params.value) {
    std::string bucket = name.substr(0, name.find('.'));
    out[bucket] += std::size_t(m.size());
  }
  return out;
}

void ModelState::install_params(const std::map<std::string, Mat>& values) {
  require(values.size() == params.value.size(),
          "parameter set mismatch on install");
  for (const auto& [name, m] : values) {
    auto it = params.value.find(name);
    require(it != params.value.end(), "unknown parameter on install: " + name);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(),
            "shape mismatch on install: " + name);
    it->second = m;
  }
}

// ---- checkpoint format ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'V', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  s.append(reinterpret_cast<const char*>(&v), 4);
}
void put_i64(std::string& s, std::int64_t v) {
  s.append(reinterpret_cast<const char*>(&v), 8);
}
void put_mat(std::string& s, const Mat& m) {
  put_u32(s, std::uint32_t(m.rows()));
  put_u32(s, std::uint32_t(m.cols()));
  s.append(reinterpret_cast<const char*>(m.data()),
           std::size_t(m.size()) * sizeof(double));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    require(pos + n <= buf.size(),
            std::string("truncated checkpoint blob reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::int64_t i64(const char* what) {
    need(8, what);
    std::int64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Mat mat(const char* what) {
    std::uint32_t r = u32(what), c = u32(what);
    std::size_t bytes = std::size_t(r) * c * sizeof(double);
    need(bytes, what);
    Mat m(r, c);
    std::memcpy(m.data(), buf.data() + pos, bytes);
    pos += bytes;
    return m;
  }
};

void put_named_mats(std::string& blob, const std::map<std::string, Mat>& mats) {
  put_u32(blob, std::uint32_t(mats.size()));
  for (const auto& [name, m] : mats) {
    put_u32(blob, std::uint32_t(name.size()));
    blob.append(name);
    put_mat(blob, m);
  }
}

std::map<std::string, Mat> read_named_mats(Reader& rd, const char* what) {
  std::map<std::string, Mat> out;
  std::uint32_t n = rd.u32(what);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t len = rd.u32(what);
    std::string name = rd.str(len, what);
    out[name] = rd.mat(what);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& prefix, const ModelState& ms,
                     const CheckpointMeta& meta, const OptimState* opt) {
  std::string blob;
  blob.append(kMagic, 8);
  put_u32(blob, kVersion);
  put_named_mats(blob, ms.params.value);
  blob.push_back(opt ? 1 : 0);
  if (opt) {
    put_i64(blob, opt->t);
    put_named_mats(blob, opt->m);
    put_named_mats(blob, opt->v);
  }
  std::filesystem::path bin = prefix;
  bin += ".bin";
  io::atomic_write(bin, blob);

  nlohmann::json j;
  j["config"] = ms.cfg.to_json();
  j["atlas_ids"] = ms.atlas_ids;
  j["atlas_dims"] = ms.atlas_dims;
  j["init_seed"] = ms.init_seed;
  j["rng_seed"] = meta.rng_seed;
  j["epoch"] = meta.epoch;
  j["loss_history"] = meta.loss_history;
  std::filesystem::path js = prefix;
  js += ".json";
  io::save_json(js, j);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix) {
  std::filesystem::path bin = prefix, js = prefix;
  bin += ".bin";
  js += ".json";
  nlohmann::json j = io::load_json(js);
  LoadedCheckpoint out;
  out.model.cfg = ModelConfig::from_json(j.at("config"));
  out.model.cfg.validate();
  out.model.init_seed = j.value("init_seed", std::uint64_t(0));
  for (const auto& id : j.at("atlas_ids"))
    out.model.atlas_ids.push_back(id.get<std::string>());
  for (const auto& [id, n] : j.at("atlas_dims").items())
    out.model.atlas_dims[id] = n.get<int>();
  out.meta.rng_seed = j.value("rng_seed", std::uint64_t(0));
  out.meta.epoch = j.value("epoch", 0);
  if (j.contains("loss_history"))
    for (const auto& v : j["loss_history"])
      out.meta.loss_history.push_back(v.get<double>());

  std::string blob = io::read_file(bin);
  Reader rd(blob);
  std::string magic = rd.str(8, "magic");
  require(std::memcmp(magic.data(), kMagic, 8) == 0,
          "not a checkpoint blob: " + bin.string());
  std::uint32_t ver = rd.u32("version");
  require(ver == kVersion, "unsupported checkpoint version " +
                               std::to_string(ver) + " in " + bin.string());
  auto values = read_named_mats(rd, "parameters");

  // Rebuild the expected layout from the sidecar config and check the blob
  // matches it exactly.
  ModelState expect;
  expect.cfg = out.model.cfg;
  expect.init_seed = out.model.init_seed;
  std::vector<ParamSpec> specs = backbone_specs(expect.cfg);
  for (const auto& id : out.model.atlas_ids) {
    auto it = out.model.atlas_dims.find(id);
    require(it != out.model.atlas_dims.end(),
            "sidecar missing dims for atlas '" + id + "'");
    auto as = atlas_specs(expect.cfg, id, it->second);
    specs.insert(specs.end(), as.begin(), as.end());
  }
  if (out.model.cfg.num_classes > 0) {
    specs.push_back({"head.W", expect.cfg.d, expect.cfg.num_classes, kZero});
    specs.push_back({"head.b", 1, expect.cfg.num_classes, kZero});
  }
  require(values.size() == specs.size(),
          "checkpoint has " + std::to_string(values.size()) +
              " parameters, config implies " + std::to_string(specs.size()));
  for (const auto& sp : specs) {
    auto it = values.find(sp.name);
    require(it != values.end(), "checkpoint missing parameter " + sp.name);
    require(it->second.rows() == sp.r && it->second.cols() == sp.c,
            "checkpoint shape mismatch for " + sp.name);
    out.model.params.create(sp.name, sp.r, sp.c) = it->second;
  }

  rd.need(1, "optimizer flag");
  bool has_opt = blob[rd.pos++] != 0;
  if (has_opt) {
    OptimState opt;
    opt.t = rd.i64("optimizer step");
    opt.m = read_named_mats(rd, "optimizer m");
    opt.v = read_named_mats(rd, "optimizer v");
    out.opt = std::move(opt);
  }
  return out;
}

}  // namespace mvct
