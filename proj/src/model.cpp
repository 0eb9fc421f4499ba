// SPDX-License-Identifier: Apache-2.0
#include "mvp/model.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "mvp/error.hpp"
#include "mvp/io.hpp"

namespace mvp::model {

using nlohmann::json;

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_decouple: return "no_decouple";
    case Variant::no_vae: return "no_vae";
    case Variant::no_decouple_no_vae: return "no_decouple_no_vae";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::full, Variant::no_decouple, Variant::no_vae, Variant::no_decouple_no_vae}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCode::invalid_argument, "unknown variant '" + std::string(s) +
                                        "' (expected full, no_decouple, no_vae, no_decouple_no_vae)");
}

void MvpConfig::validate() const {
  if (text_dim < 1 || image_dim < 1) fail(ErrorCode::invalid_argument, "text_dim and image_dim must be ≥ 1");
  if (latent_dim < 1) fail(ErrorCode::invalid_argument, "latent_dim must be ≥ 1");
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    fail(ErrorCode::invalid_argument, "logit_scale must be positive");
  }
}

std::string config_to_json(const MvpConfig& c) {
  json j = {{"text_dim", c.text_dim},     {"image_dim", c.image_dim},
            {"hidden_dim", c.hidden()},   {"latent_dim", c.latent_dim},
            {"variant", to_string(c.variant)}, {"linear_decoder", c.linear_decoder},
            {"logit_scale", c.logit_scale}};
  return j.dump();
}

MvpConfig config_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    MvpConfig c;
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.image_dim = j.at("image_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.linear_decoder = j.at("linear_decoder").get<bool>();
    c.logit_scale = j.at("logit_scale").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("bad model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename T>
Parameter<T> uniform_block(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in,
                           Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor2D<T> v(rows, cols);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
  return Parameter<T>(std::move(name), std::move(v));
}

template <typename T>
void init_affine(Parameter<T>& w, Parameter<T>& b, std::string_view block, std::size_t in,
                 std::size_t out, std::uint64_t seed) {
  Rng rng(derive_seed(seed, std::string("init/") + std::string(block)));
  w = uniform_block<T>(std::string(block) + ".w", in, out, in, rng);
  b = uniform_block<T>(std::string(block) + ".b", 1, out, in, rng);
}

}  // namespace

template <typename T>
MvpParameters<T> MvpParameters<T>::init(const MvpConfig& config, std::uint64_t seed,
                                        std::optional<bool> with_vae) {
  config.validate();
  MvpParameters p;
  p.config = config;
  p.has_vae = with_vae.value_or(uses_vae(config.variant));
  if (uses_vae(config.variant) && !p.has_vae) {
    fail(ErrorCode::invalid_argument, "variant " + std::string(to_string(config.variant)) + " needs VAE parameters");
  }
  const std::size_t d = config.text_dim, h = config.hidden(), z = config.latent_dim;
  if (p.has_vae) {
    init_affine(p.enc1_w, p.enc1_b, "enc1", d, h, seed);
    init_affine(p.enc2_w, p.enc2_b, "enc2", h, 2 * z, seed);
    init_affine(p.dec_w, p.dec_b, "dec", z, d, seed);
  }
  init_affine(p.fusion_w, p.fusion_b, "fusion", config.fusion_in(), config.image_dim, seed);
  return p;
}

template <typename T>
std::vector<Parameter<T>*> MvpParameters<T>::all() {
  if (!has_vae) return {&fusion_w, &fusion_b};
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec_w, &dec_b, &fusion_w, &fusion_b};
}

template <typename T>
std::vector<const Parameter<T>*> MvpParameters<T>::all() const {
  if (!has_vae) return {&fusion_w, &fusion_b};
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec_w, &dec_b, &fusion_w, &fusion_b};
}

template <typename T>
template <typename U>
MvpParameters<U> MvpParameters<T>::cast() const {
  MvpParameters<U> out;
  out.config = config;
  out.has_vae = has_vae;
  auto src = all();
  auto dst = out.all();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i] = Parameter<U>(src[i]->name, src[i]->value.template cast<U>());
  }
  return out;
}

template <typename T>
bool MvpParameters<T>::bitwise_equal(const MvpParameters& other) const {
  if (!(config == other.config) || has_vae != other.has_vae) return false;
  auto a = all();
  auto b = other.all();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i]->value;
    const auto& y = b[i]->value;
    if (a[i]->name != b[i]->name || !x.same_shape(y)) return false;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph forward

namespace {

template <typename T>
using Var = typename Graph<T>::Var;

template <typename T>
VaeVars vae_graph(Graph<T>& g, const MvpParameters<T>& p, Var<T> x, const ForwardMode& mode,
                  const Tensor2D<T>* eps) {
  if (!p.has_vae) fail(ErrorCode::invalid_argument, "model has no VAE parameters");
  const auto& cfg = p.config;
  if (g.value(x).cols() != cfg.text_dim) {
    fail(ErrorCode::shape_mismatch, "VAE input width " + std::to_string(g.value(x).cols()) +
                                        " != text_dim " + std::to_string(cfg.text_dim));
  }
  const std::size_t z = cfg.latent_dim;
  auto h1 = g.gelu(g.affine(x, g.param(p.enc1_w), g.param(p.enc1_b)));
  auto out = g.affine(h1, g.param(p.enc2_w), g.param(p.enc2_b));
  auto mu = g.slice_cols(out, 0, z);
  auto lv = g.slice_cols(out, z, 2 * z);
  Var<T> zz = mu;
  if (mode.stochastic) {
    if (eps == nullptr) fail(ErrorCode::invalid_argument, "stochastic forward needs an eps draw");
    zz = g.reparameterize(mu, lv, *eps, static_cast<T>(mode.variance_scale));
  }
  auto recon = g.affine(zz, g.param(p.dec_w), g.param(p.dec_b));
  if (!cfg.linear_decoder) recon = g.gelu(recon);
  return VaeVars{x.index, mu.index, lv.index, zz.index, recon.index};
}

template <typename T>
std::pair<Var<T>, std::optional<VaeVars>> fused_graph(Graph<T>& g, const MvpParameters<T>& p,
                                                      const ForwardInputs<T>& in,
                                                      const ForwardMode& mode,
                                                      const Tensor2D<T>* eps) {
  const auto& cfg = p.config;
  if (mode.variant != cfg.variant) {
    fail(ErrorCode::invalid_argument, "forward mode variant " + std::string(to_string(mode.variant)) +
                                          " does not match model variant " +
                                          std::string(to_string(cfg.variant)));
  }
  if (!(mode.variance_scale >= 0.0)) fail(ErrorCode::invalid_argument, "variance_scale must be ≥ 0");
  std::optional<VaeVars> vae;
  Var<T> fusion_input{};
  if (decoupled(cfg.variant)) {
    if (in.templates == nullptr || in.classes == nullptr) {
      fail(ErrorCode::invalid_argument, std::string(to_string(cfg.variant)) +
                                            " needs template and class features");
    }
    if (in.templates->rows() != in.num_templates || in.classes->rows() != in.num_classes) {
      fail(ErrorCode::shape_mismatch, "template/class row counts disagree with M/K");
    }
    if (in.templates->cols() != cfg.text_dim || in.classes->cols() != cfg.text_dim) {
      fail(ErrorCode::shape_mismatch, "template dim " + std::to_string(in.templates->cols()) +
                                          " / class dim " + std::to_string(in.classes->cols()) +
                                          " != text_dim " + std::to_string(cfg.text_dim));
    }
    Var<T> comp = g.input_ref(*in.templates);
    if (cfg.variant == Variant::full) {
      vae = vae_graph(g, p, comp, mode, eps);
      comp = Var<T>{vae->recon};
    }
    fusion_input = g.pair_concat(comp, g.input_ref(*in.classes));
  } else {
    if (in.grid == nullptr) {
      fail(ErrorCode::invalid_argument, std::string(to_string(cfg.variant)) + " needs prompt-grid features");
    }
    if (in.grid->rows() != in.num_templates * in.num_classes || in.grid->cols() != cfg.text_dim) {
      fail(ErrorCode::shape_mismatch, "prompt grid " + core::shape_string(in.grid->rows(), in.grid->cols()) +
                                          " does not match M*K x text_dim " +
                                          core::shape_string(in.num_templates * in.num_classes, cfg.text_dim));
    }
    Var<T> comp = g.input_ref(*in.grid);
    if (cfg.variant == Variant::no_decouple) {
      vae = vae_graph(g, p, comp, mode, eps);
      comp = Var<T>{vae->recon};
    }
    fusion_input = comp;
  }
  auto h = g.gelu(g.affine(fusion_input, g.param(p.fusion_w), g.param(p.fusion_b)));
  return {g.normalize_rows(h), vae};
}

}  // namespace

template <typename T>
GraphForward<T> build_forward(Graph<T>& g, const MvpParameters<T>& p, const ForwardInputs<T>& in,
                              const ForwardMode& mode, const Tensor2D<T>* eps) {
  if (in.images == nullptr) fail(ErrorCode::invalid_argument, "forward needs image features");
  if (in.images->cols() != p.config.image_dim) {
    fail(ErrorCode::shape_mismatch, "image dim " + std::to_string(in.images->cols()) +
                                        " != image_dim " + std::to_string(p.config.image_dim));
  }
  auto [fused, vae] = fused_graph(g, p, in, mode, eps);
  auto x = g.normalize_rows(g.input_ref(*in.images));
  auto sims = g.matmul_nt(x, fused);
  const std::size_t b = in.images->rows();
  auto logits = g.scale(g.reshape(sims, b * in.num_templates, in.num_classes),
                        static_cast<T>(p.config.logit_scale));
  return GraphForward<T>{fused, logits, vae};
}

template <typename T>
typename Graph<T>::Var loss_mt(Graph<T>& g, typename Graph<T>::Var logits,
                               std::span<const std::size_t> labels, std::size_t num_templates) {
  if (g.value(logits).rows() != labels.size() * num_templates) {
    fail(ErrorCode::shape_mismatch, "logits have " + std::to_string(g.value(logits).rows()) +
                                        " rows for " + std::to_string(labels.size()) + " images x " +
                                        std::to_string(num_templates) + " templates");
  }
  std::vector<std::size_t> expanded;
  expanded.reserve(labels.size() * num_templates);
  for (std::size_t y : labels) expanded.insert(expanded.end(), num_templates, y);
  return g.softmax_cross_entropy(logits, expanded, core::Reduction::mean);
}

template <typename T>
typename Graph<T>::Var loss_vae(Graph<T>& g, const VaeVars& vae) {
  const Var<T> input{vae.input}, recon{vae.recon}, mu{vae.mu}, lv{vae.logvar};
  const T inv_rows = T(1) / static_cast<T>(g.value(input).rows());
  return g.combine(g.squared_error(input, recon), inv_rows, g.gaussian_kl(mu, lv), inv_rows);
}

template <typename T>
typename Graph<T>::Var loss_total(Graph<T>& g, typename Graph<T>::Var l_mt,
                                  typename Graph<T>::Var l_vae, double alpha) {
  return g.combine(l_mt, T(1), l_vae, static_cast<T>(alpha));
}

double loss_total(double l_mt, double l_vae, double alpha) noexcept { return l_mt + alpha * l_vae; }

// ---------------------------------------------------------------------------
// Standalone forwards

template <typename T>
std::pair<Tensor2D<T>, Tensor2D<T>> vae_encode(const MvpParameters<T>& p, const Tensor2D<T>& x) {
  Graph<T> g(false);
  ForwardMode mode{p.config.variant, false, 1.0};
  const VaeVars v = vae_graph<T>(g, p, g.input_ref(x), mode, nullptr);
  return {g.value(Var<T>{v.mu}), g.value(Var<T>{v.logvar})};
}

template <typename T>
Tensor2D<T> reparameterize(const Tensor2D<T>& mu, const Tensor2D<T>& logvar, const Tensor2D<T>& eps,
                           double variance_scale, bool stochastic) {
  if (!mu.same_shape(logvar)) fail(ErrorCode::shape_mismatch, "mu/logvar shapes differ");
  if (!stochastic) return mu;
  Graph<T> g(false);
  auto z = g.reparameterize(g.input_ref(mu), g.input_ref(logvar), eps, static_cast<T>(variance_scale));
  return g.value(z);
}

template <typename T>
Tensor2D<T> vae_decode(const MvpParameters<T>& p, const Tensor2D<T>& z) {
  if (!p.has_vae) fail(ErrorCode::invalid_argument, "model has no VAE parameters");
  if (z.cols() != p.config.latent_dim) {
    fail(ErrorCode::shape_mismatch, "latent width " + std::to_string(z.cols()) + " != " +
                                        std::to_string(p.config.latent_dim));
  }
  Graph<T> g(false);
  auto r = g.affine(g.input_ref(z), g.param(p.dec_w), g.param(p.dec_b));
  if (!p.config.linear_decoder) r = g.gelu(r);
  return g.value(r);
}

template <typename T>
VaeOutput<T> vae_forward(const MvpParameters<T>& p, const Tensor2D<T>& x, const ForwardMode& mode,
                         const Tensor2D<T>* eps) {
  Graph<T> g(false);
  const VaeVars v = vae_graph(g, p, g.input_ref(x), mode, eps);
  return VaeOutput<T>{g.value(Var<T>{v.mu}), g.value(Var<T>{v.logvar}), g.value(Var<T>{v.z}),
                      g.value(Var<T>{v.recon})};
}

template <typename T>
Tensor2D<T> fuse(const MvpParameters<T>& p, const Tensor2D<T>& template_component,
                 const Tensor2D<T>& classes) {
  if (template_component.cols() + classes.cols() != p.fusion_w.value.rows()) {
    fail(ErrorCode::shape_mismatch, "fusion expects input width " + std::to_string(p.fusion_w.value.rows()) +
                                        ", got " + std::to_string(template_component.cols()) + " + " +
                                        std::to_string(classes.cols()));
  }
  Graph<T> g(false);
  auto cat = g.pair_concat(g.input_ref(template_component), g.input_ref(classes));
  auto h = g.gelu(g.affine(cat, g.param(p.fusion_w), g.param(p.fusion_b)));
  return g.value(g.normalize_rows(h));
}

template <typename T>
Tensor2D<T> forward_logits(const MvpParameters<T>& p, const ForwardInputs<T>& in,
                           const ForwardMode& mode, const Tensor2D<T>* eps) {
  Graph<T> g(false);
  return g.value(build_forward(g, p, in, mode, eps).logits);
}

template <typename T>
std::size_t argmax_lowest(std::span<const T> scores) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

template <typename T>
Tensor2D<T> class_prototypes(const MvpParameters<T>& p, const Tensor2D<T>& template_or_grid,
                             const Tensor2D<T>& classes) {
  ForwardInputs<T> in;
  in.num_templates = 1;
  in.num_classes = classes.rows();
  if (decoupled(p.config.variant)) {
    in.templates = &template_or_grid;
    in.classes = &classes;
  } else {
    in.grid = &template_or_grid;
  }
  Graph<T> g(false);
  ForwardMode mode{p.config.variant, false, 1.0};
  return g.value(fused_graph<T>(g, p, in, mode, nullptr).first);
}

template <typename T>
Prediction<T> predict(const MvpParameters<T>& p, const Tensor2D<T>& image,
                      const Tensor2D<T>& template_or_grid, const Tensor2D<T>& classes) {
  if (image.rows() != 1 || image.cols() != p.config.image_dim) {
    fail(ErrorCode::shape_mismatch, "predict expects a 1 x " + std::to_string(p.config.image_dim) +
                                        " image, got " + core::shape_string(image.rows(), image.cols()));
  }
  ForwardInputs<T> in;
  in.images = &image;
  in.num_templates = 1;
  in.num_classes = classes.rows();
  if (decoupled(p.config.variant)) {
    in.templates = &template_or_grid;
    in.classes = &classes;
  } else {
    in.grid = &template_or_grid;
  }
  ForwardMode mode{p.config.variant, false, 1.0};
  const Tensor2D<T> logits = forward_logits(p, in, mode);
  Prediction<T> out;
  out.scores.assign(logits.values().begin(), logits.values().end());
  out.label = argmax_lowest<T>(out.scores);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'M', 'V', 'P', 'C'};

template <typename U>
void append(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const noexcept { return bytes_.size() - pos_ >= n; }

  template <typename U>
  U read(const char* what) {
    if (!has(sizeof(U))) fail(ErrorCode::missing_section, std::string("checkpoint truncated in ") + what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (!has(n)) fail(ErrorCode::missing_section, std::string("checkpoint truncated in ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr std::uint16_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ckpt) {
  json echo = ckpt.config_echo.empty() ? json::object() : json::parse(ckpt.config_echo);
  echo["model"] = json::parse(config_to_json(ckpt.params.config));
  echo["has_vae"] = ckpt.params.has_vae;
  const std::string echo_text = echo.dump();

  std::string out(kCkptMagic, 4);
  append<std::uint16_t>(out, kCheckpointVersion);
  append<std::uint16_t>(out, 0);
  append<std::uint32_t>(out, static_cast<std::uint32_t>(echo_text.size()));
  out += echo_text;
  append<std::uint64_t>(out, ckpt.step);
  const auto params = ckpt.params.all();
  append<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    if (!p->value.all_finite()) fail(ErrorCode::non_finite, "parameter '" + p->name + "' is not finite");
    append<std::uint16_t>(out, static_cast<std::uint16_t>(p->name.size()));
    out += p->name;
    append<std::uint16_t>(out, dtype_code<T>());
    append<std::uint64_t>(out, p->value.rows());
    append<std::uint64_t>(out, p->value.cols());
    const std::string_view payload(reinterpret_cast<const char*>(p->value.data()),
                                   p->value.size() * sizeof(T));
    append<std::uint32_t>(out, io::crc32(payload));
    out.append(payload);
  }
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (!r.has(4) || std::memcmp(bytes.data(), kCkptMagic, 4) != 0) {
    fail(ErrorCode::bad_magic, "not a checkpoint (bad magic)");
  }
  r.take(4, "magic");
  const auto version = r.read<std::uint16_t>("header");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::unsupported_version, "unsupported checkpoint version " + std::to_string(version) +
                                             " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  r.read<std::uint16_t>("header");
  const auto echo_len = r.read<std::uint32_t>("header");
  Checkpoint<T> ckpt;
  ckpt.config_echo = std::string(r.take(echo_len, "config echo"));
  json echo;
  try {
    echo = json::parse(ckpt.config_echo);
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("checkpoint config echo is not JSON: ") + e.what());
  }
  if (!echo.contains("model")) fail(ErrorCode::schema, "checkpoint config echo lacks the model config");
  const MvpConfig cfg = config_from_json(echo["model"].dump());
  const bool has_vae = echo.value("has_vae", uses_vae(cfg.variant));
  ckpt.step = r.read<std::uint64_t>("header");
  const auto count = r.read<std::uint32_t>("header");

  // Fresh parameters give the expected names and shapes.
  ckpt.params = MvpParameters<T>::init(cfg, 0, has_vae);
  auto params = ckpt.params.all();
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto name_len = r.read<std::uint16_t>("section header");
    const std::string name(r.take(name_len, "section header"));
    const auto dtype = r.read<std::uint16_t>("section header");
    const auto rows = r.read<std::uint64_t>("section header");
    const auto cols = r.read<std::uint64_t>("section header");
    const auto crc = r.read<std::uint32_t>("section header");
    const std::size_t elem = dtype == 0 ? 4 : 8;
    if (dtype > 1) fail(ErrorCode::schema, "section '" + name + "' has unknown dtype " + std::to_string(dtype));
    const std::string_view payload = r.take(rows * cols * elem, ("section " + name).c_str());
    if (io::crc32(payload) != crc) fail(ErrorCode::checksum_mismatch, "section '" + name + "' checksum mismatch");
    std::size_t idx = params.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name == name) idx = i;
    }
    if (idx == params.size()) fail(ErrorCode::schema, "unexpected checkpoint section '" + name + "'");
    auto& target = params[idx]->value;
    if (target.rows() != rows || target.cols() != cols) {
      fail(ErrorCode::shape_mismatch, "section '" + name + "' is " + core::shape_string(rows, cols) +
                                          ", model expects " + core::shape_string(target.rows(), target.cols()));
    }
    if (dtype == dtype_code<T>()) {
      std::memcpy(target.data(), payload.data(), payload.size());
    } else if (dtype == 0) {
      std::vector<float> v(rows * cols);
      std::memcpy(v.data(), payload.data(), payload.size());
      for (std::size_t i = 0; i < v.size(); ++i) target[i] = static_cast<T>(v[i]);
    } else {
      std::vector<double> v(rows * cols);
      std::memcpy(v.data(), payload.data(), payload.size());
      for (std::size_t i = 0; i < v.size(); ++i) target[i] = static_cast<T>(v[i]);
    }
    params[idx]->zero_grad();
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!seen[i]) fail(ErrorCode::missing_section, "checkpoint is missing section '" + params[i]->name + "'");
  }
  if (!r.done()) fail(ErrorCode::schema, "trailing bytes after the last checkpoint section");
  return ckpt;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint<T>(io::read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

#define MVP_INSTANTIATE(T)                                                                        \
  template struct MvpParameters<T>;                                                               \
  template GraphForward<T> build_forward(Graph<T>&, const MvpParameters<T>&,                      \
                                         const ForwardInputs<T>&, const ForwardMode&,             \
                                         const Tensor2D<T>*);                                     \
  template Graph<T>::Var loss_mt(Graph<T>&, Graph<T>::Var, std::span<const std::size_t>,          \
                                 std::size_t);                                                    \
  template Graph<T>::Var loss_vae(Graph<T>&, const VaeVars&);                                     \
  template Graph<T>::Var loss_total(Graph<T>&, Graph<T>::Var, Graph<T>::Var, double);             \
  template std::pair<Tensor2D<T>, Tensor2D<T>> vae_encode(const MvpParameters<T>&,                \
                                                          const Tensor2D<T>&);                    \
  template Tensor2D<T> reparameterize(const Tensor2D<T>&, const Tensor2D<T>&, const Tensor2D<T>&, \
                                      double, bool);                                              \
  template Tensor2D<T> vae_decode(const MvpParameters<T>&, const Tensor2D<T>&);                   \
  template VaeOutput<T> vae_forward(const MvpParameters<T>&, const Tensor2D<T>&,                  \
                                    const ForwardMode&, const Tensor2D<T>*);                      \
  template Tensor2D<T> fuse(const MvpParameters<T>&, const Tensor2D<T>&, const Tensor2D<T>&);     \
  template Tensor2D<T> forward_logits(const MvpParameters<T>&, const ForwardInputs<T>&,           \
                                      const ForwardMode&, const Tensor2D<T>*);                    \
  template std::size_t argmax_lowest(std::span<const T>) noexcept;                                \
  template Tensor2D<T> class_prototypes(const MvpParameters<T>&, const Tensor2D<T>&,              \
                                        const Tensor2D<T>&);                                      \
  template Prediction<T> predict(const MvpParameters<T>&, const Tensor2D<T>&,                     \
                                 const Tensor2D<T>&, const Tensor2D<T>&);                         \
  template std::string encode_checkpoint(const Checkpoint<T>&);                                   \
  template Checkpoint<T> decode_checkpoint(std::string_view);                                     \
  template void save_checkpoint(const Checkpoint<T>&, const std::filesystem::path&);              \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);

MVP_INSTANTIATE(float)
MVP_INSTANTIATE(double)
#undef MVP_INSTANTIATE

template MvpParameters<double> MvpParameters<float>::cast<double>() const;
template MvpParameters<float> MvpParameters<double>::cast<float>() const;
template MvpParameters<float> MvpParameters<float>::cast<float>() const;
template MvpParameters<double> MvpParameters<double>::cast<double>() const;

}  // namespace mvp::model
