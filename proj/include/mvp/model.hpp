// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvp/rng.hpp"
#include "mvp/tensor.hpp"

namespace mvp::model {

using core::Graph;
using core::Parameter;
using core::Tensor2D;

enum class Variant { full, no_decouple, no_vae, no_decouple_no_vae };

std::string_view to_string(Variant v) noexcept;
Variant parse_variant(std::string_view s);
constexpr bool uses_vae(Variant v) noexcept {
  return v == Variant::full || v == Variant::no_decouple;
}
constexpr bool decoupled(Variant v) noexcept {
  return v == Variant::full || v == Variant::no_vae;
}

struct MvpConfig {
  std::size_t text_dim = 0;
  std::size_t image_dim = 0;
  std::size_t hidden_dim = 0;  ///< 0 means "same as text_dim"
  std::size_t latent_dim = 128;
  Variant variant = Variant::full;
  bool linear_decoder = false;
  double logit_scale = 100.0;

  std::size_t hidden() const noexcept { return hidden_dim == 0 ? text_dim : hidden_dim; }
  /// Width of the fusion input: concat(template, class) when decoupled,
  /// one rendered-prompt row otherwise.
  std::size_t fusion_in() const noexcept { return decoupled(variant) ? 2 * text_dim : text_dim; }
  void validate() const;

  friend bool operator==(const MvpConfig&, const MvpConfig&) = default;
};

std::string config_to_json(const MvpConfig& c);
MvpConfig config_from_json(std::string_view text);

struct ForwardMode {
  Variant variant = Variant::full;
  bool stochastic = false;
  double variance_scale = 1.0;
};

template <typename T>
struct MvpParameters {
  MvpConfig config;
  bool has_vae = true;
  Parameter<T> enc1_w, enc1_b;  // d -> h
  Parameter<T> enc2_w, enc2_b;  // h -> 2z (mu | logvar)
  Parameter<T> dec_w, dec_b;    // z -> d
  Parameter<T> fusion_w, fusion_b;

  /// Uniform(+-1/sqrt(fan_in)) for weights and biases. Each block draws from
  /// its own seed-derived stream, so whether the VAE blocks exist never
  /// changes the fusion initialization.
  static MvpParameters init(const MvpConfig& config, std::uint64_t seed,
                            std::optional<bool> with_vae = std::nullopt);

  /// Every allocated tensor, VAE blocks first.
  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;

  template <typename U>
  MvpParameters<U> cast() const;

  bool bitwise_equal(const MvpParameters& other) const;
};

template <typename T>
struct VaeOutput {
  Tensor2D<T> mu, logvar, z, recon;
};

/// Node handles for one VAE pass inside a Graph.
struct VaeVars {
  std::size_t input = 0, mu = 0, logvar = 0, z = 0, recon = 0;
};

template <typename T>
struct ForwardInputs {
  const Tensor2D<T>* images = nullptr;     ///< B x d_img, raw (normalized inside)
  const Tensor2D<T>* templates = nullptr;  ///< M x d (decoupled variants)
  const Tensor2D<T>* classes = nullptr;    ///< K x d (decoupled variants)
  const Tensor2D<T>* grid = nullptr;       ///< (M*K) x d, row i*K+j (coupled variants)
  std::size_t num_templates = 0;
  std::size_t num_classes = 0;
};

template <typename T>
struct GraphForward {
  typename Graph<T>::Var fused;   ///< (M*K) x d_img, unit rows
  typename Graph<T>::Var logits;  ///< (B*M) x K, row b*M + i
  std::optional<VaeVars> vae;
};

/// Builds the forward pass into `g`. `eps` must be rows x latent (rows = M
/// decoupled, M*K coupled) when mode.stochastic is set and the variant has a
/// VAE; it is ignored otherwise. Parameters are bound by reference.
template <typename T>
GraphForward<T> build_forward(Graph<T>& g, const MvpParameters<T>& p, const ForwardInputs<T>& in,
                              const ForwardMode& mode, const Tensor2D<T>* eps = nullptr);

/// Cross-entropy over the class axis for each (image, template) row, mean
/// over all B*M rows. `labels` has one entry per image.
template <typename T>
typename Graph<T>::Var loss_mt(Graph<T>& g, typename Graph<T>::Var logits,
                               std::span<const std::size_t> labels, std::size_t num_templates);

/// (sum ||t - recon||^2 + KL) / rows.
template <typename T>
typename Graph<T>::Var loss_vae(Graph<T>& g, const VaeVars& vae);

template <typename T>
typename Graph<T>::Var loss_total(Graph<T>& g, typename Graph<T>::Var l_mt,
                                  typename Graph<T>::Var l_vae, double alpha);

double loss_total(double l_mt, double l_vae, double alpha) noexcept;

// Standalone (gradient-free) entry points.

template <typename T>
std::pair<Tensor2D<T>, Tensor2D<T>> vae_encode(const MvpParameters<T>& p, const Tensor2D<T>& x);
/// z = mu + scale * exp(logvar/2) * eps, or exactly mu when !stochastic.
template <typename T>
Tensor2D<T> reparameterize(const Tensor2D<T>& mu, const Tensor2D<T>& logvar, const Tensor2D<T>& eps,
                           double variance_scale, bool stochastic);
template <typename T>
Tensor2D<T> vae_decode(const MvpParameters<T>& p, const Tensor2D<T>& z);
template <typename T>
VaeOutput<T> vae_forward(const MvpParameters<T>& p, const Tensor2D<T>& x, const ForwardMode& mode,
                         const Tensor2D<T>* eps = nullptr);
/// (M*K) x d_img unit rows; row i*K + j fuses template i with class j.
template <typename T>
Tensor2D<T> fuse(const MvpParameters<T>& p, const Tensor2D<T>& template_component,
                 const Tensor2D<T>& classes);
template <typename T>
Tensor2D<T> forward_logits(const MvpParameters<T>& p, const ForwardInputs<T>& in,
                           const ForwardMode& mode, const Tensor2D<T>* eps = nullptr);

/// Lowest index among the maxima.
template <typename T>
std::size_t argmax_lowest(std::span<const T> scores) noexcept;

template <typename T>
struct Prediction {
  std::size_t label = 0;
  std::vector<T> scores;
};

/// Deterministic single-template prediction for one image (1 x d_img). For
/// coupled variants `template_or_grid` is the K x d block of rendered prompts.
template <typename T>
Prediction<T> predict(const MvpParameters<T>& p, const Tensor2D<T>& image,
                      const Tensor2D<T>& template_or_grid, const Tensor2D<T>& classes);

/// Class-prototype matrix (K x d_img, unit rows) for one template; reused
/// across all test images of that template.
template <typename T>
Tensor2D<T> class_prototypes(const MvpParameters<T>& p, const Tensor2D<T>& template_or_grid,
                             const Tensor2D<T>& classes);

/// Checkpoint container: magic "MVPC", version, config echo (JSON), training
/// step, then named tensor sections each carrying dtype, shape and CRC-32.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  MvpParameters<T> params;
  std::uint64_t step = 0;
  std::string config_echo;  ///< JSON document; its "model" member holds the MvpConfig
};

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes);
template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace mvp::model
