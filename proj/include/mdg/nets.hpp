#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mdg/ops.hpp"
#include "mdg/rng.hpp"
#include "mdg/tensor.hpp"

namespace mdg {

struct ImageSpec {
  std::size_t channels = 3;
  std::size_t size = 32;

  // Generator-compatible: channels ∈ {1,3}, size ∈ {16,32,64}.
  void validate() const;
  std::size_t numel() const { return channels * size * size; }
  Shape batch_shape(std::size_t n) const { return {n, channels, size, size}; }
  bool operator==(const ImageSpec&) const = default;
};

void to_json(nlohmann::json& j, const ImageSpec& s);
void from_json(const nlohmann::json& j, ImageSpec& s);

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t parameter_count(const ParamList& params);
void zero_grads(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  ops::Conv2dOptions opt;
  bool transposed = false;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct NormLayer {
  Tensor gain;
  Tensor bias;

  Tensor forward(const Tensor& x) const { return ops::instance_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct AffineLayer {
  Tensor weight;  // in × out
  Tensor bias;    // out

  Tensor forward(const Tensor& x) const { return ops::add(ops::matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ResidualBlock {
  ConvLayer conv1, conv2;
  NormLayer norm1, norm2;

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LatentSpec {
  std::size_t channels = 0;
  std::size_t size = 0;
  bool operator==(const LatentSpec&) const = default;
};

struct GeneratorConfig {
  ImageSpec image;
  std::size_t n_res_blocks = 2;
  std::size_t base_channels = 16;

  LatentSpec latent() const { return {4 * base_channels, image.size / 4}; }
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// 7×7 stem, two stride-2 downsampling stages, then the first half of the
/// residual blocks. Every encoder of one config emits the same LatentSpec.
class Encoder {
 public:
  Encoder(const GeneratorConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x) const;
  LatentSpec latent() const { return cfg_.latent(); }
  ParamList parameters() const;

 private:
  GeneratorConfig cfg_;
  ConvLayer stem_, down1_, down2_;
  NormLayer stem_norm_, down1_norm_, down2_norm_;
  std::vector<ResidualBlock> blocks_;
};

/// Remaining residual blocks, two stride-2 transposed convolutions, 7×7
/// projection to image channels, tanh.
class Decoder {
 public:
  Decoder(const GeneratorConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& latent) const;
  LatentSpec latent() const { return cfg_.latent(); }
  ParamList parameters() const;

 private:
  GeneratorConfig cfg_;
  std::vector<ResidualBlock> blocks_;
  ConvLayer up1_, up2_, out_;
  NormLayer up1_norm_, up2_norm_;
};

std::pair<Encoder, Decoder> build_generator_pair(const ImageSpec& spec, std::size_t n_res_blocks, Rng& rng,
                                                 std::size_t base_channels = 16);

/// PatchGAN-style critic: three 4×4 stride-2 convolutions ending in a one-channel
/// grid of raw scores (receptive field 22 px).
class Discriminator {
 public:
  Discriminator(const ImageSpec& spec, Rng& rng, std::size_t base_channels = 16);

  Tensor forward(const Tensor& x) const;
  Shape score_shape(std::size_t batch) const;
  ParamList parameters() const;

  static constexpr std::size_t kReceptiveField = 22;

 private:
  ImageSpec spec_;
  ConvLayer c1_, c2_, c3_;
  NormLayer n2_;
};

Discriminator build_discriminator(const ImageSpec& spec, Rng& rng);

struct ClassifierConfig {
  ImageSpec image;
  std::size_t classes = 7;
  std::size_t feature_dim = 128;
  std::size_t conv_channels = 16;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// f = h ∘ g. g: two stride-2 conv+relu layers, flatten, affine+relu to
/// feature_dim. h: affine to class logits. Both Siamese streams call the same
/// instance, so weights are shared by construction.
class DGModel {
 public:
  DGModel(const ClassifierConfig& cfg, Rng& rng);

  Tensor features(const Tensor& x) const;
  Tensor logits(const Tensor& features) const { return head_.forward(features); }
  Tensor forward(const Tensor& x) const { return logits(features(x)); }

  const ClassifierConfig& config() const { return cfg_; }
  ParamList parameters() const;

 private:
  ClassifierConfig cfg_;
  ConvLayer conv1_, conv2_;
  AffineLayer embed_, head_;
};

DGModel build_classifier(const ImageSpec& spec, std::size_t classes, Rng& rng);

/// Writes manifest.json (`meta` plus the parameter table) and one MDGT
/// archive per parameter into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, const nlohmann::json& meta);
/// Reads the manifest and copies archived values into `params` (names and
/// shapes must match). Returns the stored meta object.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, const ParamList& params);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

}  // namespace mdg
