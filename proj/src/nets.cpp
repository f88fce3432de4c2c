#include "mdg/nets.hpp"

#include <cmath>

#include "mdg/archive.hpp"

namespace mdg {

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

constexpr double kInitStd = 0.02;

ConvLayer make_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng) {
  return {gaussian({out, in, k, k}, kInitStd, rng), Tensor::zeros({out}, true), {stride, pad}, false};
}

ConvLayer make_conv_transposed(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                               Rng& rng) {
  return {gaussian({in, out, k, k}, kInitStd, rng), Tensor::zeros({out}, true), {stride, pad}, true};
}

NormLayer make_norm(std::size_t channels) {
  return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true)};
}

// He-normal, std sqrt(2 / fan_in); used by the ReLU classifier.
ConvLayer make_conv_he(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  return {gaussian({out, in, k, k}, stddev, rng), Tensor::zeros({out}, true), {stride, pad}, false};
}

AffineLayer make_affine_he(std::size_t in, std::size_t out, Rng& rng) {
  return {gaussian({in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng), Tensor::zeros({out}, true)};
}

AffineLayer make_affine(std::size_t in, std::size_t out, Rng& rng) {
  return {gaussian({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor::zeros({out}, true)};
}

ResidualBlock make_block(std::size_t channels, Rng& rng) {
  ResidualBlock b;
  b.conv1 = make_conv(channels, channels, 3, 1, 1, rng);
  b.norm1 = make_norm(channels);
  b.conv2 = make_conv(channels, channels, 3, 1, 1, rng);
  b.norm2 = make_norm(channels);
  return b;
}

void check_input(const char* who, const Tensor& x, std::size_t channels, std::size_t size) {
  if (x.ndim() != 4 || x.dim(1) != channels || x.dim(2) != size || x.dim(3) != size) {
    throw ShapeError(std::string(who) + ": expected N×" + std::to_string(channels) + "×" + std::to_string(size) +
                     "×" + std::to_string(size) + ", got " + shape_str(x.shape()));
  }
}

}  // namespace

void ImageSpec::validate() const {
  if (channels != 1 && channels != 3) throw std::invalid_argument("image channels must be 1 or 3");
  if (size != 16 && size != 32 && size != 64) {
    throw std::invalid_argument("unsupported spatial size " + std::to_string(size) + " (expected 16, 32 or 64)");
  }
}

void to_json(nlohmann::json& j, const ImageSpec& s) { j = {{"channels", s.channels}, {"size", s.size}}; }
void from_json(const nlohmann::json& j, ImageSpec& s) {
  s.channels = j.at("channels").get<std::size_t>();
  s.size = j.at("size").get<std::size_t>();
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"image", c.image}, {"n_res_blocks", c.n_res_blocks}, {"base_channels", c.base_channels}};
}
void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.image = j.at("image").get<ImageSpec>();
  c.n_res_blocks = j.value("n_res_blocks", std::size_t{2});
  c.base_channels = j.value("base_channels", std::size_t{16});
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"image", c.image}, {"classes", c.classes}, {"feature_dim", c.feature_dim}, {"conv_channels", c.conv_channels}};
}
void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c.image = j.at("image").get<ImageSpec>();
  c.classes = j.at("classes").get<std::size_t>();
  c.feature_dim = j.value("feature_dim", std::size_t{128});
  c.conv_channels = j.value("conv_channels", std::size_t{16});
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return transposed ? ops::conv2d_transposed(x, weight, &bias, opt) : ops::conv2d(x, weight, &bias, opt);
}

void ConvLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

void NormLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

void AffineLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor ResidualBlock::forward(const Tensor& x) const {
  const Tensor h = ops::relu(norm1.forward(conv1.forward(x)));
  return ops::add(x, norm2.forward(conv2.forward(h)));
}

void ResidualBlock::collect(const std::string& prefix, ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
}

Encoder::Encoder(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.image.validate();
  const std::size_t b = cfg.base_channels;
  stem_ = make_conv(cfg.image.channels, b, 7, 1, 3, rng);
  stem_norm_ = make_norm(b);
  down1_ = make_conv(b, 2 * b, 3, 2, 1, rng);
  down1_norm_ = make_norm(2 * b);
  down2_ = make_conv(2 * b, 4 * b, 3, 2, 1, rng);
  down2_norm_ = make_norm(4 * b);
  for (std::size_t i = 0; i < (cfg.n_res_blocks + 1) / 2; ++i) blocks_.push_back(make_block(4 * b, rng));
}

Tensor Encoder::forward(const Tensor& x) const {
  check_input("encoder", x, cfg_.image.channels, cfg_.image.size);
  Tensor h = ops::relu(stem_norm_.forward(stem_.forward(x)));
  h = ops::relu(down1_norm_.forward(down1_.forward(h)));
  h = ops::relu(down2_norm_.forward(down2_.forward(h)));
  for (const auto& blk : blocks_) h = blk.forward(h);
  return h;
}

ParamList Encoder::parameters() const {
  ParamList out;
  stem_.collect("stem", out);
  stem_norm_.collect("stem_norm", out);
  down1_.collect("down1", out);
  down1_norm_.collect("down1_norm", out);
  down2_.collect("down2", out);
  down2_norm_.collect("down2_norm", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
  return out;
}

Decoder::Decoder(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.image.validate();
  const std::size_t b = cfg.base_channels;
  for (std::size_t i = 0; i < cfg.n_res_blocks / 2; ++i) blocks_.push_back(make_block(4 * b, rng));
  up1_ = make_conv_transposed(4 * b, 2 * b, 4, 2, 1, rng);
  up1_norm_ = make_norm(2 * b);
  up2_ = make_conv_transposed(2 * b, b, 4, 2, 1, rng);
  up2_norm_ = make_norm(b);
  out_ = make_conv(b, cfg.image.channels, 7, 1, 3, rng);
}

Tensor Decoder::forward(const Tensor& latent) const {
  const auto spec = cfg_.latent();
  check_input("decoder", latent, spec.channels, spec.size);
  Tensor h = latent;
  for (const auto& blk : blocks_) h = blk.forward(h);
  h = ops::relu(up1_norm_.forward(up1_.forward(h)));
  h = ops::relu(up2_norm_.forward(up2_.forward(h)));
  return ops::tanh(out_.forward(h));
}

ParamList Decoder::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
  up1_.collect("up1", out);
  up1_norm_.collect("up1_norm", out);
  up2_.collect("up2", out);
  up2_norm_.collect("up2_norm", out);
  out_.collect("out", out);
  return out;
}

std::pair<Encoder, Decoder> build_generator_pair(const ImageSpec& spec, std::size_t n_res_blocks, Rng& rng,
                                                 std::size_t base_channels) {
  spec.validate();
  const GeneratorConfig cfg{spec, n_res_blocks, base_channels};
  Encoder enc(cfg, rng);
  Decoder dec(cfg, rng);
  return {std::move(enc), std::move(dec)};
}

Discriminator::Discriminator(const ImageSpec& spec, Rng& rng, std::size_t base_channels) : spec_(spec) {
  if (spec.channels == 0) throw std::invalid_argument("discriminator: image needs at least one channel");
  const std::size_t b = base_channels;
  c1_ = make_conv(spec.channels, b, 4, 2, 1, rng);
  c2_ = make_conv(b, 2 * b, 4, 2, 1, rng);
  n2_ = make_norm(2 * b);
  c3_ = make_conv(2 * b, 1, 4, 2, 0, rng);
  const auto grid = score_shape(1);
  if (grid[2] == 0) {
    throw std::invalid_argument("discriminator: input " + std::to_string(spec.size) +
                                " px is smaller than the patch receptive field");
  }
}

Shape Discriminator::score_shape(std::size_t batch) const {
  std::size_t s = ops::conv_out_size(spec_.size, 4, 2, 1);
  s = ops::conv_out_size(s, 4, 2, 1);
  s = ops::conv_out_size(s, 4, 2, 0);
  return {batch, 1, s, s};
}

Tensor Discriminator::forward(const Tensor& x) const {
  check_input("discriminator", x, spec_.channels, spec_.size);
  Tensor h = ops::leaky_relu(c1_.forward(x), 0.2);
  h = ops::leaky_relu(n2_.forward(c2_.forward(h)), 0.2);
  return c3_.forward(h);
}

ParamList Discriminator::parameters() const {
  ParamList out;
  c1_.collect("c1", out);
  c2_.collect("c2", out);
  n2_.collect("n2", out);
  c3_.collect("c3", out);
  return out;
}

Discriminator build_discriminator(const ImageSpec& spec, Rng& rng) { return Discriminator(spec, rng); }

DGModel::DGModel(const ClassifierConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  if (cfg.image.size < 4 || cfg.image.size % 4 != 0) {
    throw std::invalid_argument("classifier input size must be a positive multiple of 4");
  }
  const std::size_t c = cfg.conv_channels;
  conv1_ = make_conv_he(cfg.image.channels, c, 4, 2, 1, rng);
  conv2_ = make_conv_he(c, 2 * c, 4, 2, 1, rng);
  const std::size_t side = cfg.image.size / 4;
  embed_ = make_affine_he(2 * c * side * side, cfg.feature_dim, rng);
  head_ = make_affine(cfg.feature_dim, cfg.classes, rng);
}

Tensor DGModel::features(const Tensor& x) const {
  check_input("classifier", x, cfg_.image.channels, cfg_.image.size);
  Tensor h = ops::relu(conv1_.forward(x));
  h = ops::relu(conv2_.forward(h));
  return ops::relu(embed_.forward(ops::flatten(h)));
}

ParamList DGModel::parameters() const {
  ParamList out;
  conv1_.collect("g.conv1", out);
  conv2_.collect("g.conv2", out);
  embed_.collect("g.embed", out);
  head_.collect("h.affine", out);
  return out;
}

DGModel build_classifier(const ImageSpec& spec, std::size_t classes, Rng& rng) {
  ClassifierConfig cfg;
  cfg.image = spec;
  cfg.classes = classes;
  return DGModel(cfg, rng);
}

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : params) {
    const std::string file = p.name + ".mdgt";
    save_tensor(dir / file, p.tensor);
    table.push_back({{"name", p.name}, {"file", file}, {"shape", p.tensor.shape()}});
  }
  nlohmann::json manifest = {{"meta", meta}, {"parameters", table}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir) {
  return nlohmann::json::parse(read_text(dir / "manifest.json")).at("meta");
}

nlohmann::json load_checkpoint(const std::filesystem::path& dir, const ParamList& params) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  const auto& table = manifest.at("parameters");
  if (table.size() != params.size()) {
    throw IoError("checkpoint " + dir.string() + " holds " + std::to_string(table.size()) + " parameters, model has " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    if (entry.at("name").get<std::string>() != params[i].name) {
      throw IoError("checkpoint parameter '" + entry.at("name").get<std::string>() + "' where '" + params[i].name +
                    "' was expected");
    }
    const Tensor stored = load_tensor(dir / entry.at("file").get<std::string>());
    if (stored.shape() != params[i].tensor.shape()) {
      throw IoError("checkpoint shape mismatch for " + params[i].name);
    }
    Tensor dst = params[i].tensor;
    std::copy(stored.data().begin(), stored.data().end(), dst.mutable_data().begin());
  }
  return manifest.at("meta");
}

}  // namespace mdg
