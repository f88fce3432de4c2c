#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdg/nets.hpp"
#include "mdg/tensor.hpp"

namespace mdg {

using Color = std::array<double, 3>;

/// Uniform per-channel color draw; grayscale draws one value for all channels.
struct ColorRange {
  Color lo{0.0, 0.0, 0.0};
  Color hi{1.0, 1.0, 1.0};
  bool grayscale = false;
};

void to_json(nlohmann::json& j, const ColorRange& c);
void from_json(const nlohmann::json& j, ColorRange& c);

struct Palette {
  ColorRange foreground;
  ColorRange background;
  ColorRange edge{{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}, true};
  // Amplitude of a random linear shading across the background, in [0, 1].
  double background_gradient = 0.0;
};

enum class Stroke { Filled, Outline, Sketch };

/// Rendering style of one domain. Never touches glyph geometry.
struct DomainStyle {
  std::string name;
  Palette palette;
  Stroke stroke = Stroke::Filled;
  double stroke_width = 0.12;  // in glyph units (image half-width = 1)
  double edge_width = 0.0;     // Filled only: rim drawn in the edge color
  double texture_noise = 0.0;  // in [0, 1]
  bool invert = false;
  int blur_radius = 0;
};

void to_json(nlohmann::json& j, const DomainStyle& s);
void from_json(const nlohmann::json& j, DomainStyle& s);

/// Labelled images of one domain in [−1, 1].
struct DomainDataset {
  std::string domain;
  ImageSpec spec;
  std::size_t classes = 0;
  Tensor images;  // N×C×H×W
  std::vector<int> labels;
  std::uint64_t seed = 0;
  // Real domain the pixels were rendered in. Synthetic data keeps its source.
  std::string origin;
  // Free-form lineage, e.g. "real" or "translated:photo->sketch@<ckpt>".
  std::string provenance = "real";

  std::size_t size() const { return labels.size(); }
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  DomainDataset subset(std::span<const std::size_t> indices) const;
};

/// Names of the glyph classes, in label order (16 available).
const std::vector<std::string>& glyph_names();

/// Per-sample draws exposed for inspection.
struct RenderTrace {
  int label = 0;
  Color foreground{};
  Color background{};
  Color edge{};
};

/// Renders one sample in [0, 1] (before inversion is undone or scaling).
/// Inversion, when enabled, is applied as the last step: v ↦ 1 − v.
std::vector<double> render_unit(const DomainStyle& style, int glyph, const ImageSpec& spec, std::uint64_t sample_seed,
                                RenderTrace* trace = nullptr);

DomainDataset generate_domain(const DomainStyle& style, std::size_t classes, std::size_t n_per_class,
                              const ImageSpec& spec, std::uint64_t seed);

struct SuiteDomain {
  DomainStyle style;
  DomainDataset train;
  DomainDataset test;
};

inline constexpr std::size_t kSuiteClasses = 7;
inline constexpr std::size_t kSuiteTrainPerClass = 60;
inline constexpr std::size_t kSuiteTestPerClass = 20;

std::vector<DomainStyle> standard_styles();
/// photo, clipart, sketch, inverted-noisy at 3×32×32, 7 classes,
/// 60 train + 20 test per class.
std::vector<SuiteDomain> standard_suite(std::uint64_t seed, const ImageSpec& spec = {3, 32});

// Domain directory: manifest.json + images.mdgt + labels.mdgt. The first
// train_count rows are the training part, the rest the held-out test part.
void save_domain_dir(const std::filesystem::path& dir, const DomainDataset& train, const DomainDataset* test,
                     const nlohmann::json& extra = {});
struct LoadedDomain {
  DomainDataset train;
  DomainDataset test;  // may be empty (size() == 0)
  nlohmann::json manifest;
};
LoadedDomain load_domain_dir(const std::filesystem::path& dir);

}  // namespace mdg
