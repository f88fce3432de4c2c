#include "mdg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdg/archive.hpp"
#include "mdg/rng.hpp"

namespace mdg {

namespace {

struct Vec2 {
  double x, y;
};

double length(Vec2 p) { return std::sqrt(p.x * p.x + p.y * p.y); }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Vec2 rotate(Vec2 p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

double sd_circle(Vec2 p, double r) { return length(p) - r; }

double sd_box(Vec2 p, double bx, double by) {
  const double dx = std::abs(p.x) - bx, dy = std::abs(p.y) - by;
  return length({std::max(dx, 0.0), std::max(dy, 0.0)}) + std::min(std::max(dx, dy), 0.0);
}

double sd_triangle(Vec2 p, double r) {
  const double k = std::sqrt(3.0);
  p.x = std::abs(p.x) - r;
  p.y = p.y + r / k;
  if (p.x + k * p.y > 0.0) p = {(p.x - k * p.y) / 2.0, (-k * p.x - p.y) / 2.0};
  p.x -= std::clamp(p.x, -2.0 * r, 0.0);
  return -length(p) * sign(p.y);
}

double sd_star5(Vec2 p, double r, double rf) {
  const Vec2 k1{0.809016994375, -0.587785252292};
  const Vec2 k2{-k1.x, k1.y};
  p.x = std::abs(p.x);
  double d = 2.0 * std::max(dot(k1, p), 0.0);
  p = {p.x - d * k1.x, p.y - d * k1.y};
  d = 2.0 * std::max(dot(k2, p), 0.0);
  p = {p.x - d * k2.x, p.y - d * k2.y};
  p.x = std::abs(p.x);
  p.y -= r;
  const Vec2 ba{rf * -k1.y - 0.0, rf * k1.x - 1.0};
  const double h = std::clamp(dot(p, ba) / dot(ba, ba), 0.0, r);
  return length({p.x - ba.x * h, p.y - ba.y * h}) * sign(p.y * ba.x - p.x * ba.y);
}

double sd_hexagon(Vec2 p, double r) {
  const double kx = -0.866025404, ky = 0.5, kz = 0.577350269;
  p = {std::abs(p.x), std::abs(p.y)};
  const double d = 2.0 * std::min(kx * p.x + ky * p.y, 0.0);
  p = {p.x - d * kx, p.y - d * ky};
  p = {p.x - std::clamp(p.x, -kz * r, kz * r), p.y - r};
  return length(p) * sign(p.y);
}

double sd_plus(Vec2 p) { return std::min(sd_box(p, 0.62, 0.17), sd_box(p, 0.17, 0.62)); }

double glyph_sdf(int glyph, Vec2 p) {
  switch (glyph) {
    case 0: return sd_circle(p, 0.55);
    case 1: return sd_box(p, 0.48, 0.48);
    case 2: return sd_triangle({p.x, p.y + 0.1}, 0.68);
    case 3: return sd_plus(p);
    case 4: return sd_star5(p, 0.68, 0.45);
    case 5: return std::abs(sd_circle(p, 0.45)) - 0.14;
    case 6: return sd_box(p, 0.66, 0.16);
    case 7: return (std::abs(p.x) + std::abs(p.y) - 0.66) / std::numbers::sqrt2;
    case 8: return sd_hexagon(p, 0.52);
    case 9: return sd_plus(rotate(p, std::numbers::pi / 4.0));
    case 10: return std::max(sd_circle({p.x, p.y + 0.25}, 0.6), -(p.y + 0.25));
    case 11: return std::abs(sd_box(p, 0.42, 0.42)) - 0.1;
    case 12: return std::min(sd_box({p.x, p.y - 0.45}, 0.6, 0.15), sd_box({p.x, p.y + 0.1}, 0.15, 0.55));
    case 13: return std::min(sd_box({p.x + 0.4, p.y}, 0.15, 0.62), sd_box({p.x, p.y + 0.47}, 0.55, 0.15));
    case 14: {
      const double top = sd_triangle({p.x, -(p.y - 0.3)}, 0.5);
      const double bottom = sd_triangle({p.x, p.y + 0.3}, 0.5);
      return std::min(top, bottom);
    }
    case 15: return std::max(sd_circle(p, 0.58), -sd_circle({p.x + 0.3, p.y + 0.15}, 0.45));
    default: throw std::out_of_range("glyph index " + std::to_string(glyph));
  }
}

Color draw_color(const ColorRange& range, Rng& rng) {
  Color c{};
  if (range.grayscale) {
    const double u = rng.uniform();
    for (int k = 0; k < 3; ++k) c[k] = range.lo[k] + (range.hi[k] - range.lo[k]) * u;
  } else {
    for (int k = 0; k < 3; ++k) c[k] = range.lo[k] + (range.hi[k] - range.lo[k]) * rng.uniform();
  }
  return c;
}

double luminance(const Color& c) { return (c[0] + c[1] + c[2]) / 3.0; }

void box_blur(std::vector<double>& img, std::size_t channels, std::size_t side, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(img.size());
  const auto s = static_cast<int>(side);
  auto at = [&](const std::vector<double>& v, std::size_t c, int y, int x) {
    y = std::clamp(y, 0, s - 1);
    x = std::clamp(x, 0, s - 1);
    return v[(c * side + static_cast<std::size_t>(y)) * side + static_cast<std::size_t>(x)];
  };
  const double norm = 1.0 / (2.0 * radius + 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += at(img, c, y, x + d);
        tmp[(c * side + static_cast<std::size_t>(y)) * side + static_cast<std::size_t>(x)] = acc * norm;
      }
    }
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += at(tmp, c, y + d, x);
        img[(c * side + static_cast<std::size_t>(y)) * side + static_cast<std::size_t>(x)] = acc * norm;
      }
    }
  }
}

const char* stroke_name(Stroke s) {
  switch (s) {
    case Stroke::Filled: return "filled";
    case Stroke::Outline: return "outline";
    case Stroke::Sketch: return "sketch";
  }
  return "filled";
}

Stroke parse_stroke(const std::string& s) {
  if (s == "filled") return Stroke::Filled;
  if (s == "outline") return Stroke::Outline;
  if (s == "sketch") return Stroke::Sketch;
  throw std::invalid_argument("unknown stroke '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const ColorRange& c) { j = {{"lo", c.lo}, {"hi", c.hi}, {"grayscale", c.grayscale}}; }
void from_json(const nlohmann::json& j, ColorRange& c) {
  c.lo = j.at("lo").get<Color>();
  c.hi = j.at("hi").get<Color>();
  c.grayscale = j.value("grayscale", false);
}

void to_json(nlohmann::json& j, const DomainStyle& s) {
  j = {{"name", s.name},
       {"palette",
        {{"foreground", s.palette.foreground},
         {"background", s.palette.background},
         {"edge", s.palette.edge},
         {"background_gradient", s.palette.background_gradient}}},
       {"stroke", stroke_name(s.stroke)},
       {"stroke_width", s.stroke_width},
       {"edge_width", s.edge_width},
       {"texture_noise", s.texture_noise},
       {"invert", s.invert},
       {"blur_radius", s.blur_radius}};
}

void from_json(const nlohmann::json& j, DomainStyle& s) {
  s.name = j.at("name").get<std::string>();
  const auto& p = j.at("palette");
  s.palette.foreground = p.at("foreground").get<ColorRange>();
  s.palette.background = p.at("background").get<ColorRange>();
  s.palette.edge = p.at("edge").get<ColorRange>();
  s.palette.background_gradient = p.value("background_gradient", 0.0);
  s.stroke = parse_stroke(j.at("stroke").get<std::string>());
  s.stroke_width = j.value("stroke_width", 0.12);
  s.edge_width = j.value("edge_width", 0.0);
  s.texture_noise = j.value("texture_noise", 0.0);
  s.invert = j.value("invert", false);
  s.blur_radius = j.value("blur_radius", 0);
}

const std::vector<std::string>& glyph_names() {
  static const std::vector<std::string> names{"circle",    "square", "triangle", "cross",   "star",    "ring",
                                              "bar",       "diamond", "hexagon", "x-mark",  "half-disk", "frame",
                                              "t-shape",   "l-shape", "hourglass", "crescent"};
  return names;
}

std::vector<double> render_unit(const DomainStyle& style, int glyph, const ImageSpec& spec, std::uint64_t sample_seed,
                                RenderTrace* trace) {
  if (spec.channels != 1 && spec.channels != 3) throw std::invalid_argument("unsupported channel count");
  if (spec.size < 8 || spec.size > 64) throw std::invalid_argument("unsupported image size");
  if (style.texture_noise < 0.0 || style.texture_noise > 1.0) throw std::invalid_argument("texture_noise outside [0,1]");
  Rng rng(sample_seed);

  // Geometry jitter: position ±10% of the image, scale ±15%, rotation ±15°.
  const double tx = rng.uniform(-0.2, 0.2);
  const double ty = rng.uniform(-0.2, 0.2);
  const double sc = rng.uniform(0.85, 1.15);
  const double rot = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
  const Color fg = draw_color(style.palette.foreground, rng);
  const Color bg = draw_color(style.palette.background, rng);
  const Color edge = draw_color(style.palette.edge, rng);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = style.palette.background_gradient * rng.uniform(0.5, 1.0);
  const double wob_freq = rng.uniform(5.0, 9.0);
  const double wob_phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double wob_phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (trace) *trace = {glyph, fg, bg, edge};

  const std::size_t side = spec.size, chans = spec.channels;
  std::vector<double> img(chans * side * side);
  const double inv_side = 1.0 / static_cast<double>(side);
  const double gx = std::cos(grad_angle), gy = std::sin(grad_angle);
  const double half_w = 0.5 * style.stroke_width;

  auto channel = [&](const Color& c, std::size_t ch) { return chans == 1 ? luminance(c) : c[ch]; };

  for (std::size_t row = 0; row < side; ++row) {
    for (std::size_t col = 0; col < side; ++col) {
      int n_fg = 0, n_edge = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double px = 2.0 * (static_cast<double>(col) + 0.25 + 0.5 * sx) * inv_side - 1.0;
          const double py = 1.0 - 2.0 * (static_cast<double>(row) + 0.25 + 0.5 * sy) * inv_side;
          const Vec2 q = rotate({(px - tx) / sc, (py - ty) / sc}, -rot);
          double d = glyph_sdf(glyph, q) * sc;
          switch (style.stroke) {
            case Stroke::Filled:
              if (d <= 0.0) {
                if (style.edge_width > 0.0 && d > -style.edge_width) {
                  ++n_edge;
                } else {
                  ++n_fg;
                }
              }
              break;
            case Stroke::Outline:
              if (std::abs(d) <= half_w) ++n_fg;
              break;
            case Stroke::Sketch:
              d += 0.05 * std::sin(wob_freq * q.x + wob_phase1) * std::cos(wob_freq * q.y + wob_phase2);
              if (std::abs(d) <= half_w || std::abs(d - 2.5 * half_w) <= 0.4 * half_w) ++n_fg;
              break;
          }
        }
      }
      const int n_bg = 4 - n_fg - n_edge;
      const double cx = 2.0 * (static_cast<double>(col) + 0.5) * inv_side - 1.0;
      const double cy = 1.0 - 2.0 * (static_cast<double>(row) + 0.5) * inv_side;
      const double shade = grad_amp * 0.5 * (gx * cx + gy * cy);
      for (std::size_t ch = 0; ch < chans; ++ch) {
        const double b = std::clamp(channel(bg, ch) + shade, 0.0, 1.0);
        img[(ch * side + row) * side + col] = (n_fg * channel(fg, ch) + n_edge * channel(edge, ch) + n_bg * b) / 4.0;
      }
    }
  }

  if (style.texture_noise > 0.0) {
    for (auto& v : img) v = std::clamp(v + style.texture_noise * rng.uniform(-1.0, 1.0), 0.0, 1.0);
  }
  box_blur(img, chans, side, style.blur_radius);
  if (style.invert) {
    for (auto& v : img) v = 1.0 - v;
  }
  return img;
}

Tensor DomainDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = spec.numel();
  std::vector<double> out(indices.size() * per);
  const auto src = images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("dataset index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor::from_data(spec.batch_shape(indices.size()), std::move(out));
}

std::vector<int> DomainDataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> indices) const {
  DomainDataset out = *this;
  out.images = batch(indices);
  out.labels = batch_labels(indices);
  return out;
}

DomainDataset generate_domain(const DomainStyle& style, std::size_t classes, std::size_t n_per_class,
                              const ImageSpec& spec, std::uint64_t seed) {
  if (classes < 2 || classes > glyph_names().size()) throw std::invalid_argument("class count must be in [2, 16]");
  if (n_per_class < 1) throw std::invalid_argument("n_per_class must be at least 1");
  spec.validate();
  DomainDataset ds;
  ds.domain = style.name;
  ds.origin = style.name;
  ds.spec = spec;
  ds.classes = classes;
  ds.seed = seed;
  const std::size_t n = classes * n_per_class;
  std::vector<double> pixels;
  pixels.reserve(n * spec.numel());
  // Class-interleaved order: sample i has label i mod K.
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    const auto img = render_unit(style, label, spec, derive_seed(seed, i));
    for (double v : img) pixels.push_back(2.0 * v - 1.0);
    ds.labels.push_back(label);
  }
  ds.images = Tensor::from_data(spec.batch_shape(n), std::move(pixels));
  return ds;
}

std::vector<DomainStyle> standard_styles() {
  DomainStyle photo;
  photo.name = "photo";
  photo.stroke = Stroke::Filled;
  photo.palette.foreground = {{0.0, 0.0, 0.0}, {0.6, 0.6, 0.6}, false};
  photo.palette.background = {{0.45, 0.45, 0.45}, {1.0, 1.0, 1.0}, false};
  photo.palette.background_gradient = 0.6;
  photo.texture_noise = 0.12;

  DomainStyle clipart;
  clipart.name = "clipart";
  clipart.stroke = Stroke::Filled;
  clipart.edge_width = 0.08;
  clipart.palette.foreground = {{0.3, 0.3, 0.3}, {1.0, 1.0, 1.0}, false};
  clipart.palette.background = {{0.95, 0.95, 0.95}, {1.0, 1.0, 1.0}, true};
  clipart.palette.edge = {{0.0, 0.0, 0.0}, {0.12, 0.12, 0.12}, true};

  DomainStyle sketch;
  sketch.name = "sketch";
  sketch.stroke = Stroke::Sketch;
  sketch.stroke_width = 0.1;
  sketch.palette.foreground = {{0.0, 0.0, 0.0}, {0.3, 0.3, 0.3}, true};
  sketch.palette.background = {{0.85, 0.85, 0.85}, {1.0, 1.0, 1.0}, true};
  sketch.texture_noise = 0.03;

  DomainStyle inverted;
  inverted.name = "inverted-noisy";
  inverted.stroke = Stroke::Filled;
  inverted.palette.foreground = {{0.0, 0.0, 0.0}, {0.4, 0.4, 0.4}, false};
  inverted.palette.background = {{0.6, 0.6, 0.6}, {1.0, 1.0, 1.0}, false};
  inverted.texture_noise = 0.3;
  inverted.blur_radius = 1;
  inverted.invert = true;

  return {photo, clipart, sketch, inverted};
}

std::vector<SuiteDomain> standard_suite(std::uint64_t seed, const ImageSpec& spec) {
  std::vector<SuiteDomain> out;
  const auto styles = standard_styles();
  for (std::size_t d = 0; d < styles.size(); ++d) {
    const std::uint64_t base = derive_seed(seed, 1000 + d);
    SuiteDomain sd;
    sd.style = styles[d];
    sd.train = generate_domain(styles[d], kSuiteClasses, kSuiteTrainPerClass, spec, derive_seed(base, 0));
    sd.test = generate_domain(styles[d], kSuiteClasses, kSuiteTestPerClass, spec, derive_seed(base, 1));
    out.push_back(std::move(sd));
  }
  return out;
}

void save_domain_dir(const std::filesystem::path& dir, const DomainDataset& train, const DomainDataset* test,
                     const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  const std::size_t n_train = train.size();
  const std::size_t n_test = test ? test->size() : 0;
  std::vector<double> pixels(train.images.data().begin(), train.images.data().end());
  std::vector<double> labels(train.labels.begin(), train.labels.end());
  if (test && n_test > 0) {
    if (!(test->spec == train.spec)) throw std::invalid_argument("train/test image specs differ");
    pixels.insert(pixels.end(), test->images.data().begin(), test->images.data().end());
    labels.insert(labels.end(), test->labels.begin(), test->labels.end());
  }
  const std::size_t n = n_train + n_test;
  save_tensor(dir / "images.mdgt", Tensor::from_data(train.spec.batch_shape(n), std::move(pixels)));
  save_tensor(dir / "labels.mdgt", Tensor::from_data({n}, std::move(labels)));
  nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
  m["domain"] = train.domain;
  m["origin"] = train.origin;
  m["provenance"] = train.provenance;
  m["seed"] = train.seed;
  m["test_seed"] = test ? test->seed : 0;
  m["classes"] = train.classes;
  m["image"] = train.spec;
  m["train_count"] = n_train;
  m["test_count"] = n_test;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

LoadedDomain load_domain_dir(const std::filesystem::path& dir) {
  LoadedDomain out;
  out.manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  const Tensor images = load_tensor(dir / "images.mdgt");
  const Tensor labels = load_tensor(dir / "labels.mdgt");
  const auto n_train = out.manifest.at("train_count").get<std::size_t>();
  const auto n_test = out.manifest.at("test_count").get<std::size_t>();
  if (images.dim(0) != n_train + n_test || labels.numel() != n_train + n_test) {
    throw IoError("domain directory " + dir.string() + ": counts do not match archives");
  }
  DomainDataset all;
  all.domain = out.manifest.at("domain").get<std::string>();
  all.origin = out.manifest.value("origin", all.domain);
  all.provenance = out.manifest.value("provenance", std::string("real"));
  all.spec = out.manifest.at("image").get<ImageSpec>();
  all.classes = out.manifest.at("classes").get<std::size_t>();
  all.seed = out.manifest.at("seed").get<std::uint64_t>();
  all.images = images;
  for (double v : labels.data()) all.labels.push_back(static_cast<int>(v));
  std::vector<std::size_t> idx(n_train);
  for (std::size_t i = 0; i < n_train; ++i) idx[i] = i;
  out.train = all.subset(idx);
  if (n_test > 0) {
    std::vector<std::size_t> tidx(n_test);
    for (std::size_t i = 0; i < n_test; ++i) tidx[i] = n_train + i;
    out.test = all.subset(tidx);
    out.test.seed = out.manifest.value("test_seed", std::uint64_t{0});
  } else {
    out.test = all;
    out.test.labels.clear();
    out.test.images = Tensor();
  }
  return out;
}

}  // namespace mdg
