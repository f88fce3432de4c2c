#include "mdg/discrepancy.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace mdg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

void check_pair(const char* op, const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2) {
    throw ShapeError(std::string(op) + ": feature batches must be 2-D, got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  if (x.dim(1) != y.dim(1)) {
    throw ShapeError(std::string(op) + ": feature dimensions differ (" + std::to_string(x.dim(1)) + " vs " +
                     std::to_string(y.dim(1)) + ")");
  }
}

RowMat pooled(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
  RowMat z(n + m, d);
  z.topRows(n) = CMapMat(x.data().data(), n, d);
  z.bottomRows(m) = CMapMat(y.data().data(), m, d);
  return z;
}

RowMat squared_distances(const RowMat& z) {
  const Eigen::VectorXd sq = z.rowwise().squaredNorm();
  RowMat dist = -2.0 * z * z.transpose();
  dist.colwise() += sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);
  dist.diagonal().setZero();
  return dist;
}

const char* kind_name(DiscrepancyKind k) { return k == DiscrepancyKind::MMD ? "mmd" : "coral"; }

}  // namespace

void DiscrepancyConfig::validate() const {
  if (kind != DiscrepancyKind::MMD) return;
  if (bandwidth_multipliers.empty()) throw std::invalid_argument("bandwidth_multipliers must be non-empty");
  for (double m : bandwidth_multipliers) {
    if (!(m > 0.0) || !std::isfinite(m)) throw std::invalid_argument("bandwidth multipliers must be positive");
  }
  if (bandwidth_mode == BandwidthMode::Fixed && !(fixed_sigma2 > 0.0)) {
    throw std::invalid_argument("fixed bandwidth σ² must be positive");
  }
}

DiscrepancyConfig DiscrepancyConfig::mmd_fixed(double sigma2, MmdEstimator est) {
  DiscrepancyConfig c;
  c.kind = DiscrepancyKind::MMD;
  c.estimator = est;
  c.bandwidth_multipliers = {1.0};
  c.bandwidth_mode = BandwidthMode::Fixed;
  c.fixed_sigma2 = sigma2;
  return c;
}

DiscrepancyConfig DiscrepancyConfig::coral() {
  DiscrepancyConfig c;
  c.kind = DiscrepancyKind::CORAL;
  return c;
}

void to_json(nlohmann::json& j, const DiscrepancyConfig& c) {
  j = nlohmann::json{{"kind", kind_name(c.kind)},
                     {"estimator", c.estimator == MmdEstimator::Biased ? "biased" : "unbiased"},
                     {"bandwidth_multipliers", c.bandwidth_multipliers}};
  if (c.bandwidth_mode == BandwidthMode::Fixed) {
    j["bandwidth_mode"] = {{"fixed", c.fixed_sigma2}};
  } else {
    j["bandwidth_mode"] = "median";
  }
}

void from_json(const nlohmann::json& j, DiscrepancyConfig& c) {
  c = DiscrepancyConfig{};
  const auto kind = j.value("kind", std::string("mmd"));
  if (kind == "mmd") {
    c.kind = DiscrepancyKind::MMD;
  } else if (kind == "coral") {
    c.kind = DiscrepancyKind::CORAL;
  } else {
    throw std::invalid_argument("unknown discrepancy kind '" + kind + "'");
  }
  const auto est = j.value("estimator", std::string("unbiased"));
  if (est != "biased" && est != "unbiased") throw std::invalid_argument("unknown estimator '" + est + "'");
  c.estimator = est == "biased" ? MmdEstimator::Biased : MmdEstimator::Unbiased;
  if (j.contains("bandwidth_multipliers")) c.bandwidth_multipliers = j.at("bandwidth_multipliers").get<std::vector<double>>();
  if (j.contains("bandwidth_mode")) {
    const auto& mode = j.at("bandwidth_mode");
    if (mode.is_string() && mode.get<std::string>() == "median") {
      c.bandwidth_mode = BandwidthMode::MedianHeuristic;
    } else if (mode.is_object() && mode.contains("fixed")) {
      c.bandwidth_mode = BandwidthMode::Fixed;
      c.fixed_sigma2 = mode.at("fixed").get<double>();
    } else {
      throw std::invalid_argument("bandwidth_mode must be \"median\" or {\"fixed\": σ²}");
    }
  }
  c.validate();
}

namespace {

bool all_coincident(const Tensor& x, const Tensor& y) {
  const RowMat z = pooled(x, y);
  for (Eigen::Index i = 1; i < z.rows(); ++i)
    if (z.row(i) != z.row(0)) return false;
  return true;
}

}  // namespace

double median_heuristic(const Tensor& x, const Tensor& y) {
  check_pair("median_heuristic", x, y);
  const RowMat z = pooled(x, y);
  const auto count = static_cast<std::size_t>(z.rows());
  std::vector<double> d2;
  d2.reserve(count * (count - 1) / 2);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = i + 1; j < count; ++j) d2.push_back((z.row(i) - z.row(j)).squaredNorm());
  }
  if (d2.empty() || *std::max_element(d2.begin(), d2.end()) == 0.0) {
    throw NumericError("median_heuristic: all points identical, bandwidth undefined");
  }
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double med = d2[mid];
  if (d2.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(d2.begin(), d2.begin() + mid));
  }
  if (med > 0.0) return med;
  // More than half the pairs coincide; fall back to the median of the
  // non-zero distances so the kernel stays defined.
  std::erase(d2, 0.0);
  std::sort(d2.begin(), d2.end());
  const std::size_t h = d2.size() / 2;
  return d2.size() % 2 ? d2[h] : 0.5 * (d2[h - 1] + d2[h]);
}

Tensor mmd2(const Tensor& x, const Tensor& y, const DiscrepancyConfig& cfg) {
  check_pair("mmd2", x, y);
  cfg.validate();
  const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
  const bool unbiased = cfg.estimator == MmdEstimator::Unbiased;
  if (unbiased && (n < 2 || m < 2)) throw std::invalid_argument("mmd2: unbiased estimator needs ≥ 2 samples per set");

  // All points coincident: every kernel value is 1 whatever the bandwidth, so
  // MMD and its gradient are 0 and any positive base will do.
  const double base = cfg.bandwidth_mode == BandwidthMode::Fixed ? cfg.fixed_sigma2
                      : all_coincident(x, y)                     ? 1.0
                                                                 : median_heuristic(x, y);
  std::vector<double> sigma2;
  for (double mult : cfg.bandwidth_multipliers) sigma2.push_back(mult * base);

  const RowMat z = pooled(x, y);
  const RowMat dist = squared_distances(z);
  const auto total = static_cast<Eigen::Index>(n + m);
  RowMat kernel = RowMat::Zero(total, total);
  RowMat dkernel = RowMat::Zero(total, total);
  for (double s2 : sigma2) {
    const RowMat k = (-dist.array() / (2.0 * s2)).exp().matrix();
    kernel += k;
    dkernel -= k / (2.0 * s2);
  }

  // Estimator weights per kernel entry.
  RowMat coef(total, total);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto mi = static_cast<Eigen::Index>(m);
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  coef.topLeftCorner(ni, ni).setConstant(unbiased ? 1.0 / (nd * (nd - 1.0)) : 1.0 / (nd * nd));
  coef.bottomRightCorner(mi, mi).setConstant(unbiased ? 1.0 / (md * (md - 1.0)) : 1.0 / (md * md));
  coef.topRightCorner(ni, mi).setConstant(-1.0 / (nd * md));
  coef.bottomLeftCorner(mi, ni).setConstant(-1.0 / (nd * md));
  if (unbiased) coef.diagonal().setZero();

  const double value = (coef.array() * kernel.array()).sum();
  RowMat weights = (coef.array() * dkernel.array()).matrix();

  return make_result("mmd2", {1}, {value}, {x, y},
                     [z, weights = std::move(weights), n, m, d](std::span<const double> g,
                                                                std::span<std::vector<double>*> gi) {
                       // d/dz_i Σ w_ij ‖z_i − z_j‖² = 4 Σ_j w_ij (z_i − z_j) for symmetric w.
                       const Eigen::VectorXd rows = weights.rowwise().sum();
                       const RowMat gz = 4.0 * g[0] * (rows.asDiagonal() * z - weights * z);
                       const auto ni = static_cast<Eigen::Index>(n);
                       const auto mi = static_cast<Eigen::Index>(m);
                       if (gi[0]) MapMat(gi[0]->data(), ni, static_cast<Eigen::Index>(d)) += gz.topRows(ni);
                       if (gi[1]) MapMat(gi[1]->data(), mi, static_cast<Eigen::Index>(d)) += gz.bottomRows(mi);
                     });
}

Tensor coral(const Tensor& x, const Tensor& y) {
  check_pair("coral", x, y);
  const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
  if (n < 2 || m < 2) throw std::invalid_argument("coral: each batch needs at least 2 samples");
  const auto ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m), di = static_cast<Eigen::Index>(d);

  RowMat xc = CMapMat(x.data().data(), ni, di);
  xc.rowwise() -= xc.colwise().mean();
  RowMat yc = CMapMat(y.data().data(), mi, di);
  yc.rowwise() -= yc.colwise().mean();
  const RowMat cx = xc.transpose() * xc / static_cast<double>(n - 1);
  const RowMat cy = yc.transpose() * yc / static_cast<double>(m - 1);
  RowMat delta = cx - cy;
  const double d2 = static_cast<double>(d) * static_cast<double>(d);
  const double value = delta.squaredNorm() / (4.0 * d2);

  return make_result("coral", {1}, {value}, {x, y},
                     [xc = std::move(xc), yc = std::move(yc), delta = std::move(delta), n, m, d2](
                         std::span<const double> g, std::span<std::vector<double>*> gi) {
                       // Centering is a projection the rows of xc already satisfy.
                       if (gi[0]) {
                         MapMat(gi[0]->data(), xc.rows(), xc.cols()) +=
                             (g[0] / (static_cast<double>(n - 1) * d2)) * (xc * delta);
                       }
                       if (gi[1]) {
                         MapMat(gi[1]->data(), yc.rows(), yc.cols()) -=
                             (g[0] / (static_cast<double>(m - 1) * d2)) * (yc * delta);
                       }
                     });
}

Tensor discrepancy(const Tensor& x, const Tensor& y, const DiscrepancyConfig& cfg) {
  return cfg.kind == DiscrepancyKind::CORAL ? coral(x, y) : mmd2(x, y, cfg);
}

double pixel_mmd2(const Tensor& images_a, const Tensor& images_b, double sigma2) {
  const std::size_t n = images_a.dim(0), m = images_b.dim(0);
  const std::size_t dim = images_a.numel() / n;
  if (images_b.numel() / m != dim) throw ShapeError("pixel_mmd2: image sizes differ");
  const double inv = 1.0 / std::sqrt(static_cast<double>(dim));
  const auto ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m), di = static_cast<Eigen::Index>(dim);
  RowMat z(ni + mi, di);
  z.topRows(ni) = CMapMat(images_a.data().data(), ni, di) * inv;
  z.bottomRows(mi) = CMapMat(images_b.data().data(), mi, di) * inv;
  const RowMat k = (-squared_distances(z).array() / (2.0 * sigma2)).exp().matrix();
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  return k.topLeftCorner(ni, ni).sum() / (nd * nd) + k.bottomRightCorner(mi, mi).sum() / (md * md) -
         2.0 * k.topRightCorner(ni, mi).sum() / (nd * md);
}

}  // namespace mdg
