#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdg/tensor.hpp"

namespace mdg {

enum class DiscrepancyKind { MMD, CORAL };
enum class MmdEstimator { Biased, Unbiased };
enum class BandwidthMode { MedianHeuristic, Fixed };

struct DiscrepancyConfig {
  DiscrepancyKind kind = DiscrepancyKind::MMD;
  MmdEstimator estimator = MmdEstimator::Unbiased;
  std::vector<double> bandwidth_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
  BandwidthMode bandwidth_mode = BandwidthMode::MedianHeuristic;
  // σ² used when bandwidth_mode == Fixed.
  double fixed_sigma2 = 1.0;

  void validate() const;

  static DiscrepancyConfig mmd_fixed(double sigma2, MmdEstimator est = MmdEstimator::Biased);
  static DiscrepancyConfig coral();
};

void to_json(nlohmann::json& j, const DiscrepancyConfig& c);
void from_json(const nlohmann::json& j, DiscrepancyConfig& c);

/// Squared MMD between the rows of X (n×d) and Y (m×d) under a sum of
/// Gaussian kernels exp(−‖x−y‖²/(2σ²)), one per bandwidth multiplier.
/// Bandwidths are constants of the minibatch: no gradient flows through them.
Tensor mmd2(const Tensor& x, const Tensor& y, const DiscrepancyConfig& cfg);

/// ‖C_X − C_Y‖²_F / (4d²) with unbiased (1/(n−1)) sample covariances.
Tensor coral(const Tensor& x, const Tensor& y);

/// Median of squared pairwise distances over the pooled rows of X and Y,
/// self-pairs excluded. When more than half of the pairs coincide the median
/// of the non-zero distances is used instead.
double median_heuristic(const Tensor& x, const Tensor& y);

/// Dispatches on cfg.kind.
Tensor discrepancy(const Tensor& x, const Tensor& y, const DiscrepancyConfig& cfg);

/// Biased single-kernel MMD² on flattened images, with squared distances
/// divided by the flattened dimension (σ² is therefore per pixel). Used to
/// compare image sets directly; no gradient.
double pixel_mmd2(const Tensor& images_a, const Tensor& images_b, double sigma2 = 1.0);

}  // namespace mdg
