#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mdg/datagen.hpp"
#include "mdg/discrepancy.hpp"
#include "mdg/nets.hpp"
#include "mdg/translation.hpp"

namespace mdg {

/// Stream B = translator outputs of the pooled source data.
struct SyntheticAugmented {
  std::string translator_checkpoint;
  // Also feed the identity (src → src) translation of each domain.
  bool include_self = false;
  // Stream-B sample k is a translation of stream-A sample k (target style
  // drawn uniformly). Off: stream B is an independent shuffle of the pool.
  bool paired = true;
};

/// Stream B = a stratified held-out part of every source domain.
struct SplitSeventyThirty {
  double train_fraction = 0.7;
};

using Protocol = std::variant<SyntheticAugmented, SplitSeventyThirty>;

struct ExperimentConfig {
  std::vector<std::string> sources;
  std::string target;
  Protocol protocol = SyntheticAugmented{};
  DiscrepancyConfig discrepancy;
  // Weight on L_D. 0 disables stream B entirely: the no-adaptation baseline.
  double lambda_d = 1.0;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t feature_dim = 128;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct SplitResult {
  DomainDataset train;
  DomainDataset validation;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

/// Stratified per class: round(fraction · n_c) samples of each class go to
/// the training part.
SplitResult split_70_30(const DomainDataset& dataset, double fraction, std::uint64_t seed);

/// Mean categorical cross-entropy.
Tensor classification_loss(const Tensor& logits, std::span<const int> labels);

/// L_T = L_C + λ_D · L_D.
Tensor total_loss(const Tensor& l_c, const Tensor& l_d, double lambda_d);

struct DgStep {
  double l_c = 0.0, l_d = 0.0, l_t = 0.0;
  double lambda_d = 0.0;
};

struct DgEpoch {
  std::size_t epoch = 0;
  double l_c = 0.0, l_d = 0.0, l_t = 0.0;
};

/// Per-sample origin check of every batch that entered training.
struct ProvenanceAudit {
  std::size_t samples_checked = 0;
  std::size_t violations = 0;
  // Indices into the pooled stream-A set, in the order they were consumed.
  std::vector<std::size_t> stream_a_ids;
  std::vector<std::size_t> stream_b_ids;
  // Stable sample keys (origin domain, row) for both streams.
  std::vector<std::string> stream_a_keys;
  std::vector<std::string> stream_b_keys;
  // True when stream-B labels entered L_C at least once.
  bool stream_b_labels_used = false;
};

struct DgHistory {
  std::vector<DgStep> steps;
  std::vector<DgEpoch> epochs;
  ProvenanceAudit audit;
};

struct DgResult {
  DGModel model;
  DgHistory history;
};

struct DgOptions {
  // Record every consumed sample key into the audit (memory grows with steps).
  bool record_keys = false;
  // Stop after this many optimizer steps (0 = run all epochs).
  std::size_t max_steps = 0;
  // Precomputed stream-B datasets for SyntheticAugmented; skips translation.
  const std::vector<DomainDataset>* synthetic = nullptr;
};

/// Trains the shared-weight two-stream classifier. Under SyntheticAugmented
/// the translator is taken from `translator` when given, otherwise loaded
/// from the configured checkpoint; its domains must equal cfg.sources.
DgResult train_dg(const ExperimentConfig& cfg, const std::vector<DomainDataset>& sources,
                  const TranslatorModel* translator = nullptr, const DgOptions& options = {});

struct Evaluation {
  double accuracy = 0.0;  // percent
  std::vector<double> per_class;  // percent, one per class
  std::vector<int> predictions;
};

Evaluation evaluate(const DGModel& model, const DomainDataset& target);

struct ReportRow {
  std::string task;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::vector<double> per_class;
};

struct MethodSummary {
  std::string method;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t rows = 0;
};

struct Report {
  std::vector<ReportRow> rows;

  std::vector<std::string> methods() const;
  /// Arithmetic mean of the method's row accuracies.
  double average(const std::string& method) const;
  MethodSummary summary(const std::string& method) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static Report from_json(const nlohmann::json& j);
};

/// "A,B,C → D"
std::string task_name(const std::vector<std::string>& sources, const std::string& target);

struct MethodSpec {
  std::string name;
  // sources, target and seed are filled per cell; everything else is used as is.
  ExperimentConfig config;
};

struct LeaveOneOutOptions {
  TranslationConfig translator;
  // Evaluate on train+test of the held-out domain (all of it is unseen).
  bool evaluate_full_target = true;
  // Called after each (target, seed, method) cell.
  std::function<void(const ReportRow&)> on_row;
  // Called with each cell's training history (losses and provenance audit)
  // before the audit is enforced.
  std::function<void(const ReportRow&, const DgHistory&)> on_history;
};

Report run_leave_one_out(const std::vector<SuiteDomain>& suite, const std::vector<MethodSpec>& methods,
                         const std::vector<std::uint64_t>& seeds, const LeaveOneOutOptions& options);

/// Config + parameters of a trained DGModel.
void save_dg_model(const std::filesystem::path& dir, const DGModel& model, const ExperimentConfig& cfg);
DGModel load_dg_model(const std::filesystem::path& dir);

}  // namespace mdg
