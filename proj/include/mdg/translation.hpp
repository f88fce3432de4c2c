#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdg/datagen.hpp"
#include "mdg/nets.hpp"
#include "mdg/optim.hpp"

namespace mdg {

enum class AdversarialForm { LogLoss, LeastSquares };
enum class PairSchedule { RoundRobin, Random };

struct TranslationConfig {
  double lambda_cyc = 10.0;
  double lr = 2e-4;
  std::size_t batch_size = 1;
  std::size_t epochs = 40;
  std::size_t decay_start = 20;
  // Training steps per epoch; each step trains one ordered domain pair.
  std::size_t steps_per_epoch = 60;
  AdversarialForm adversarial_form = AdversarialForm::LeastSquares;
  PairSchedule schedule = PairSchedule::RoundRobin;
  std::size_t n_res_blocks = 2;
  std::size_t base_channels = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TranslationConfig& c);
void from_json(const nlohmann::json& j, TranslationConfig& c);

/// Learning rate for a 0-based epoch: constant before decay_start, then
/// lr·(epochs − e)/(epochs − decay_start).
double translation_lr(const TranslationConfig& cfg, std::size_t epoch);

struct AdversarialLosses {
  Tensor d_loss;
  Tensor g_loss;
};

/// LogLoss: d = −mean log σ(real) − mean log(1 − σ(fake)), g = −mean log σ(fake).
/// LeastSquares: d = mean (real − 1)² + mean fake², g = mean (fake − 1)².
AdversarialLosses adversarial_losses(const Tensor& real_scores, const Tensor& fake_scores, AdversarialForm form);
/// The g_loss half of adversarial_losses alone.
Tensor generator_adversarial_loss(const Tensor& fake_scores, AdversarialForm form);

/// Mean absolute error between an input batch and its reconstruction.
Tensor cycle_loss(const Tensor& x, const Tensor& reconstructed);

struct ObjectiveTerms {
  Tensor gan_forward;   // L_GAN for i→j
  Tensor gan_backward;  // L_GAN for j→i
  Tensor cycle;         // L_cyc summed over both directions
  double lambda_cyc = 10.0;
};

/// L = L_GAN(i→j) + L_GAN(j→i) + λ·L_cyc.
Tensor full_objective(const ObjectiveTerms& terms);

/// n encoders, decoders and discriminators sharing one latent spec, so any
/// encoder composes with any decoder.
class TranslatorModel {
 public:
  TranslatorModel(std::vector<std::string> domains, const ImageSpec& spec, const TranslationConfig& cfg);

  const std::vector<std::string>& domains() const { return domains_; }
  std::size_t domain_index(const std::string& name) const;
  const ImageSpec& image_spec() const { return spec_; }
  const TranslationConfig& config() const { return cfg_; }

  const Encoder& encoder(std::size_t i) const { return encoders_.at(i); }
  const Decoder& decoder(std::size_t i) const { return decoders_.at(i); }
  const Discriminator& discriminator(std::size_t i) const { return discriminators_.at(i); }

  /// decoder_dst ∘ encoder_src on an N×C×H×W batch.
  Tensor translate(const Tensor& images, std::size_t src, std::size_t dst) const;
  Tensor translate(const Tensor& images, const std::string& src, const std::string& dst) const;

  ParamList generator_parameters() const;
  ParamList discriminator_parameters() const;
  ParamList parameters() const;

  /// Hex digest of all parameter values.
  std::string checkpoint_id() const;

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static TranslatorModel load(const std::filesystem::path& dir);

 private:
  std::vector<std::string> domains_;
  ImageSpec spec_;
  TranslationConfig cfg_;
  std::vector<Encoder> encoders_;
  std::vector<Decoder> decoders_;
  std::vector<Discriminator> discriminators_;
};

struct TranslationStep {
  std::size_t epoch = 0;
  std::size_t src = 0, dst = 0;
  double lr = 0.0;
  double d_loss = 0.0;
  double gan_forward = 0.0, gan_backward = 0.0;
  double cycle = 0.0;
  double total = 0.0;
  // Alternation audit: gradient mass that leaked into the other player.
  double d_phase_generator_grad = 0.0;
  double g_phase_discriminator_grad = 0.0;
};

struct TranslationEpoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double d_loss = 0.0, g_loss = 0.0, cycle = 0.0;
};

struct TranslationHistory {
  std::vector<TranslationStep> steps;
  std::vector<TranslationEpoch> epochs;

  /// epoch,pair,d_loss,g_loss,cycle_loss, one row per (epoch, ordered pair).
  std::string to_csv(const std::vector<std::string>& domains) const;
};

/// Drives adversarial + cycle training of a TranslatorModel.
class TranslatorTrainer {
 public:
  TranslatorTrainer(TranslatorModel& model, std::vector<DomainDataset> datasets);

  /// One alternating update on the next scheduled ordered pair.
  TranslationStep step(std::size_t epoch);
  std::pair<std::size_t, std::size_t> next_pair();
  const std::vector<std::pair<std::size_t, std::size_t>>& pair_cycle() const { return pairs_; }

 private:
  Tensor sample(std::size_t domain);

  TranslatorModel& model_;
  std::vector<DomainDataset> datasets_;
  Rng rng_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::size_t pair_cursor_ = 0;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  std::vector<Adam> enc_opt_, dec_opt_, disc_opt_;
};

struct TranslatorResult {
  TranslatorModel model;
  TranslationHistory history;
};

/// Trains on ≥ 2 domains (one dataset per domain, consistent image spec).
TranslatorResult train_translator(const std::vector<DomainDataset>& datasets, const TranslationConfig& cfg);

/// One synthetic dataset per target, labels copied from the source.
std::vector<DomainDataset> translate_dataset(const TranslatorModel& model, const DomainDataset& dataset,
                                             const std::vector<std::string>& targets);

}  // namespace mdg
