#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mdg/translation.hpp"
#include "test_util.hpp"

using namespace mdg;

namespace {

DomainDataset constant_domain(const std::string& name, double value, std::size_t n = 8) {
  DomainDataset ds;
  ds.domain = name;
  ds.origin = name;
  ds.spec = {1, 16};
  ds.classes = 2;
  ds.images = Tensor::full(ds.spec.batch_shape(n), value);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % 2));
  return ds;
}

TranslationConfig toy_config(std::uint64_t seed) {
  TranslationConfig cfg;
  cfg.epochs = 10;
  cfg.decay_start = 5;
  cfg.steps_per_epoch = 30;
  cfg.seed = seed;
  return cfg;
}

Tensor grid(double value) { return Tensor::full({1, 1, 3, 3}, value); }

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

TEST(Adversarial, LogLossAtZeroScores) {
  const auto l = adversarial_losses(grid(0.0), grid(0.0), AdversarialForm::LogLoss);
  EXPECT_NEAR(l.d_loss.item(), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(l.g_loss.item(), std::log(2.0), 1e-12);
}

TEST(Adversarial, PerfectDiscriminatorLimit) {
  const auto l = adversarial_losses(grid(60.0), grid(-60.0), AdversarialForm::LogLoss);
  EXPECT_LT(l.d_loss.item(), 1e-20);
  const auto ls = adversarial_losses(grid(1.0), grid(0.0), AdversarialForm::LeastSquares);
  EXPECT_DOUBLE_EQ(ls.d_loss.item(), 0.0);
  EXPECT_DOUBLE_EQ(ls.g_loss.item(), 1.0);
  EXPECT_THROW(adversarial_losses(grid(0.0), Tensor::zeros({1, 1, 2, 2}), AdversarialForm::LogLoss), ShapeError);
}

TEST(Cycle, KnownValues) {
  auto x = Tensor::zeros({2, 1, 4, 4});
  EXPECT_DOUBLE_EQ(cycle_loss(x, x.clone()).item(), 0.0);
  EXPECT_DOUBLE_EQ(cycle_loss(x, Tensor::full({2, 1, 4, 4}, 0.5)).item(), 0.5);
  EXPECT_THROW(cycle_loss(x, Tensor::zeros({2, 1, 4, 2})), ShapeError);
}

TEST(Cycle, MatchesElementwiseOracle) {
  Rng rng(3);
  std::vector<double> a(2 * 3 * 5 * 5), b(a.size());
  for (auto& v : a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : b) v = rng.uniform(-1.0, 1.0);
  double oracle = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) oracle += std::abs(a[i] - b[i]);
  oracle /= static_cast<double>(a.size());
  const Shape s{2, 3, 5, 5};
  EXPECT_NEAR(cycle_loss(Tensor::from_data(s, a), Tensor::from_data(s, b)).item(), oracle, 1e-12);
}

TEST(Objective, Arithmetic) {
  const ObjectiveTerms t{Tensor::scalar(0.5), Tensor::scalar(0.5), Tensor::scalar(0.2), 10.0};
  EXPECT_NEAR(full_objective(t).item(), 3.0, 1e-12);
  const ObjectiveTerms z{Tensor::scalar(0.25), Tensor::scalar(0.5), Tensor::scalar(0.0), 10.0};
  EXPECT_DOUBLE_EQ(full_objective(z).item(), 0.75);
}

TEST(Objective, GradientIsSumOfComponentGradients) {
  TranslationConfig cfg;
  cfg.seed = 4;
  TranslatorModel model({"a", "b"}, {1, 16}, cfg);
  auto xa = Tensor::full({1, 1, 16, 16}, 0.3);
  auto xb = Tensor::full({1, 1, 16, 16}, -0.6);
  const auto gens = model.generator_parameters();
  set_requires_grad(model.discriminator_parameters(), false);

  auto components = [&] {
    const Tensor fb = model.translate(xa, 0, 1);
    const Tensor fa = model.translate(xb, 1, 0);
    return ObjectiveTerms{
        generator_adversarial_loss(model.discriminator(1).forward(fb), cfg.adversarial_form),
        generator_adversarial_loss(model.discriminator(0).forward(fa), cfg.adversarial_form),
        ops::add(cycle_loss(xa, model.translate(fb, 1, 0)), cycle_loss(xb, model.translate(fa, 0, 1))), cfg.lambda_cyc};
  };

  zero_grads(gens);
  backward(full_objective(components()));
  std::vector<std::vector<double>> joint;
  for (const auto& p : gens) joint.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  zero_grads(gens);
  {
    auto t = components();
    backward(t.gan_forward);
  }
  {
    auto t = components();
    backward(t.gan_backward);
  }
  {
    auto t = components();
    backward(ops::scale(t.cycle, cfg.lambda_cyc));
  }
  for (std::size_t k = 0; k < gens.size(); ++k) {
    const auto g = gens[k].tensor.grad();
    ASSERT_EQ(g.size(), joint[k].size()) << gens[k].name;
    for (std::size_t i = 0; i < g.size(); ++i)
      ASSERT_NEAR(g[i], joint[k][i], 1e-10 * std::max(1.0, std::abs(joint[k][i]))) << gens[k].name;
  }
  set_requires_grad(model.discriminator_parameters(), true);
}

TEST(Schedule, LinearDecayIsExact) {
  TranslationConfig cfg;
  cfg.lr = 2e-4;
  cfg.epochs = 40;
  cfg.decay_start = 20;
  for (std::size_t e = 0; e < 20; ++e) EXPECT_EQ(translation_lr(cfg, e), 2e-4);
  for (std::size_t e = 20; e < 40; ++e)
    EXPECT_DOUBLE_EQ(translation_lr(cfg, e), 2e-4 * static_cast<double>(40 - e) / 20.0);
  EXPECT_DOUBLE_EQ(translation_lr(cfg, 40), 0.0);
}

TEST(Config, ValidationAndJson) {
  TranslationConfig cfg;
  cfg.decay_start = cfg.epochs;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.lambda_cyc = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.adversarial_form = AdversarialForm::LogLoss;
  cfg.seed = 17;
  nlohmann::json j = cfg;
  const auto back = j.get<TranslationConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(TranslationConfig{}.adversarial_form, AdversarialForm::LeastSquares);
}

TEST(Trainer, RoundRobinVisitsEveryOrderedPair) {
  std::vector<DomainDataset> ds{constant_domain("a", 1.0), constant_domain("b", -1.0), constant_domain("c", 0.0)};
  TranslatorModel model({"a", "b", "c"}, {1, 16}, TranslationConfig{});
  TranslatorTrainer trainer(model, ds);
  EXPECT_EQ(trainer.pair_cycle().size(), 6u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (int k = 0; k < 6; ++k) seen.insert(trainer.next_pair());
  EXPECT_EQ(seen.size(), 6u);
  for (auto [i, j] : seen) EXPECT_NE(i, j);
}

TEST(Trainer, ToyPairLearnsAndAlternates) {
  std::vector<DomainDataset> ds{constant_domain("white", 1.0), constant_domain("black", -1.0)};
  const auto cfg = toy_config(0);
  const auto result = train_translator(ds, cfg);
  ASSERT_EQ(result.history.epochs.size(), 10u);
  EXPECT_LT(result.history.epochs.back().cycle, 0.3 * result.history.epochs.front().cycle);
  for (const auto& s : result.history.steps) {
    EXPECT_EQ(s.d_phase_generator_grad, 0.0);
    EXPECT_EQ(s.g_phase_discriminator_grad, 0.0);
    EXPECT_NEAR(s.total, s.gan_forward + s.gan_backward + cfg.lambda_cyc * s.cycle, 1e-12);
    EXPECT_DOUBLE_EQ(s.lr, translation_lr(cfg, s.epoch));
  }
  NoGradGuard ng;
  const auto out = result.model.translate(ds[0].images, "white", "black");
  EXPECT_LT(mean_of(out), 0.0);
}

TEST(Trainer, SeededRunsAreIdentical) {
  std::vector<DomainDataset> ds{constant_domain("white", 1.0), constant_domain("black", -1.0)};
  auto cfg = toy_config(5);
  cfg.epochs = 2;
  cfg.decay_start = 1;
  cfg.steps_per_epoch = 4;
  const auto a = train_translator(ds, cfg);
  const auto b = train_translator(ds, cfg);
  ASSERT_EQ(a.history.steps.size(), b.history.steps.size());
  for (std::size_t i = 0; i < a.history.steps.size(); ++i) {
    EXPECT_EQ(a.history.steps[i].total, b.history.steps[i].total) << "step " << i;
    EXPECT_EQ(a.history.steps[i].d_loss, b.history.steps[i].d_loss);
  }
  EXPECT_EQ(a.model.checkpoint_id(), b.model.checkpoint_id());
  EXPECT_EQ(a.history.to_csv(a.model.domains()), b.history.to_csv(b.model.domains()));
}

TEST(Trainer, Errors) {
  const auto cfg = toy_config(0);
  EXPECT_THROW(train_translator({constant_domain("a", 1.0)}, cfg), std::invalid_argument);
  auto empty = constant_domain("b", 0.0);
  empty.labels.clear();
  EXPECT_THROW(train_translator({constant_domain("a", 1.0), empty}, cfg), std::invalid_argument);
}

TEST(Translate, UntrainedOutputIsFiniteAndBounded) {
  TranslatorModel model({"a", "b"}, {3, 32}, TranslationConfig{});
  NoGradGuard ng;
  Rng rng(1);
  std::vector<double> v(2 * 3 * 32 * 32);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  const auto x = Tensor::from_data({2, 3, 32, 32}, v);
  for (const auto& [s, d] : std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"b", "a"}, {"a", "a"}}) {
    const auto y = model.translate(x, s, d);
    EXPECT_EQ(y.shape(), x.shape());
    for (double p : y.data()) {
      ASSERT_TRUE(std::isfinite(p));
      ASSERT_LE(std::abs(p), 1.0);
    }
  }
  EXPECT_THROW(model.translate(x, "a", "zebra"), std::invalid_argument);
}

TEST(Translate, DatasetCopiesLabelsAndRecordsProvenance) {
  TranslationConfig cfg;
  TranslatorModel model({"a", "b", "c", "d"}, {1, 16}, cfg);
  auto src = constant_domain("a", 0.5, 42);
  const auto out = translate_dataset(model, src, {"b", "c", "d"});
  ASSERT_EQ(out.size(), 3u);
  const std::string id = model.checkpoint_id();
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(out[t].size(), 42u);
    EXPECT_EQ(out[t].labels, src.labels);
    EXPECT_EQ(out[t].origin, "a");
    EXPECT_EQ(out[t].provenance, "translated:a->" + std::string(1, static_cast<char>('b' + t)) + "@" + id);
  }
  EXPECT_THROW(translate_dataset(model, src, {"x"}), std::invalid_argument);
  auto stray = constant_domain("q", 0.0);
  EXPECT_THROW(translate_dataset(model, stray, {"a"}), std::invalid_argument);
}

TEST(Translate, CheckpointRoundTrip) {
  test::TempDir tmp;
  TranslationConfig cfg;
  cfg.seed = 8;
  TranslatorModel model({"a", "b"}, {1, 16}, cfg);
  model.save(tmp.path / "tr");
  const auto back = TranslatorModel::load(tmp.path / "tr");
  EXPECT_EQ(back.domains(), model.domains());
  EXPECT_EQ(back.checkpoint_id(), model.checkpoint_id());
  NoGradGuard ng;
  const auto x = Tensor::full({1, 1, 16, 16}, 0.2);
  const auto y1 = model.translate(x, 0, 1), y2 = back.translate(x, 0, 1);
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
}
