// Slow end-to-end checks on the standard suite.
#include <gtest/gtest.h>

#include "mdg/dg.hpp"

using namespace mdg;

namespace {

struct SketchTask {
  std::vector<std::string> names;
  std::vector<DomainDataset> sources;
  DomainDataset target;
  std::vector<DomainDataset> synthetic;
};

const SketchTask& sketch_task() {
  static const SketchTask task = [] {
    SketchTask t;
    const auto suite = standard_suite(0);
    for (const auto& d : suite) {
      if (d.train.domain == "sketch") {
        t.target = d.test;
        continue;
      }
      t.names.push_back(d.train.domain);
      t.sources.push_back(d.train);
    }
    TranslationConfig tcfg;
    tcfg.epochs = 4;
    tcfg.decay_start = 2;
    tcfg.steps_per_epoch = 50;
    const auto translator = train_translator(t.sources, tcfg).model;
    for (const auto& src : t.sources) {
      std::vector<std::string> targets;
      for (const auto& d : t.names)
        if (d != src.domain) targets.push_back(d);
      for (auto& s : translate_dataset(translator, src, targets)) t.synthetic.push_back(std::move(s));
    }
    return t;
  }();
  return task;
}

ExperimentConfig sketch_config(double lambda_d) {
  ExperimentConfig cfg;
  cfg.sources = sketch_task().names;
  cfg.target = "sketch";
  cfg.lambda_d = lambda_d;
  cfg.lr = 0.005;
  cfg.epochs = 8;
  return cfg;
}

DgResult run(const ExperimentConfig& cfg) {
  DgOptions opt;
  opt.synthetic = &sketch_task().synthetic;
  return train_dg(cfg, sketch_task().sources, nullptr, opt);
}

}  // namespace

TEST(Integration, SyntheticMmdShrinksDiscrepancy) {
  const auto res = run(sketch_config(1.0));
  ASSERT_GE(res.history.epochs.size(), 2u);
  EXPECT_LT(res.history.epochs.back().l_d, res.history.epochs.front().l_d);
  EXPECT_EQ(res.history.audit.violations, 0u);
}

TEST(Integration, OverweightedDiscrepancyHurtsAccuracy) {
  const auto base = evaluate(run(sketch_config(0.0)).model, sketch_task().target).accuracy;
  double heavy = 0.0;
  try {
    heavy = evaluate(run(sketch_config(1e3)).model, sketch_task().target).accuracy;
  } catch (const NumericError&) {
    // Divergence is the extreme form of degradation: nothing usable was learned.
    heavy = 0.0;
  }
  EXPECT_LT(heavy, base);
}
