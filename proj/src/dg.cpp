#include "mdg/dg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mdg/optim.hpp"

namespace mdg {

namespace {

// One pooled stream: images from several datasets addressed by a flat index.
struct Pool {
  std::vector<const DomainDataset*> parts;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (part, row)
  // Row of each part sample in the dataset it was cut from; empty = identity.
  std::vector<std::vector<std::size_t>> source_rows;

  void add(const DomainDataset& ds, std::vector<std::size_t> rows = {}) {
    const std::size_t p = parts.size();
    parts.push_back(&ds);
    source_rows.push_back(std::move(rows));
    for (std::size_t r = 0; r < ds.size(); ++r) where.emplace_back(p, r);
  }
  std::size_t size() const { return where.size(); }

  Tensor images(std::span<const std::size_t> idx) const {
    const ImageSpec& spec = parts.front()->spec;
    const std::size_t per = spec.numel();
    std::vector<double> out(idx.size() * per);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto [p, r] = where.at(idx[i]);
      const auto src = parts[p]->images.data();
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * per), per,
                  out.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return Tensor::from_data(spec.batch_shape(idx.size()), std::move(out));
  }

  std::vector<int> labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) {
      const auto [p, r] = where.at(i);
      out.push_back(parts[p]->labels[r]);
    }
    return out;
  }

  const DomainDataset& part_of(std::size_t i) const { return *parts[where.at(i).first]; }
  std::string key(std::size_t i) const {
    const auto [p, r] = where.at(i);
    const std::size_t row = source_rows[p].empty() ? r : source_rows[p][r];
    return parts[p]->provenance + ":" + parts[p]->origin + "#" + std::to_string(row);
  }
};

// Cycles through a pool in reshuffled passes; only full batches are emitted.
class BatchCursor {
 public:
  // The first shuffle happens on first use, so epoch k consumes draw k.
  BatchCursor(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n), pos_(n) {}

  // Indices of one epoch's full batches over the whole pool.
  std::vector<std::vector<std::size_t>> epoch(std::size_t batch) {
    reshuffle();
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s + batch <= order_.size(); s += batch)
      out.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(s),
                       order_.begin() + static_cast<std::ptrdiff_t>(s + batch));
    return out;
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
    pos_ = 0;
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::string protocol_name(const Protocol& p) {
  return std::holds_alternative<SyntheticAugmented>(p) ? "synthetic_augmented" : "split";
}

}  // namespace

void ExperimentConfig::validate() const {
  if (sources.empty()) throw std::invalid_argument("experiment needs at least one source domain");
  if (std::find(sources.begin(), sources.end(), target) != sources.end())
    throw std::invalid_argument("target domain '" + target + "' is listed as a source");
  if (std::set<std::string>(sources.begin(), sources.end()).size() != sources.size())
    throw std::invalid_argument("duplicate source domain");
  if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d)) throw std::invalid_argument("lambda_d must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (feature_dim == 0) throw std::invalid_argument("feature_dim must be >= 1");
  if (const auto* s = std::get_if<SplitSeventyThirty>(&protocol)) {
    if (!(s->train_fraction > 0.0 && s->train_fraction < 1.0))
      throw std::invalid_argument("train_fraction must be in (0, 1)");
  }
  discrepancy.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json proto;
  if (const auto* sa = std::get_if<SyntheticAugmented>(&c.protocol)) {
    proto = {{"type", "synthetic_augmented"},
             {"translator_checkpoint", sa->translator_checkpoint},
             {"include_self", sa->include_self},
             {"paired", sa->paired}};
  } else {
    proto = {{"type", "split"}, {"train_fraction", std::get<SplitSeventyThirty>(c.protocol).train_fraction}};
  }
  j = {{"sources", c.sources},
       {"target", c.target},
       {"protocol", proto},
       {"discrepancy", c.discrepancy},
       {"lambda_d", c.lambda_d},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"feature_dim", c.feature_dim}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  j.at("sources").get_to(c.sources);
  j.at("target").get_to(c.target);
  if (j.contains("protocol")) {
    const auto& p = j.at("protocol");
    const auto type = p.at("type").get<std::string>();
    if (type == "synthetic_augmented") {
      SyntheticAugmented sa;
      sa.translator_checkpoint = p.value("translator_checkpoint", std::string{});
      sa.include_self = p.value("include_self", false);
      sa.paired = p.value("paired", true);
      c.protocol = sa;
    } else if (type == "split") {
      c.protocol = SplitSeventyThirty{p.value("train_fraction", 0.7)};
    } else {
      throw std::invalid_argument("unknown protocol type '" + type + "'");
    }
  }
  if (j.contains("discrepancy")) j.at("discrepancy").get_to(c.discrepancy);
  c.lambda_d = j.value("lambda_d", c.lambda_d);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
}

SplitResult split_70_30(const DomainDataset& dataset, double fraction, std::uint64_t seed) {
  if (dataset.size() == 0) throw std::invalid_argument("cannot split an empty dataset");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("fraction must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);

  SplitResult out;
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw std::invalid_argument("class " + std::to_string(label) + " has fewer than 2 samples");
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    out.train_indices.insert(out.train_indices.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.validation_indices.insert(out.validation_indices.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                                  idx.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.validation_indices.begin(), out.validation_indices.end());
  out.train = dataset.subset(out.train_indices);
  out.validation = dataset.subset(out.validation_indices);
  out.validation.provenance = dataset.provenance + "|validation";
  return out;
}

Tensor classification_loss(const Tensor& logits, std::span<const int> labels) {
  return ops::softmax_cross_entropy(logits, labels);
}

Tensor total_loss(const Tensor& l_c, const Tensor& l_d, double lambda_d) {
  return ops::add(l_c, ops::scale(l_d, lambda_d));
}

DgResult train_dg(const ExperimentConfig& cfg, const std::vector<DomainDataset>& sources,
                  const TranslatorModel* translator, const DgOptions& options) {
  cfg.validate();
  if (sources.size() != cfg.sources.size()) throw std::invalid_argument("source dataset count does not match config");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].domain != cfg.sources[i])
      throw std::invalid_argument("source dataset '" + sources[i].domain + "' does not match config entry '" +
                                  cfg.sources[i] + "'");
    if (sources[i].size() == 0) throw std::invalid_argument("source dataset '" + sources[i].domain + "' is empty");
    if (!(sources[i].spec == sources.front().spec) || sources[i].classes != sources.front().classes)
      throw std::invalid_argument("source datasets disagree on image spec or class count");
  }
  const ImageSpec spec = sources.front().spec;
  const std::size_t classes = sources.front().classes;
  const bool use_b = cfg.lambda_d > 0.0;

  // Stream storage must outlive the pools that point into it.
  std::vector<DomainDataset> a_parts, b_parts;
  std::vector<std::vector<std::size_t>> a_rows, b_rows;
  bool b_labelled = false;
  if (!use_b) {
    a_parts = sources;
  } else if (const auto* split = std::get_if<SplitSeventyThirty>(&cfg.protocol)) {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      auto s = split_70_30(sources[i], split->train_fraction, derive_seed(cfg.seed, 300 + i));
      a_parts.push_back(std::move(s.train));
      b_parts.push_back(std::move(s.validation));
      a_rows.push_back(std::move(s.train_indices));
      b_rows.push_back(std::move(s.validation_indices));
    }
  } else {
    const auto& sa = std::get<SyntheticAugmented>(cfg.protocol);
    std::optional<TranslatorModel> loaded;
    if (translator == nullptr) {
      if (options.synthetic == nullptr) {
        if (sa.translator_checkpoint.empty()) throw std::invalid_argument("no translator checkpoint configured");
        loaded.emplace(TranslatorModel::load(sa.translator_checkpoint));
        translator = &*loaded;
      }
    }
    a_parts = sources;
    if (options.synthetic != nullptr) {
      b_parts = *options.synthetic;
    } else {
      std::vector<std::string> doms = translator->domains();
      std::vector<std::string> sorted_doms = doms, sorted_src = cfg.sources;
      std::sort(sorted_doms.begin(), sorted_doms.end());
      std::sort(sorted_src.begin(), sorted_src.end());
      if (sorted_doms != sorted_src)
        throw std::invalid_argument("translator checkpoint was not trained on exactly the configured sources");
      for (const auto& src : sources) {
        std::vector<std::string> targets;
        for (const auto& d : cfg.sources)
          if (d != src.domain || sa.include_self) targets.push_back(d);
        auto syn = translate_dataset(*translator, src, targets);
        for (auto& s : syn) b_parts.push_back(std::move(s));
      }
    }
    b_labelled = true;
  }

  Pool pool_a, pool_b;
  for (std::size_t p = 0; p < a_parts.size(); ++p) pool_a.add(a_parts[p], p < a_rows.size() ? a_rows[p] : std::vector<std::size_t>{});
  for (std::size_t p = 0; p < b_parts.size(); ++p) pool_b.add(b_parts[p], p < b_rows.size() ? b_rows[p] : std::vector<std::size_t>{});
  if (pool_a.size() < cfg.batch_size) throw std::invalid_argument("stream A holds fewer samples than one batch");
  if (use_b && pool_b.size() < cfg.batch_size) throw std::invalid_argument("stream B holds fewer samples than one batch");

  // Paired mode: the stream-B candidates of every stream-A sample are the
  // translations of that same source row.
  std::vector<std::vector<std::size_t>> partners;
  const auto* sa_cfg = std::get_if<SyntheticAugmented>(&cfg.protocol);
  if (use_b && sa_cfg != nullptr && sa_cfg->paired) {
    std::vector<std::size_t> offset_a(a_parts.size(), 0);
    for (std::size_t p = 1; p < a_parts.size(); ++p) offset_a[p] = offset_a[p - 1] + a_parts[p - 1].size();
    partners.resize(pool_a.size());
    std::size_t offset_b = 0;
    for (const auto& part : b_parts) {
      std::size_t p = 0;
      while (p < a_parts.size() && a_parts[p].domain != part.origin) ++p;
      if (p == a_parts.size() || part.size() != a_parts[p].size())
        throw std::invalid_argument("paired stream B needs translations that mirror the rows of each source");
      for (std::size_t r = 0; r < part.size(); ++r) partners[offset_a[p] + r].push_back(offset_b + r);
      offset_b += part.size();
    }
    for (const auto& c : partners)
      if (c.empty()) throw std::invalid_argument("paired stream B has no translation for some source sample");
  }

  const std::set<std::string> allowed(cfg.sources.begin(), cfg.sources.end());

  Rng init_rng(derive_seed(cfg.seed, 1));
  ClassifierConfig ccfg;
  ccfg.image = spec;
  ccfg.classes = classes;
  ccfg.feature_dim = cfg.feature_dim;
  DGModel model(ccfg, init_rng);
  Sgd opt(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);

  BatchCursor cursor_a(pool_a.size(), derive_seed(cfg.seed, 2));
  BatchCursor cursor_b(std::max<std::size_t>(pool_b.size(), 1), derive_seed(cfg.seed, 3));
  Rng partner_rng(derive_seed(cfg.seed, 3));

  DgHistory hist;
  auto& audit = hist.audit;
  auto check = [&](const Pool& pool, std::span<const std::size_t> idx, bool stream_b) {
    for (auto i : idx) {
      const auto& part = pool.part_of(i);
      ++audit.samples_checked;
      if (part.origin == cfg.target || part.domain == cfg.target || !allowed.contains(part.origin))
        ++audit.violations;
      if (options.record_keys) {
        (stream_b ? audit.stream_b_keys : audit.stream_a_keys).push_back(pool.key(i));
        (stream_b ? audit.stream_b_ids : audit.stream_a_ids).push_back(i);
      }
    }
  };

  std::size_t steps = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    DgEpoch ep{e, 0.0, 0.0, 0.0};
    std::size_t n_steps = 0;
    for (const auto& idx_a : cursor_a.epoch(cfg.batch_size)) {
      if (options.max_steps != 0 && steps >= options.max_steps) break;
      check(pool_a, idx_a, false);
      opt.zero_grad();
      DgStep rec;
      rec.lambda_d = cfg.lambda_d;
      Tensor l_c, l_d, l_t;
      const Tensor feat_a = model.features(pool_a.images(idx_a));
      if (!use_b) {
        l_c = classification_loss(model.logits(feat_a), pool_a.labels(idx_a));
        l_d = Tensor::scalar(0.0);
      } else {
        std::vector<std::size_t> idx_b;
        if (partners.empty()) {
          idx_b = cursor_b.next(cfg.batch_size);
        } else {
          for (auto i : idx_a) idx_b.push_back(partners[i][partner_rng.below(partners[i].size())]);
        }
        check(pool_b, idx_b, true);
        const Tensor feat_b = model.features(pool_b.images(idx_b));
        if (b_labelled) {
          auto labels = pool_a.labels(idx_a);
          const auto lb = pool_b.labels(idx_b);
          labels.insert(labels.end(), lb.begin(), lb.end());
          l_c = classification_loss(model.logits(ops::concat({feat_a, feat_b})), labels);
          audit.stream_b_labels_used = true;
        } else {
          l_c = classification_loss(model.logits(feat_a), pool_a.labels(idx_a));
        }
        l_d = discrepancy(feat_a, feat_b, cfg.discrepancy);
      }
      l_t = total_loss(l_c, l_d, cfg.lambda_d);
      rec.l_c = l_c.item();
      rec.l_d = l_d.item();
      rec.l_t = l_t.item();
      if (!std::isfinite(rec.l_t))
        throw NumericError("training diverged at epoch " + std::to_string(e) + " (non-finite L_T)");
      backward(l_t);
      opt.step();
      hist.steps.push_back(rec);
      ep.l_c += rec.l_c;
      ep.l_d += rec.l_d;
      ep.l_t += rec.l_t;
      ++n_steps;
      ++steps;
    }
    if (n_steps == 0) break;
    ep.l_c /= static_cast<double>(n_steps);
    ep.l_d /= static_cast<double>(n_steps);
    ep.l_t /= static_cast<double>(n_steps);
    hist.epochs.push_back(ep);
  }
  return {std::move(model), std::move(hist)};
}

Evaluation evaluate(const DGModel& model, const DomainDataset& target) {
  Evaluation ev;
  const std::size_t k = model.config().classes;
  std::vector<std::size_t> hit(k, 0), total(k, 0);
  NoGradGuard ng;
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < target.size(); s += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, target.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const Tensor logits = model.forward(target.batch(idx));
    const auto v = logits.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = v.subspan(i * k, k);
      const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      const int label = target.labels[idx[i]];
      ev.predictions.push_back(pred);
      ++total.at(static_cast<std::size_t>(label));
      if (pred == label) {
        ++correct;
        ++hit[static_cast<std::size_t>(label)];
      }
    }
  }
  ev.accuracy = target.size() ? 100.0 * static_cast<double>(correct) / static_cast<double>(target.size()) : 0.0;
  for (std::size_t c = 0; c < k; ++c)
    ev.per_class.push_back(total[c] ? 100.0 * static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0);
  return ev;
}

std::vector<std::string> Report::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

double Report::average(const std::string& method) const { return summary(method).mean; }

MethodSummary Report::summary(const std::string& method) const {
  MethodSummary s;
  s.method = method;
  double sum = 0.0;
  for (const auto& r : rows)
    if (r.method == method) {
      sum += r.accuracy;
      ++s.rows;
    }
  if (s.rows == 0) return s;
  s.mean = sum / static_cast<double>(s.rows);
  if (s.rows > 1) {
    double ss = 0.0;
    for (const auto& r : rows)
      if (r.method == method) ss += (r.accuracy - s.mean) * (r.accuracy - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.rows - 1));
  }
  return s;
}

namespace {
std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}
std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "task,method,seed,accuracy\n";
  for (const auto& r : rows) os << quoted(r.task) << ',' << quoted(r.method) << ',' << r.seed << ',' << fmt(r.accuracy) << '\n';
  for (const auto& m : methods()) {
    const auto s = summary(m);
    os << "average," << quoted(m) << ",," << fmt(s.mean) << '\n';
  }
  return os.str();
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back(
        {{"task", r.task}, {"method", r.method}, {"seed", r.seed}, {"accuracy", r.accuracy}, {"per_class", r.per_class}});
  j["averages"] = nlohmann::json::array();
  for (const auto& m : methods()) {
    const auto s = summary(m);
    j["averages"].push_back({{"method", m}, {"mean", s.mean}, {"sd", s.sd}, {"rows", s.rows}});
  }
  return j;
}

Report Report::from_json(const nlohmann::json& j) {
  Report r;
  for (const auto& row : j.at("rows")) {
    ReportRow rr;
    rr.task = row.at("task").get<std::string>();
    rr.method = row.at("method").get<std::string>();
    rr.seed = row.at("seed").get<std::uint64_t>();
    rr.accuracy = row.at("accuracy").get<double>();
    rr.per_class = row.value("per_class", std::vector<double>{});
    r.rows.push_back(std::move(rr));
  }
  return r;
}

std::string task_name(const std::vector<std::string>& sources, const std::string& target) {
  std::string s;
  for (std::size_t i = 0; i < sources.size(); ++i) s += (i ? "," : "") + sources[i];
  return s + " → " + target;
}

Report run_leave_one_out(const std::vector<SuiteDomain>& suite, const std::vector<MethodSpec>& methods,
                         const std::vector<std::uint64_t>& seeds, const LeaveOneOutOptions& options) {
  if (suite.size() < 2) throw std::invalid_argument("leave-one-out needs at least 2 domains");
  Report report;
  for (std::size_t t = 0; t < suite.size(); ++t) {
    std::vector<std::string> names;
    std::vector<DomainDataset> sources;
    for (std::size_t s = 0; s < suite.size(); ++s)
      if (s != t) {
        names.push_back(suite[s].train.domain);
        sources.push_back(suite[s].train);
      }
    DomainDataset target = suite[t].test;
    if (options.evaluate_full_target) {
      target = suite[t].train;
      target.images = ops::concat({suite[t].train.images, suite[t].test.images});
      target.labels.insert(target.labels.end(), suite[t].test.labels.begin(), suite[t].test.labels.end());
    }
    const std::string task = task_name(names, suite[t].train.domain);

    for (auto seed : seeds) {
      // One translator per (task, seed), trained on first use and shared by
      // every synthetic-protocol method of that cell.
      std::optional<TranslatorModel> translator;
      std::map<bool, std::vector<DomainDataset>> synthetic;
      auto synthetic_for = [&](bool include_self) -> const std::vector<DomainDataset>& {
        if (!translator) {
          TranslationConfig tcfg = options.translator;
          tcfg.seed = derive_seed(seed, 500 + t);
          translator.emplace(train_translator(sources, tcfg).model);
        }
        auto it = synthetic.find(include_self);
        if (it == synthetic.end()) {
          std::vector<DomainDataset> pool;
          for (const auto& src : sources) {
            std::vector<std::string> targets;
            for (const auto& d : names)
              if (d != src.domain || include_self) targets.push_back(d);
            for (auto& s : translate_dataset(*translator, src, targets)) pool.push_back(std::move(s));
          }
          it = synthetic.emplace(include_self, std::move(pool)).first;
        }
        return it->second;
      };

      for (const auto& m : methods) {
        ExperimentConfig cfg = m.config;
        cfg.sources = names;
        cfg.target = suite[t].train.domain;
        cfg.seed = seed;
        DgOptions dopt;
        if (const auto* sa = std::get_if<SyntheticAugmented>(&cfg.protocol); sa && cfg.lambda_d > 0.0)
          dopt.synthetic = &synthetic_for(sa->include_self);
        const auto res = train_dg(cfg, sources, nullptr, dopt);
        const auto ev = evaluate(res.model, target);
        ReportRow row{task, m.name, seed, ev.accuracy, ev.per_class};
        if (options.on_history) options.on_history(row, res.history);
        if (res.history.audit.violations != 0)
          throw std::logic_error("target provenance leaked into training for task " + task);
        if (options.on_row) options.on_row(row);
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

void save_dg_model(const std::filesystem::path& dir, const DGModel& model, const ExperimentConfig& cfg) {
  nlohmann::json meta = {{"kind", "dg_model"}, {"classifier", model.config()}, {"experiment", cfg},
                         {"protocol", protocol_name(cfg.protocol)}};
  save_checkpoint(dir, model.parameters(), meta);
}

DGModel load_dg_model(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.value("kind", std::string{}) != "dg_model")
    throw std::invalid_argument("'" + dir.string() + "' is not a DG model checkpoint");
  Rng rng(0);
  DGModel model(meta.at("classifier").get<ClassifierConfig>(), rng);
  load_checkpoint(dir, model.parameters());
  return model;
}

}  // namespace mdg
