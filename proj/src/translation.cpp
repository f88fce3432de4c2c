#include "mdg/translation.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <map>
#include <sstream>

#include "mdg/archive.hpp"

namespace mdg {

namespace {

double grad_mass(const ParamList& params) {
  double s = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) s += std::abs(g);
  }
  return s;
}

ParamList prefixed(const std::string& prefix, ParamList list) {
  for (auto& p : list) p.name = prefix + "." + p.name;
  return list;
}

void append(ParamList& dst, const ParamList& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

void TranslationConfig::validate() const {
  if (!(lambda_cyc > 0.0)) throw std::invalid_argument("lambda_cyc must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("translation lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("translation batch_size must be at least 1");
  if (epochs < 1) throw std::invalid_argument("translation epochs must be at least 1");
  if (decay_start >= epochs) throw std::invalid_argument("decay_start must be smaller than epochs");
  if (steps_per_epoch < 1) throw std::invalid_argument("steps_per_epoch must be at least 1");
}

void to_json(nlohmann::json& j, const TranslationConfig& c) {
  j = {{"lambda_cyc", c.lambda_cyc},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"decay_start", c.decay_start},
       {"steps_per_epoch", c.steps_per_epoch},
       {"adversarial_form", c.adversarial_form == AdversarialForm::LogLoss ? "log" : "least_squares"},
       {"schedule", c.schedule == PairSchedule::RoundRobin ? "round_robin" : "random"},
       {"n_res_blocks", c.n_res_blocks},
       {"base_channels", c.base_channels},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TranslationConfig& c) {
  c = TranslationConfig{};
  c.lambda_cyc = j.value("lambda_cyc", c.lambda_cyc);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.decay_start = j.value("decay_start", c.epochs / 2);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  const auto form = j.value("adversarial_form", std::string("least_squares"));
  if (form != "log" && form != "least_squares") throw std::invalid_argument("unknown adversarial_form '" + form + "'");
  c.adversarial_form = form == "log" ? AdversarialForm::LogLoss : AdversarialForm::LeastSquares;
  const auto sched = j.value("schedule", std::string("round_robin"));
  if (sched != "round_robin" && sched != "random") throw std::invalid_argument("unknown schedule '" + sched + "'");
  c.schedule = sched == "random" ? PairSchedule::Random : PairSchedule::RoundRobin;
  c.n_res_blocks = j.value("n_res_blocks", c.n_res_blocks);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

double translation_lr(const TranslationConfig& cfg, std::size_t epoch) {
  if (epoch < cfg.decay_start) return cfg.lr;
  if (epoch >= cfg.epochs) return 0.0;
  return cfg.lr * static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs - cfg.decay_start);
}

AdversarialLosses adversarial_losses(const Tensor& real_scores, const Tensor& fake_scores, AdversarialForm form) {
  if (real_scores.shape() != fake_scores.shape()) {
    throw ShapeError("adversarial_losses: score grids differ " + shape_str(real_scores.shape()) + " vs " +
                     shape_str(fake_scores.shape()));
  }
  if (form == AdversarialForm::LogLoss) {
    // −log σ(s) = softplus(−s); −log(1 − σ(s)) = softplus(s).
    Tensor d = ops::add(ops::mean(ops::softplus(ops::scale(real_scores, -1.0))), ops::mean(ops::softplus(fake_scores)));
    return {d, generator_adversarial_loss(fake_scores, form)};
  }
  Tensor d = ops::add(ops::mean(ops::square(ops::add_scalar(real_scores, -1.0))), ops::mean(ops::square(fake_scores)));
  return {d, generator_adversarial_loss(fake_scores, form)};
}

Tensor generator_adversarial_loss(const Tensor& fake_scores, AdversarialForm form) {
  if (form == AdversarialForm::LogLoss) return ops::mean(ops::softplus(ops::scale(fake_scores, -1.0)));
  return ops::mean(ops::square(ops::add_scalar(fake_scores, -1.0)));
}

Tensor cycle_loss(const Tensor& x, const Tensor& reconstructed) {
  if (x.shape() != reconstructed.shape()) {
    throw ShapeError("cycle_loss: shapes differ " + shape_str(x.shape()) + " vs " + shape_str(reconstructed.shape()));
  }
  return ops::scale(ops::l1_norm(ops::sub(reconstructed, x)), 1.0 / static_cast<double>(x.numel()));
}

Tensor full_objective(const ObjectiveTerms& terms) {
  return ops::add(ops::add(terms.gan_forward, terms.gan_backward), ops::scale(terms.cycle, terms.lambda_cyc));
}

TranslatorModel::TranslatorModel(std::vector<std::string> domains, const ImageSpec& spec, const TranslationConfig& cfg)
    : domains_(std::move(domains)), spec_(spec), cfg_(cfg) {
  if (domains_.size() < 2) throw std::invalid_argument("translator needs at least 2 domains");
  cfg_.validate();
  spec_.validate();
  Rng rng(derive_seed(cfg.seed, 0x7472616eULL));
  const GeneratorConfig gcfg{spec, cfg.n_res_blocks, cfg.base_channels};
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    encoders_.emplace_back(gcfg, rng);
    decoders_.emplace_back(gcfg, rng);
    discriminators_.emplace_back(spec, rng);
  }
}

std::size_t TranslatorModel::domain_index(const std::string& name) const {
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    if (domains_[i] == name) return i;
  }
  throw std::invalid_argument("unknown domain '" + name + "'");
}

Tensor TranslatorModel::translate(const Tensor& images, std::size_t src, std::size_t dst) const {
  return decoders_.at(dst).forward(encoders_.at(src).forward(images));
}

Tensor TranslatorModel::translate(const Tensor& images, const std::string& src, const std::string& dst) const {
  return translate(images, domain_index(src), domain_index(dst));
}

ParamList TranslatorModel::generator_parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    append(out, prefixed("encoder" + std::to_string(i), encoders_[i].parameters()));
    append(out, prefixed("decoder" + std::to_string(i), decoders_[i].parameters()));
  }
  return out;
}

ParamList TranslatorModel::discriminator_parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    append(out, prefixed("discriminator" + std::to_string(i), discriminators_[i].parameters()));
  }
  return out;
}

ParamList TranslatorModel::parameters() const {
  ParamList out = generator_parameters();
  append(out, discriminator_parameters());
  return out;
}

std::string TranslatorModel::checkpoint_id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parameters()) {
    for (double v : p.tensor.data()) {
      unsigned char bytes[8];
      std::memcpy(bytes, &v, 8);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void TranslatorModel::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["kind"] = "translator";
  meta["domains"] = domains_;
  meta["image"] = spec_;
  meta["config"] = cfg_;
  meta["checkpoint_id"] = checkpoint_id();
  save_checkpoint(dir, parameters(), meta);
}

TranslatorModel TranslatorModel::load(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.value("kind", std::string()) != "translator") throw IoError(dir.string() + " is not a translator checkpoint");
  TranslatorModel model(meta.at("domains").get<std::vector<std::string>>(), meta.at("image").get<ImageSpec>(),
                        meta.at("config").get<TranslationConfig>());
  load_checkpoint(dir, model.parameters());
  return model;
}

std::string TranslationHistory::to_csv(const std::vector<std::string>& domains) const {
  struct Acc {
    double d = 0, g = 0, c = 0;
    std::size_t n = 0;
  };
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, Acc> acc;
  for (const auto& s : steps) {
    auto& a = acc[{s.epoch, s.src, s.dst}];
    a.d += s.d_loss;
    a.g += s.gan_forward + s.gan_backward;
    a.c += s.cycle;
    ++a.n;
  }
  std::ostringstream os;
  os << "epoch,pair,d_loss,g_loss,cycle_loss\n";
  os << std::setprecision(10);
  for (const auto& [key, a] : acc) {
    const auto [e, i, j] = key;
    const double n = static_cast<double>(a.n);
    os << e << ',' << domains.at(i) << "->" << domains.at(j) << ',' << a.d / n << ',' << a.g / n << ',' << a.c / n
       << '\n';
  }
  return os.str();
}

TranslatorTrainer::TranslatorTrainer(TranslatorModel& model, std::vector<DomainDataset> datasets)
    : model_(model), datasets_(std::move(datasets)), rng_(derive_seed(model.config().seed, 0x747261696eULL)) {
  const std::size_t n = model_.domains().size();
  if (datasets_.size() != n) throw std::invalid_argument("one dataset per translator domain required");
  for (std::size_t i = 0; i < n; ++i) {
    if (datasets_[i].size() == 0) throw std::invalid_argument("empty dataset for domain " + model_.domains()[i]);
    if (!(datasets_[i].spec == model_.image_spec())) throw std::invalid_argument("inconsistent image spec");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) pairs_.emplace_back(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> idx(datasets_[i].size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    rng_.shuffle(idx);
    order_.push_back(std::move(idx));
    cursor_.push_back(0);
    const double lr = model_.config().lr;
    enc_opt_.emplace_back(model_.encoder(i).parameters(), lr);
    dec_opt_.emplace_back(model_.decoder(i).parameters(), lr);
    disc_opt_.emplace_back(model_.discriminator(i).parameters(), lr);
  }
}

std::pair<std::size_t, std::size_t> TranslatorTrainer::next_pair() {
  if (model_.config().schedule == PairSchedule::Random) return pairs_[rng_.below(pairs_.size())];
  const auto p = pairs_[pair_cursor_];
  pair_cursor_ = (pair_cursor_ + 1) % pairs_.size();
  return p;
}

Tensor TranslatorTrainer::sample(std::size_t domain) {
  std::vector<std::size_t> idx;
  auto& order = order_[domain];
  for (std::size_t b = 0; b < model_.config().batch_size; ++b) {
    if (cursor_[domain] == order.size()) {
      rng_.shuffle(order);
      cursor_[domain] = 0;
    }
    idx.push_back(order[cursor_[domain]++]);
  }
  return datasets_[domain].batch(idx);
}

TranslationStep TranslatorTrainer::step(std::size_t epoch) {
  const auto& cfg = model_.config();
  const auto [i, j] = next_pair();
  TranslationStep rec;
  rec.epoch = epoch;
  rec.src = i;
  rec.dst = j;
  rec.lr = translation_lr(cfg, epoch);
  for (auto* opts : {&enc_opt_, &dec_opt_, &disc_opt_}) {
    for (auto& o : *opts) o.set_lr(rec.lr);
  }

  const Tensor xi = sample(i);
  const Tensor xj = sample(j);
  const auto& enc_i = model_.encoder(i);
  const auto& enc_j = model_.encoder(j);
  const auto& dec_i = model_.decoder(i);
  const auto& dec_j = model_.decoder(j);
  const auto& disc_i = model_.discriminator(i);
  const auto& disc_j = model_.discriminator(j);
  const ParamList gen_params = [&] {
    ParamList p = enc_i.parameters();
    append(p, enc_j.parameters());
    append(p, dec_i.parameters());
    append(p, dec_j.parameters());
    return p;
  }();
  ParamList disc_params = disc_i.parameters();
  append(disc_params, disc_j.parameters());

  try {
    const Tensor fake_j = dec_j.forward(enc_i.forward(xi));
    const Tensor fake_i = dec_i.forward(enc_j.forward(xj));

    // Discriminator phase on detached fakes.
    zero_grads(gen_params);
    zero_grads(disc_params);
    const auto adv_j = adversarial_losses(disc_j.forward(xj), disc_j.forward(fake_j.detach()), cfg.adversarial_form);
    const auto adv_i = adversarial_losses(disc_i.forward(xi), disc_i.forward(fake_i.detach()), cfg.adversarial_form);
    const Tensor d_loss = ops::add(adv_j.d_loss, adv_i.d_loss);
    backward(d_loss);
    rec.d_loss = d_loss.item();
    rec.d_phase_generator_grad = grad_mass(gen_params);
    disc_opt_[i].step();
    disc_opt_[j].step();

    // Generator phase with the critics frozen.
    zero_grads(disc_params);
    set_requires_grad(disc_params, false);
    const Tensor rec_i = dec_i.forward(enc_j.forward(fake_j));
    const Tensor rec_j = dec_j.forward(enc_i.forward(fake_i));
    const ObjectiveTerms terms{
        generator_adversarial_loss(disc_j.forward(fake_j), cfg.adversarial_form),
        generator_adversarial_loss(disc_i.forward(fake_i), cfg.adversarial_form),
        ops::add(cycle_loss(xi, rec_i), cycle_loss(xj, rec_j)),
        cfg.lambda_cyc,
    };
    const Tensor total = full_objective(terms);
    backward(total);
    set_requires_grad(disc_params, true);
    rec.g_phase_discriminator_grad = grad_mass(disc_params);
    rec.gan_forward = terms.gan_forward.item();
    rec.gan_backward = terms.gan_backward.item();
    rec.cycle = terms.cycle.item();
    rec.total = total.item();
    enc_opt_[i].step();
    enc_opt_[j].step();
    dec_opt_[i].step();
    dec_opt_[j].step();
  } catch (const NumericError& e) {
    set_requires_grad(disc_params, true);
    throw NumericError("translator diverged at epoch " + std::to_string(epoch) + " on pair " + model_.domains()[i] +
                       "->" + model_.domains()[j] + ": " + e.what());
  }
  return rec;
}

TranslatorResult train_translator(const std::vector<DomainDataset>& datasets, const TranslationConfig& cfg) {
  cfg.validate();
  if (datasets.size() < 2) throw std::invalid_argument("train_translator needs at least 2 domains");
  std::vector<std::string> names;
  for (const auto& d : datasets) {
    if (d.size() == 0) throw std::invalid_argument("empty dataset for domain " + d.domain);
    names.push_back(d.domain);
  }
  TranslatorResult result{TranslatorModel(names, datasets.front().spec, cfg), {}};
  TranslatorTrainer trainer(result.model, datasets);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    TranslationEpoch ep;
    ep.epoch = e;
    ep.lr = translation_lr(cfg, e);
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const auto rec = trainer.step(e);
      ep.d_loss += rec.d_loss;
      ep.g_loss += rec.gan_forward + rec.gan_backward;
      ep.cycle += rec.cycle;
      result.history.steps.push_back(rec);
    }
    const double n = static_cast<double>(cfg.steps_per_epoch);
    ep.d_loss /= n;
    ep.g_loss /= n;
    ep.cycle /= n;
    if (!std::isfinite(ep.d_loss) || !std::isfinite(ep.g_loss) || !std::isfinite(ep.cycle)) {
      throw NumericError("translator diverged in epoch " + std::to_string(e));
    }
    result.history.epochs.push_back(ep);
  }
  return result;
}

std::vector<DomainDataset> translate_dataset(const TranslatorModel& model, const DomainDataset& dataset,
                                             const std::vector<std::string>& targets) {
  const std::size_t src = model.domain_index(dataset.domain);
  std::vector<std::size_t> dst_idx;
  for (const auto& t : targets) dst_idx.push_back(model.domain_index(t));
  const std::string ckpt = model.checkpoint_id();
  std::vector<DomainDataset> out;
  NoGradGuard guard;
  const std::size_t n = dataset.size(), per = dataset.spec.numel();
  constexpr std::size_t kChunk = 32;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    DomainDataset syn = dataset;
    syn.domain = targets[t];
    syn.provenance = "translated:" + dataset.domain + "->" + targets[t] + "@" + ckpt;
    std::vector<double> pixels;
    pixels.reserve(n * per);
    for (std::size_t start = 0; start < n; start += kChunk) {
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < std::min(n, start + kChunk); ++k) idx.push_back(k);
      const Tensor out_batch = model.translate(dataset.batch(idx), src, dst_idx[t]);
      pixels.insert(pixels.end(), out_batch.data().begin(), out_batch.data().end());
    }
    syn.images = Tensor::from_data(dataset.spec.batch_shape(n), std::move(pixels));
    out.push_back(std::move(syn));
  }
  return out;
}

}  // namespace mdg
