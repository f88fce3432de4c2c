// mdg: data generation, translation, DG training, evaluation and reporting.
// Every stage that writes an output directory leaves a manifest.json there
// describing how to replay it; `reproduce` replays it and compares hashes.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdg/archive.hpp"
#include "mdg/dg.hpp"

#ifndef MDG_VERSION
#define MDG_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdg;

namespace {

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct HashMismatch : std::runtime_error {
  json details;
  HashMismatch(const std::string& msg, json d) : std::runtime_error(msg), details(std::move(d)) {}
};

std::string hex(const unsigned char* p, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
  return os.str();
}

std::string sha256(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  return hex(md, len);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInput("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw MissingInput("input path '" + p.string() + "' does not exist");
}

// Relative path -> SHA-256 for every file under `dir` except the root manifest.
json hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) {
    if (f == "manifest.json") continue;
    out[f.generic_string()] = sha256(read_file(dir / f));
  }
  return out;
}

// Accepts either a checkpoint directory or a stage directory holding one.
fs::path resolve_checkpoint(const fs::path& dir) {
  require_exists(dir);
  if (fs::exists(dir / "checkpoint" / "manifest.json")) return dir / "checkpoint";
  return dir;
}

// Accepts a domain directory or a stage directory with exactly one domain in it.
fs::path resolve_domain(const fs::path& dir) {
  require_exists(dir);
  if (fs::exists(dir / "images.mdgt")) return dir;
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "images.mdgt")) found.push_back(e.path());
  if (found.size() != 1) throw MissingInput("'" + dir.string() + "' does not hold exactly one domain directory");
  return found.front();
}

struct Stage {
  std::string command;
  std::vector<std::string> argv;
  json config;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void finish(const fs::path& out) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string config_bytes = config.dump();
    json record = {{"command", command},
                   {"argv", argv},
                   {"cwd", fs::current_path().string()},
                   {"config", config},
                   {"config_sha256", sha256(config_bytes)},
                   {"inputs", inputs},
                   {"outputs", hash_tree(out)},
                   {"seed", seed},
                   {"wall_seconds", wall}};
    json manifest = {{"tool", "mdg"}, {"version", MDG_VERSION}, {"stages", json::array({record})}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
  }
};

AdversarialForm parse_form(const std::string& s) {
  if (s == "ls") return AdversarialForm::LeastSquares;
  if (s == "log") return AdversarialForm::LogLoss;
  throw std::invalid_argument("unknown adversarial form '" + s + "'");
}

std::string default_method(const ExperimentConfig& cfg) {
  if (cfg.lambda_d == 0.0) return "baseline";
  const std::string metric = cfg.discrepancy.kind == DiscrepancyKind::MMD ? "mmd" : "coral";
  return (std::holds_alternative<SplitSeventyThirty>(cfg.protocol) ? "split-" : "sa-") + metric;
}

DomainDataset full_target(const LoadedDomain& d) {
  if (d.test.size() == 0) return d.train;
  DomainDataset out = d.train;
  out.images = ops::concat({d.train.images, d.test.images});
  out.labels.insert(out.labels.end(), d.test.labels.begin(), d.test.labels.end());
  return out;
}

std::string history_csv(const DgHistory& h) {
  std::ostringstream os;
  os << std::setprecision(10) << "epoch,l_c,l_d,l_t\n";
  for (const auto& e : h.epochs) os << e.epoch << ',' << e.l_c << ',' << e.l_d << ',' << e.l_t << '\n';
  return os.str();
}

struct Options {
  // gen-data
  std::string suite = "standard";
  std::size_t size = 32, channels = 3;
  // shared
  std::uint64_t seed = 0;
  std::string out;
  // train-translator
  std::vector<std::string> data_dirs;
  TranslationConfig tcfg;
  std::string form = "ls";
  // translate
  std::string ckpt, src, dst, data;
  // train-dg / evaluate
  std::string config, method, model, target;
  std::optional<std::uint64_t> dg_seed;
  bool decay_given = false;
  // report
  std::string runs, format = "csv";
  // reproduce
  std::string manifest;
};

int run(const std::vector<std::string>& args);

void cmd_gen_data(const Options& o, Stage& st) {
  if (o.suite != "standard") throw std::invalid_argument("unknown suite '" + o.suite + "'");
  const ImageSpec spec{o.channels, o.size};
  spec.validate();
  st.config = {{"suite", o.suite}, {"image", spec}};
  const fs::path out(o.out);
  fs::create_directories(out);
  for (const auto& d : standard_suite(o.seed, spec))
    save_domain_dir(out / d.train.domain, d.train, &d.test, {{"style", d.style}});
  st.finish(out);
}

void cmd_train_translator(const Options& o, Stage& st) {
  std::vector<DomainDataset> domains;
  for (const auto& d : o.data_dirs) {
    st.inputs.push_back(d);
    domains.push_back(load_domain_dir(resolve_domain(d)).train);
  }
  TranslationConfig cfg = o.tcfg;
  cfg.seed = o.seed;
  cfg.adversarial_form = parse_form(o.form);
  if (!o.decay_given) cfg.decay_start = cfg.epochs / 2;
  st.config = cfg;
  auto result = train_translator(domains, cfg);
  const fs::path out(o.out);
  result.model.save(out / "checkpoint");
  write_file(out / "history.csv", result.history.to_csv(result.model.domains()));
  st.finish(out);
}

void cmd_translate(const Options& o, Stage& st) {
  st.inputs = {o.ckpt, o.data};
  const auto model = TranslatorModel::load(resolve_checkpoint(o.ckpt));
  const auto source = load_domain_dir(resolve_domain(o.data)).train;
  if (source.domain != o.src)
    throw std::invalid_argument("data directory holds domain '" + source.domain + "', expected '" + o.src + "'");
  st.config = {{"src", o.src}, {"dst", o.dst}, {"checkpoint_id", model.checkpoint_id()}};
  const auto syn = translate_dataset(model, source, {o.dst});
  const fs::path out(o.out);
  save_domain_dir(out / (o.src + "-to-" + o.dst), syn.front(), nullptr,
                  {{"provenance", syn.front().provenance}, {"origin", syn.front().origin}});
  st.finish(out);
}

void cmd_train_dg(const Options& o, Stage& st) {
  require_exists(o.config);
  st.inputs = {o.config, o.data};
  auto cfg = json::parse(read_file(o.config)).get<ExperimentConfig>();
  if (o.dg_seed) cfg.seed = *o.dg_seed;
  cfg.validate();
  st.seed = cfg.seed;
  std::vector<DomainDataset> sources;
  for (const auto& name : cfg.sources) sources.push_back(load_domain_dir(resolve_domain(fs::path(o.data) / name)).train);
  std::optional<TranslatorModel> translator;
  if (auto* sa = std::get_if<SyntheticAugmented>(&cfg.protocol); sa && cfg.lambda_d > 0.0) {
    if (sa->translator_checkpoint.empty()) throw std::invalid_argument("config names no translator_checkpoint");
    st.inputs.push_back(sa->translator_checkpoint);
    translator.emplace(TranslatorModel::load(resolve_checkpoint(sa->translator_checkpoint)));
  }
  const std::string method = o.method.empty() ? default_method(cfg) : o.method;
  st.config = {{"experiment", cfg}, {"method", method}};
  auto result = train_dg(cfg, sources, translator ? &*translator : nullptr);
  if (result.history.audit.violations != 0)
    throw std::logic_error("provenance audit found " + std::to_string(result.history.audit.violations) +
                           " target-domain samples in training batches");
  const fs::path out(o.out);
  save_dg_model(out / "checkpoint", result.model, cfg);
  write_file(out / "method.txt", method + "\n");
  write_file(out / "history.csv", history_csv(result.history));
  write_file(out / "audit.json", json({{"samples_checked", result.history.audit.samples_checked},
                                       {"violations", result.history.audit.violations}})
                                         .dump(2) + "\n");
  st.finish(out);
}

void cmd_evaluate(const Options& o, Stage& st) {
  st.inputs = {o.model, o.target};
  const fs::path ckpt = resolve_checkpoint(o.model);
  const auto meta = read_checkpoint_meta(ckpt);
  const auto cfg = meta.at("experiment").get<ExperimentConfig>();
  const auto model = load_dg_model(ckpt);
  const auto loaded = load_domain_dir(resolve_domain(o.target));
  if (loaded.train.domain != cfg.target)
    throw std::invalid_argument("model was trained for target '" + cfg.target + "', got '" + loaded.train.domain + "'");
  std::string method = default_method(cfg);
  if (fs::exists(fs::path(o.model) / "method.txt")) {
    method = read_file(fs::path(o.model) / "method.txt");
    method.erase(method.find_last_not_of("\n") + 1);
  }
  const auto ev = evaluate(model, full_target(loaded));
  Report r;
  r.rows.push_back({task_name(cfg.sources, cfg.target), method, cfg.seed, ev.accuracy, ev.per_class});
  const json row = r.to_json().at("rows").at(0);
  st.config = {{"task", r.rows[0].task}, {"method", method}};
  st.seed = cfg.seed;
  if (o.out.empty()) {
    std::cout << row.dump(2) << '\n';
    return;
  }
  const fs::path out(o.out);
  write_file(out / "result.json", row.dump(2) + "\n");
  st.finish(out);
}

void cmd_report(const Options& o, Stage& st) {
  require_exists(o.runs);
  st.inputs = {o.runs};
  if (o.format != "csv" && o.format != "json") throw std::invalid_argument("format must be csv or json");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(o.runs))
    if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingInput("no result.json files under '" + o.runs + "'");
  json rows = json::array();
  for (const auto& f : files) rows.push_back(json::parse(read_file(f)));
  const Report report = Report::from_json({{"rows", rows}});
  const std::string text = o.format == "csv" ? report.to_csv() : report.to_json().dump(2) + "\n";
  st.config = {{"format", o.format}, {"runs", files.size()}};
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  const fs::path out(o.out);
  write_file(out / ("report." + o.format), text);
  st.finish(out);
}

void cmd_reproduce(const Options& o) {
  const json manifest = json::parse(read_file(o.manifest));
  const fs::path home = fs::absolute(o.manifest).parent_path();
  json mismatches = json::array();
  auto compare = [&](const json& want, const json& got, const std::string& where) {
    for (const auto& [file, hash] : want.items())
      if (!got.contains(file) || got.at(file) != hash) mismatches.push_back(where + file);
    for (const auto& [file, hash] : got.items())
      if (!want.contains(file)) mismatches.push_back(where + file);
  };
  for (const auto& rec : manifest.at("stages")) {
    // The outputs on disk must still be the ones recorded...
    compare(rec.at("outputs"), hash_tree(home), "");
    auto argv = rec.at("argv").get<std::vector<std::string>>();
    const auto replay = fs::temp_directory_path() / ("mdg-replay-" + rec.at("config_sha256").get<std::string>().substr(0, 16));
    fs::remove_all(replay);
    auto it = std::find(argv.begin(), argv.end(), "--out");
    if (it == argv.end() || std::next(it) == argv.end()) throw std::invalid_argument("stage record has no --out");
    *std::next(it) = replay.string();

    const fs::path here = fs::current_path();
    fs::current_path(rec.at("cwd").get<std::string>());
    const int rc = run(argv);
    fs::current_path(here);
    if (rc != 0) throw std::runtime_error("replay of '" + rec.at("command").get<std::string>() + "' failed");

    // ...and replaying the stage must produce them again.
    compare(rec.at("outputs"), hash_tree(replay), "replay:");
    const json replayed = json::parse(read_file(replay / "manifest.json")).at("stages").at(0);
    if (replayed.at("config_sha256") != rec.at("config_sha256")) mismatches.push_back("<config>");
    fs::remove_all(replay);
  }
  if (!mismatches.empty()) throw HashMismatch("replayed outputs differ from the manifest", {{"files", mismatches}});
  std::cout << json({{"status", "match"}, {"stages", manifest.at("stages").size()}}).dump() << '\n';
}

void print_error(const std::string& kind, const std::string& command, const std::string& message,
                 const json& details = nullptr) {
  json err = {{"kind", kind}, {"command", command}, {"message", message}};
  if (!details.is_null()) err["details"] = details;
  std::cerr << json({{"error", err}}).dump() << '\n';
}

int run(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"Synthetic-data domain generalization toolkit", "mdg"};
  app.set_version_flag("--version", MDG_VERSION);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Render the four-domain synthetic suite");
  gen->add_option("--suite", o.suite, "Suite name")->capture_default_str();
  gen->add_option("--seed", o.seed, "Seed")->capture_default_str();
  gen->add_option("--size", o.size, "Image side (16, 32 or 64)")->capture_default_str();
  gen->add_option("--channels", o.channels, "Image channels (1 or 3)")->capture_default_str();
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* tt = app.add_subcommand("train-translator", "Train the multi-domain translator");
  tt->add_option("--data", o.data_dirs, "Domain directories")->required()->expected(2, 64);
  tt->add_option("--epochs", o.tcfg.epochs, "Epochs")->capture_default_str();
  tt->add_option("--steps-per-epoch", o.tcfg.steps_per_epoch, "Pair updates per epoch")->capture_default_str();
  auto* decay = tt->add_option("--decay-start", o.tcfg.decay_start, "First epoch of linear lr decay (default: epochs/2)");
  tt->add_option("--lambda-cyc", o.tcfg.lambda_cyc, "Cycle loss weight")->capture_default_str();
  tt->add_option("--lr", o.tcfg.lr, "Adam learning rate")->capture_default_str();
  tt->add_option("--adversarial", o.form, "Adversarial loss: ls or log")->capture_default_str();
  tt->add_option("--seed", o.seed, "Seed")->capture_default_str();
  tt->add_option("--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("translate", "Translate a domain into another domain's style");
  tr->add_option("--ckpt", o.ckpt, "Translator checkpoint")->required();
  tr->add_option("--src", o.src, "Source domain")->required();
  tr->add_option("--dst", o.dst, "Destination domain")->required();
  tr->add_option("--data", o.data, "Source domain directory")->required();
  tr->add_option("--out", o.out, "Output directory")->required();

  auto* dg = app.add_subcommand("train-dg", "Train a domain-generalized classifier");
  dg->add_option("--config", o.config, "Experiment JSON")->required();
  dg->add_option("--data", o.data, "Directory holding one subdirectory per domain")->required();
  dg->add_option("--method", o.method, "Method label used in reports");
  dg->add_option("--seed", o.dg_seed, "Seed (default: the config's)");
  dg->add_option("--out", o.out, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Accuracy of a trained model on its held-out domain");
  ev->add_option("--model", o.model, "train-dg output directory")->required();
  ev->add_option("--target", o.target, "Target domain directory")->required();
  ev->add_option("--out", o.out, "Output directory (default: print to stdout)");

  auto* rp = app.add_subcommand("report", "Collect evaluation results into one table");
  rp->add_option("--runs", o.runs, "Directory searched for result.json files")->required();
  rp->add_option("--format", o.format, "csv or json")->capture_default_str();
  rp->add_option("--out", o.out, "Output directory (default: print to stdout)");

  auto* re = app.add_subcommand("reproduce", "Replay a manifest and verify output hashes");
  re->add_option("manifest", o.manifest, "manifest.json")->required();

  std::vector<const char*> cargv{"mdg"};
  for (const auto& a : args) cargv.push_back(a.c_str());
  const std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", command, e.what());
    return 2;
  }

  o.decay_given = decay->count() > 0;
  Stage st;
  st.argv = args;
  st.seed = o.seed;
  try {
    if (*gen) {
      st.command = "gen-data";
      cmd_gen_data(o, st);
    } else if (*tt) {
      st.command = "train-translator";
      cmd_train_translator(o, st);
    } else if (*tr) {
      st.command = "translate";
      cmd_translate(o, st);
    } else if (*dg) {
      st.command = "train-dg";
      cmd_train_dg(o, st);
    } else if (*ev) {
      st.command = "evaluate";
      cmd_evaluate(o, st);
    } else if (*rp) {
      st.command = "report";
      cmd_report(o, st);
    } else if (*re) {
      cmd_reproduce(o);
    }
  } catch (const MissingInput& e) {
    print_error("missing_input", command, e.what());
    return 3;
  } catch (const HashMismatch& e) {
    print_error("hash_mismatch", command, e.what(), e.details);
    return 4;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", command, e.what());
    return 5;
  } catch (const NumericError& e) {
    print_error("numeric", command, e.what());
    return 6;
  } catch (const std::exception& e) {
    // Filesystem and archive errors on inputs surface here too.
    print_error("runtime", command, e.what());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
