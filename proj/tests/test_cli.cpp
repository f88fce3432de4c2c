#include <gtest/gtest.h>

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mdg/datagen.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Runs the CLI in `cwd`, capturing stdout and stderr.
Run cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" MDG_CLI_PATH "' " + args + " > cli.out 2> cli.err";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(cwd / "cli.out");
  r.err = slurp(cwd / "cli.err");
  return r;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

const std::vector<std::string> kDomains{"photo", "clipart", "sketch", "inverted-noisy"};

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new mdg::test::TempDir;
    const auto& dir = tmp_->path;
    ASSERT_EQ(cli(dir, "gen-data --suite standard --seed 0 --size 16 --channels 1 --out data").code, 0);
    for (const auto& target : kDomains) {
      std::string data_args, sources;
      for (const auto& d : kDomains) {
        if (d == target) continue;
        data_args += " data/" + d;
        sources += (sources.empty() ? "\"" : ",\"") + d + "\"";
      }
      const auto run = cli(dir, "train-translator --data" + data_args +
                                    " --epochs 2 --steps-per-epoch 6 --seed 0 --out tr-" + target);
      ASSERT_EQ(run.code, 0) << run.err;
      std::ofstream(dir / ("exp-" + target + ".json"))
          << R"({"sources":[)" << sources << R"(],"target":")" << target
          << R"(","protocol":{"type":"synthetic_augmented","translator_checkpoint":"tr-)" << target
          << R"("},"discrepancy":{"kind":"coral"},"lambda_d":1,"lr":0.01,"epochs":1,"batch_size":16,"feature_dim":16})";
      const auto dg = cli(dir, "train-dg --config exp-" + target + ".json --data data --out model-" + target);
      ASSERT_EQ(dg.code, 0) << dg.err;
      const auto ev = cli(dir, "evaluate --model model-" + target + " --target data/" + target + " --out runs/" + target);
      ASSERT_EQ(ev.code, 0) << ev.err;
    }
  }
  static void TearDownTestSuite() { delete tmp_; }

  static const fs::path& dir() { return tmp_->path; }
  static mdg::test::TempDir* tmp_;
};
mdg::test::TempDir* CliPipeline::tmp_ = nullptr;

}  // namespace

TEST_F(CliPipeline, GenDataWritesFourDomainsAndManifest) {
  for (const auto& d : kDomains) {
    EXPECT_TRUE(fs::exists(dir() / "data" / d / "images.mdgt")) << d;
    EXPECT_TRUE(fs::exists(dir() / "data" / d / "labels.mdgt")) << d;
  }
  const auto manifest = json::parse(slurp(dir() / "data" / "manifest.json"));
  ASSERT_EQ(manifest.at("stages").size(), 1u);
  const auto& stage = manifest.at("stages").at(0);
  EXPECT_EQ(stage.at("command"), "gen-data");
  EXPECT_EQ(stage.at("config_sha256"), sha256_hex(stage.at("config").dump()));
  EXPECT_EQ(stage.at("outputs").at("photo/images.mdgt"), sha256_hex(slurp(dir() / "data/photo/images.mdgt")));
}

TEST_F(CliPipeline, EndToEndReportHasFourTaskRows) {
  const auto csv = cli(dir(), "report --runs runs --format csv");
  ASSERT_EQ(csv.code, 0) << csv.err;
  std::istringstream lines(csv.out);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 6u) << csv.out;  // header, 4 tasks, 1 average
  EXPECT_EQ(rows.front(), "task,method,seed,accuracy");
  EXPECT_TRUE(rows.back().starts_with("average,sa-coral,,"));
  const auto js = cli(dir(), "report --runs runs --format json");
  ASSERT_EQ(js.code, 0);
  EXPECT_EQ(json::parse(js.out).at("rows").size(), 4u);
}

TEST_F(CliPipeline, ReportIsByteStable) {
  const auto a = cli(dir(), "report --runs runs --format csv --out rep-a");
  const auto b = cli(dir(), "report --runs runs --format csv --out rep-b");
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(dir() / "rep-a/report.csv"), slurp(dir() / "rep-b/report.csv"));
}

TEST_F(CliPipeline, ReproduceMatchesUnmodifiedOutputs) {
  for (const std::string m : {"data/manifest.json", "model-sketch/manifest.json", "tr-photo/manifest.json"}) {
    const auto r = cli(dir(), "reproduce " + m);
    EXPECT_EQ(r.code, 0) << m << ": " << r.err;
    EXPECT_EQ(json::parse(r.out).at("status"), "match");
  }
}

TEST_F(CliPipeline, ReproduceDetectsTamperedOutput) {
  ASSERT_EQ(cli(dir(), "gen-data --seed 3 --size 16 --channels 1 --out data3").code, 0);
  {
    std::ofstream f(dir() / "data3/photo/manifest.json", std::ios::app);
    f << " ";
  }
  const auto r = cli(dir(), "reproduce data3/manifest.json");
  EXPECT_EQ(r.code, 4);
  const auto err = json::parse(r.err).at("error");
  EXPECT_EQ(err.at("kind"), "hash_mismatch");
  EXPECT_EQ(err.at("details").at("files").at(0), "photo/manifest.json");
}

TEST_F(CliPipeline, TranslateWritesLabelledSyntheticDomain) {
  const auto r = cli(dir(), "translate --ckpt tr-inverted-noisy --src photo --dst sketch --data data/photo --out syn");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto meta = json::parse(slurp(dir() / "syn/photo-to-sketch/manifest.json"));
  EXPECT_EQ(meta.at("domain"), "sketch");
  EXPECT_EQ(meta.at("origin"), "photo");
  const auto syn = mdg::load_domain_dir(dir() / "syn/photo-to-sketch");
  const auto src = mdg::load_domain_dir(dir() / "data/photo");
  EXPECT_EQ(syn.train.labels, src.train.labels);
  EXPECT_EQ(syn.train.images.shape(), src.train.images.shape());
}

TEST_F(CliPipeline, ErrorsAreMachineReadable) {
  const auto missing = cli(dir(), "evaluate --model nowhere --target data/photo");
  EXPECT_EQ(missing.code, 3);
  EXPECT_EQ(json::parse(missing.err).at("error").at("kind"), "missing_input");

  const auto bad_flag = cli(dir(), "gen-data --out x --no-such-flag");
  EXPECT_EQ(bad_flag.code, 2);
  EXPECT_EQ(json::parse(bad_flag.err).at("error").at("kind"), "usage");

  const auto wrong_target = cli(dir(), "evaluate --model model-photo --target data/sketch");
  EXPECT_NE(wrong_target.code, 0);
  EXPECT_EQ(json::parse(wrong_target.err).at("error").at("kind"), "invalid_argument");
}
