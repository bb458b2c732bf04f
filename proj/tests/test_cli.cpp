// Drives the avasd executable end to end. The binary path comes from the
// AVASD_CLI environment variable, set by ctest.

#include "avasd/report.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace avasd;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "avasd_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Result {
  int code;
  std::string err;
};

Result cli(const std::string& args) {
  const char* bin = std::getenv("AVASD_CLI");
  REQUIRE_MESSAGE(bin != nullptr, "AVASD_CLI is not set");
  const auto err = scratch() / "stderr.txt";
  const std::string cmd = std::string("\"") + bin + "\" " + args + " > /dev/null 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream text;
  text << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str()};
}

fs::path write(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<EvalRow> eval_rows(const fs::path& run) {
  const auto p = run / "reports" / "eval.csv";
  return parse_eval_csv(read(p), p.string());
}

const char* kTiny = R"([data]
train_samples = 40
test_samples = 20
[model]
epochs = 4
[attack]
eps_av = 0, 2, 5
modalities = visual, both
steps = 3
restarts = 1
archive_samples = 2
[eval]
correct_only = false
)";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gen --seed notanumber").code == 2);
  const auto bad = write("bad.ini", "[model]\nepochz = 3\n");
  const auto r = cli("gen --config " + bad.string() + " --out " + (scratch() / "bad").string());
  CHECK(r.code == 2);
  const auto err = nlohmann::json::parse(r.err);
  CHECK(err["error"] == "config");
  CHECK(err["exit_code"] == 2);
  CHECK(err["message"].get<std::string>().find("model.epochz") != std::string::npos);
}

TEST_CASE("missing inputs exit with 3") {
  CHECK(cli("gen --config " + (scratch() / "nope.ini").string()).code == 3);
  const auto cfg = write("tiny.ini", kTiny);
  const auto dir = scratch() / "no_checkpoint";
  CHECK(cli("gen --config " + cfg.string() + " --out " + dir.string()).code == 0);
  const auto r = cli("eval --config " + cfg.string() + " --out " + dir.string());
  CHECK(r.code == 3);
  CHECK(nlohmann::json::parse(r.err)["error"] == "missing-input");
  CHECK(cli("report " + (scratch() / "no_such_run").string() + " --out " +
              (scratch() / "rep0").string())
            .code == 3);
}

TEST_CASE("unreadable artifacts exit with 5") {
  const auto cfg = write("tiny.ini", kTiny);
  const auto dir = scratch() / "corrupt";
  REQUIRE(cli("gen --config " + cfg.string() + " --out " + dir.string()).code == 0);
  std::ofstream(dir / "data" / "train.jsonl") << "{\"format\":\"avasd-dataset\"\n";
  const auto r = cli("train --config " + cfg.string() + " --out " + dir.string());
  CHECK(r.code == 5);
  CHECK(nlohmann::json::parse(r.err)["error"] == "bad-input");
}

TEST_CASE("a run directory refuses a different experiment") {
  const auto cfg = write("tiny.ini", kTiny);
  const auto dir = scratch() / "guarded";
  REQUIRE(cli("gen --config " + cfg.string() + " --out " + dir.string()).code == 0);
  CHECK(cli("gen --config " + cfg.string() + " --out " + dir.string() + " --seed 5").code == 2);
  CHECK(cli("gen --config " + cfg.string() + " --out " + dir.string() + " --jobs 2").code == 0);
}

TEST_CASE("divergent training exits with 4") {
  std::string text = kTiny;
  text.replace(text.find("epochs = 4"), 10, "epochs = 4\nlearning_rate = 1e30\nmax_grad_norm = 0");
  const auto cfg = write("diverge.ini", text);
  const auto r = cli("run --config " + cfg.string() + " --out " + (scratch() / "div").string());
  CHECK(r.code == 4);
  CHECK(nlohmann::json::parse(r.err)["error"] == "diverged");
}

TEST_CASE("the full pipeline runs and is reproducible") {
  const auto cfg = write("tiny.ini", kTiny);
  const auto a = scratch() / "run_a";
  const auto b = scratch() / "run_b";
  REQUIRE(cli("run --config " + cfg.string() + " --out " + a.string()).code == 0);
  REQUIRE(cli("run --config " + cfg.string() + " --out " + b.string() + " --jobs 2").code == 0);
  for (const auto* f : {"data/train.jsonl", "data/test.jsonl", "checkpoint.bin", "loss_curve.csv",
                        "reports/eval.csv", "attacks/pgd_training-aware_both_eps5.jsonl"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(read(a / f) == read(b / f));
  }
  const auto rows = eval_rows(a);
  CHECK(rows.size() == 1 + 2 * 3);
  CHECK(rows[0].attack_method == "none");
  for (const auto& r : rows) {
    CHECK(r.map >= 0.0);
    CHECK(r.map <= 1.0);
  }
  const auto resolved = read(a / "config.resolved");
  CHECK(resolved.find("train_samples = 40") != std::string::npos);
  CHECK(resolved.find("[substitute]") != std::string::npos);

  const auto rep = scratch() / "report";
  REQUIRE(cli("report " + a.string() + " " + b.string() + " --out " + rep.string()).code == 0);
  CHECK(fs::exists(rep / "report.md"));
  const auto svg = read(rep / "map_vs_eps.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("an untrained model scores near the positive rate") {
  std::string text = kTiny;
  text.replace(text.find("epochs = 4"), 10, "epochs = 0");
  text.replace(text.find("test_samples = 20"), 17, "test_samples = 200");
  const auto cfg = write("untrained.ini", text);
  const auto dir = scratch() / "untrained";
  REQUIRE(cli("run --config " + cfg.string() + " --out " + dir.string()).code == 0);
  const auto rows = eval_rows(dir);
  double pos = 0, total = 0;
  std::ifstream in(dir / "data" / "test.jsonl");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto rec = nlohmann::json::parse(line);
    for (int y : rec["labels"]) {
      pos += y;
      total += 1;
    }
  }
  const double rate = pos / total;
  CHECK(rows[0].map > rate - 0.1);
  CHECK(rows[0].map < rate + 0.2);
}
