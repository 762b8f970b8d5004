#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "diffstack/checkpoint.hpp"
#include "diffstack/dataset.hpp"
#include "diffstack/eval.hpp"

using namespace diffstack;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "diffstack-cli-test";

int cli(const std::string& args) {
  const std::string cmd = "DIFFSTACK_OUT=" + kRoot.string() + " " + DIFFSTACK_CLI + " " + args + " > " +
                          (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE("gen writes the same files twice and rejects unknown grammars") {
  Fresh f;
  const fs::path a = kRoot / "a", b = kRoot / "b";
  REQUIRE(cli("gen --grammar d2 --seed 7 --scale 0.02 --out " + a.string()) == 0);
  REQUIRE(cli("gen --grammar d2 --seed 7 --scale 0.02 --out " + b.string()) == 0);
  for (const char* name : {"train.txt", "valid.txt", "test.txt", "long_test.txt", "train.meta"}) {
    CHECK(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
  }
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(cli("gen --grammar d9 --out " + (kRoot / "c").string()) == 1);
  CHECK(cli("frobnicate") == 1);
}

TEST_CASE("train, eval and inspect") {
  Fresh f;
  const fs::path data = kRoot / "data", run = kRoot / "run";
  REQUIRE(cli("gen --grammar d2 --seed 3 --scale 0.02 --out " + data.string()) == 0);
  REQUIRE(cli("train --family diffstk-rnn --data " + data.string() + " --trials 1 --epochs 2 --seed 4 --out " +
              run.string()) == 0);
  const fs::path ckpt = run / "trial-0" / "best.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(run / "results.csv"));

  REQUIRE(cli("eval --checkpoint " + ckpt.string() + " --data " + data.string() +
              " --split test --split valid --long --trace 0 --out " + (kRoot / "ev").string()) == 0);
  std::ifstream csv(kRoot / "ev" / "eval.csv");
  std::vector<EvalResult> got = read_eval_csv(csv);
  REQUIRE(got.size() == 2);
  const Checkpoint ck = load_checkpoint(ckpt);
  const Benchmark b = read_benchmark(data);
  CHECK(got[0] == evaluate_split(ck.model, b.split("test")));
  CHECK(got[1] == evaluate_split(ck.model, b.split("valid")));
  CHECK(fs::exists(kRoot / "ev" / "long.csv"));
  CHECK(fs::exists(kRoot / "ev" / "stack_trace_test_0.csv"));

  CHECK(cli("inspect " + ckpt.string()) == 0);

  const fs::path d6 = kRoot / "d6";
  REQUIRE(cli("gen --grammar d6 --seed 3 --scale 0.01 --out " + d6.string()) == 0);
  CHECK(cli("eval --checkpoint " + ckpt.string() + " --data " + d6.string() + " --split test") == 1);
  CHECK(slurp(kRoot / "last.log").find("symbols") != std::string::npos);

  CHECK(cli("train --family nope --data " + data.string()) == 1);
  CHECK(cli("repro table9") == 1);
}
