// Drives the scas executable end to end on tiny problems.
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "scas_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string("cd ") + workdir().string() + " && SCAS_LOG_LEVEL=error " +
                          SCAS_BIN + " " + args + " > last.out 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  out << s;
}

// Small problem so full train runs take well under a second.
const char* kTiny = R"({"dataset": {"n_transitions": 600},
  "dynamics": {"hidden": 8, "depth": 2},
  "agent": {"hidden": 8, "batch": 16, "n_critics": 2},
  "eval": {"every": 20, "episodes": 2}, "log_every": 10})";

void ensure_dataset() {
  if (fs::exists(workdir() / "d.jsonl")) return;
  spit(workdir() / "tiny.json", kTiny);
  REQUIRE(run("--config tiny.json --seed 3 gen-data --out d.jsonl") == 0);
}

std::string dir_bytes(const fs::path& dir) {
  std::string all;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) all += f.filename().string() + ":" + slurp(f) + "\n";
  return all;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen-data --out x.jsonl") == 1);  // no seed
  spit(workdir() / "unknown.json", R"({"agent": {"alpha": 1, "alhpa": 2}})");
  CHECK(run("--config unknown.json --seed 1 gen-data --out x.jsonl") == 1);
  spit(workdir() / "broken.json", "{not json");
  CHECK(run("--config broken.json --seed 1 gen-data --out x.jsonl") == 1);
}

TEST_CASE("IO errors exit 3") {
  CHECK(run("--config missing.json --seed 1 gen-data --out x.jsonl") == 3);
  CHECK(run("--seed 1 train --dataset missing.jsonl --out r") == 3);
  CHECK(run("eval no_such_bundle") == 3);
}

TEST_CASE("gen-data is reproducible and hole-free") {
  spit(workdir() / "tiny.json", kTiny);
  REQUIRE(run("--config tiny.json --seed 3 gen-data --out a.jsonl") == 0);
  CHECK(slurp(workdir() / "last.out").find("retained in-hole states 0") != std::string::npos);
  REQUIRE(run("--config tiny.json --seed 3 gen-data --out b.jsonl") == 0);
  CHECK(slurp(workdir() / "a.jsonl") == slurp(workdir() / "b.jsonl"));
  REQUIRE(run("--config tiny.json --seed 4 gen-data --out c.jsonl") == 0);
  CHECK(slurp(workdir() / "a.jsonl") != slurp(workdir() / "c.jsonl"));
}

TEST_CASE("zero-step training writes the initialization and a bare CSV") {
  ensure_dataset();
  REQUIRE(run("--config tiny.json --seed 1 train --dataset d.jsonl --out z --steps 0 "
              "--dynamics-steps 0") == 0);
  CHECK(slurp(workdir() / "z" / "metrics.csv") ==
        "step,critic_loss,policy_objective,mean_q,max_weight,eval_return,eval_steps_out_of_ood\n");
  const auto manifest = nlohmann::json::parse(slurp(workdir() / "z" / "manifest.json"));
  CHECK(manifest["step"] == 0);
  CHECK(fs::exists(workdir() / "z" / "actor.ckpt"));
  CHECK(fs::exists(workdir() / "z" / "dynamics.ckpt"));
}

TEST_CASE("training is byte-reproducible and sweeps match plain training") {
  ensure_dataset();
  const std::string common = "--dataset d.jsonl --steps 40 --dynamics-steps 30";
  REQUIRE(run("--config tiny.json --seed 5 train " + common + " --out t1") == 0);
  REQUIRE(run("--config tiny.json --seed 5 train " + common + " --out t2") == 0);
  CHECK(dir_bytes(workdir() / "t1") == dir_bytes(workdir() / "t2"));
  const auto csv = slurp(workdir() / "t1" / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  REQUIRE(run("--config tiny.json --seed 5 sweep " + common +
              " --param alpha --values 5 --out sw") == 0);
  CHECK(slurp(workdir() / "sw" / "alpha_5" / "seed_5" / "metrics.csv") == csv);
  CHECK(fs::exists(workdir() / "sw" / "combined.csv"));

  CHECK(run("--config tiny.json --seed 5 sweep " + common + " --param alpha --values '' --out sw2") == 1);
  CHECK(run("--config tiny.json --seed 5 sweep " + common + " --param gamma --values 1 --out sw2") == 1);
}

TEST_CASE("behavior cloning mode trains without a dynamics model") {
  ensure_dataset();
  REQUIRE(run("--config tiny.json --seed 2 train --dataset d.jsonl --steps 20 --mode bc --out bc") == 0);
  CHECK(fs::exists(workdir() / "bc" / "actor.ckpt"));
  CHECK(run("--config tiny.json --seed 2 train --dataset d.jsonl --steps 20 --mode xx --out bc") == 1);
}

TEST_CASE("eval: empty runs, zero perturbation and reports") {
  ensure_dataset();
  REQUIRE(run("--config tiny.json --seed 1 train --dataset d.jsonl --out e --steps 20 "
              "--dynamics-steps 20") == 0);
  REQUIRE(run("--out r0.json eval e --episodes 0") == 0);
  const auto r0 = nlohmann::json::parse(slurp(workdir() / "r0.json"));
  CHECK(r0["seeds"][0]["episodes"].empty());
  CHECK(r0["aggregate"]["episodes"] == 0);

  REQUIRE(run("--seed 7 --out ra.json eval e --mode ood_hole --episodes 4") == 0);
  REQUIRE(run("--seed 7 --out rb.json eval e --mode ood_hole --episodes 4 --perturb-steps 0") == 0);
  auto ra = nlohmann::json::parse(slurp(workdir() / "ra.json"));
  auto rb = nlohmann::json::parse(slurp(workdir() / "rb.json"));
  CHECK(ra["seeds"][0]["episodes"] == rb["seeds"][0]["episodes"]);
  CHECK(ra["seeds"][0]["episodes"].size() == 4);

  REQUIRE(run("--seed 7 --out rc.json eval e --mode ood_hole --episodes 3 --seeds 2 --perturb-steps 10") == 0);
  const auto rc = nlohmann::json::parse(slurp(workdir() / "rc.json"));
  CHECK(rc["aggregate"]["episodes"] == 6);
  CHECK(rc["seeds"][1]["seed"] == 8);
  CHECK(run("eval e --mode sideways") == 1);
  CHECK(run("eval e --perturb-steps 500") == 1);
}

TEST_CASE("verify exit codes") {
  CHECK(run("--seed 1 verify --instances 5") == 0);
  const auto out = slurp(workdir() / "last.out");
  const auto summary = nlohmann::json::parse(out.substr(out.rfind('{')));
  CHECK(summary["passed"] == true);
  CHECK(run("--seed 1 verify --instances 5 --stochastic") == 0);
  CHECK(run("--seed 1 verify --states 20") == 1);
}
