#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "helpers.hpp"

using adamix::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ADAMIX_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tiny_config(const fs::path& path, const std::string& data_dir = "") {
  nlohmann::json j = {
      {"schema_version", 1},
      {"dataset", {{"n_train", 8}, {"n_val", 2}, {"n_test", 2}, {"labeled_fraction", 0.25}, {"image_size", 32}}},
      {"paradigm", {{"S", 8}, {"K", 4}}},
      {"model", {{"base_width", 4}}},
      {"schedule", {{"epochs", 1}, {"labeled_batch", 2}, {"unlabeled_batch", 2}}},
  };
  if (!data_dir.empty()) j["data_dir"] = data_dir;
  std::ofstream(path) << j.dump(2);
}

}  // namespace

TEST_CASE("gen-data, train, eval, compare, plot") {
  TempDir tmp("cli");
  const fs::path cfg = tmp / "cfg.json";
  write_tiny_config(cfg);
  const fs::path log = tmp / "log.txt";

  REQUIRE(run("gen-data --config " + cfg.string() + " --out " + (tmp / "data").string(), log) == 0);
  CHECK(fs::exists(tmp / "data" / "manifest.json"));

  const fs::path cfg_disk = tmp / "cfg_disk.json";
  write_tiny_config(cfg_disk, (tmp / "data").string());
  REQUIRE(run("train --config " + cfg_disk.string() + " --strategy umix --paradigm mean_teacher --seed 4 --out " +
                  (tmp / "run").string(),
              log) == 0);
  CHECK(slurp(log).find("test: dsc") != std::string::npos);
  const nlohmann::json saved = nlohmann::json::parse(slurp(tmp / "run" / "config.json"));
  CHECK(saved["paradigm"]["strategy"] == "umix");
  CHECK(saved["paradigm"]["paradigm"] == "mean_teacher");
  CHECK(saved["seed"] == 4);
  CHECK(fs::exists(tmp / "run" / "checkpoints" / "teacher.ckpt"));

  // replay from the saved config alone
  REQUIRE(run("train --config " + (tmp / "run" / "config.json").string() + " --out " + (tmp / "replay").string(), log) ==
          0);
  CHECK(slurp(tmp / "run" / "steplog.csv") == slurp(tmp / "replay" / "steplog.csv"));

  REQUIRE(run("eval " + (tmp / "run").string() + " --split val", log) == 0);
  CHECK(slurp(log).find("val: dsc") != std::string::npos);
  CHECK(fs::exists(tmp / "run" / "eval_val.csv"));

  REQUIRE(run("compare --config " + cfg.string() + " --strategy cutmix --strategy adamix --seed 0 --seed 1 --out " +
                  (tmp / "cmp").string(),
              log) == 0);
  CHECK(slurp(log).find("adamix") != std::string::npos);
  int runs = 0;
  for (const auto& e : fs::directory_iterator(tmp / "cmp" / "runs")) runs += e.is_directory();
  CHECK(runs == 4);

  REQUIRE(run("plot " + (tmp / "cmp").string() + " --out " + (tmp / "plots").string(), log) == 0);
  CHECK(fs::exists(tmp / "plots" / "loss_unsup.svg"));
  CHECK(fs::exists(tmp / "plots" / "loss_val.svg"));
  CHECK(fs::exists(tmp / "plots" / "dsc_val.svg"));
}

TEST_CASE("errors exit non-zero with a message") {
  TempDir tmp("cli_err");
  const fs::path log = tmp / "log.txt";
  const fs::path cfg = tmp / "cfg.json";
  write_tiny_config(cfg);

  CHECK(run("", log) != 0);
  CHECK(run("frobnicate", log) != 0);

  fs::create_directories(tmp / "full");
  std::ofstream(tmp / "full" / "x") << "x";
  CHECK(run("train --config " + cfg.string() + " --out " + (tmp / "full").string(), log) == 1);
  CHECK(slurp(log).find("refusing to overwrite") != std::string::npos);

  std::ofstream(tmp / "old.json") << R"({"schema_version": 0})";
  CHECK(run("train --config " + (tmp / "old.json").string() + " --out " + (tmp / "r").string(), log) == 1);
  CHECK(slurp(log).find("schema") != std::string::npos);

  const fs::path missing = tmp / "cfg_missing.json";
  write_tiny_config(missing, (tmp / "no_such_data").string());
  CHECK(run("train --config " + missing.string() + " --out " + (tmp / "r2").string(), log) == 1);

  CHECK(run("train --config " + cfg.string() + " --strategy mixup --out " + (tmp / "r3").string(), log) == 1);

  const fs::path other = tmp / "other.json";
  {
    nlohmann::json j = nlohmann::json::parse(slurp(cfg));
    j["schedule"]["epochs"] = 2;
    std::ofstream(other) << j.dump();
  }
  CHECK(run("compare --config " + cfg.string() + " --config " + other.string() + " --out " + (tmp / "c").string(), log) ==
        1);
  CHECK(slurp(log).find("differs") != std::string::npos);

  CHECK(run("eval " + (tmp / "nowhere").string(), log) == 1);
}
