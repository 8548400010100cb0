#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "kpmix/config.hpp"
#include "kpmix/synth.hpp"

using namespace kpmix;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(KPMIX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int count_lines(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is);
  int n = 0;
  std::string line;
  while (std::getline(is, line)) ++n;
  return n;
}

struct TempDir {
  fs::path dir;
  explicit TempDir(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& leaf) const { return (dir / leaf).string(); }
};

}  // namespace

TEST_CASE("cli surface: generate-data, train, eval, diagnose, gradcheck, exit codes") {
  TempDir tmp("kpmix_cli_test");

  write_flat_config(tmp.path("gen.cfg"), {
      {"image_side", "32"},
      {"min_persons", "1"},
      {"max_persons", "2"},
      {"scale_min", "10"},
      {"scale_max", "16"},
      {"max_iou_min", "0"},
      {"max_iou_max", "0.8"},
      {"scenes", "10"},
      {"base_seed", "3"},
  });

  SUBCASE("usage errors exit 1") {
    CHECK(run("definitely-not-a-subcommand") == 1);
    CHECK(run("train") == 1);  // missing required options
    CHECK(run("eval --checkpoint nope.bin") == 1);
  }

  SUBCASE("end-to-end happy path") {
    REQUIRE(run("generate-data --config " + tmp.path("gen.cfg") + " --out " +
                tmp.path("data.jsonl")) == 0);
    CHECK(count_lines(tmp.path("data.jsonl")) == 10);
    CHECK(fs::exists(tmp.path("data.jsonl.config")));

    write_flat_config(tmp.path("train.cfg"), {
        {"iterations", "10"},
        {"batch_size", "2"},
        {"learning_rate", "0.01"},
        {"k_g", "3"},
        {"seed", "7"},
        {"dataset_path", tmp.path("data.jsonl")},
        {"channels", "8"},
        {"conv_layers", "3"},
        {"backbone_width", "8"},
    });
    REQUIRE(run("train --config " + tmp.path("train.cfg") + " --out " + tmp.path("run")) == 0);
    REQUIRE(fs::exists(tmp.path("run/checkpoint.bin")));
    CHECK(fs::exists(tmp.path("run/train_log.csv")));

    CHECK(run("eval --checkpoint " + tmp.path("run/checkpoint.bin") + " --data " +
              tmp.path("data.jsonl") + " --out " + tmp.path("eval.csv")) == 0);
    CHECK(fs::exists(tmp.path("eval.csv")));
    CHECK(fs::exists(tmp.path("eval.csv.pr.csv")));
    {
      std::ifstream is(tmp.path("eval.csv"));
      std::string header;
      std::getline(is, header);
      CHECK(header == "metric,value");
    }

    CHECK(run("diagnose-underflow --checkpoint " + tmp.path("run/checkpoint.bin") + " --data " +
              tmp.path("data.jsonl") + " --kg 1,2,3,6 --precision single --out " +
              tmp.path("under.csv")) == 0);
    {
      std::ifstream is(tmp.path("under.csv"));
      std::string header;
      std::getline(is, header);
      CHECK(header == "K_g,kind,precision,ratio");
      CHECK(count_lines(tmp.path("under.csv")) == 5);
    }

    CHECK(run("sweep-kg --config " + tmp.path("train.cfg") + " --kg 1,6 --out " +
              tmp.path("sweep")) == 1);  // eval_dataset_path missing -> error
    write_flat_config(tmp.path("train_eval.cfg"), {
        {"iterations", "5"},
        {"batch_size", "2"},
        {"k_g", "3"},
        {"seed", "7"},
        {"dataset_path", tmp.path("data.jsonl")},
        {"eval_dataset_path", tmp.path("data.jsonl")},
        {"channels", "8"},
        {"conv_layers", "3"},
        {"backbone_width", "8"},
    });
    CHECK(run("sweep-kg --config " + tmp.path("train_eval.cfg") + " --kg 1,6 --out " +
              tmp.path("sweep")) == 0);
    CHECK(fs::exists(tmp.path("sweep/sweep_kg.csv")));
  }

  SUBCASE("a non-finite loss aborts training with exit code 2") {
    REQUIRE(run("generate-data --config " + tmp.path("gen.cfg") + " --out " +
                tmp.path("abort_data.jsonl")) == 0);
    // an absurd learning rate blows the parameters apart within an iteration
    // or two; the single-precision linear-space mode then underflows to +inf
    write_flat_config(tmp.path("abort.cfg"), {
        {"iterations", "30"},
        {"batch_size", "2"},
        {"learning_rate", "1000000"},
        {"grouping_mode", "none"},
        {"k_g", "6"},
        {"seed", "3"},
        {"dataset_path", tmp.path("abort_data.jsonl")},
        {"channels", "8"},
        {"conv_layers", "3"},
        {"backbone_width", "8"},
    });
    CHECK(run("train --config " + tmp.path("abort.cfg") + " --out " + tmp.path("abort_run")) == 2);
    CHECK(fs::exists(tmp.path("abort_run/aborted.txt")));
  }

  SUBCASE("gradcheck runs clean") {
    CHECK(run("gradcheck --probes 8 --out " + tmp.path("gc.csv")) == 0);
    std::ifstream is(tmp.path("gc.csv"));
    std::string header;
    std::getline(is, header);
    CHECK(header == "op,probes,max_rel_err");
  }
}
