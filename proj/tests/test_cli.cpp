#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "oracles.hpp"

#ifdef PSIM_CLI_PATH

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + PSIM_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_files(const fs::path& dir, const std::string& suffix) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    n += name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  }
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("generate writes a reproducible dataset") {
  const fs::path dir = psim::test::scratch_dir("cli-gen");
  REQUIRE(run("generate --n 3 --size 32 --seed 5 --jobs 1 --out " + (dir / "a").string()) == 0);
  REQUIRE(run("generate --n 3 --size 32 --seed 5 --jobs 2 --out " + (dir / "b").string()) == 0);
  const std::string ds = slurp(dir / "a" / "dataset.jsonl");
  CHECK(std::count(ds.begin(), ds.end(), '\n') == 4);  // header plus three records
  CHECK(ds == slurp(dir / "b" / "dataset.jsonl"));
  CHECK(count_files(dir / "a" / "images", "_mask.png") == 9);
  CHECK(count_files(dir / "a" / "images", ".png") == 18);
  CHECK(slurp(dir / "a" / "images" / "t000001_a.png") == slurp(dir / "b" / "images" / "t000001_a.png"));
  CHECK(fs::exists(dir / "a" / "manifest.json"));
}

TEST_CASE("exit codes") {
  const fs::path dir = psim::test::scratch_dir("cli-codes");
  CHECK(run("--help") == 0);
  CHECK(run("teleport") == 2);
  CHECK(run("generate --n 0 --out " + (dir / "x").string()) == 2);
  CHECK(run("generate --n 2 --set sampler.min_margin=-1 --out " + (dir / "x").string()) == 2);
  CHECK(run("retrieve --index " + (dir / "none.bin").string() + " --query " + (dir / "none.png").string()) == 3);
}

TEST_CASE("invert writes an image and a trace") {
  const fs::path dir = psim::test::scratch_dir("cli-invert");
  REQUIRE(run("generate --n 1 --size 32 --seed 2 --out " + (dir / "d").string()) == 0);
  REQUIRE(run("invert --set vit.image_size=32 --steps 3 --target " + (dir / "d" / "images" / "t000000_ref.png").string() +
              " --out " + (dir / "inv.png").string()) == 0);
  CHECK(fs::exists(dir / "inv.png"));
  const std::string trace = slurp(dir / "inv.png.trace.csv");
  CHECK(trace.rfind("step,loss,distance\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 5);
}

}  // TEST_SUITE

#endif
