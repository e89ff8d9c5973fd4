#include <array>
#include <fstream>
#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(TCAQ_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WEXITSTATUS(status);
  return r;
}

}  // namespace

TEST_CASE("help documents every public flag") {
  RunResult help = run("train --help");
  for (const char* flag : {"--config", "--seed", "--out", "--bits-w", "--bits-a", "--bits-s",
                           "--no-tcr", "--no-daq", "--par-rounds", "--clamp", "--groups",
                           "--paper-scale"})
    CHECK(help.output.find(flag) != std::string::npos);
  RunResult top = run("--help");
  for (const char* sub : {"train", "quantize", "sample", "evaluate", "ablate"})
    CHECK(top.output.find(sub) != std::string::npos);
}

TEST_CASE("exit codes") {
  std::filesystem::remove_all("/tmp/tcaq_cli_test");
  // config error -> 2
  RunResult bad = run("train --bits-w 9 --out /tmp/tcaq_cli_test");
  CHECK(bad.exit_code == 2);
  // missing artifact -> 4
  RunResult missing = run("sample --ckpt /tmp/tcaq_cli_test/none.tcaq --out /tmp/tcaq_cli_test");
  CHECK(missing.exit_code == 4);
  CHECK(missing.output.find("missing-artifact") != std::string::npos);
}

TEST_CASE("train then sample end to end") {
  const std::string dir = "/tmp/tcaq_cli_e2e";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir + "/tiny.ini");
    cfg << "[dataset]\nsize = 96\n[train]\nsteps = 40\nbatch = 8\n"
           "[diffusion]\ninference_steps = 5\n[eval]\nsamples = 66\n";
  }
  RunResult train = run("train --config " + dir + "/tiny.ini --out " + dir + " --seed 3");
  CHECK(train.exit_code == 0);
  CHECK(std::filesystem::exists(dir + "/model.tcaq"));
  RunResult smp = run("sample --config " + dir + "/tiny.ini --ckpt " + dir +
                      "/model.tcaq --out " + dir);
  CHECK(smp.exit_code == 0);
  CHECK(std::filesystem::exists(dir + "/samples.png"));
  // reruns with the same seed produce identical sample archives
  auto read_file = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  const std::string once = read_file(dir + "/samples.tcaq");
  RunResult again = run("sample --config " + dir + "/tiny.ini --ckpt " + dir +
                        "/model.tcaq --out " + dir);
  CHECK(again.exit_code == 0);
  CHECK(read_file(dir + "/samples.tcaq") == once);
}
