// End-to-end checks of the command-line surface: spawns the real binary.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

std::string g_cli;
int g_failures = 0;

void expect(bool ok, const std::string& what) {
  std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", what.c_str());
  if (!ok) ++g_failures;
}

int run(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = g_cli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
  if (output) *output = out;
  const int status = pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> contents;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream f(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    contents[fs::relative(entry.path(), dir).string()] = ss.str();
  }
  return contents;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path-to-pocketcm>\n");
    return 2;
  }
  g_cli = argv[1];
  const fs::path work = fs::temp_directory_path() / ("pocketcm_cli_" + std::to_string(::getpid()));
  fs::create_directories(work);

  // exit codes
  expect(run("definitely-not-a-subcommand") == 2, "unknown subcommand exits 2");
  expect(run("gen-data --out " + (work / "x").string() + " --bogus-flag") == 2, "unknown flag exits 2");
  {
    const std::string cfg = (work / "bad_config.json").string();
    std::ofstream(cfg) << "{\"ema_decay\": 2.0}";
    std::string out;
    const int code = run("gen-data --out " + (work / "y").string() + " --config " + cfg, &out);
    expect(code == 3, "config validation failure exits 3");
    expect(out.find("ema_decay") != std::string::npos, "config error names the field");
  }

  // gen-data determinism: identical directory contents across reruns
  const std::string gen_args = "gen-data --seed 7 --count 10";
  expect(run(gen_args + " --out " + (work / "d1").string()) == 0, "gen-data runs");
  expect(run(gen_args + " --out " + (work / "d2").string()) == 0, "gen-data reruns");
  expect(dir_contents(work / "d1") == dir_contents(work / "d2"),
         "gen-data --seed 7 --count 10 twice gives identical directory contents");

  // tiny training run for the downstream commands
  const std::string train_args = "train --data " + (work / "d1").string() + " --steps 5 --batch 2" +
                                 " --grid-steps 10 --hidden 16 --layers 2 --seed 3";
  expect(run(train_args + " --out " + (work / "t1").string()) == 0, "train runs");
  expect(fs::exists(work / "t1" / "ckpt.thcm"), "train writes a checkpoint");

  // train determinism: checkpoint bytes identical across reruns
  expect(run(train_args + " --out " + (work / "t2").string()) == 0, "train reruns");
  {
    auto a = dir_contents(work / "t1");
    auto b = dir_contents(work / "t2");
    expect(a == b, "train rerun is byte-identical (checkpoint + logs)");
  }

  const std::string ckpt = (work / "t1" / "ckpt.thcm").string();
  const std::string data = (work / "d1").string();

  // sample: one-step generation path
  expect(run("sample --ckpt " + ckpt + " --data " + data + " --steps 1 --score off --seed 5 --out " +
             (work / "s1").string()) == 0,
         "sample --steps 1 (one-step generation) runs");
  // metric-selected sampling with scores.csv
  expect(run("sample --ckpt " + ckpt + " --data " + data +
             " --steps 6 --metric-start 2 --score default --seed 5 --out " + (work / "s6").string()) == 0,
         "metric-selected sampling runs");
  expect(fs::exists(work / "s6" / "scores.csv"), "sample writes per-step scores CSV");
  {
    std::string listing;
    for (const auto& e : fs::directory_iterator(work / "s6")) listing += e.path().filename().string() + ";";
    expect(listing.find("sample_ctx000_000.json") != std::string::npos, "sample writes complex JSONs");
  }

  // sample determinism
  expect(run("sample --ckpt " + ckpt + " --data " + data + " --steps 4 --score default --seed 5 --out " +
             (work / "s7a").string()) == 0,
         "sample rerun a");
  expect(run("sample --ckpt " + ckpt + " --data " + data + " --steps 4 --score default --seed 5 --out " +
             (work / "s7b").string()) == 0,
         "sample rerun b");
  expect(dir_contents(work / "s7a") == dir_contents(work / "s7b"), "sample rerun is byte-identical");

  // eval over the samples
  expect(run("eval --samples " + (work / "s6").string() + " --data " + data + " --train-hashes " +
             (work / "d1" / "hashes.json").string() + " --out " + (work / "e1").string()) == 0,
         "eval runs");
  expect(fs::exists(work / "e1" / "eval_report.json") && fs::exists(work / "e1" / "eval_report.csv"),
         "eval writes JSON and CSV reports");

  // bench: evaluation counts 50 and 999 at --cm-steps 50 --ode-steps 500
  {
    std::string out;
    const int code = run("bench --ckpt " + ckpt + " --data " + data +
                             " --cm-steps 50 --ode-steps 500 --batch 1 --seed 2 --out " +
                             (work / "b1").string(),
                         &out);
    expect(code == 0, "bench runs");
    std::ifstream counts(work / "b1" / "bench_counts.json");
    std::ostringstream ss;
    ss << counts.rdbuf();
    expect(ss.str().find("\"consistency_evals\": 50") != std::string::npos,
           "bench reports 50 consistency evaluations");
    expect(ss.str().find("\"heun_evals\": 999") != std::string::npos,
           "bench reports 999 Heun evaluations");
  }

  // finetune smoke (tiny settings)
  expect(run("finetune --ckpt " + ckpt + " --data " + data +
             " --reward clash --horizon 2 --iterations 2 --rollouts 2 --minibatches 1 --seed 4" +
             " --out " + (work / "f1").string()) == 0,
         "finetune runs");
  expect(fs::exists(work / "f1" / "rlcm_log.csv") && fs::exists(work / "f1" / "ckpt_finetuned.thcm"),
         "finetune writes the per-iteration CSV and checkpoint");

  fs::remove_all(work);
  std::printf("%s\n", g_failures == 0 ? "ALL CLI TESTS PASSED" : "CLI TESTS FAILED");
  return g_failures == 0 ? 0 : 1;
}
