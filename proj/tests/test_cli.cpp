#include "cli.hpp"

#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "gema");
  std::ostringstream out;
  std::ostringstream err;
  const int code = gema::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string dir() {
  static const std::string d = [] {
    fs::remove_all("cli_work");
    fs::create_directories("cli_work");
    return std::string("cli_work/");
  }();
  return d;
}

std::string path(const std::string& name) { return dir() + name; }

// Runs the same command twice with each `{name}` placeholder pointing at a
// different file and compares every produced file byte for byte.
void check_deterministic(const std::vector<std::string>& templ, const std::vector<std::string>& suffixes) {
  std::vector<std::string> first;
  std::vector<std::string> second;
  for (const auto& a : templ) {
    first.push_back(a);
    second.push_back(a);
    for (const auto& s : suffixes) {
      if (a == "{" + s + "}") {
        first.back() = path("run1_" + s);
        second.back() = path("run2_" + s);
      }
    }
  }
  const Outcome a = invoke(first);
  const Outcome b = invoke(second);
  INFO(a.err);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  std::string b_out = b.out;
  for (std::size_t at = b_out.find("run2_"); at != std::string::npos; at = b_out.find("run2_", at)) b_out[at + 3] = '1';
  CHECK(a.out == b_out);
  for (const auto& s : suffixes) {
    CHECK(slurp(path("run1_" + s)) == slurp(path("run2_" + s)));
    if (fs::exists(path("run1_" + s) + ".provenance.json")) {
      CHECK(slurp(path("run1_" + s) + ".provenance.json") == slurp(path("run2_" + s) + ".provenance.json"));
    }
  }
}

const std::vector<std::string> kCols{"--input-cols", "x1,x2", "--output-cols", "y"};

std::vector<std::string> with_cols(std::vector<std::string> v) {
  v.insert(v.end(), kCols.begin(), kCols.end());
  return v;
}

// Shared fixture: a small scenario A data set and a model trained on it.
void ensure_fixture() {
  static const bool done = [] {
    REQUIRE(invoke({"synth", "--scenario", "a", "--n", "120", "--seed", "4", "--out", path("data.csv"), "--truth",
                  path("truth.csv")})
                .code == 0);
    const Outcome t = invoke(with_cols({"train", "--data", path("data.csv"), "--out", path("model.bin"), "--epochs", "3",
                                      "--hidden-dim", "8", "--seed", "1"}));
    INFO(t.err);
    REQUIRE(t.code == 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  const Outcome none = invoke({});
  CHECK(none.code == 1);
  CHECK(none.err.find("synth") != std::string::npos);
  CHECK(invoke({"frobnicate"}).code == 1);
  CHECK(invoke({"synth"}).code == 1);
  CHECK(invoke({"synth", "--out", path("x.csv"), "--n", "ten"}).code == 1);
  CHECK(invoke({"baseline", "--method", "cnls", "--data", "a.csv", "--out", "b.csv"}).code == 1);
  const Outcome help = invoke({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("config") != std::string::npos);
}

TEST_CASE("runtime errors exit with 2 and name the problem") {
  ensure_fixture();
  const Outcome missing = invoke({"train", "--data", path("data.csv"), "--out", path("m.bin"), "--input-cols", "x1,x9",
                                "--output-cols", "y", "--epochs", "1"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("MissingColumn") != std::string::npos);
  CHECK(missing.err.find("x9") != std::string::npos);

  const Outcome no_file = invoke(with_cols({"train", "--data", path("nope.csv"), "--out", path("m.bin")}));
  CHECK(no_file.code == 2);

  std::ofstream(path("bad_config.json")) << R"({"epochz": 3})";
  const Outcome bad_key = invoke(with_cols({"train", "--data", path("data.csv"), "--out", path("m.bin"), "--config",
                                          path("bad_config.json")}));
  CHECK(bad_key.code != 0);
  CHECK(bad_key.err.find("epochz") != std::string::npos);

  std::ofstream(path("broken.json")) << R"({"cells": 3})";
  CHECK(invoke({"report", "--benchmark", path("broken.json")}).code == 2);
}

TEST_CASE("train applies defaults, then config, then flags") {
  ensure_fixture();
  std::ofstream(path("cfg.json")) << R"({"epochs": 4, "hidden_dim": 8, "patience": 100})";
  const Outcome r = invoke(with_cols({"train", "--data", path("data.csv"), "--out", path("prec.json"), "--config",
                                    path("cfg.json"), "--epochs", "2", "--report", path("prec_report.json")}));
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto model = nlohmann::json::parse(slurp(path("prec.json")));
  const auto& cfg = model.at("config");
  CHECK(cfg.at("epochs") == 2);
  CHECK(cfg.at("hidden_dim") == 8);
  CHECK(cfg.at("patience") == 100);
  CHECK(cfg.at("batch_size") == 128);
  const auto report = nlohmann::json::parse(slurp(path("prec_report.json")));
  CHECK(report.at("epochs").size() == 2);
}

TEST_CASE("score and certify write the documented columns") {
  ensure_fixture();
  REQUIRE(invoke({"score", "--model", path("model.bin"), "--data", path("data.csv"), "--out", path("scores.csv")}).code ==
          0);
  const std::string scores = slurp(path("scores.csv"));
  CHECK(scores.rfind("row,efficiency,expected_u,mu_u,var_u,z1,z2\n", 0) == 0);
  CHECK(std::count(scores.begin(), scores.end(), '\n') == 121);

  REQUIRE(invoke({"certify", "--model", path("model.bin"), "--data", path("data.csv"), "--out", path("cert.csv"),
                "--summary", path("cert.json")})
              .code == 0);
  CHECK(slurp(path("cert.csv")).rfind("row,score,sigma_min,L_bound,R_cert,fragile_flag\n", 0) == 0);
  const auto summary = nlohmann::json::parse(slurp(path("cert.json")));
  CHECK(summary.dump().find("percentile") != std::string::npos);

  const Outcome rep = invoke({"report", "--certify", path("cert.csv"), "--svg", path("cert.svg")});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("R_cert") != std::string::npos);
  CHECK(slurp(path("cert.svg")).find("<svg") != std::string::npos);
}

TEST_CASE("every subcommand is byte deterministic") {
  ensure_fixture();
  check_deterministic({"synth", "--scenario", "c", "--n", "80", "--seed", "9", "--out", "{data}", "--truth", "{truth}"},
                      {"data", "truth"});
  check_deterministic(with_cols({"train", "--data", path("data.csv"), "--out", "{model.bin}", "--epochs", "2",
                                 "--hidden-dim", "8", "--report", "{report.json}"}),
                      {"model.bin", "report.json"});
  check_deterministic(with_cols({"train", "--data", path("data.csv"), "--out", "{model.json}", "--epochs", "2",
                                 "--hidden-dim", "8"}),
                      {"model.json"});
  check_deterministic({"score", "--model", path("model.bin"), "--data", path("data.csv"), "--out", "{scores.csv}"},
                      {"scores.csv"});
  check_deterministic({"certify", "--model", path("model.bin"), "--data", path("data.csv"), "--out", "{cert.csv}",
                       "--summary", "{cert.json}", "--jobs", "3"},
                      {"cert.csv", "cert.json"});
  for (const char* method : {"dea", "fdh", "sfa", "rf"}) {
    check_deterministic(with_cols({"baseline", "--method", method, "--data", path("data.csv"), "--out", "{base.csv}",
                                   "--seed", "2"}),
                        {"base.csv"});
  }
  check_deterministic({"benchmark", "--scenario", "a", "--n", "80", "--reps", "2", "--seed", "5", "--epochs", "2",
                       "--methods", "gema,dea,rf", "--out", "{bench.json}", "--table", "{bench.txt}"},
                      {"bench.json", "bench.txt"});
  REQUIRE(invoke({"benchmark", "--scenario", "a", "--n", "80", "--reps", "2", "--seed", "5", "--epochs", "2", "--methods",
                "gema,dea,rf", "--out", path("bench.json")})
              .code == 0);
  check_deterministic({"report", "--benchmark", path("bench.json"), "--text", "{bench_report.txt}"},
                      {"bench_report.txt"});
  check_deterministic({"report", "--certify", path("cert.csv"), "--text", "{cert_report.txt}", "--json",
                       "{cert_report.json}", "--svg", "{cert.svg}"},
                      {"cert_report.txt", "cert_report.json", "cert.svg"});
}

TEST_CASE("benchmark threads do not change the result") {
  const std::vector<std::string> base{"benchmark", "--scenario", "b", "--n", "80", "--reps", "3", "--seed",
                                      "11",        "--epochs",   "2", "--methods", "gema,fdh,sfa"};
  auto one = base;
  one.insert(one.end(), {"--jobs", "1", "--out", path("jobs1.json")});
  auto four = base;
  four.insert(four.end(), {"--jobs", "4", "--out", path("jobs4.json")});
  REQUIRE(invoke(one).code == 0);
  REQUIRE(invoke(four).code == 0);
  CHECK(slurp(path("jobs1.json")) == slurp(path("jobs4.json")));
}

TEST_CASE("quotient flags are validated") {
  CHECK(invoke({"benchmark", "--scenario", "a", "--quotient", "--scale-col", "s", "--out", path("q.json")}).code == 1);
  CHECK(invoke({"benchmark", "--scenario", "c", "--quotient", "--out", path("q.json")}).code == 1);
}
