#include "ttsem/cli.hpp"
#include "ttsem/csv.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace ttsem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ttsem");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> v;
  std::istringstream in(line);
  for (std::string c; std::getline(in, c, ',');) v.push_back(c);
  return v;
}

std::size_t column(const std::string& header, const std::string& name) {
  const auto cols = split(header);
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (cols[c] == name) return c;
  FAIL("missing column " << name);
  return 0;
}

}  // namespace

TEST_CASE("simulate is deterministic and writes one line per observation") {
  testutil::TempDir dir("cli_sim");
  const auto a = cli({"simulate", "--model", "gmm", "--n", "5", "--seed", "3", "--out", dir.file("a.csv")});
  const auto b = cli({"simulate", "--model", "gmm", "--n", "5", "--seed", "3", "--out", dir.file("b.csv")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(csv::read_file(dir.file("a.csv")) == csv::read_file(dir.file("b.csv")));
  CHECK(lines(csv::read_file(dir.file("a.csv"))).size() == 5);
  CHECK(a.out.rfind("fnv1a64=", 0) == 0);
  CHECK(a.out == b.out);

  REQUIRE(cli({"simulate", "--model", "pk", "--n", "3", "--out", dir.file("pk.csv")}).code == 0);
  CHECK(lines(csv::read_file(dir.file("pk.csv"))).size() == 31);
}

TEST_CASE("EM trajectories have a non-increasing nll column") {
  testutil::TempDir dir("cli_em");
  REQUIRE(cli({"simulate", "--n", "500", "--out", dir.file("d.csv")}).code == 0);
  const auto r = cli({"run", "--data", dir.file("d.csv"), "--algo", "EM", "--iters", "100", "--out", dir.file("t.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("terminal_iter=100") != std::string::npos);
  const auto rows = lines(csv::read_file(dir.file("t.csv")));
  REQUIRE(rows.size() == 102);
  const auto c = column(rows[0], "nll");
  double prev = csv::parse_double(split(rows[1])[c]);
  for (std::size_t i = 2; i < rows.size(); ++i) {
    const double v = csv::parse_double(split(rows[i])[c]);
    CHECK(v <= prev + 1e-10 * std::abs(prev));
    prev = v;
  }
}

TEST_CASE("vrTTEM with rho 1 and unit epochs has a zero gap column") {
  testutil::TempDir dir("cli_vr");
  REQUIRE(cli({"simulate", "--n", "200", "--out", dir.file("d.csv")}).code == 0);
  const auto r = cli({"run", "--data", dir.file("d.csv"), "--algo", "vrTTEM", "--rho", "1", "--epoch-len", "1",
                      "--iters", "50", "--out", dir.file("t.csv")});
  REQUIRE(r.code == 0);
  const auto rows = lines(csv::read_file(dir.file("t.csv")));
  REQUIRE(rows.size() == 52);
  const auto c = column(rows[0], "delta_s_sq");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(split(rows[i])[c] == "0");
}

TEST_CASE("runs are byte-identical across invocations") {
  testutil::TempDir dir("cli_rerun");
  REQUIRE(cli({"simulate", "--n", "300", "--out", dir.file("d.csv")}).code == 0);
  for (const char* algo : {"SAEM", "iSAEM", "vrTTEM", "fiTTEM"}) {
    const std::vector<std::string> args = {"run", "--data", dir.file("d.csv"), "--algo", algo, "--epochs", "2",
                                           "--mc-samples", "2", "--seed", "9"};
    const auto a = cli(args);
    const auto b = cli(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.err == b.err);
    CHECK(lines(a.out).size() > 2);
  }
}

TEST_CASE("pk runs fit a simulated cohort") {
  testutil::TempDir dir("cli_pk");
  REQUIRE(cli({"simulate", "--model", "pk", "--n", "20", "--out", dir.file("pk.csv")}).code == 0);
  const auto r = cli({"run", "--model", "pk", "--data", dir.file("pk.csv"), "--algo", "fiTTEM", "--epochs", "1",
                      "--mc-samples", "5", "--out", dir.file("t.csv")});
  REQUIRE(r.code == 0);
  const auto rows = lines(csv::read_file(dir.file("t.csv")));
  CHECK(rows[0].find("nll") == std::string::npos);
  CHECK(rows.size() == 12);
}

TEST_CASE("exit codes") {
  testutil::TempDir dir("cli_codes");
  CHECK(cli({}).code == 1);
  CHECK(cli({"fly"}).code == 1);
  CHECK(cli({"run", "--bogus"}).code == 1);
  CHECK(cli({"simulate", "--model", "tree", "--out", dir.file("x")}).code == 1);
  CHECK(cli({"run", "--data", dir.file("none.csv"), "--algo", "EM"}).code == 2);
  REQUIRE(cli({"simulate", "--model", "pk", "--n", "3", "--out", dir.file("pk.csv")}).code == 0);
  const auto mismatch = cli({"run", "--model", "pk", "--data", dir.file("pk.csv"), "--algo", "EM"});
  CHECK(mismatch.code == 1);
  CHECK(!mismatch.err.empty());
  REQUIRE(cli({"simulate", "--n", "10", "--out", dir.file("g.csv")}).code == 0);
  CHECK(cli({"run", "--data", dir.file("g.csv"), "--algo", "SAEM", "--rho", "0.5"}).code == 1);
  CHECK(cli({"run", "--data", dir.file("pk.csv"), "--algo", "SAEM"}).code == 2);
}

TEST_CASE("config files override flags") {
  testutil::TempDir dir("cli_config");
  REQUIRE(cli({"simulate", "--n", "100", "--out", dir.file("d.csv")}).code == 0);
  csv::write_file(dir.file("c.json"), R"({"algo": "EM", "iters": 7, "data": ")" + dir.file("d.csv") + "\"}");
  const auto r = cli({"run", "--algo", "SAEM", "--iters", "3", "--config", dir.file("c.json"), "--out", dir.file("t.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("terminal_iter=7") != std::string::npos);
  CHECK(lines(csv::read_file(dir.file("t.csv"))).size() == 9);
  csv::write_file(dir.file("bad.json"), R"({"colour": 1})");
  CHECK(cli({"run", "--config", dir.file("bad.json")}).code == 1);
}

TEST_CASE("replicate writes metrics and summary") {
  testutil::TempDir dir("cli_rep");
  const auto r = cli({"replicate", "--n", "200", "--replicates", "2", "--epochs", "1", "--mc-samples", "2",
                      "--algo", "SAEM,fiTTEM", "--out", dir.file("study")});
  REQUIRE(r.code == 0);
  const auto table = lines(csv::read_file(dir.file("study/metrics.csv")));
  CHECK(table.size() == 1 + 2 * 3 * 4);
  const auto j = nlohmann::json::parse(csv::read_file(dir.file("study/summary.json")));
  CHECK(j["replicates"] == 2);
  CHECK(j["algorithms"][1]["name"] == "fiTTEM");
  CHECK(j["wins"].contains("SAEM"));
  CHECK(lines(r.out).size() == 3);
}
