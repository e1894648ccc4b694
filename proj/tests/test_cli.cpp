#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "netspill/network.hpp"
#include "netspill/panel.hpp"

namespace fs = std::filesystem;
using namespace netspill;

namespace {

const fs::path &scratch() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / "netspill_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

int run(const std::string &args, const std::string &env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + NETSPILL_CLI + "\" " + args + " > \"" +
                          (scratch() / "stdout.txt").string() + "\" 2> \"" + (scratch() / "stderr.txt").string() +
                          "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string q(const fs::path &p) { return "\"" + p.string() + "\""; }

// small design where selection is easy, shared by several cases
const fs::path &simulated() {
  static const fs::path dir = [] {
    const auto d = scratch() / "sim";
    const int rc = run("simulate --n 30 --t 150 --k-links 1 --psi-lo 0.4 --psi-hi 0.6 --noise-sd 0.3 --seed 7 --out " +
                       q(d));
    REQUIRE(rc == 0);
    return d;
  }();
  return dir;
}

std::string pipeline_args(const fs::path &out, const std::string &extra = "") {
  return "pipeline --panel " + q(simulated() / "panel.csv") + " --factors 1 --permutations 500 --draws 200 --out " +
         q(out) + " " + extra;
}

} // namespace

TEST_CASE("simulate writes the documented files", "[cli]") {
  const auto &d = simulated();
  for (const char *f : {"panel.csv", "truth_edges.csv", "truth_params.json", "manifest.json"})
    CHECK(fs::exists(d / f));
  const auto panel = load_panel((d / "panel.csv").string());
  CHECK(panel.n() == 30);
  CHECK(panel.t() == 150);
  const auto manifest = nlohmann::json::parse(slurp(d / "manifest.json"));
  CHECK(manifest["command"] == "simulate");
  CHECK(manifest["config"]["seed"] == 7);

  const auto again = scratch() / "sim_again";
  REQUIRE(run("simulate --n 30 --t 150 --k-links 1 --psi-lo 0.4 --psi-hi 0.6 --noise-sd 0.3 --seed 7 --out " +
              q(again)) == 0);
  for (const char *f : {"panel.csv", "truth_edges.csv", "truth_params.json", "manifest.json"})
    CHECK(slurp(d / f) == slurp(again / f));
}

TEST_CASE("configuration errors exit with code 2", "[cli]") {
  CHECK(run("simulate --n 2 --k-links 5 --out " + q(scratch() / "bad")) == 2);
  CHECK(slurp(scratch() / "stderr.txt").find("error:") != std::string::npos);
  CHECK(run("simulate --psi-hi 1.5 --out " + q(scratch() / "bad")) == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("fit --panel " + q(scratch() / "missing.csv") + " --out " + q(scratch() / "bad")) == 2);
  CHECK(run("fit --panel " + q(simulated() / "panel.csv") + " --network knn:0 --out " + q(scratch() / "bad")) == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("pipeline recovers the simulated network", "[cli]") {
  const auto out = scratch() / "pipe";
  REQUIRE(run(pipeline_args(out, "--truth " + q(simulated()))) == 0);
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  for (const auto &f : m["outputs"])
    CHECK(fs::exists(out / f.get<std::string>()));
  CHECK(m["truth_recovery"]["true_positive_rate"].get<double>() >= 0.95);
  CHECK(m["network"]["provenance"] == "estimated");
  CHECK(!fs::exists(out / "quarantine"));

  // report reads the run back
  REQUIRE(run("report --dir " + q(out)) == 0);
  const auto text = slurp(scratch() / "stdout.txt");
  CHECK(text.find("Mean-group IV estimates") != std::string::npos);
  CHECK(text.find("Impact decomposition") != std::string::npos);
  CHECK(slurp(out / "report.txt") == text);
}

TEST_CASE("category network from the cli matches the library", "[cli]") {
  const auto out = scratch() / "category";
  REQUIRE(run(pipeline_args(out, "--network category:industry")) == 0);
  const auto panel = load_panel((simulated() / "panel.csv").string());
  std::ostringstream expect;
  write_edge_list(expect, category_network(panel.meta, "industry"));
  CHECK(slurp(out / "network_edges.csv") == expect.str());
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(m["network"]["provenance"] == "category");
}

TEST_CASE("true network file gives psi near its mean", "[cli]") {
  const auto out = scratch() / "truefile";
  REQUIRE(run("fit --panel " + q(simulated() / "panel.csv") + " --factors 1 --network file:" +
              q(simulated() / "truth_edges.csv") + " --out " + q(out)) == 0);
  const auto coef = slurp(out / "coefficients.csv");
  std::istringstream in(coef);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  const auto cells = csv::split_line(line);
  REQUIRE(cells[0] == "psi");
  const double est = std::stod(cells[1]), se = std::stod(cells[2]);
  CHECK(std::abs(est - 0.5) <= 2.0 * se);
}

TEST_CASE("thread count does not change any output byte", "[cli]") {
  const auto a = scratch() / "threads1", b = scratch() / "threads4";
  REQUIRE(run("--threads 1 " + pipeline_args(a)) == 0);
  REQUIRE(run("--threads 4 " + pipeline_args(b)) == 0);
  std::size_t files = 0;
  for (const auto &e : fs::directory_iterator(a)) {
    ++files;
    INFO(e.path().filename().string());
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files >= 10);
}

TEST_CASE("output directory falls back to the environment", "[cli]") {
  const auto env_dir = scratch() / "from_env";
  REQUIRE(run("simulate --n 10 --t 30 --k-links 1 --psi-lo 0.2 --psi-hi 0.4", "NETSPILL_OUTPUT_DIR=" + q(env_dir)) ==
          0);
  CHECK(fs::exists(env_dir / "panel.csv"));
  CHECK(fs::exists(env_dir / "manifest.json"));
  REQUIRE(run("report", "NETSPILL_OUTPUT_DIR=" + q(env_dir)) == 2);
}

TEST_CASE("failed runs quarantine partial outputs", "[cli]") {
  // edge list naming a unit that does not exist: input error after factors.csv is written
  const auto bad_edges = scratch() / "bad_edges.csv";
  std::ofstream(bad_edges) << "from,to,weight\n0,99,1\n";
  const auto out = scratch() / "quarantined";
  CHECK(run(pipeline_args(out, "--network file:" + q(bad_edges))) == 2);
  CHECK(fs::exists(out / "quarantine" / "factors.csv"));
  CHECK(fs::exists(out / "quarantine" / "error.txt"));
  CHECK(!fs::exists(out / "factors.csv"));

  // co-located facilities: the distance network is an estimation failure, exit 1
  std::istringstream src(slurp(simulated() / "panel.csv"));
  std::ostringstream dst;
  std::string line;
  std::getline(src, line);
  dst << line << '\n';
  while (std::getline(src, line)) {
    auto cells = csv::split_line(line);
    cells[5] = "40";
    cells[6] = "-90";
    for (std::size_t c = 0; c < cells.size(); ++c)
      dst << (c ? "," : "") << cells[c];
    dst << '\n';
  }
  const auto flat = scratch() / "colocated.csv";
  std::ofstream(flat) << dst.str();
  const auto out2 = scratch() / "colocated";
  CHECK(run("pipeline --panel " + q(flat) + " --factors 1 --network threshold:0.1 --out " + q(out2)) == 1);
  CHECK(fs::exists(out2 / "quarantine" / "error.txt"));
  CHECK(slurp(out2 / "quarantine" / "error.txt").find("co-located") != std::string::npos);

  // a later successful run clears the old quarantine
  REQUIRE(run(pipeline_args(out2)) == 0);
  CHECK(!fs::exists(out2 / "quarantine"));
}

TEST_CASE("individual subcommands write their tables", "[cli]") {
  const auto panel = q(simulated() / "panel.csv");
  const auto base = scratch() / "sub";
  REQUIRE(run("select-network --panel " + panel + " --factors 1 --out " + q(base / "sel")) == 0);
  CHECK(fs::exists(base / "sel" / "selection_trace.json"));
  CHECK(fs::exists(base / "sel" / "network.dot"));
  REQUIRE(run("impacts --panel " + panel + " --factors 1 --draws 200 --out " + q(base / "imp")) == 0);
  CHECK(fs::exists(base / "imp" / "effects.csv"));
  REQUIRE(run("spillins --panel " + panel + " --factors 1 --dimensions industry,state --out " + q(base / "spl")) == 0);
  CHECK(slurp(base / "spl" / "spillins.csv").find("industry") != std::string::npos);
  REQUIRE(run("homophily --panel " + panel + " --factors 1 --permutations 300 --out " + q(base / "hom")) == 0);
  const auto h = nlohmann::json::parse(slurp(base / "hom" / "homophily.json"));
  CHECK(h.contains("rank_sum"));
  CHECK(h.contains("link_formation"));
}
