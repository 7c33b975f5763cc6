#include <doctest.h>

#include <cstdlib>
#include <set>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "symdyn/pipeline.hpp"

using namespace symdyn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() /
          ("symdyn_test_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++));
    fs::create_directories(dir);
  }
  ~Scratch() { std::error_code ec; fs::remove_all(dir, ec); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path operator/(const std::string& name) const { return dir / name; }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SYMDYN_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

json make_spec(int n_patients, int n_obs_min, int n_obs_max, double coupling,
               std::uint64_t seed) {
  return json{{"n_patients", n_patients}, {"n_obs_min", n_obs_min},
              {"n_obs_max", n_obs_max},   {"coupling_strength", coupling},
              {"moderator_effect", 0.5},  {"seed", seed}};
}

}  // namespace

TEST_CASE("simulate: reproducible byte-for-byte, filtered-size warning path") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(5, 12, 18, 0.3, 99).dump());

  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "a").string()) == 0);
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "b").string()) == 0);
  CHECK(slurp(scratch / "a" / "observations.csv") ==
        slurp(scratch / "b" / "observations.csv"));
  CHECK(slurp(scratch / "a" / "moderators.csv") ==
        slurp(scratch / "b" / "moderators.csv"));
  CHECK(slurp(scratch / "a" / "ground_truth.json") ==
        slurp(scratch / "b" / "ground_truth.json"));

  const std::string obs = slurp(scratch / "a" / "observations.csv");
  int rows = -1;  // header
  for (char c : obs)
    if (c == '\n') ++rows;
  CHECK(rows >= 5 * 12);

  write_file(scratch / "bad.json", R"({"n_patients": 2, "mystery_field": 3, "seed": 1})");
  CHECK(run_cli("simulate -s " + (scratch / "bad.json").string() + " --output-dir " +
                (scratch / "c").string()) == pipeline::kExitUsage);

  write_file(scratch / "noseed.json", R"({"n_patients": 2})");
  CHECK(run_cli("simulate -s " + (scratch / "noseed.json").string() + " --output-dir " +
                (scratch / "d").string()) == pipeline::kExitUsage);
}

TEST_CASE("run: full pipeline on a synthetic cohort, byte-identical reruns") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(8, 25, 32, 0.35, 4242).dump());
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "cohort").string()) == 0);

  const json config{
      {"observations", (scratch / "cohort" / "observations.csv").string()},
      {"moderators", (scratch / "cohort" / "moderators.csv").string()},
      {"output_dir", (scratch / "out1").string()},
      {"seed", 11},
      {"threads", 1},
      {"moderation",
       json::array({{{"moderator", "synth_mod"}, {"covariates", {"age", "sex", "n_bdi"}}}})}};
  write_file(scratch / "config.json", config.dump());
  REQUIRE(run_cli("run -c " + (scratch / "config.json").string()) == 0);

  const json summary = json::parse(slurp(scratch / "out1" / "summary.json"));
  CHECK(summary.at("schema_version").get<int>() == 1);
  CHECK(summary.at("cohort").at("n_patients_input").get<int>() == 8);

  // schema walk: every stage output is present with its documented keys
  for (const char* key : {"config", "cohort", "warnings", "exclusions", "patients",
                          "group", "loocv", "moderation", "driver_summary",
                          "cross_sectional"})
    CHECK(summary.contains(key));
  for (const char* key : {"n", "mean_z", "mean_r", "t", "df", "p_one_tailed", "ci95"})
    CHECK(summary.at("group").contains(key));
  for (const char* key : {"mae_e0", "mae_bdi", "p_compare", "n_predictions"})
    CHECK(summary.at("loocv").contains(key));
  for (const auto& p : summary.at("patients")) {
    for (const char* key : {"patient_id", "n_obs", "coupling", "energies", "moderators",
                            "network", "drivers"})
      CHECK(p.contains(key));
    for (const auto& e : p.at("energies"))
      for (const char* key : {"index", "day", "bdi_sum", "e0", "converged",
                              "boundary_error"})
        CHECK(e.contains(key));
    if (!p.at("drivers").is_null())
      for (const char* key : {"n_d", "lambda_m", "drivers", "pbh_lambda_m", "pbh_all"})
        CHECK(p.at("drivers").contains(key));
  }

  // every input patient lands in exactly one of results / exclusion log
  std::set<std::string> seen;
  for (const auto& p : summary.at("patients"))
    seen.insert(p.at("patient_id").get<std::string>());
  for (const auto& e : summary.at("exclusions"))
    CHECK(seen.insert(e.at("patient_id").get<std::string>()).second);
  CHECK(seen.size() == 8);

  // group inference over the planted cohort should find a negative mean r
  REQUIRE(summary.at("group").contains("mean_r"));
  CHECK(summary.at("group").at("mean_r").get<double>() < 0.0);

  // moderation ran for the synthetic moderator with its df bookkeeping
  bool found_mod = false;
  for (const auto& m : summary.at("moderation")) {
    if (m.at("moderator") == "synth_mod" && m.contains("f")) {
      found_mod = true;
      CHECK(m.at("df1").get<int>() == 1);
      CHECK(m.at("df2").get<int>() == m.at("n_complete").get<int>() - 5);
    }
  }
  CHECK(found_mod);

  // per-patient artifacts exist
  CHECK(fs::exists(scratch / "out1" / "networks"));
  CHECK(fs::exists(scratch / "out1" / "energies.csv"));
  CHECK(fs::exists(scratch / "out1" / "couplings.csv"));
  CHECK(fs::exists(scratch / "out1" / "drivers.json"));
  CHECK(fs::exists(scratch / "out1" / "exclusions.json"));

  // byte-identical rerun, including under parallel execution
  json config2 = config;
  config2["output_dir"] = (scratch / "out2").string();
  config2["threads"] = 2;
  write_file(scratch / "config2.json", config2.dump());
  REQUIRE(run_cli("run -c " + (scratch / "config2.json").string()) == 0);
  json s1 = json::parse(slurp(scratch / "out1" / "summary.json"));
  json s2 = json::parse(slurp(scratch / "out2" / "summary.json"));
  s1.at("config").erase("output_dir");
  s2.at("config").erase("output_dir");
  s1.at("config").erase("threads");
  s2.at("config").erase("threads");
  CHECK(s1.dump() == s2.dump());
}

TEST_CASE("run: exit codes for empty cohorts and bad configs") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(3, 9, 10, 0.0, 5).dump());
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "cohort").string()) == 0);

  const json strict{{"observations", (scratch / "cohort" / "observations.csv").string()},
                    {"output_dir", (scratch / "out").string()},
                    {"min_observations", 50}};
  write_file(scratch / "strict.json", strict.dump());
  CHECK(run_cli("run -c " + (scratch / "strict.json").string()) == pipeline::kExitEmpty);

  const json missing{{"observations", (scratch / "nope.csv").string()},
                     {"output_dir", (scratch / "out").string()}};
  write_file(scratch / "missing.json", missing.dump());
  CHECK(run_cli("run -c " + (scratch / "missing.json").string()) == pipeline::kExitUsage);

  write_file(scratch / "typo.json", R"({"observations": "x.csv", "outptu_dir": "y"})");
  CHECK(run_cli("run -c " + (scratch / "typo.json").string()) == pipeline::kExitUsage);
}

TEST_CASE("run: permutation fallback path for short series") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(4, 10, 13, 0.0, 77).dump());
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "cohort").string()) == 0);
  const json config{{"observations", (scratch / "cohort" / "observations.csv").string()},
                    {"output_dir", (scratch / "out").string()},
                    {"seed", 3},
                    {"network", {{"permutations", 80}}}};
  write_file(scratch / "config.json", config.dump());
  REQUIRE(run_cli("run -c " + (scratch / "config.json").string()) == 0);
  const json summary = json::parse(slurp(scratch / "out" / "summary.json"));
  for (const auto& p : summary.at("patients")) {
    const std::string backend = p.at("network").at("backend").get<std::string>();
    CHECK(backend.find("permutation") != std::string::npos);
  }
}

TEST_CASE("report: plot tables derived from a results directory") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(8, 30, 40, 0.3, 1234).dump());
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "cohort").string()) == 0);
  const json config{
      {"observations", (scratch / "cohort" / "observations.csv").string()},
      {"moderators", (scratch / "cohort" / "moderators.csv").string()},
      {"output_dir", (scratch / "out").string()},
      {"seed", 1},
      {"moderation",
       json::array({{{"moderator", "synth_mod"}, {"covariates", {"age", "sex", "n_bdi"}}}})}};
  write_file(scratch / "config.json", config.dump());
  REQUIRE(run_cli("run -c " + (scratch / "config.json").string()) == 0);
  REQUIRE(run_cli("report " + (scratch / "out").string() + " --output-dir " +
                  (scratch / "tables").string()) == 0);

  CHECK(fs::exists(scratch / "tables" / "figS4.csv"));
  CHECK(fs::exists(scratch / "tables" / "figS3.csv"));
  CHECK(fs::exists(scratch / "tables" / "fig2_synth_mod.csv"));

  // figS4 row count equals the number of non-dropped patients
  const json summary = json::parse(slurp(scratch / "out" / "summary.json"));
  int usable = 0;
  for (const auto& p : summary.at("patients"))
    if (!p.at("coupling").at("dropped").get<bool>()) ++usable;
  const std::string figs4 = slurp(scratch / "tables" / "figS4.csv");
  int rows = -1;
  for (char c : figs4)
    if (c == '\n') ++rows;
  CHECK(rows == usable);

  CHECK(run_cli("report " + (scratch / "empty").string()) == pipeline::kExitUsage);
}

TEST_CASE("energy and drivers subcommands") {
  Scratch scratch;
  write_file(scratch / "spec.json", make_spec(2, 26, 30, 0.2, 31).dump());
  REQUIRE(run_cli("simulate -s " + (scratch / "spec.json").string() + " --output-dir " +
                  (scratch / "cohort").string()) == 0);

  const fs::path energy_csv = scratch / "energy.csv";
  REQUIRE(run_cli("energy --observations " +
                  (scratch / "cohort" / "observations.csv").string() +
                  " --patient SYN001 --output " + energy_csv.string()) == 0);
  const std::string csv = slurp(energy_csv);
  CHECK(csv.rfind("patient_id,obs_index,day,bdi_sum,e0,converged,boundary_error", 0) == 0);

  CHECK(run_cli("energy --observations " +
                (scratch / "cohort" / "observations.csv").string() +
                " --patient NOBODY --output -") == pipeline::kExitUsage);

  // run the pipeline to get a network export, then analyze its drivers
  const json config{{"observations", (scratch / "cohort" / "observations.csv").string()},
                    {"output_dir", (scratch / "out").string()},
                    {"seed", 8}};
  write_file(scratch / "config.json", config.dump());
  REQUIRE(run_cli("run -c " + (scratch / "config.json").string()) == 0);
  const fs::path network = scratch / "out" / "networks" / "SYN001.json";
  REQUIRE(fs::exists(network));
  const fs::path driver_json = scratch / "drivers.json";
  REQUIRE(run_cli("drivers " + network.string() + " --output " + driver_json.string()) ==
          0);
  const json drivers = json::parse(slurp(driver_json));
  CHECK(drivers.at("patient_id") == "SYN001");
  CHECK(drivers.at("n_d").get<int>() >= 1);
  CHECK(drivers.at("pbh_lambda_m").get<bool>());
  const auto items = drivers.at("drivers").get<std::vector<int>>();
  CHECK(static_cast<int>(items.size()) == drivers.at("n_d").get<int>());
  for (int item : items) {
    CHECK(item >= 1);
    CHECK(item <= 21);  // 1-based BDI items
  }

  // plain matrix CSV input
  std::ostringstream matrix;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) matrix << (j ? "," : "") << 0.0;
    matrix << "\n";
  }
  write_file(scratch / "zero.csv", matrix.str());
  REQUIRE(run_cli("drivers " + (scratch / "zero.csv").string() + " --output " +
                  (scratch / "zd.json").string()) == 0);
  const json zero_drivers = json::parse(slurp(scratch / "zd.json"));
  CHECK(zero_drivers.at("n_d").get<int>() == 4);
}
