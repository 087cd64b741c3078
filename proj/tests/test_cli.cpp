#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "extcbf/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("extcbf_cli_" + name);
    fs::remove_all(p);
    return p;
}

Result run(const std::string& args, const std::string& env = "")
{
    const auto dir = fs::temp_directory_path();
    const auto out = (dir / "extcbf_cli_stdout").string();
    const auto err = (dir / "extcbf_cli_stderr").string();
    const std::string cmd = env + " " + std::string(EXTCBF_CLI) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = extcbf::read_file(out);
    r.err = extcbf::read_file(err);
    return r;
}

int count_lines(const std::string& s)
{
    return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

bool no_temp_files(const fs::path& dir)
{
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().filename().string().find(".tmp") != std::string::npos)
            return false;
    return true;
}

nlohmann::json manifest(const fs::path& dir)
{
    return nlohmann::json::parse(extcbf::read_file((dir / "manifest.json").string()));
}

}  // namespace

TEST_CASE("usage errors exit with 1")
{
    auto r = run("");
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);

    r = run("roundabout --no-such-flag");
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);

    CHECK(run("roundabout --method mpc").code == 1);
    CHECK(run("roundabout --seeds 0").code == 1);
    CHECK(run("teleport").code == 1);
    CHECK(run("--help").code == 0);
}

TEST_CASE("invalid configuration exits with 1 and names the key")
{
    const auto dir = scratch("badcfg");
    const auto cfg = (dir / "cfg.json").string();
    extcbf::write_atomic(cfg, R"({"acc": {"clbf_q": 1.2}})");
    auto r = run("acc -c " + cfg + " -o " + (dir / "out").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("acc.clbf_q") != std::string::npos);
    CHECK(r.err.find("0 < q < 1") != std::string::npos);

    r = run("roundabout --dt -0.5 -o " + (dir / "out").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("roundabout.dt") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("runtime failures exit with 2")
{
    const auto dir = scratch("blocked");
    extcbf::write_atomic((dir / "file").string(), "x");
    const auto r = run("optimize-profile --points 3 -o " + (dir / "file" / "sub").string());
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("acc writes four trajectories and a summary")
{
    const auto dir = scratch("acc");
    const auto r = run("acc --objective effort --plots -o " + dir.string());
    REQUIRE(r.code == 0);
    const auto out = dir / "acc";
    for (const char* c : {"cbf", "clbf", "fxt", "ext"}) {
        CAPTURE(c);
        const auto path = out / (std::string("trajectory_") + c + ".csv");
        REQUIRE(fs::exists(path));
        CHECK(extcbf::read_file(path.string()).rfind("t,z,v,u,b,gamma,slack\n", 0) == 0);
    }
    const auto summary = extcbf::read_file((out / "summary.csv").string());
    CHECK(summary.rfind("controller,recovery_time,effort,terminal_speed,peak_abs_u\n", 0) == 0);
    CHECK(count_lines(summary) == 5);
    CHECK(fs::exists(out / "b_gamma.svg"));

    const auto m = manifest(out);
    CHECK(m["verb"] == "acc");
    CHECK(m["config_hash"].get<std::string>().size() == 16);
    CHECK(m["artifacts"].size() == 7);
    for (const auto& a : m["artifacts"]) {
        CHECK(fs::exists(out / a["path"].get<std::string>()));
        CHECK(a["config_hash"] == m["config_hash"]);
    }
    CHECK(no_temp_files(dir));
}

TEST_CASE("roundabout writes one csv per seed and one aggregate row")
{
    const auto dir = scratch("rb");
    const auto r = run("roundabout --method ext --traffic balanced --seeds 10 -o " + dir.string());
    REQUIRE(r.code == 0);
    const auto out = dir / "roundabout";
    int runs = 0;
    for (const auto& e : fs::directory_iterator(out / "runs")) {
        ++runs;
        CHECK(extcbf::read_file(e.path().string()).rfind("vehicle,objective,energy,", 0) == 0);
    }
    CHECK(runs == 10);
    const auto agg = extcbf::read_file((out / "aggregate_balanced.csv").string());
    CHECK(count_lines(agg) == 2);
    CHECK(agg.find("\next,") != std::string::npos);

    const auto m = manifest(out);
    std::set<std::uint64_t> seeds;
    for (const auto& a : m["artifacts"])
        if (a["kind"] == "run")
            seeds.insert(a["seed"].get<std::uint64_t>());
    CHECK(seeds.size() == 10);
    CHECK(*seeds.begin() == 1);
    CHECK(*seeds.rbegin() == 10);
    CHECK(no_temp_files(dir));

    // same config hash, byte-identical metrics
    const auto again = scratch("rb2");
    REQUIRE(run("roundabout --method ext --traffic balanced --seeds 10 -o " + again.string()).code == 0);
    CHECK(extcbf::read_file((again / "roundabout" / "aggregate_balanced.csv").string()) == agg);
    CHECK(manifest(again / "roundabout")["config_hash"] == m["config_hash"]);
}

TEST_CASE("output directory from the environment")
{
    const auto dir = scratch("env");
    const auto r = run("roundabout --method cbf --seeds 1 --vehicles 5", "EXTCBF_OUTPUT_DIR=" + dir.string());
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "roundabout" / "aggregate_balanced.csv"));

    const auto flag = scratch("flag");
    REQUIRE(run("roundabout --method cbf --seeds 1 --vehicles 5 -o " + flag.string(),
                "EXTCBF_OUTPUT_DIR=" + dir.string() + "_unused")
                .code == 0);
    CHECK(fs::exists(flag / "roundabout" / "aggregate_balanced.csv"));
    CHECK_FALSE(fs::exists(dir.string() + "_unused"));
}

TEST_CASE("compare writes aggregate and normalized tables")
{
    const auto dir = scratch("cmp");
    const auto r = run("compare --seeds 2 --vehicles 20 --traffic balanced heavy --plots -o " + dir.string());
    REQUIRE(r.code == 0);
    const auto out = dir / "compare";
    for (const char* p : {"balanced", "heavy"}) {
        CAPTURE(p);
        const auto agg = extcbf::read_file((out / (std::string("aggregate_") + p + ".csv")).string());
        CHECK(agg.rfind("method,avg_obj,avg_energy,avg_time,avg_discomfort,avg_hard_decel,avg_infeasible\n", 0) == 0);
        CHECK(count_lines(agg) == 5);
        const auto norm = extcbf::read_file((out / (std::string("normalized_") + p + ".csv")).string());
        CHECK(norm.find("\ncbf," + std::string(p) + ",1,1,1,1,") != std::string::npos);
        CHECK(fs::exists(out / (std::string("metrics_") + p + ".svg")));
    }
    CHECK(manifest(out)["artifacts"].size() == 2 * (8 + 3));
}

TEST_CASE("optimize-profile writes the grid report")
{
    const auto dir = scratch("opt");
    const auto r = run("optimize-profile --objective speed --family quadratic --points 9 -o " + dir.string());
    REQUIRE(r.code == 0);
    const auto report = extcbf::read_file((dir / "optimize-profile" / "report_quadratic.csv").string());
    CHECK(report.rfind("parameter,cost,feasible,max_abs_u\n", 0) == 0);
    CHECK(count_lines(report) == 10);
    const auto sel = nlohmann::json::parse(
        extcbf::read_file((dir / "optimize-profile" / "selected_quadratic.json").string()));
    CHECK(sel["parameter"].get<double>() >= -1.0);
    CHECK(sel["parameter"].get<double>() <= 1.0);
}
