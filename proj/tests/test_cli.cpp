#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" PANOATTN_CLI_PATH "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("panoattn_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string first_line(const fs::path& p) {
    std::ifstream is(p);
    std::string line;
    std::getline(is, line);
    return line;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("layout --config no_such_profile") == 2);
    CHECK(run("layout --seed banana") == 2);
    CHECK(run("eval --pred x.jsonl") == 2);
    CHECK(run("layout --out " + scratch("env").string(), "PANOATTN_THREADS=zero") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("runtime failures exit with 1") {
    const auto dir = scratch("file");
    fs::create_directories(dir);
    std::ofstream(dir / "taken") << "x";
    CHECK(run("layout --out " + (dir / "taken").string()) == 1);
}

TEST_CASE("layout") {
    const auto dir = scratch("layout");
    REQUIRE(run("layout --config desk --out " + dir.string(), "PANOATTN_THREADS=2") == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "layout.json"));
    CHECK(j.at("schema") == "panoattn.layout");
    CHECK(j.at("version") == 1);
    CHECK(slurp(dir / "layout_l0_roi_shifted.ppm").rfind("P6\n# panoattn layout v1", 0) == 0);
}

TEST_CASE("pipeline is reproducible and eval agrees") {
    const auto a = scratch("pipe_a"), b = scratch("pipe_b");
    REQUIRE(run("pipeline --config desk --seed 3 --out " + a.string()) == 0);
    REQUIRE(run("pipeline --config desk --seed 3 --out " + b.string(), "PANOATTN_THREADS=1") == 0);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "detections.jsonl") == slurp(b / "detections.jsonl"));
    CHECK(first_line(a / "detections.jsonl") == R"({"schema":"panoattn.detections","version":1})");
    CHECK(first_line(a / "metrics.txt") == "# panoattn metrics report v1");

    const auto e = scratch("eval");
    REQUIRE(run("eval --pred " + (a / "detections.jsonl").string() + " --gt " + (a / "ground_truth.jsonl").string() +
                " --out " + e.string()) == 0);
    const auto pm = nlohmann::json::parse(slurp(a / "metrics.json"));
    const auto em = nlohmann::json::parse(slurp(e / "metrics.json"));
    CHECK(pm.at("NDS") == em.at("NDS"));

    std::ofstream(e / "bad.jsonl") << "not a header\n";
    CHECK(run("eval --pred " + (e / "bad.jsonl").string() + " --gt " + (a / "ground_truth.jsonl").string() +
              " --out " + e.string()) == 2);
}

TEST_CASE("forward and bench") {
    const auto f = scratch("forward");
    REQUIRE(run("forward --config desk --seed 4 --out " + f.string()) == 0);
    CHECK(slurp(f / "output.pta").rfind("panoattn-tensor-archive v1\n", 0) == 0);
    const auto g = scratch("forward2");
    REQUIRE(run("forward --config desk --seed 9 --params " + (f / "params.pta").string() + " --out " + g.string()) ==
            0);
    CHECK(nlohmann::json::parse(slurp(g / "manifest.json")).at("schema").is_string());

    const auto bdir = scratch("bench");
    REQUIRE(run("bench --config paper --trials 0 --out " + bdir.string()) == 0);
    CHECK(first_line(bdir / "flops.txt") == "# panoattn flops report v1");
    CHECK(first_line(bdir / "flops.csv") == "# panoattn flops v1");
}

TEST_CASE("verify") {
    const auto dir = scratch("verify");
    REQUIRE(run("verify --config desk --seed 1234 --out " + dir.string()) == 0);
    CHECK(first_line(dir / "verify.txt") == "# panoattn verify report v1");
    CHECK(slurp(dir / "verify.txt").find("FAIL") == std::string::npos);
}

}
