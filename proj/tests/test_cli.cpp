#include "commands.hpp"

#include "doge/checks.hpp"
#include "doge/model.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "doge");
    std::ostringstream out, err;
    const int code = doge::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("doge_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

fs::path write_tiny(const fs::path& dir)
{
    const auto path = dir / "tiny.lp";
    std::ofstream f(path);
    doge::write_lp(f, doge::tiny_instance());
    return path;
}

}  // namespace

TEST_SUITE("cli")
{
    TEST_CASE("gen is deterministic and writes a manifest")
    {
        const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
        for (const auto& d : {a, b}) {
            const auto r = cli({"gen", "--count", "3", "--n", "12", "--p", "0.3", "--seed", "40", "--out", d.string()});
            REQUIRE(r.code == 0);
            CHECK(r.out.rfind("# gen count=3 n=12 p=0.29999999999999999 seed=40", 0) == 0);
        }
        std::size_t files = 0;
        for (const auto& entry : fs::directory_iterator(a)) {
            ++files;
            CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
        }
        CHECK(files == 4);
        const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
        REQUIRE(manifest["instances"].size() == 3);
        CHECK(manifest["instances"][2]["seed"] == 42);
        CHECK(manifest["instances"][0]["file"] == "is_0000.json");
        const auto inst = doge::read_instance((a / "is_0001.json").string());
        CHECK(doge::write_json(inst) == doge::write_json(doge::generate_independent_set(12, 0.3, 41)));

        const auto lp = fresh_dir("gen_lp");
        REQUIRE(cli({"gen", "--count", "1", "--n", "6", "--seed", "40", "--format", "lp", "--out", lp.string()}).code == 0);
        CHECK(fs::exists(lp / "is_0000.lp"));
        for (const auto& d : {a, b, lp}) fs::remove_all(d);
    }

    TEST_CASE("gen flags edgeless graphs")
    {
        const auto d = fresh_dir("gen_empty");
        const auto r = cli({"gen", "--count", "2", "--n", "5", "--p", "0", "--out", d.string()});
        CHECK(r.code == 0);
        CHECK(r.err.find("no constraints") != std::string::npos);
        const auto manifest = nlohmann::json::parse(slurp(d / "manifest.json"));
        CHECK(manifest["instances"][0]["flag"] == "no constraints");
        fs::remove_all(d);
    }

    TEST_CASE("solve on tiny")
    {
        const auto d = fresh_dir("solve");
        const auto tiny = write_tiny(d);
        const auto log = d / "log.csv";
        const auto r = cli({"solve", tiny.string(), "--max-sweeps", "50", "--log", log.string(), "--threads", "1"});
        REQUIRE(r.code == 0);
        const auto pos = r.out.find("lower_bound ");
        REQUIRE(pos != std::string::npos);
        CHECK(std::abs(std::stod(r.out.substr(pos + 12)) + 2.0) <= 1e-6);
        const auto rows = read_csv(slurp(log));
        REQUIRE(rows.size() == 52);
        CHECK(rows[0] == std::vector<std::string>{"sweep", "seconds", "lower_bound"});
        CHECK(rows.back()[0] == "50");

        const auto zero = cli({"solve", tiny.string(), "--max-sweeps", "0", "--log", log.string()});
        REQUIRE(zero.code == 0);
        const auto only = read_csv(slurp(log));
        REQUIRE(only.size() == 2);
        CHECK(only[1][0] == "0");
        CHECK(std::stod(only[1][2]) == -2.0);
        fs::remove_all(d);
    }

    TEST_CASE("bad input exits with code 2")
    {
        const auto d = fresh_dir("bad");
        std::ofstream(d / "broken.lp") << "Minimize\n obj: x1 +\nSubject To\n c1: x1 <=\nEnd\n";
        std::ofstream(d / "broken.json") << "{\"num_vars\": 2, \"objective\": [1]}";
        for (const auto* name : {"broken.lp", "broken.json", "missing.lp"}) {
            const auto r = cli({"solve", (d / name).string()});
            CHECK(r.code == 2);
            CHECK(r.err.rfind("error: ", 0) == 0);
        }
        CHECK(cli({"solve", write_tiny(d).string(), "--omega", "1.5"}).code == 2);
        CHECK(cli({"solve", write_tiny(d).string(), "--bogus"}).code == 2);
        CHECK(cli({"train", "--data", (d / "nowhere").string()}).code == 2);
        CHECK(cli({"gen", "--count", "1"}).code == 2);
        fs::remove_all(d);
    }

    TEST_CASE("version and help")
    {
        const auto v = cli({"--version"});
        CHECK(v.code == 0);
        CHECK(v.out.rfind("doge ", 0) == 0);
        CHECK(v.out.find("kernels:") != std::string::npos);
        const auto h = cli({});
        CHECK(h.code == 0);
        CHECK(h.out.find("solve") != std::string::npos);
    }

    TEST_CASE("check passes clean and fails with injected faults")
    {
        const auto clean = cli({"check", "--quick", "--threads", "2"});
        CHECK(clean.code == 0);
        CHECK(clean.out.find("all suites passed") != std::string::npos);
        for (const auto* fault : {"sign-flip", "no-snapshot"}) {
            const auto r = cli({"check", "--quick", "--inject", fault});
            CHECK(r.code == 1);
            CHECK(r.out.find("FAILED") != std::string::npos);
        }
        CHECK(cli({"check", "--inject", "nonsense"}).code == 2);

        const auto d = fresh_dir("dot");
        const auto dot = cli({"check", "--dot", write_tiny(d).string(), "--constraint", "1"});
        CHECK(dot.code == 0);
        CHECK(dot.out.find("digraph") != std::string::npos);
        CHECK(cli({"check", "--dot", write_tiny(d).string(), "--constraint", "9"}).code == 2);
        fs::remove_all(d);
    }

    TEST_CASE("train then eval writes a parseable report")
    {
        const auto d = fresh_dir("eval");
        const auto data = d / "data";
        REQUIRE(cli({"gen", "--count", "3", "--n", "14", "--p", "0.3", "--seed", "7", "--out", data.string()}).code == 0);
        const auto weights = d / "w.bin", log = d / "train.csv";
        const auto t = cli({"train", "--data", data.string(), "--rounds", "4", "--sweeps", "3", "--iters", "3", "--batch",
                            "2", "--seed", "2", "--out", weights.string(), "--log", log.string(), "--threads", "1"});
        REQUIRE(t.code == 0);
        CHECK(read_csv(slurp(log)).size() == 4);

        const auto csv = d / "eval.csv";
        const auto e = cli({"eval", "--data", data.string(), "--weights", weights.string(), "--rounds", "4", "--sweeps", "3",
                            "--out", csv.string(), "--threads", "1"});
        REQUIRE(e.code == 0);
        const auto rows = read_csv(slurp(csv));
        REQUIRE(rows.size() == 1 + 3 * 2 + 2);
        CHECK(rows[0] == std::vector<std::string>{"instance", "method", "E", "t_best", "g_I"});
        std::map<std::string, double> g_sum;
        for (std::size_t k = 1; k <= 6; ++k) {
            REQUIRE(rows[k].size() == 5);
            CHECK(rows[k][1] == (k % 2 ? "fastdog" : "doge"));
            const double g = std::stod(rows[k][4]);
            CHECK(g >= 0.0);
            CHECK(g <= 12.0);  // at most gap 1 over the 12-sweep horizon
            g_sum[rows[k][1]] += g;
        }
        for (std::size_t k = 7; k <= 8; ++k) {
            CHECK(rows[k][0] == "summary");
            CHECK(std::stod(rows[k][4]) == doctest::Approx(g_sum[rows[k][1]] / 3.0).epsilon(1e-12));
        }

        // the same command again gives the same bytes on the sweep clock
        const auto again = d / "again.csv";
        REQUIRE(cli({"eval", "--data", data.string(), "--weights", weights.string(), "--rounds", "4", "--sweeps", "3",
                     "--out", again.string(), "--threads", "1"})
                    .code == 0);
        CHECK(slurp(again) == slurp(csv));
        fs::remove_all(d);
    }
}
