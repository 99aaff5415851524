#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bulkspace/config.hpp"
#include "bulkspace/errors.hpp"
#include "bulkspace/metrics.hpp"
#include "oracles.hpp"

using bulkspace::Config;
using bulkspace::MetricsRecord;
using bulkspace::MetricsWriter;

TEST_SUITE("config") {

TEST_CASE("config parses comments, blanks and whitespace") {
    const Config cfg = Config::parse_string(
        "# a comment line\n"
        "\n"
        "problem.kind = quadratic   # trailing comment\n"
        "  optim.lr_max=0.1\n"
        "sweep.alphas = 4, 2, 1\n");
    CHECK(cfg.get_str("problem.kind") == "quadratic");
    CHECK(cfg.get_double("optim.lr_max") == doctest::Approx(0.1));
    const auto alphas = cfg.get_double_list("sweep.alphas");
    REQUIRE(alphas.size() == 3);
    CHECK(alphas[0] == 4.0);
    CHECK(alphas[2] == 1.0);
}

TEST_CASE("config rejects malformed lines with their line number") {
    CHECK_THROWS_WITH_AS(Config::parse_string("problem.kind = a\nnonsense line\n"),
                         doctest::Contains("line 2"), bulkspace::ParseError);
    CHECK_THROWS_WITH_AS(Config::parse_string("steps = 5\nsteps = 6\n"),
                         doctest::Contains("duplicate"), bulkspace::ParseError);
    CHECK_THROWS_AS(Config::parse_string("bad key! = 2\n"), bulkspace::ParseError);
    CHECK_THROWS_AS(Config::parse_string(".steps = 2\n"), bulkspace::ParseError);
    CHECK_THROWS_AS(Config::parse_string("steps =   # comment ate the value\n"),
                    bulkspace::ParseError);
}

TEST_CASE("serialization is canonical and a parse fixed point") {
    const Config cfg = Config::parse_string("steps = 5\nbsfa.k = 2\nseed = 1\n");
    const std::string text = cfg.serialize();
    // sorted keys
    CHECK(text == "bsfa.k = 2\nseed = 1\nsteps = 5\n");
    const Config again = Config::parse_string(text);
    CHECK(again.serialize() == text);
    CHECK(again.entries() == cfg.entries());
}

TEST_CASE("typed getters validate their values") {
    const Config cfg = Config::parse_string(
        "steps = 250\n"
        "optim.lr_max = 2.5e-4\n"
        "optim.tune = true\n"
        "bsfa.enabled = off\n"
        "problem.widths = 2, 16, 2\n"
        "out = runs/a.jsonl\n");
    CHECK(cfg.get_int("steps") == 250);
    CHECK(cfg.get_uint("steps", 0) == 250);
    CHECK(cfg.get_double("optim.lr_max") == doctest::Approx(2.5e-4));
    CHECK(cfg.get_bool("optim.tune", false));
    CHECK_FALSE(cfg.get_bool("bsfa.enabled", true));
    CHECK(cfg.get_str_list("problem.widths") == std::vector<std::string>{"2", "16", "2"});

    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK(cfg.get_double("missing", 0.5) == 0.5);
    CHECK(cfg.get_str("missing", "x") == "x");
    CHECK_THROWS_AS(cfg.get_str("missing"), bulkspace::ConfigError);
    CHECK_THROWS_AS(cfg.get_int("out"), bulkspace::ConfigError);
    CHECK_THROWS_AS(cfg.get_double("out"), bulkspace::ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("out", true), bulkspace::ConfigError);

    const Config junk = Config::parse_string("steps = 12abc\nseed = -3\n");
    CHECK_THROWS_WITH_AS(junk.get_int("steps"), doctest::Contains("trailing"),
                         bulkspace::ConfigError);
    CHECK_THROWS_AS(junk.get_uint("seed", 0), bulkspace::ConfigError);

    const Config badlist = Config::parse_string("sweep.alphas = 1,,2\n");
    CHECK_THROWS_AS(badlist.get_double_list("sweep.alphas"), bulkspace::ConfigError);
}

TEST_CASE("unknown keys are rejected, known ones pass") {
    const Config ok = Config::parse_string("problem.kind = quadratic\nbsfa.k = 4\n");
    CHECK_NOTHROW(ok.check_known_keys());
    const Config bad = Config::parse_string("problem.kind = quadratic\nbsfa.kk = 4\n");
    CHECK_THROWS_WITH_AS(bad.check_known_keys(), doctest::Contains("bsfa.kk"),
                         bulkspace::ConfigError);
}

TEST_CASE("config set applies the same key rules") {
    Config cfg;
    cfg.set("steps", " 12 ");
    CHECK(cfg.get_int("steps") == 12);
    CHECK_THROWS_AS(cfg.set("bad key", "1"), bulkspace::ConfigError);
    CHECK_THROWS_AS(cfg.set("steps", "  "), bulkspace::ConfigError);
}

TEST_CASE("missing config file raises an io error") {
    CHECK_THROWS_AS(Config::parse_file("/nonexistent/nowhere.conf"), bulkspace::IoError);
}

TEST_CASE("metrics records serialize with fixed field order") {
    MetricsRecord r;
    r.step = 3;
    r.wall_ms = 1.5;
    r.loss = 0.25;
    r.lr = 0.01;
    r.sin_theta = 0.125;
    r.add_extra("refreshes", 2);
    r.add_extra("branch", "bulk_only");
    const std::string line = r.to_json().dump();
    CHECK(line ==
          R"({"step":3,"wall_ms":1.5,"loss":0.25,"lr":0.01,"sin_theta":0.125,"refreshes":2,"branch":"bulk_only"})");
    // unset optionals never appear, not even as null
    CHECK(line.find("accuracy") == std::string::npos);
    CHECK(line.find("null") == std::string::npos);
}

TEST_CASE("metrics writer round trips through the reader") {
    const std::filesystem::path dir = oracles::fresh_dir("metrics");
    const std::string path = (dir / "run.jsonl").string();
    {
        MetricsWriter w(path);
        for (size_t t = 0; t < 3; ++t) {
            MetricsRecord r;
            r.step = t;
            r.loss = 1.0 / double(t + 1);
            r.lr = 0.1;
            if (t == 2) r.accuracy = 0.75;
            w.write(r);
        }
        CHECK(w.lines_written() == 3);
        w.close();
        MetricsRecord extra;
        CHECK_THROWS_AS(w.write(extra), bulkspace::IoError);
    }
    const auto records = bulkspace::read_metrics(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0]["step"] == 0);
    CHECK(records[1]["loss"] == doctest::Approx(0.5));
    CHECK(records[2]["accuracy"] == doctest::Approx(0.75));
    CHECK_FALSE(records[0].contains("accuracy"));
}

TEST_CASE("metrics reader flags invalid lines") {
    const std::filesystem::path dir = oracles::fresh_dir("metrics_bad");
    const std::string path = (dir / "broken.jsonl").string();
    {
        std::ofstream out(path);
        out << R"({"step":0,"wall_ms":0.0,"loss":1.0,"lr":0.1})" << "\n";
        out << "{not json\n";
    }
    CHECK_THROWS_WITH_AS(bulkspace::read_metrics(path), doctest::Contains("line 2"),
                         bulkspace::ParseError);
    CHECK_THROWS_AS(bulkspace::read_metrics((dir / "missing.jsonl").string()),
                    bulkspace::IoError);
    CHECK_THROWS_AS(MetricsWriter((dir / "no" / "such" / "dir.jsonl").string()),
                    bulkspace::IoError);
}

TEST_CASE("reproducibility comparison ignores only wall time") {
    const std::filesystem::path dir = oracles::fresh_dir("metrics_cmp");
    auto write_run = [&](const char* name, double wall, double loss) {
        const std::string path = (dir / name).string();
        MetricsWriter w(path);
        MetricsRecord r;
        r.step = 0;
        r.wall_ms = wall;
        r.loss = loss;
        r.lr = 0.1;
        w.write(r);
        w.close();
        return path;
    };
    const std::string a = write_run("a.jsonl", 10.0, 0.5);
    const std::string b = write_run("b.jsonl", 99.0, 0.5);
    const std::string c = write_run("c.jsonl", 10.0, 0.25);
    CHECK(bulkspace::metrics_equal_ignoring_wall(a, b));
    CHECK_FALSE(bulkspace::metrics_equal_ignoring_wall(a, c));
}

} // TEST_SUITE
