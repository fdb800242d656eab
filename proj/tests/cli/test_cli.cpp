#include <doctest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "aftkm/aft_null.hpp"
#include "aftkm/data.hpp"
#include "aftkm/rng.hpp"
#include "aftkm/simgen.hpp"
#include "cli.hpp"
#include "support/tmpdir.hpp"

using namespace aftkm;
using testsupport::slurp;
using testsupport::TempDir;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

CmdResult run_cmd(int (*fn)(const cli::Options&, std::ostream&, std::ostream&),
                  const cli::Options& o) {
    std::ostringstream out, err;
    CmdResult r;
    r.code = fn(o, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// one null dataset shared by the file-driven cases; regenerating it per case
// would dominate the suite's runtime
struct Fixture {
    TempDir dir;
    cli::Options base;  // survival/covariates/genotypes filled in

    Fixture() {
        Scenario scn = default_scenario(ScenarioName::s1_no_het);
        scn.n = 100;
        scn.p = 30;
        auto gen = make_stream(99, Stream::data_gen, 0);
        const SimDataset sim = gen_dataset(scn, gen);
        const Dataset& d = sim.data;
        write_survival(dir.file("survival.tsv"), d);
        write_matrix(dir.file("covariates.tsv"), d.ids, d.z_names, d.Z);
        write_matrix(dir.file("genotypes.tsv"), d.ids, d.g_names, d.G);
        base.survival = dir.file("survival.tsv");
        base.covariates = dir.file("covariates.tsv");
        base.genotypes = dir.file("genotypes.tsv");
        base.perturbations = 300;
        base.seed = 17;
    }

    // disjoint gene sets of five markers each, drawn from the thirty columns
    std::string sets_file(int count) const {
        std::ostringstream text;
        text << "set\tmarkers\n";
        for (int s = 0; s < count; ++s) {
            text << "set" << s << '\t';
            for (int j = 0; j < 5; ++j) text << (j ? "," : "") << 'g' << s * 5 + j + 1;
            text << '\n';
        }
        return dir.write("sets" + std::to_string(count) + ".tsv", text.str());
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

std::string table_row(const std::string& text, int index) {
    std::istringstream in(text);
    std::string line;
    bool seen_header = false;
    int data_row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!seen_header) {
            seen_header = true;
            if (index < 0) return line;
            continue;
        }
        if (data_row++ == index) return line;
    }
    return "";
}

int data_rows(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int rows = -1;  // header does not count
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') ++rows;
    }
    return rows < 0 ? 0 : rows;
}

std::vector<std::string> fields(const std::string& row) {
    std::vector<std::string> out;
    std::istringstream in(row);
    std::string tok;
    while (std::getline(in, tok, '\t')) out.push_back(tok);
    return out;
}

}  // namespace

TEST_CASE("command line method spellings map onto the library names") {
    CHECK(cli::parse_cli_method("R") == Method::R);
    CHECK(cli::parse_cli_method("Rhet") == Method::R_het);
    CHECK(cli::parse_cli_method("R_het") == Method::R_het);
    CHECK(cli::parse_cli_method("Rc") == Method::Rc);
    CHECK(cli::parse_cli_method("Rchet") == Method::Rc_het);
    CHECK(cli::parse_cli_method("Rc_het") == Method::Rc_het);
    CHECK_THROWS_AS(cli::parse_cli_method("rc"), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_cli_method("wavelet"), std::invalid_argument);
}

TEST_CASE("configuration files parse, apply and reject unknown keys") {
    TempDir dir;
    const auto cfg = dir.write("run.cfg",
                               "# defaults for the smoke run\n"
                               "\n"
                               "survival = a.tsv\n"
                               "  seed=42   \n"
                               "fdr = 0.2  # trailing comment\n");
    const auto entries = cli::parse_kv_config(cfg);
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].first == "survival");
    CHECK(entries[0].second == "a.tsv");
    CHECK(entries[1].second == "42");

    cli::Options o;
    for (const auto& [k, v] : entries) cli::apply_config_entry(o, k, v, cfg);
    CHECK(o.survival == "a.tsv");
    CHECK(o.seed == 42);
    CHECK(o.fdr == 0.2);

    CHECK_THROWS_WITH_AS(cli::apply_config_entry(o, "bogus", "1", "run.cfg"),
                         doctest::Contains("unknown configuration key 'bogus'"),
                         std::invalid_argument);
    CHECK_THROWS_AS(cli::apply_config_entry(o, "workers", "many", "run.cfg"),
                    std::invalid_argument);

    const auto bad = dir.write("bad.cfg", "survival a.tsv\n");
    CHECK_THROWS_WITH_AS(cli::parse_kv_config(bad), doctest::Contains("expected key = value"),
                         std::runtime_error);
    CHECK_THROWS_AS(cli::parse_kv_config(dir.file("absent.cfg")), std::runtime_error);
}

TEST_CASE("a single test run reports one result row on stdout") {
    cli::Options o = fixture().base;
    const auto r = run_cmd(cli::cmd_test, o);
    REQUIRE(r.code == 0);
    CHECK(r.err.empty());
    CHECK(r.out.find("# aftkm 0.1.0") != std::string::npos);
    CHECK(r.out.find("# seed: 17") != std::string::npos);
    CHECK(table_row(r.out, -1) == "method\tkernel\tn\tmarkers\tevents\tstatistic\tp_value\tflag");
    const auto row = fields(table_row(r.out, 0));
    REQUIRE(row.size() == 8);
    CHECK(row[0] == "Rc");
    CHECK(row[1] == "ibs");
    CHECK(row[2] == "100");
    CHECK(row[3] == "30");
    const double p = std::stod(row[6]);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    CHECK(row[7] == "-");
}

TEST_CASE("input problems exit with code 1 and a message naming the cause") {
    cli::Options o = fixture().base;
    o.survival = fixture().dir.file("absent.tsv");
    auto r = run_cmd(cli::cmd_test, o);
    CHECK(r.code == 1);
    CHECK(r.err.find("absent.tsv") != std::string::npos);

    o = fixture().base;
    o.method = "Rchet";
    r = run_cmd(cli::cmd_test, o);
    CHECK(r.code == 1);
    CHECK(r.err.find("--subpop") != std::string::npos);

    o = fixture().base;
    o.survival.clear();
    r = run_cmd(cli::cmd_test, o);
    CHECK(r.code == 1);
    CHECK(r.err.find("--survival") != std::string::npos);
}

TEST_CASE("monomorphic markers come back flagged with exit code 2") {
    const auto& fx = fixture();

    // reuse the fixture ids so assemble can align the all-zero marker rows
    std::ostringstream aligned;
    aligned << "id\tg1\tg2\n";
    std::istringstream surv(slurp(fx.base.survival));
    std::string line;
    bool header = true;
    while (std::getline(surv, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        aligned << fields(line)[0] << "\t0\t0\n";
    }
    cli::Options o = fx.base;
    o.genotypes = fx.dir.write("mono.tsv", aligned.str());
    const auto r = run_cmd(cli::cmd_test, o);
    CHECK(r.code == 2);
    const auto row = fields(table_row(r.out, 0));
    REQUIRE(row.size() == 8);
    CHECK(row[7] == "degenerate_spectrum");
    CHECK(std::stod(row[6]) == 1.0);
}

TEST_CASE("scan fits the null once and is identical across worker counts") {
    const auto& fx = fixture();
    cli::Options o = fx.base;
    o.genesets = fx.sets_file(6);
    o.fdr = 0.1;

    o.out = fx.dir.file("scan_w1");
    const long before1 = fit_null_invocations();
    auto r = run_cmd(cli::cmd_scan, o);
    REQUIRE(r.code == 0);
    CHECK(fit_null_invocations() - before1 == 1);

    o.out = fx.dir.file("scan_w3");
    o.workers = 3;
    const long before3 = fit_null_invocations();
    r = run_cmd(cli::cmd_scan, o);
    REQUIRE(r.code == 0);
    CHECK(fit_null_invocations() - before3 == 1);

    CHECK(slurp(fx.dir.file("scan_w1/results.tsv")) == slurp(fx.dir.file("scan_w3/results.tsv")));
    CHECK(slurp(fx.dir.file("scan_w1/significant.tsv")) ==
          slurp(fx.dir.file("scan_w3/significant.tsv")));

    const auto results = slurp(fx.dir.file("scan_w1/results.tsv"));
    CHECK(data_rows(results) == 6);
    for (int i = 0; i < 6; ++i) {
        const auto row = fields(table_row(results, i));
        REQUIRE(row.size() == 5);
        CHECK(row[1] == "5");
        const double p = std::stod(row[3]);
        CHECK(p > 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("scan thresholds follow the arbitrary-dependence ladder") {
    const auto& fx = fixture();
    cli::Options o = fx.base;
    o.genesets = fx.sets_file(4);
    o.fdr = 0.1;
    o.out = fx.dir.file("scan_thr");
    REQUIRE(run_cmd(cli::cmd_scan, o).code == 0);

    const auto thr = slurp(fx.dir.file("scan_thr/thresholds.tsv"));
    REQUIRE(data_rows(thr) == 4);
    // alpha * i / (m * (1 + 1/2 + 1/3 + 1/4)) with m = 4 puts rank one at 0.012
    const auto first = fields(table_row(thr, 0));
    CHECK(first[0] == "1");
    CHECK(std::stod(first[1]) == doctest::Approx(0.012).epsilon(1e-12));
    const auto last = fields(table_row(thr, 3));
    CHECK(std::stod(last[1]) == doctest::Approx(0.048).epsilon(1e-12));
}

TEST_CASE("scan keeps going when one gene set cannot be tested") {
    const auto& fx = fixture();

    // copy the genotype table and push one column outside the ibs domain
    std::istringstream in(slurp(fx.base.genotypes));
    std::ostringstream broken;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            broken << line << '\n';
            continue;
        }
        auto f = fields(line);
        f[1] = "7";  // g1 now violates the 0..2 allele range
        for (std::size_t i = 0; i < f.size(); ++i) broken << (i ? "\t" : "") << f[i];
        broken << '\n';
    }
    cli::Options o = fx.base;
    o.genotypes = fx.dir.write("broken.tsv", broken.str());
    o.genesets = fx.dir.write("sets_mixed.tsv",
                              "set\tmarkers\n"
                              "clean\tg6,g7,g8,g9,g10\n"
                              "broken\tg1,g2,g3\n");
    o.fdr = 0.1;
    o.out = fx.dir.file("scan_partial");
    const auto r = run_cmd(cli::cmd_scan, o);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("2 sets, 1 tested") != std::string::npos);

    const auto results = slurp(fx.dir.file("scan_partial/results.tsv"));
    CHECK(data_rows(results) == 2);
    const auto clean = fields(table_row(results, 0));
    CHECK(clean[0] == "clean");
    CHECK(clean[4] != "failed");
    const auto bad = fields(table_row(results, 1));
    CHECK(bad[0] == "broken");
    CHECK(bad[2] == "NA");
    CHECK(bad[4].find("failed: ") == 0);
    CHECK(data_rows(slurp(fx.dir.file("scan_partial/thresholds.tsv"))) == 1);
}

TEST_CASE("a global-null scan almost never declares discoveries") {
    TempDir dir;
    Scenario scn = default_scenario(ScenarioName::s1_no_het);
    scn.n = 100;
    scn.p = 30;

    int with_discovery = 0;
    for (int r = 0; r < 50; ++r) {
        auto gen = make_stream(99, Stream::data_gen, r);
        const SimDataset sim = gen_dataset(scn, gen);
        const Dataset& d = sim.data;
        write_survival(dir.file("survival.tsv"), d);
        write_matrix(dir.file("covariates.tsv"), d.ids, d.z_names, d.Z);
        write_matrix(dir.file("genotypes.tsv"), d.ids, d.g_names, d.G);
        std::ostringstream sets;
        sets << "set\tmarkers\n";
        for (int s = 0; s < 6; ++s) {
            sets << "set" << s << '\t';
            for (int j = 0; j < 5; ++j) sets << (j ? "," : "") << 'g' << s * 5 + j + 1;
            sets << '\n';
        }
        cli::Options o;
        o.survival = dir.file("survival.tsv");
        o.covariates = dir.file("covariates.tsv");
        o.genotypes = dir.file("genotypes.tsv");
        o.genesets = dir.write("sets.tsv", sets.str());
        o.fdr = 0.1;
        o.perturbations = 300;
        o.seed = 1000 + static_cast<std::uint64_t>(r);
        o.out = dir.file("scan");
        const auto res = run_cmd(cli::cmd_scan, o);
        REQUIRE(res.code == 0);
        if (data_rows(slurp(dir.file("scan/significant.tsv"))) > 0) ++with_discovery;
    }
    // the ladder targets a false discovery rate of 0.1, so under the global
    // null the share of replicates with any discovery stays near or below it
    CHECK(with_discovery <= 8);
}

TEST_CASE("calibrate writes tables the qq command can consume directly") {
    TempDir dir;
    cli::Options o;
    o.scenario = "s_small_nohet";
    o.n_override = 100;
    o.p_override = 5;
    o.replicates = 20;
    o.method = "R,Rc";
    o.alpha = "0.05,0.2";
    o.perturbations = 200;
    o.seed = 3;
    o.out = dir.file("cal");
    const auto r = run_cmd(cli::cmd_calibrate, o);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("20 replicates") != std::string::npos);

    const auto pv = slurp(dir.file("cal/pvalues.tsv"));
    CHECK(table_row(pv, -1) == "replicate\tR\tRc");
    CHECK(data_rows(pv) == 20);

    const auto rej = slurp(dir.file("cal/rejections.tsv"));
    CHECK(table_row(rej, -1) == "method\talpha\trate\tse");
    CHECK(data_rows(rej) == 4);
    for (int i = 0; i < 4; ++i) {
        const auto row = fields(table_row(rej, i));
        const double rate = std::stod(row[2]);
        CHECK(rate >= 0.0);
        CHECK(rate <= 1.0);
    }

    const auto summary = nlohmann::json::parse(slurp(dir.file("cal/summary.json")));
    CHECK(summary["replicates"] == 20);
    CHECK(summary["marker_kernel"] == "ibs");
    CHECK(summary["rejections"].contains("Rc"));
    CHECK(summary["rejections"]["R"].size() == 2);

    cli::Options q;
    q.pvalues = dir.file("cal/pvalues_Rc.tsv");
    q.out = dir.file("qq.tsv");
    const auto qr = run_cmd(cli::cmd_qq, q);
    REQUIRE(qr.code == 0);
    const auto qq = slurp(dir.file("qq.tsv"));
    CHECK(qq.find("# ks_statistic: ") != std::string::npos);
    CHECK(table_row(qq, -1) == "rank\ttheoretical\tempirical");
    CHECK(data_rows(qq) == 20);
}

TEST_CASE("qq quantiles and the ks statistic match hand-workable inputs") {
    TempDir dir;

    std::ostringstream constant;
    constant << "p_value\n";
    for (int i = 0; i < 100; ++i) constant << "0.5\n";
    cli::Options o;
    o.pvalues = dir.write("const.tsv", constant.str());
    auto r = run_cmd(cli::cmd_qq, o);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("# ks_statistic: 0.5\n") != std::string::npos);
    const auto row = fields(table_row(r.out, 49));
    CHECK(std::stod(row[1]) == doctest::Approx(0.495).epsilon(1e-12));
    CHECK(row[2] == "0.5");

    std::ostringstream grid;
    grid << "# already sorted does not matter\n";
    for (int i = 100; i >= 1; --i) grid << format_double((i - 0.5) / 100.0) << '\n';
    o.pvalues = dir.write("grid.tsv", grid.str());
    r = run_cmd(cli::cmd_qq, o);
    REQUIRE(r.code == 0);
    const auto ks_at = r.out.find("# ks_statistic: ");
    const double d = std::stod(r.out.substr(ks_at + 16));
    CHECK(d == doctest::Approx(0.005).epsilon(1e-9));

    o.pvalues = dir.write("few.tsv", "0.1\n0.2\n0.3\n");
    r = run_cmd(cli::cmd_qq, o);
    CHECK(r.code == 1);
    CHECK(r.err.find("at least 10") != std::string::npos);

    std::ostringstream out_of_range;
    for (int i = 0; i < 12; ++i) out_of_range << (i == 7 ? "1.5\n" : "0.4\n");
    o.pvalues = dir.write("range.tsv", out_of_range.str());
    r = run_cmd(cli::cmd_qq, o);
    CHECK(r.code == 1);
    CHECK(r.err.find("outside [0,1]") != std::string::npos);
    CHECK(r.err.find("range.tsv:8") != std::string::npos);
}

TEST_CASE("qq writes a self-contained plot when asked") {
    TempDir dir;
    std::ostringstream vals;
    for (int i = 1; i <= 40; ++i) vals << format_double(i / 41.0) << '\n';
    cli::Options o;
    o.pvalues = dir.write("p.tsv", vals.str());
    o.svg = dir.file("plot.svg");
    REQUIRE(run_cmd(cli::cmd_qq, o).code == 0);
    const auto svg = slurp(o.svg);
    CHECK(svg.find("<svg") == 0);
    std::size_t circles = 0;
    for (std::size_t at = svg.find("<circle"); at != std::string::npos;
         at = svg.find("<circle", at + 1)) {
        ++circles;
    }
    CHECK(circles == 40);
}

namespace {

CmdResult run_binary(const std::string& args, const TempDir& dir) {
    const char* bin = std::getenv("AFTKM_BIN_PATH");
#ifdef AFTKM_BIN_PATH
    if (bin == nullptr) bin = AFTKM_BIN_PATH;
#endif
    REQUIRE_MESSAGE(bin != nullptr, "AFTKM_BIN_PATH must point at the aftkm binary");
    const auto outp = dir.file("spawn_out.txt");
    const auto errp = dir.file("spawn_err.txt");
    const std::string cmd = std::string(bin) + " " + args + " >" + outp + " 2>" + errp;
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(outp);
    r.err = slurp(errp);
    return r;
}

}  // namespace

TEST_CASE("the installed binary round trips simulate, test and config files") {
    TempDir dir;
    auto r = run_binary("simulate --scenario s1_no_het --n 100 --p 6 --seed 21 --out " +
                            dir.file("a"),
                        dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = run_binary("simulate --scenario s1_no_het --n 100 --p 6 --seed 21 --out " + dir.file("b"),
                   dir);
    REQUIRE(r.code == 0);
    for (const char* name : {"survival.tsv", "covariates.tsv", "genotypes.tsv", "traits.tsv"}) {
        CHECK(slurp(dir.file(std::string("a/") + name)) ==
              slurp(dir.file(std::string("b/") + name)));
    }

    const auto surv = load_survival(dir.file("a/survival.tsv"));
    const auto data = assemble(surv, load_matrix(dir.file("a/covariates.tsv"), surv.size()),
                               load_matrix(dir.file("a/genotypes.tsv"), surv.size()), std::nullopt);
    CHECK(data.n() == 100);
    CHECK(data.p() == 6);

    r = run_binary("test --survival " + dir.file("a/survival.tsv") + " --covariates " +
                       dir.file("a/covariates.tsv") + " --genotypes " +
                       dir.file("a/genotypes.tsv") + " --perturbations 200 --seed 4",
                   dir);
    REQUIRE_MESSAGE((r.code == 0 || r.code == 2), r.err);
    const auto row = fields(table_row(r.out, 0));
    REQUIRE(row.size() == 8);
    const double p = std::stod(row[6]);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);

    dir.write("run.cfg", "survival = " + dir.file("a/survival.tsv") +
                             "\ncovariates = " + dir.file("a/covariates.tsv") +
                             "\ngenotypes = " + dir.file("a/genotypes.tsv") +
                             "\nperturbations = 200\nseed = 4\n");
    const auto via_config = run_binary("test --config " + dir.file("run.cfg"), dir);
    CHECK(via_config.code == r.code);
    CHECK(table_row(via_config.out, 0) == table_row(r.out, 0));
    const auto overridden = run_binary("test --config " + dir.file("run.cfg") + " --seed 9", dir);
    CHECK(overridden.out.find("# seed: 9") != std::string::npos);

    r = run_binary("simulate --scenario nope --out " + dir.file("x"), dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown scenario") != std::string::npos);
}
