// Command line front end.  All behaviour lives in aftkm::cli so tests can
// drive the subcommands in-process; this file only maps flags onto Options.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "../src/cli.hpp"

int main(int argc, char** argv) {
    aftkm::cli::Options o;

    // apply --config before the regular parse so explicit flags override the
    // file; the flag itself is registered below only so CLI11 accepts it
    try {
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            std::string path;
            if (arg == "--config" && i + 1 < argc) {
                path = argv[i + 1];
            } else if (arg.rfind("--config=", 0) == 0) {
                path = arg.substr(9);
            }
            if (path.empty()) continue;
            for (const auto& [key, value] : aftkm::cli::parse_kv_config(path)) {
                aftkm::cli::apply_config_entry(o, key, value, path);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App app{"kernel association tests for left-truncated competing-risks data"};
    app.require_subcommand(1);
    std::string config_path;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value file of flag defaults");
        cmd->add_option("--seed", o.seed, "master seed for all randomised steps");
        cmd->add_option("--perturbations", o.perturbations,
                        "perturbation draws behind the slope estimates");
        cmd->add_option("--workers", o.workers, "worker threads");
    };
    auto add_inputs = [&](CLI::App* cmd) {
        cmd->add_option("--survival", o.survival, "survival table (id entry time status)");
        cmd->add_option("--covariates", o.covariates, "null-model covariate table");
        cmd->add_option("--genotypes", o.genotypes, "marker table");
        cmd->add_option("--subpop", o.subpop, "trait table for the heterogeneity kernel");
        cmd->add_option("--method", o.method, "R, Rhet, Rc or Rchet (default Rc)");
        cmd->add_option("--kernel", o.kernel, "marker kernel, e.g. ibs or gaussian:0.05");
        cmd->add_option("--hkernel", o.hkernel, "subpopulation kernel (default identity)");
        cmd->add_option("--cause", o.cause, "event cause of interest");
    };

    CLI::App* test = app.add_subcommand("test", "run one association test");
    add_inputs(test);
    add_common(test);

    CLI::App* scan = app.add_subcommand("scan", "test every gene set and control the FDR");
    add_inputs(scan);
    scan->add_option("--genesets", o.genesets, "gene-set table (set, comma-joined markers)");
    scan->add_option("--fdr", o.fdr, "false discovery rate target");
    scan->add_option("--out", o.out, "output directory");
    add_common(scan);

    CLI::App* simulate = app.add_subcommand("simulate", "write one synthetic dataset");
    simulate->add_option("--scenario", o.scenario, "scenario name, e.g. s1 or s_genome_het");
    simulate->add_option("--n", o.n_override, "override the scenario sample size");
    simulate->add_option("--p", o.p_override, "override the scenario marker count");
    simulate->add_option("--beta", o.beta, "override the scenario effect size");
    simulate->add_option("--out", o.out, "output directory");
    add_common(simulate);

    CLI::App* calibrate = app.add_subcommand("calibrate", "replicate a scenario and tabulate "
                                                          "rejection rates");
    calibrate->add_option("--scenario", o.scenario, "scenario name");
    calibrate->add_option("--n", o.n_override, "override the scenario sample size");
    calibrate->add_option("--p", o.p_override, "override the scenario marker count");
    calibrate->add_option("--beta", o.beta, "override the scenario effect size");
    calibrate->add_option("--replicates", o.replicates, "number of replicate datasets");
    calibrate->add_option("--method", o.method, "comma-separated methods (default Rc)");
    calibrate->add_option("--alpha", o.alpha, "comma-separated rejection levels");
    calibrate->add_option("--out", o.out, "output directory");
    add_common(calibrate);

    CLI::App* qq = app.add_subcommand("qq", "uniform quantile table for a p-value column");
    qq->add_option("--pvalues", o.pvalues, "file with one p-value per line");
    qq->add_option("--out", o.out, "write the table here instead of stdout");
    qq->add_option("--svg", o.svg, "also write a plot to this path");
    add_common(qq);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (test->parsed()) return aftkm::cli::cmd_test(o, std::cout, std::cerr);
    if (scan->parsed()) return aftkm::cli::cmd_scan(o, std::cout, std::cerr);
    if (simulate->parsed()) return aftkm::cli::cmd_simulate(o, std::cout, std::cerr);
    if (calibrate->parsed()) return aftkm::cli::cmd_calibrate(o, std::cout, std::cerr);
    if (qq->parsed()) return aftkm::cli::cmd_qq(o, std::cout, std::cerr);
    std::cerr << "error: no subcommand given\n";
    return 1;
}
