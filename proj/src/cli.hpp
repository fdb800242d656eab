#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "aftkm/assoc.hpp"

// Command-line front end.  Each cmd_* function is the body of one
// subcommand, exit-code semantics included, so tests can drive them
// in-process (the fit counter, byte-level determinism) while the installed
// binary stays a thin flag parser.

namespace aftkm::cli {

struct Options {
    // input files
    std::string survival;
    std::string covariates;
    std::string genotypes;
    std::string genesets;
    std::string subpop;
    // analysis controls
    std::string method;  // empty means the per-command default (corrected test)
    std::string kernel = "ibs";
    std::string hkernel = "identity";
    int cause = 1;
    double fdr = 0.1;
    int perturbations = 1000;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out;  // directory for scan/simulate/calibrate, file for qq
    // simulate / calibrate
    std::string scenario;
    int n_override = 0;  // 0 keeps the scenario default
    int p_override = 0;
    double beta = 0.0;  // shared cause-1 marker effect override
    int replicates = 500;
    std::string alpha = "0.05,0.01";  // comma-separated levels for calibrate
    // qq
    std::string pvalues;
    std::string svg;
};

// Flat key = value configuration file: one entry per line, '#' comments,
// keys named after the long flags.  Unknown keys are an error so typos do
// not silently fall back to defaults.
std::vector<std::pair<std::string, std::string>> parse_kv_config(const std::string& path);
void apply_config_entry(Options& o, const std::string& key, const std::string& value,
                        const std::string& source);

// Accepts the compact flag spellings (R, Rhet, Rc, Rchet) as well as the
// library names (R_het, Rc_het).
Method parse_cli_method(const std::string& text);

// Subcommands.  Return value is the process exit code: 0 success, 2 for a
// flagged result (degenerate spectrum, moment fallback), 1 for any error.
int cmd_test(const Options& o, std::ostream& out, std::ostream& err);
int cmd_scan(const Options& o, std::ostream& out, std::ostream& err);
int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err);
int cmd_calibrate(const Options& o, std::ostream& out, std::ostream& err);
int cmd_qq(const Options& o, std::ostream& out, std::ostream& err);

}  // namespace aftkm::cli
