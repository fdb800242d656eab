#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "aftkm/aft_null.hpp"
#include "aftkm/data.hpp"
#include "aftkm/kernels.hpp"
#include "aftkm/rng.hpp"
#include "aftkm/simgen.hpp"
#include "aftkm/stats.hpp"
#include "aftkm/threading.hpp"
#include "aftkm/version.hpp"

namespace aftkm::cli {

namespace {

void require_opt(const std::string& v, const char* flag) {
    if (v.empty()) {
        throw std::invalid_argument(std::string("missing required --") + flag);
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = s.find(',', start);
        const std::string tok = trim(s.substr(start, comma - start));
        if (!tok.empty()) out.push_back(tok);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int parse_int(const std::string& v, const std::string& what) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::invalid_argument(what + ": bad integer '" + v + "'");
    }
}

double parse_num(const std::string& v, const std::string& what) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::invalid_argument(what + ": bad number '" + v + "'");
    }
}

std::string fmt_or_na(double v) { return std::isnan(v) ? "NA" : format_double(v); }

// output header block; deliberately free of timestamps so reruns with the
// same configuration produce byte-identical files
std::vector<std::string> provenance(const Options& o, const std::string& command,
                                    const std::vector<std::string>& extra = {}) {
    std::vector<std::string> lines;
    lines.push_back(std::string("# aftkm ") + kVersion);
    lines.push_back("# command: " + command);
    lines.push_back("# seed: " + std::to_string(o.seed));
    lines.push_back("# perturbations: " + std::to_string(o.perturbations));
    for (const auto& e : extra) lines.push_back("# " + e);
    return lines;
}

std::string flag_of(const TestResult& r) {
    if (r.degenerate) return "degenerate_spectrum";
    if (r.used_moment_fallback) return "moment_fallback";
    if (!r.p_converged) return "p_unconverged";
    return "-";
}

Dataset load_dataset(const Options& o, bool need_subpop) {
    require_opt(o.survival, "survival");
    require_opt(o.covariates, "covariates");
    require_opt(o.genotypes, "genotypes");
    const auto surv = load_survival(o.survival);
    const auto cov = load_matrix(o.covariates, surv.size());
    const auto markers = load_matrix(o.genotypes, surv.size());
    std::optional<NumericTable> aux;
    if (!o.subpop.empty()) {
        aux = load_matrix(o.subpop, surv.size());
    } else if (need_subpop) {
        throw std::invalid_argument("heterogeneity methods need --subpop traits");
    }
    return assemble(surv, cov, markers, aux, o.cause);
}

Method method_or_default(const Options& o) {
    return o.method.empty() ? Method::Rc : parse_cli_method(o.method);
}

bool needs_subpop(Method m) { return m == Method::R_het || m == Method::Rc_het; }

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    return out;
}

std::filesystem::path ensure_out_dir(const Options& o) {
    require_opt(o.out, "out");
    std::filesystem::path dir(o.out);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error(o.out + ": cannot create output directory");
    return dir;
}

void write_svg_qq(const std::string& path, const std::vector<double>& sorted_p) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    const double lo = 40.0, hi = 420.0;
    auto px = [&](double v) { return lo + v * (hi - lo); };
    auto py = [&](double v) { return hi - v * (hi - lo); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\" "
           "viewBox=\"0 0 440 440\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"440\" height=\"440\" fill=\"white\"/>\n";
    out << "<line x1=\"40\" y1=\"420\" x2=\"420\" y2=\"420\" stroke=\"black\"/>\n";
    out << "<line x1=\"40\" y1=\"420\" x2=\"40\" y2=\"40\" stroke=\"black\"/>\n";
    out << "<line x1=\"40\" y1=\"420\" x2=\"420\" y2=\"40\" stroke=\"#888\" "
           "stroke-dasharray=\"4 3\"/>\n";
    const auto n = sorted_p.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double th = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        out << "<circle cx=\"" << format_double(px(th)) << "\" cy=\""
            << format_double(py(sorted_p[i])) << "\" r=\"2\" fill=\"#205080\"/>\n";
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error(path + ": write failed");
}

Scenario scenario_from_options(const Options& o) {
    require_opt(o.scenario, "scenario");
    Scenario scn = default_scenario(parse_scenario(o.scenario));
    if (o.n_override > 0) scn.n = o.n_override;
    if (o.p_override > 0) scn.p = o.p_override;
    if (o.beta != 0.0) scn.beta = o.beta;
    scn.seed = o.seed;
    return scn;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_kv_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open configuration file");
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
        }
        entries.emplace_back(key, value);
    }
    return entries;
}

void apply_config_entry(Options& o, const std::string& key, const std::string& value,
                        const std::string& source) {
    const std::string ctx = source + ": " + key;
    if (key == "survival") o.survival = value;
    else if (key == "covariates") o.covariates = value;
    else if (key == "genotypes") o.genotypes = value;
    else if (key == "genesets") o.genesets = value;
    else if (key == "subpop") o.subpop = value;
    else if (key == "method") o.method = value;
    else if (key == "kernel") o.kernel = value;
    else if (key == "hkernel") o.hkernel = value;
    else if (key == "cause") o.cause = parse_int(value, ctx);
    else if (key == "fdr") o.fdr = parse_num(value, ctx);
    else if (key == "perturbations") o.perturbations = parse_int(value, ctx);
    else if (key == "seed") {
        try {
            std::size_t used = 0;
            o.seed = std::stoull(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (...) {
            throw std::invalid_argument(ctx + ": bad seed '" + value + "'");
        }
    } else if (key == "workers") o.workers = parse_int(value, ctx);
    else if (key == "out") o.out = value;
    else if (key == "scenario") o.scenario = value;
    else if (key == "n") o.n_override = parse_int(value, ctx);
    else if (key == "p") o.p_override = parse_int(value, ctx);
    else if (key == "beta") o.beta = parse_num(value, ctx);
    else if (key == "replicates") o.replicates = parse_int(value, ctx);
    else if (key == "alpha") o.alpha = value;
    else if (key == "pvalues") o.pvalues = value;
    else if (key == "svg") o.svg = value;
    else throw std::invalid_argument(source + ": unknown configuration key '" + key + "'");
}

Method parse_cli_method(const std::string& text) {
    if (text == "R") return Method::R;
    if (text == "Rhet" || text == "R_het") return Method::R_het;
    if (text == "Rc") return Method::Rc;
    if (text == "Rchet" || text == "Rc_het") return Method::Rc_het;
    throw std::invalid_argument("unknown test method '" + text +
                                "' (expected R, Rhet, Rc or Rchet)");
}

int cmd_test(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        const Method method = method_or_default(o);
        const Dataset data = load_dataset(o, needs_subpop(method));
        const NullFit fit = fit_null(data);
        TestOptions topts;
        topts.L = topts.L_tilde = o.perturbations;
        topts.seed = o.seed;
        topts.workers = o.workers;
        const AssocContext ctx(fit, topts);
        const KernelMatrix K = build_kernel(data.G, parse_kernel_spec(o.kernel));
        std::optional<KernelMatrix> H;
        if (needs_subpop(method)) {
            H.emplace(build_subpop_kernel(data.X, parse_kernel_spec(o.hkernel)));
        }
        const TestResult res = run_test(ctx, method, K, H ? &*H : nullptr);

        const std::string kdesc = kernel_spec_string(K.spec, K.rho_used);
        std::vector<std::string> extra = {"method: " + std::string(method_name(method)),
                                          "kernel: " + kdesc, "cause: " + std::to_string(o.cause)};
        if (H) extra.push_back("hkernel: " + kernel_spec_string(H->spec, H->rho_used));
        for (const auto& line : provenance(o, "test", extra)) out << line << '\n';
        for (const auto& w : data.warnings) out << "# warning: " << w << '\n';
        out << "method\tkernel\tn\tmarkers\tevents\tstatistic\tp_value\tflag\n";
        out << method_name(method) << '\t' << kdesc << '\t' << data.n() << '\t' << data.p() << '\t'
            << data.n_events() << '\t' << format_double(res.statistic) << '\t'
            << format_double(res.p_value) << '\t' << flag_of(res) << '\n';
        return flag_of(res) == "-" ? 0 : 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_scan(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        if (!(o.fdr > 0.0 && o.fdr < 1.0)) {
            throw std::invalid_argument("--fdr must lie strictly between 0 and 1");
        }
        require_opt(o.genesets, "genesets");
        const Method method = method_or_default(o);
        const Dataset data = load_dataset(o, needs_subpop(method));
        const GeneSetMap sets = load_genesets(o.genesets, data.g_names);
        const auto m = static_cast<int>(sets.names.size());

        const NullFit fit = fit_null(data);
        TestOptions topts;
        topts.L = topts.L_tilde = o.perturbations;
        topts.seed = o.seed;
        topts.workers = o.workers;
        const AssocContext ctx(fit, topts);
        const KernelSpec kspec = parse_kernel_spec(o.kernel);
        std::optional<KernelMatrix> H;
        if (needs_subpop(method)) {
            H.emplace(build_subpop_kernel(data.X, parse_kernel_spec(o.hkernel)));
        }

        struct Row {
            TestResult res;
            std::string failure;
        };
        std::vector<Row> rows(static_cast<std::size_t>(m));
        parallel_for(m, o.workers, [&](int i) {
            auto& row = rows[static_cast<std::size_t>(i)];
            try {
                const auto& members = sets.members[static_cast<std::size_t>(i)];
                Eigen::MatrixXd sub(data.n(), static_cast<Eigen::Index>(members.size()));
                for (std::size_t j = 0; j < members.size(); ++j) {
                    sub.col(static_cast<Eigen::Index>(j)) = data.G.col(members[j]);
                }
                const KernelMatrix K = build_kernel(sub, kspec);
                row.res = run_test(ctx, method, K, H ? &*H : nullptr);
            } catch (const std::exception& e) {
                row.failure = e.what();
            }
        });

        // everything below runs on one thread; the workers above never touch
        // the filesystem
        const auto dir = ensure_out_dir(o);
        std::vector<std::string> extra = {"method: " + std::string(method_name(method)),
                                          "kernel: " + o.kernel,
                                          "cause: " + std::to_string(o.cause),
                                          "fdr: " + format_double(o.fdr),
                                          "sets: " + std::to_string(m)};
        if (H) extra.push_back("hkernel: " + kernel_spec_string(H->spec, H->rho_used));
        const auto header = provenance(o, "scan", extra);

        auto results = open_output(dir / "results.tsv");
        for (const auto& line : header) results << line << '\n';
        results << "set\tmarkers\tstatistic\tp_value\tflag\n";
        std::vector<double> tested_p;
        std::vector<int> tested_idx;
        for (int i = 0; i < m; ++i) {
            const auto& row = rows[static_cast<std::size_t>(i)];
            results << sets.names[static_cast<std::size_t>(i)] << '\t'
                    << sets.members[static_cast<std::size_t>(i)].size() << '\t';
            if (row.failure.empty()) {
                results << format_double(row.res.statistic) << '\t'
                        << format_double(row.res.p_value) << '\t' << flag_of(row.res) << '\n';
                tested_p.push_back(row.res.p_value);
                tested_idx.push_back(i);
            } else {
                results << "NA\tNA\tfailed: " << row.failure << '\n';
            }
        }
        if (!results) throw std::runtime_error((dir / "results.tsv").string() + ": write failed");

        std::vector<double> thresholds;
        std::vector<int> rejected;
        if (!tested_p.empty()) {
            thresholds = bh_thresholds(static_cast<int>(tested_p.size()), o.fdr);
            rejected = bh_reject(tested_p, o.fdr);
        }
        auto thr = open_output(dir / "thresholds.tsv");
        for (const auto& line : header) thr << line << '\n';
        thr << "rank\tthreshold\n";
        for (std::size_t i = 0; i < thresholds.size(); ++i) {
            thr << i + 1 << '\t' << format_double(thresholds[i]) << '\n';
        }
        auto sig = open_output(dir / "significant.tsv");
        for (const auto& line : header) sig << line << '\n';
        sig << "rank\tset\tp_value\tthreshold\n";
        for (std::size_t i = 0; i < rejected.size(); ++i) {
            const int set_index = tested_idx[static_cast<std::size_t>(rejected[i])];
            sig << i + 1 << '\t' << sets.names[static_cast<std::size_t>(set_index)] << '\t'
                << format_double(tested_p[static_cast<std::size_t>(rejected[i])]) << '\t'
                << format_double(thresholds[i]) << '\n';
        }

        out << "scan: " << m << " sets, " << tested_p.size() << " tested, " << rejected.size()
            << " discoveries at fdr " << format_double(o.fdr) << '\n';
        out << "results: " << (dir / "results.tsv").string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        const Scenario scn = scenario_from_options(o);
        const auto dir = ensure_out_dir(o);
        auto gen = make_stream(o.seed, Stream::data_gen, 0);
        const SimDataset sim = gen_dataset(scn, gen);
        const Dataset& d = sim.data;
        const auto header =
            provenance(o, "simulate",
                       {"scenario: " + std::string(scenario_name(scn.name)),
                        "n: " + std::to_string(scn.n), "p: " + std::to_string(scn.p),
                        "beta: " + format_double(scn.beta), "alpha: " + format_double(scn.alpha),
                        "redraw_fraction: " + format_double(sim.redraw_fraction)});
        write_survival((dir / "survival.tsv").string(), d, header);
        write_matrix((dir / "covariates.tsv").string(), d.ids, d.z_names, d.Z, header);
        write_matrix((dir / "genotypes.tsv").string(), d.ids, d.g_names, d.G, header);
        write_matrix((dir / "traits.tsv").string(), d.ids, d.x_names, d.X, header);
        out << "simulate: " << scenario_name(scn.name) << " n=" << scn.n << " p=" << scn.p
            << " written to " << dir.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_calibrate(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        const Scenario scn = scenario_from_options(o);
        std::vector<Method> methods;
        for (const auto& tok : split_commas(o.method.empty() ? "Rc" : o.method)) {
            methods.push_back(parse_cli_method(tok));
        }
        std::vector<double> alphas;
        for (const auto& tok : split_commas(o.alpha)) {
            alphas.push_back(parse_num(tok, "--alpha"));
        }
        const StudyReport rep =
            run_study(scn, methods, o.replicates, alphas, o.seed, o.workers, o.perturbations);

        const auto dir = ensure_out_dir(o);
        const auto header = provenance(
            o, "calibrate",
            {"scenario: " + std::string(scenario_name(scn.name)), "n: " + std::to_string(scn.n),
             "p: " + std::to_string(scn.p), "replicates: " + std::to_string(o.replicates),
             "kernel: " + rep.marker_kernel, "hkernel: " + rep.subpop_kernel});

        auto pv = open_output(dir / "pvalues.tsv");
        for (const auto& line : header) pv << line << '\n';
        pv << "replicate";
        for (const Method mth : methods) pv << '\t' << method_name(mth);
        pv << '\n';
        for (int r = 0; r < rep.replicates; ++r) {
            pv << r;
            for (Eigen::Index c = 0; c < rep.p_values.cols(); ++c) {
                pv << '\t' << fmt_or_na(rep.p_values(r, c));
            }
            pv << '\n';
        }

        // one bare column per method, directly consumable by the qq command
        for (std::size_t c = 0; c < methods.size(); ++c) {
            auto col = open_output(dir / ("pvalues_" + std::string(method_name(methods[c])) +
                                          ".tsv"));
            for (const auto& line : header) col << line << '\n';
            col << "p_value\n";
            for (int r = 0; r < rep.replicates; ++r) {
                const double v = rep.p_values(r, static_cast<Eigen::Index>(c));
                if (!std::isnan(v)) col << format_double(v) << '\n';
            }
        }

        auto rej = open_output(dir / "rejections.tsv");
        for (const auto& line : header) rej << line << '\n';
        rej << "method\talpha\trate\tse\n";
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
                rej << method_name(methods[mi]) << '\t' << format_double(alphas[ai]) << '\t'
                    << fmt_or_na(rep.rejection_rate(static_cast<Eigen::Index>(mi),
                                                    static_cast<Eigen::Index>(ai)))
                    << '\t'
                    << fmt_or_na(rep.rejection_se(static_cast<Eigen::Index>(mi),
                                                  static_cast<Eigen::Index>(ai)))
                    << '\n';
            }
        }

        nlohmann::json summary;
        summary["version"] = kVersion;
        summary["scenario"] = scenario_name(scn.name);
        summary["n"] = scn.n;
        summary["p"] = scn.p;
        summary["replicates"] = rep.replicates;
        summary["seed"] = o.seed;
        summary["perturbations"] = o.perturbations;
        summary["marker_kernel"] = rep.marker_kernel;
        summary["subpop_kernel"] = rep.subpop_kernel;
        summary["failed_replicates"] = rep.failed_replicates;
        summary["mean_redraw_fraction"] = rep.mean_redraw_fraction;
        summary["alphas"] = alphas;
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            nlohmann::json row;
            for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
                const auto i = static_cast<Eigen::Index>(mi);
                const auto j = static_cast<Eigen::Index>(ai);
                row.push_back({{"alpha", alphas[ai]},
                               {"rate", rep.rejection_rate(i, j)},
                               {"se", rep.rejection_se(i, j)}});
            }
            summary["rejections"][method_name(methods[mi])] = row;
        }
        auto js = open_output(dir / "summary.json");
        js << summary.dump(2) << '\n';

        out << "calibrate: " << scenario_name(scn.name) << " " << rep.replicates
            << " replicates, " << rep.failed_replicates << " failed\n";
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
                out << method_name(methods[mi]) << " @ " << format_double(alphas[ai]) << ": "
                    << fmt_or_na(rep.rejection_rate(static_cast<Eigen::Index>(mi),
                                                    static_cast<Eigen::Index>(ai)))
                    << '\n';
            }
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_qq(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        require_opt(o.pvalues, "pvalues");
        std::ifstream in(o.pvalues);
        if (!in) throw std::runtime_error(o.pvalues + ": cannot open p-value file");
        std::vector<double> p;
        std::string line;
        bool first = true;
        for (int lineno = 1; std::getline(in, line); ++lineno) {
            const std::string body = trim(line);
            if (body.empty() || body[0] == '#') continue;
            if (first && body == "p_value") {
                first = false;
                continue;
            }
            first = false;
            const double v = parse_num(body, o.pvalues + ":" + std::to_string(lineno));
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument(o.pvalues + ":" + std::to_string(lineno) +
                                            ": p-value " + body + " outside [0,1]");
            }
            p.push_back(v);
        }
        if (p.size() < 10) {
            throw std::invalid_argument(o.pvalues + ": need at least 10 p-values, found " +
                                        std::to_string(p.size()));
        }
        const double d = ks_uniform(p);
        const double ksp = ks_pvalue(d, p.size());
        std::sort(p.begin(), p.end());

        std::ofstream file;
        if (!o.out.empty()) file = open_output(o.out);
        std::ostream& dst = o.out.empty() ? out : file;
        for (const auto& h : provenance(o, "qq")) dst << h << '\n';
        dst << "# n: " << p.size() << '\n';
        dst << "# ks_statistic: " << format_double(d) << '\n';
        dst << "# ks_pvalue: " << format_double(ksp) << '\n';
        dst << "rank\ttheoretical\tempirical\n";
        const auto n = static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            dst << i + 1 << '\t' << format_double((static_cast<double>(i) + 0.5) / n) << '\t'
                << format_double(p[i]) << '\n';
        }
        if (!dst) throw std::runtime_error("qq table: write failed");
        if (!o.svg.empty()) write_svg_qq(o.svg, p);
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace aftkm::cli
