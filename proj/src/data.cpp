#include "aftkm/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace aftkm {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

[[noreturn]] void fail_at(const std::string& path, std::size_t lineno, const std::string& msg) {
    throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": " + msg);
}

double parse_double(const std::string& tok, const std::string& path, std::size_t lineno) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || tok.empty()) {
        fail_at(path, lineno, "expected a number, got '" + tok + "'");
    }
    if (!std::isfinite(v)) fail_at(path, lineno, "non-finite value '" + tok + "'");
    return v;
}

int parse_int(const std::string& tok, const std::string& path, std::size_t lineno) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) {
        fail_at(path, lineno, "expected an integer, got '" + tok + "'");
    }
    return v;
}

// Reads all lines, strips \r, drops leading '#' provenance lines.  Returns
// pairs of (original line number, content).
std::vector<std::pair<std::size_t, std::string>> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    std::vector<std::pair<std::size_t, std::string>> lines;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header_seen && !line.empty() && line[0] == '#') continue;
        if (line.empty() && !header_seen) continue;
        header_seen = true;
        if (line.empty()) continue;
        lines.emplace_back(lineno, line);
    }
    if (lines.empty()) throw std::runtime_error(path + ": empty file");
    return lines;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

Eigen::Index Dataset::n_events() const {
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < status.size(); ++i) {
        if (status[i] == cause) ++c;
    }
    return c;
}

std::vector<SurvivalRecord> load_survival(const std::string& path) {
    auto lines = read_lines(path);
    if (lines.front().second != "id\tentry\ttime\tstatus") {
        fail_at(path, lines.front().first,
                "bad header, expected 'id\\tentry\\ttime\\tstatus'");
    }
    std::vector<SurvivalRecord> rows;
    std::unordered_set<std::string> seen;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        auto [lineno, line] = lines[k];
        auto f = split_tabs(line);
        if (f.size() != 4) fail_at(path, lineno, "expected 4 fields, got " + std::to_string(f.size()));
        SurvivalRecord r;
        r.id = f[0];
        if (r.id.empty()) fail_at(path, lineno, "empty id");
        if (!seen.insert(r.id).second) fail_at(path, lineno, "duplicate id '" + r.id + "'");
        r.entry = parse_double(f[1], path, lineno);
        r.time = parse_double(f[2], path, lineno);
        r.status = parse_int(f[3], path, lineno);
        if (r.entry < 0.0) fail_at(path, lineno, "negative entry time");
        if (r.time <= 0.0) fail_at(path, lineno, "follow-up time must be positive");
        if (r.time < r.entry) fail_at(path, lineno, "follow-up time precedes entry time");
        if (r.status < 0) fail_at(path, lineno, "negative status");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    return rows;
}

NumericTable load_matrix(const std::string& path, std::optional<std::size_t> expected_rows) {
    auto lines = read_lines(path);
    auto header = split_tabs(lines.front().second);
    if (header.empty() || header[0] != "id") {
        fail_at(path, lines.front().first, "bad header, first column must be 'id'");
    }
    NumericTable t;
    t.columns.assign(header.begin() + 1, header.end());
    const std::size_t ncol = t.columns.size();
    const std::size_t nrow = lines.size() - 1;
    t.values.resize(static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(ncol));
    t.ids.reserve(nrow);
    std::unordered_set<std::string> seen;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        auto [lineno, line] = lines[k];
        auto f = split_tabs(line);
        if (f.size() != ncol + 1) {
            fail_at(path, lineno,
                    "expected " + std::to_string(ncol + 1) + " fields, got " + std::to_string(f.size()));
        }
        if (f[0].empty()) fail_at(path, lineno, "empty id");
        if (!seen.insert(f[0]).second) fail_at(path, lineno, "duplicate id '" + f[0] + "'");
        t.ids.push_back(f[0]);
        for (std::size_t c = 0; c < ncol; ++c) {
            t.values(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(c)) =
                parse_double(f[c + 1], path, lineno);
        }
    }
    if (expected_rows && t.ids.size() != *expected_rows) {
        throw std::runtime_error(path + ": row-count mismatch, expected " +
                                 std::to_string(*expected_rows) + " rows, found " +
                                 std::to_string(t.ids.size()));
    }
    return t;
}

GeneSetMap load_genesets(const std::string& path, const std::vector<std::string>& marker_names) {
    auto lines = read_lines(path);
    if (lines.front().second != "set\tmarkers") {
        fail_at(path, lines.front().first, "bad header, expected 'set\\tmarkers'");
    }
    std::unordered_map<std::string, int> index;
    for (std::size_t j = 0; j < marker_names.size(); ++j) {
        index[marker_names[j]] = static_cast<int>(j);
    }
    GeneSetMap gs;
    std::unordered_set<std::string> seen;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        auto [lineno, line] = lines[k];
        auto f = split_tabs(line);
        if (f.size() != 2) fail_at(path, lineno, "expected 2 fields");
        if (f[0].empty()) fail_at(path, lineno, "empty set name");
        if (!seen.insert(f[0]).second) fail_at(path, lineno, "duplicate set '" + f[0] + "'");
        std::vector<int> members;
        std::unordered_set<int> unique;
        std::stringstream ss(f[1]);
        std::string name;
        while (std::getline(ss, name, ',')) {
            auto it = index.find(name);
            if (it == index.end()) {
                fail_at(path, lineno,
                        "set '" + f[0] + "' references unknown marker '" + name + "'");
            }
            if (!unique.insert(it->second).second) {
                fail_at(path, lineno, "set '" + f[0] + "' repeats marker '" + name + "'");
            }
            members.push_back(it->second);
        }
        if (members.empty()) fail_at(path, lineno, "set '" + f[0] + "' has no members");
        gs.names.push_back(f[0]);
        gs.members.push_back(std::move(members));
    }
    if (gs.names.empty()) throw std::runtime_error(path + ": no gene sets");
    return gs;
}

namespace {

// Returns matrix rows reordered to follow `ids`; every id must be covered
// exactly (no extras, no gaps).
Eigen::MatrixXd align_rows(const NumericTable& t, const std::vector<std::string>& ids,
                           const char* what) {
    if (t.ids.size() != ids.size()) {
        throw std::invalid_argument(std::string(what) + ": row-count mismatch with survival table (" +
                                    std::to_string(t.ids.size()) + " vs " +
                                    std::to_string(ids.size()) + ")");
    }
    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < t.ids.size(); ++i) pos[t.ids[i]] = static_cast<Eigen::Index>(i);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), t.values.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = pos.find(ids[i]);
        if (it == pos.end()) {
            throw std::invalid_argument(std::string(what) + ": missing row for id '" + ids[i] + "'");
        }
        out.row(static_cast<Eigen::Index>(i)) = t.values.row(it->second);
    }
    return out;
}

}  // namespace

Dataset assemble(const std::vector<SurvivalRecord>& surv, const NumericTable& covariates,
                 const NumericTable& markers, const std::optional<NumericTable>& aux, int cause) {
    if (surv.empty()) throw std::invalid_argument("assemble: empty survival table");
    if (cause < 1) throw std::invalid_argument("assemble: cause must be >= 1");
    if (markers.columns.empty()) throw std::invalid_argument("assemble: marker matrix has zero columns");

    Dataset ds;
    const auto n = static_cast<Eigen::Index>(surv.size());
    ds.ids.reserve(surv.size());
    ds.entry.resize(n);
    ds.time.resize(n);
    ds.status.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ds.ids.push_back(surv[static_cast<std::size_t>(i)].id);
        ds.entry[i] = surv[static_cast<std::size_t>(i)].entry;
        ds.time[i] = surv[static_cast<std::size_t>(i)].time;
        ds.status[i] = surv[static_cast<std::size_t>(i)].status;
    }
    ds.Z = align_rows(covariates, ds.ids, "covariates");
    ds.z_names = covariates.columns;
    ds.G = align_rows(markers, ds.ids, "markers");
    ds.g_names = markers.columns;
    if (aux) {
        ds.X = align_rows(*aux, ds.ids, "auxiliary traits");
        ds.x_names = aux->columns;
    } else {
        ds.X.resize(n, 0);
    }
    ds.cause = cause;
    if (ds.n_events() == 0) {
        ds.warnings.push_back("cause " + std::to_string(cause) +
                              " never appears in the status column");
    }
    return ds;
}

void write_survival(const std::string& path, const Dataset& data,
                    const std::vector<std::string>& provenance) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    for (const auto& line : provenance) out << line << '\n';
    out << "id\tentry\ttime\tstatus\n";
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        out << data.ids[static_cast<std::size_t>(i)] << '\t' << format_double(data.entry[i]) << '\t'
            << format_double(data.time[i]) << '\t' << data.status[i] << '\n';
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

void write_matrix(const std::string& path, const std::vector<std::string>& ids,
                  const std::vector<std::string>& columns, const Eigen::MatrixXd& values,
                  const std::vector<std::string>& provenance) {
    if (static_cast<Eigen::Index>(ids.size()) != values.rows() ||
        static_cast<Eigen::Index>(columns.size()) != values.cols()) {
        throw std::invalid_argument(path + ": matrix shape does not match ids/columns");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    for (const auto& line : provenance) out << line << '\n';
    out << "id";
    for (const auto& c : columns) out << '\t' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        out << ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < values.cols(); ++j) out << '\t' << format_double(values(i, j));
        out << '\n';
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace aftkm
