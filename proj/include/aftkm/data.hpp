#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace aftkm {

// Tab-separated ingestion with a strict no-missing policy: every cell must
// parse, every subject in the survival table must appear in every matrix
// file, and ids must be unique.  Loaders skip leading '#' provenance lines.

struct SurvivalRecord {
    std::string id;
    double entry;   // delayed-entry time; 0 means observed from the origin
    double time;    // follow-up time, > 0 and >= entry
    int status;     // 0 censored, >= 1 cause label
};

struct NumericTable {
    std::vector<std::string> ids;
    std::vector<std::string> columns;
    Eigen::MatrixXd values;  // ids.size() x columns.size()
};

struct Dataset {
    std::vector<std::string> ids;
    Eigen::VectorXd entry;
    Eigen::VectorXd time;
    Eigen::VectorXi status;
    Eigen::MatrixXd Z;  // n x q adjustment covariates (q may be 0)
    Eigen::MatrixXd G;  // n x p markers under test
    Eigen::MatrixXd X;  // n x d auxiliary traits for heterogeneity kernels
    std::vector<std::string> z_names, g_names, x_names;
    int cause = 1;  // event cause of interest
    std::vector<std::string> warnings;

    Eigen::Index n() const { return time.size(); }
    Eigen::Index q() const { return Z.cols(); }
    Eigen::Index p() const { return G.cols(); }
    Eigen::Index d() const { return X.cols(); }
    Eigen::Index n_events() const;
};

struct GeneSetMap {
    std::vector<std::string> names;
    std::vector<std::vector<int>> members;  // column indices into Dataset::G
};

// survival TSV: header "id  entry  time  status".  Throws std::runtime_error
// naming the file and line on any malformed, duplicate, or out-of-range row.
std::vector<SurvivalRecord> load_survival(const std::string& path);

// generic numeric TSV: header "id  <col>...".  A file with only the id
// column yields an n x 0 table.
NumericTable load_matrix(const std::string& path,
                         std::optional<std::size_t> expected_rows = std::nullopt);

// gene-set TSV: header "set  markers", one row per set with a comma-separated
// member list resolved against marker_names.
GeneSetMap load_genesets(const std::string& path,
                         const std::vector<std::string>& marker_names);

// Aligns matrix rows to the survival table order and validates the result.
// Matrix files must cover exactly the survival ids.  A cause value absent
// from the status column is recorded as a warning, not an error.
Dataset assemble(const std::vector<SurvivalRecord>& surv, const NumericTable& covariates,
                 const NumericTable& markers, const std::optional<NumericTable>& aux,
                 int cause = 1);

// Writers used by the simulator and the scan outputs.  Numbers are written
// in shortest round-trip form so parse(write(x)) reproduces x bit for bit.
void write_survival(const std::string& path, const Dataset& data,
                    const std::vector<std::string>& provenance = {});
void write_matrix(const std::string& path, const std::vector<std::string>& ids,
                  const std::vector<std::string>& columns, const Eigen::MatrixXd& values,
                  const std::vector<std::string>& provenance = {});

std::string format_double(double v);  // shortest round-trip decimal form

}  // namespace aftkm
