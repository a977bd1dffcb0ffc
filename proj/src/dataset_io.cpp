#include "semirep/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(current);
            current.clear();
        } else if (ch != '\r') {
            current += ch;
        }
    }
    fields.push_back(current);
    return fields;
}

[[noreturn]] void parse_fail(int line_no, const std::string& what) {
    throw_validation("parse-error", "line " + std::to_string(line_no) + ": " + what);
}

long long parse_integer(const std::string& field, int line_no, const std::string& name) {
    try {
        size_t used = 0;
        const long long value = std::stoll(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        return value;
    } catch (const std::exception&) {
        parse_fail(line_no, name + " must be an integer, got '" + field + "'");
    }
}

double parse_number(const std::string& field, int line_no, const std::string& name) {
    try {
        size_t used = 0;
        const double value = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        if (!std::isfinite(value)) parse_fail(line_no, name + " must be finite, got '" + field + "'");
        return value;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        parse_fail(line_no, name + " must be a decimal number, got '" + field + "'");
    }
}

struct Row {
    int line_no = 0;
    int j = 0;
    int k = 0;
    int delta = 0;
    bool has_y = false;
    double y = 0.0;
    double z = 0.0;
    Eigen::VectorXd x;
};

}  // namespace

std::string format_full(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

void write_dataset(std::ostream& out, const ClusterDataset& dataset) {
    dataset.validate();
    out << "cluster_id,position_j,visit_k,delta,y,z";
    for (int c = 0; c < dataset.p; ++c) out << ",x" << (c + 1);
    out << "\n";
    for (int i = 0; i < dataset.n(); ++i) {
        const Cluster& cluster = dataset.clusters[i];
        for (int j = 0; j < dataset.m; ++j)
            for (int k = 0; k < dataset.R; ++k) {
                const int s = j * dataset.R + k;
                out << (i + 1) << ',' << (j + 1) << ',' << (k + 1) << ',' << cluster.delta << ',';
                if (cluster.delta == 1) out << format_full(cluster.y[s]);
                out << ',' << format_full(cluster.z[j]);
                for (int c = 0; c < dataset.p; ++c) out << ',' << format_full(cluster.x(s, c));
                out << "\n";
            }
    }
}

void write_dataset(const std::string& path, const ClusterDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw_validation("parse-error", "cannot open '" + path + "' for writing");
    write_dataset(out, dataset);
    if (!out) throw_validation("parse-error", "failed while writing '" + path + "'");
}

ClusterDataset load_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) parse_fail(1, "empty file (missing header)");
    const std::vector<std::string> header = split_csv(line);
    const char* expected[6] = {"cluster_id", "position_j", "visit_k", "delta", "y", "z"};
    if (header.size() < 7) parse_fail(1, "header needs cluster_id..z plus at least one x column");
    for (int c = 0; c < 6; ++c)
        if (header[c] != expected[c])
            parse_fail(1, "header column " + std::to_string(c + 1) + " must be '" +
                              expected[c] + "', got '" + header[c] + "'");
    const int p = static_cast<int>(header.size()) - 6;
    for (int c = 0; c < p; ++c) {
        const std::string want = "x" + std::to_string(c + 1);
        if (header[6 + c] != want)
            parse_fail(1, "header column " + std::to_string(7 + c) + " must be '" + want +
                              "', got '" + header[6 + c] + "'");
    }

    std::map<long long, std::vector<Row>> by_cluster;
    int m = 0, R = 0;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> fields = split_csv(line);
        if (static_cast<int>(fields.size()) != 6 + p)
            parse_fail(line_no, "expected " + std::to_string(6 + p) + " fields, got " +
                                    std::to_string(fields.size()));
        Row row;
        row.line_no = line_no;
        const long long id = parse_integer(fields[0], line_no, "cluster_id");
        row.j = static_cast<int>(parse_integer(fields[1], line_no, "position_j"));
        row.k = static_cast<int>(parse_integer(fields[2], line_no, "visit_k"));
        if (row.j < 1) parse_fail(line_no, "position_j must be >= 1");
        if (row.k < 1) parse_fail(line_no, "visit_k must be >= 1");
        const long long delta = parse_integer(fields[3], line_no, "delta");
        if (delta != 0 && delta != 1) parse_fail(line_no, "delta must be 0 or 1");
        row.delta = static_cast<int>(delta);
        row.has_y = !fields[4].empty();
        if (row.has_y) row.y = parse_number(fields[4], line_no, "y");
        row.z = parse_number(fields[5], line_no, "z");
        row.x.resize(p);
        for (int c = 0; c < p; ++c)
            row.x[c] = parse_number(fields[6 + c], line_no, "x" + std::to_string(c + 1));
        m = std::max(m, row.j);
        R = std::max(R, row.k);
        by_cluster[id].push_back(row);
    }
    if (by_cluster.empty()) parse_fail(line_no, "no data rows");

    ClusterDataset dataset;
    dataset.m = m;
    dataset.R = R;
    dataset.p = p;
    const int q = m * R;
    dataset.clusters.reserve(by_cluster.size());
    for (auto& [id, rows] : by_cluster) {
        const std::string tag = "cluster " + std::to_string(id);
        std::vector<const Row*> slots(static_cast<size_t>(q), nullptr);
        for (const Row& row : rows) {
            const int s = (row.j - 1) * R + (row.k - 1);
            if (slots[static_cast<size_t>(s)] != nullptr)
                throw_validation("lattice-violation",
                                 "line " + std::to_string(row.line_no) + ": " + tag +
                                     " repeats position " + std::to_string(row.j) + ", visit " +
                                     std::to_string(row.k));
            slots[static_cast<size_t>(s)] = &row;
        }
        for (int j = 1; j <= m; ++j)
            for (int k = 1; k <= R; ++k)
                if (slots[static_cast<size_t>((j - 1) * R + (k - 1))] == nullptr)
                    throw_validation("lattice-violation",
                                     tag + ": missing row for position " + std::to_string(j) +
                                         ", visit " + std::to_string(k));

        Cluster cluster;
        cluster.delta = slots[0]->delta;
        cluster.z.resize(m);
        cluster.x.resize(q, p);
        if (cluster.delta == 1) cluster.y.resize(q);
        for (int s = 0; s < q; ++s) {
            const Row& row = *slots[static_cast<size_t>(s)];
            if (row.delta != cluster.delta)
                throw_validation("delta-inconsistency",
                                 "line " + std::to_string(row.line_no) + ": " + tag +
                                     " mixes delta values (delta is cluster-level)");
            if (row.delta == 0 && row.has_y)
                throw_validation("delta-inconsistency",
                                 "line " + std::to_string(row.line_no) + ": " + tag +
                                     " has a response on a delta=0 row");
            if (row.delta == 1 && !row.has_y)
                throw_validation("delta-inconsistency",
                                 "line " + std::to_string(row.line_no) + ": " + tag +
                                     " misses the response on a delta=1 row");
            const int j0 = s / R;
            if (s % R == 0) {
                cluster.z[j0] = row.z;
            } else if (cluster.z[j0] != row.z) {
                throw_validation("z-inconsistency",
                                 "line " + std::to_string(row.line_no) + ": " + tag +
                                     " varies z within position " + std::to_string(j0 + 1));
            }
            cluster.x.row(s) = row.x.transpose();
            if (cluster.delta == 1) cluster.y[s] = row.y;
        }
        dataset.clusters.push_back(std::move(cluster));
    }
    dataset.validate();
    return dataset;
}

ClusterDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_validation("parse-error", "cannot open '" + path + "'");
    return load_dataset(in);
}

}  // namespace semirep
