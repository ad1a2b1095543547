#include "core/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mep {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
    }
    return out;
}

// Locale-independent decimal parse.
double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("bad numeric field '" + s + "' in " + context);
    return v;
}

struct RawCsv {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

RawCsv read_numeric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    RawCsv raw;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
    raw.header = split_line(line);
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        const auto fields = split_line(line);
        if (fields.size() != raw.header.size())
            throw ParseError("row " + std::to_string(row_no) + " of '" + path + "' has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(raw.header.size()));
        std::vector<double> vals;
        vals.reserve(fields.size());
        for (const auto& f : fields)
            vals.push_back(parse_double(f, "row " + std::to_string(row_no) + " of '" + path + "'"));
        raw.rows.push_back(std::move(vals));
    }
    if (raw.rows.empty()) throw ParseError("'" + path + "' has no data rows");
    return raw;
}

void check_z_header(const std::vector<std::string>& header, size_t first_z, const std::string& path) {
    for (size_t k = first_z; k < header.size(); ++k) {
        const std::string expect = "z" + std::to_string(k - first_z + 1);
        if (header[k] != expect)
            throw ParseError("'" + path + "': expected column '" + expect + "', found '" + header[k] + "'");
    }
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Dataset read_dataset_csv(const std::string& path) {
    const RawCsv raw = read_numeric_csv(path);
    if (raw.header.size() < 3 || raw.header[0] != "y" || raw.header[1] != "w")
        throw ParseError("'" + path + "': header must be y,w,z1,...,zk");
    check_z_header(raw.header, 2, path);
    const int n = static_cast<int>(raw.rows.size());
    const int k = static_cast<int>(raw.header.size()) - 2;
    VectorXd y(n), w(n);
    MatrixXd z(n, k + 1);
    for (int i = 0; i < n; ++i) {
        y(i) = raw.rows[i][0];
        w(i) = raw.rows[i][1];
        z(i, 0) = 1.0;
        for (int c = 0; c < k; ++c) z(i, c + 1) = raw.rows[i][2 + c];
    }
    return Dataset(std::move(y), std::move(w), std::move(z));
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "y,w";
    for (int c = 1; c < data.zdim(); ++c) out << ",z" << c;
    out << "\n";
    for (int i = 0; i < data.n(); ++i) {
        out << format_double(data.y(i)) << ',' << format_double(data.w(i));
        for (int c = 1; c < data.zdim(); ++c) out << ',' << format_double(data.zs()(i, c));
        out << "\n";
    }
}

NewData read_newdata_csv(const std::string& path) {
    const RawCsv raw = read_numeric_csv(path);
    size_t first = 0;
    if (!raw.header.empty() && raw.header[0] == "y") first = 1;  // tolerate fitted files
    if (raw.header.size() < first + 2 || raw.header[first] != "w")
        throw ParseError("'" + path + "': header must be w,z1,...,zk");
    check_z_header(raw.header, first + 1, path);
    const int n = static_cast<int>(raw.rows.size());
    const int k = static_cast<int>(raw.header.size() - first) - 1;
    NewData nd;
    nd.w.resize(n);
    nd.z.resize(n, k + 1);
    for (int i = 0; i < n; ++i) {
        nd.w(i) = raw.rows[i][first];
        nd.z(i, 0) = 1.0;
        for (int c = 0; c < k; ++c) nd.z(i, c + 1) = raw.rows[i][first + 1 + c];
    }
    return nd;
}

void write_bench_csv(const std::string& path, const SimResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "method,model,n,rep,cp,lpi\n";
    const int model = static_cast<int>(result.scenario.model);
    for (const RepRow& row : result.rows) {
        out << method_name(row.method) << ',' << model << ',' << result.scenario.n << ',' << row.rep
            << ',';
        if (row.failed) {
            out << "nan,nan";
        } else {
            out << format_double(row.cp) << ',' << format_double(row.lpi);
        }
        out << "\n";
    }
}

void write_bench_json(const std::string& path, const SimResult& result) {
    nlohmann::json doc;
    doc["model"] = static_cast<int>(result.scenario.model);
    doc["n"] = result.scenario.n;
    doc["alpha"] = result.scenario.alpha;
    doc["replications"] = result.scenario.replications;
    doc["seed"] = result.scenario.seed;
    doc["failed_replications"] = result.failed_reps;
    nlohmann::json table = nlohmann::json::object();
    for (int k = 0; k < 6; ++k) {
        if (!result.table[k]) continue;
        const Aggregate& a = *result.table[k];
        nlohmann::json cell;
        cell["cp_mean"] = a.cp_mean;
        cell["lpi_mean"] = a.lpi_mean;
        if (a.cp_sd) cell["cp_sd"] = *a.cp_sd; else cell["cp_sd"] = nullptr;
        if (a.lpi_sd) cell["lpi_sd"] = *a.lpi_sd; else cell["lpi_sd"] = nullptr;
        cell["replications_ok"] = a.n_ok;
        cell["replications_failed"] = a.n_failed;
        table[method_name(static_cast<Method>(k))] = cell;
    }
    doc["aggregate"] = table;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << doc.dump(2) << "\n";
}

}  // namespace mep
