#ifndef MEP_CORE_CSV_HPP
#define MEP_CORE_CSV_HPP

#include <string>

#include "core/sim_bench.hpp"

namespace mep {

// Raised on malformed input files; the message names the first bad row.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a file cannot be opened or written.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Dataset schema: header `y,w,z1,...,zk`; the intercept column is synthesized.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

// Prediction input schema: `w,z1,...,zk`; a leading y column is accepted and
// ignored so fitted datasets can be fed back in unchanged.
struct NewData {
    VectorXd w;
    MatrixXd z;  // includes the synthesized intercept
    int n() const { return static_cast<int>(w.size()); }
};
NewData read_newdata_csv(const std::string& path);

// Bench outputs: per-replication CSV `method,model,n,rep,cp,lpi` and an
// aggregate JSON table.
void write_bench_csv(const std::string& path, const SimResult& result);
void write_bench_json(const std::string& path, const SimResult& result);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace mep

#endif
