#ifndef MEP_CORE_NUMERICS_HPP
#define MEP_CORE_NUMERICS_HPP

#include <functional>
#include <vector>

#include "core/types.hpp"

namespace mep {

double normal_cdf(double x);
double normal_quantile(double p);

struct GaussHermite {
    VectorXd nodes;
    VectorXd weights;  // physicists' convention, sum = sqrt(pi)
};

// Physicists' Gauss-Hermite rule via Golub-Welsch. 1 <= n <= 128.
GaussHermite gauss_hermite(int n);

// Tensor-product rule for E[g(W,Y) | X=x, Z=z] under the normal likelihoods.
// Weights absorb the densities, so each weight vector sums to 1.
struct QuadratureGrid {
    VectorXd w_nodes, w_weights;
    VectorXd y_nodes, y_weights;
};

QuadratureGrid product_grid(double x, VecRef z, const ModelSpec& spec, VecRef beta, int n_w, int n_y);

// Gaussian-kernel density estimate at a point.
double kde_at(double point, VecRef sample, double bandwidth);

// 1.06 * sd * n^{-1/5}, floored away from zero for degenerate samples.
double silverman_bandwidth(VecRef sample);

struct NwResult {
    double value = 0.0;
    bool fallback = false;  // total kernel weight underflowed; global mean used
};

// Kernel regression of targets on (w, z1..zk). Gaussian kernels on continuous
// coordinates, exact-match weights on coordinates flagged discrete. The
// bandwidth/discrete vectors align with (w, z1, ..., zk); the intercept column
// of z is skipped.
struct NwSettings {
    VectorXd bandwidths;            // length 1 + (zdim-1)
    std::vector<bool> discrete;     // same length
};

NwSettings nw_settings_for(const Dataset& data);

NwResult nadaraya_watson(double query_w, VecRef query_z, const Dataset& data, VecRef targets,
                         const NwSettings& settings);

// Row-normalized kernel weight matrix between query rows and data rows,
// with optional leave-one-out (zero diagonal) when the two sets coincide.
MatrixXd nw_weight_matrix(const Dataset& query, const Dataset& data, const NwSettings& settings,
                          bool leave_one_out);

struct KMeans2Result {
    VectorXi assignment;
    std::vector<VectorXd> centroids;
    bool degenerate = false;  // all points identical: one group
    double sse = 0.0;
};

// Lloyd's algorithm, k = 2, farthest-pair initialization.
KMeans2Result kmeans2(const std::vector<VectorXd>& points, int max_iter, std::uint64_t seed);

ZGroups zgroups_from_kmeans(const Dataset& data, int max_iter = 100, std::uint64_t seed = 0);

// k-th order statistic with k = ceil(q * n); no interpolation.
double empirical_quantile(VecRef sample, double q);

struct BisectResult {
    double root = 0.0;
    int iterations = 0;
    double lo = 0.0, hi = 0.0;
};

// Bisection on [lo, hi]. If f(lo) and f(hi) do not bracket a root, a 64-point
// grid scan looks for a sign change first; failing that, throws with the
// scanned values in the message.
BisectResult bisect_root(const std::function<double(double)>& f, double lo, double hi, double tol,
                         int max_iter);

}  // namespace mep

#endif
